use paircond::geometry::{dilate, erode, DomainMask};
use paircond::grid::{Grid, ScalarField};
use paircond::report::fit_power_law;
use paircond::spectral::{assemble_dirichlet, compute_dc, smallest_eigenpair, DEFAULT_TOL};
use proptest::prelude::*;

fn dirichlet_min(m: &DomainMask) -> f64 {
    let op = assemble_dirichlet(m, -1.0, None, 0.0).unwrap();
    smallest_eigenpair(&op, DEFAULT_TOL, 20_000).unwrap().eigenvalue
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn erosion_raises_ground_energy(
        dim in 1usize..=2,
        r in 0.3f64..0.5,
        cells in 0.0f64..6.0,
    ) {
        let n = if dim == 1 { 201 } else { 41 };
        let grid = Grid::cube(dim, 0.0, 1.0, n).unwrap();
        let m = DomainMask::disk(&grid, &vec![0.5; dim], r).unwrap();
        let dx = grid.max_spacing();
        let ell = cells * dx;
        let e = erode(&m, ell).unwrap();
        prop_assume!(e.count() > 0);
        let (l0, l1) = (dirichlet_min(&m), dirichlet_min(&e));
        prop_assert!(l1 >= l0 - 1e-9 * l0);
        if ell >= 2.0 * dx {
            prop_assert!(l1 > l0);
        }
    }

    #[test]
    fn rayleigh_quotient_matches_eigenvalue(
        dim in 1usize..=2,
        amp in 0.0f64..30.0,
        freq in 1.0f64..6.0,
    ) {
        let n = if dim == 1 { 301 } else { 45 };
        let grid = Grid::cube(dim, 0.0, 1.0, n).unwrap();
        let m = DomainMask::from_fn(&grid, true, |_| true).unwrap();
        let w = ScalarField::from_fn(&grid, |x| amp * (freq * x[0]).sin().powi(2));
        let op = assemble_dirichlet(&m, -0.25, Some(&w), 0.0).unwrap();
        let r = smallest_eigenpair(&op, DEFAULT_TOL, 20_000).unwrap();
        let x = op.to_local(&r.eigenvector).unwrap();
        let mut y = vec![0.0; x.len()];
        op.apply_local(&x, &mut y);
        let num: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let den: f64 = x.iter().map(|a| a * a).sum();
        // |RQ − λ| ≤ residual²/gap ≤ residual
        prop_assert!((num / den - r.eigenvalue).abs() <= r.residual.max(1e-12 * r.eigenvalue.abs()) + 1e-12);
    }
}

fn one_sided_exponents(m: &DomainMask, ells: &[f64]) -> (f64, f64) {
    let dc = compute_dc(m, None, DEFAULT_TOL).unwrap().eigenvalue;
    let (mut inn, mut out) = (vec![], vec![]);
    for &l in ells {
        inn.push(compute_dc(&erode(m, l).unwrap(), None, DEFAULT_TOL).unwrap().eigenvalue - dc);
        out.push(dc - compute_dc(&dilate(m, l).unwrap(), None, DEFAULT_TOL).unwrap().eigenvalue);
    }
    (
        fit_power_law(ells, &inn).unwrap().exponent,
        fit_power_law(ells, &out).unwrap().exponent,
    )
}

#[test]
fn one_sided_constants_converge_linearly() {
    let grid = Grid::cube(1, -0.5, 1.5, 2001).unwrap();
    let m = DomainMask::interval(&grid, 0.0, 1.0).unwrap();
    let (a, b) = one_sided_exponents(&m, &[0.01, 0.02, 0.04, 0.08]);
    assert!(a >= 0.9 && b >= 0.9, "{a} {b}");

    // ℓ small against the radius, where the curvature of D(ℓ) is mild
    let grid = Grid::cube(2, -0.25, 2.25, 401).unwrap();
    let m = DomainMask::disk(&grid, &[1.0, 1.0], 1.0).unwrap();
    let (a, b) = one_sided_exponents(&m, &[0.025, 0.035, 0.05, 0.07]);
    assert!(a >= 0.9 && b >= 0.9, "{a} {b}");
}
