use paircond::geometry::DomainMask;
use paircond::gp::{gp_energy, gp_gradient, minimize_gp, minimize_gp_random, GPProblem, DEFAULT_GP_TOL};
use paircond::grid::{inner_product, Grid, ScalarField};
use paircond::spectral::assemble_dirichlet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_ITER: usize = 500;

fn disk_problem(dim: usize, n: usize, c: f64, r: f64, d: f64, wamp: f64) -> GPProblem {
    let grid = Grid::cube(dim, 0.0, 1.0, n).unwrap();
    let m = DomainMask::disk(&grid, &vec![c; dim], r).unwrap();
    let w = ScalarField::from_fn(&grid, |x| wamp * x[0]);
    GPProblem::new(&m, Some(&w), d, 1.0).unwrap()
}

/// `‖Δψ‖₂ / ((1 + |D|)(‖ψ‖_{H¹} + ‖ψ‖³_{H¹}))` at the minimizer.
fn el_ratio(p: &GPProblem) -> f64 {
    let s = minimize_gp(p, DEFAULT_GP_TOL, MAX_ITER).unwrap();
    let lap = assemble_dirichlet(&p.mask, -1.0, None, 0.0).unwrap().apply(&s.psi).unwrap();
    let h1 = s.h1_norm;
    if h1 == 0.0 {
        return 0.0;
    }
    lap.norm() / ((1.0 + p.d.abs()) * (h1 + h1.powi(3)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn energy_decreases_under_enlargement(
        dim in 1usize..=2,
        r_small in 0.15f64..0.3,
        grow in 0.02f64..0.15,
        shift in -0.02f64..0.02,
        excess in 0.5f64..20.0,
        wamp in 0.0f64..3.0,
    ) {
        let n = if dim == 1 { 201 } else { 41 };
        let big = disk_problem(dim, n, 0.5, r_small + grow, 0.0, wamp);
        let grid = big.mask.grid().clone();
        let small_mask = DomainMask::disk(&grid, &vec![0.5 + shift; dim], r_small).unwrap();
        prop_assume!(small_mask.is_subset_of(&big.mask) && small_mask.count() > 0);
        let small = big.on_mask(&small_mask).unwrap();
        let d = small.critical_d().unwrap() + excess;
        let (big, small) = (GPProblem { d, ..big }, GPProblem { d, ..small });
        let eb = minimize_gp(&big, DEFAULT_GP_TOL, MAX_ITER).unwrap().energy;
        let es = minimize_gp(&small, DEFAULT_GP_TOL, MAX_ITER).unwrap().energy;
        prop_assert!(eb <= es + 1e-9 * es.abs(), "{} {}", eb, es);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), d in -5.0f64..30.0) {
        let p = disk_problem(1, 101, 0.5, 0.4, d, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = ScalarField::zeros(p.mask.grid());
        let mut v = psi.clone();
        for k in p.mask.nodes() {
            psi.values[k] = rng.gen_range(-2.0..2.0);
            v.values[k] = rng.gen_range(-1.0..1.0);
        }
        let eps = 1e-4;
        let fd = (gp_energy(&p, &psi.combine(1.0, &v, eps).unwrap()).unwrap()
            - gp_energy(&p, &psi.combine(1.0, &v, -eps).unwrap()).unwrap())
            / (2.0 * eps);
        let exact = 2.0 * inner_product(&gp_gradient(&p, &psi).unwrap(), &v).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{} {}", fd, exact);
    }

    #[test]
    fn restarts_share_density(dim in 1usize..=2, excess in 1.0f64..15.0, s1 in 1u64..1000, s2 in 1001u64..2000) {
        let n = if dim == 1 { 121 } else { 31 };
        let p0 = disk_problem(dim, n, 0.5, 0.4, 0.0, 1.0);
        let p = GPProblem { d: p0.critical_d().unwrap() + excess, ..p0 };
        let a = minimize_gp_random(&p, s1, 1e-11, MAX_ITER).unwrap().psi;
        let b = minimize_gp_random(&p, s2, 1e-11, MAX_ITER).unwrap().psi;
        let diff = a.map(|x| x * x).combine(1.0, &b.map(|x| x * x), -1.0).unwrap();
        prop_assert!(diff.norm() <= 1e-6, "{}", diff.norm());
    }
}

#[test]
fn el_residual_bound_has_one_constant() {
    // fit on one family, check on another
    let fit: Vec<f64> = [1.0, 5.0, 20.0, 60.0]
        .iter()
        .map(|&e| {
            let p = disk_problem(1, 201, 0.5, 0.4, 0.0, 0.0);
            el_ratio(&GPProblem { d: p.critical_d().unwrap() + e, ..p })
        })
        .collect();
    let c = fit.iter().cloned().fold(0.0, f64::max);
    assert!(c > 0.0);
    for (dim, n, r, w) in [(1, 301, 0.3, 2.0), (1, 151, 0.45, -1.0), (2, 41, 0.4, 0.0), (2, 51, 0.3, 3.0)] {
        for e in [2.0, 10.0, 40.0] {
            let p = disk_problem(dim, n, 0.5, r, 0.0, w);
            let ratio = el_ratio(&GPProblem { d: p.critical_d().unwrap() + e, ..p });
            eprintln!("dim {dim} r {r} excess {e}: ratio {ratio:.4} (C = {c:.4})");
            assert!(ratio <= 2.0 * c, "{ratio} > 2·{c}");
        }
    }
}
