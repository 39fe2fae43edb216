//! The linear two-body operator
//! `H_h = (h²/2)(−Δ_x + W(x) − Δ_y + W(y)) + V((x−y)/h)` on `Ω×Ω` (d = 1),
//! its decoupled lower reference `−E_b + h²D_c`, the Rayleigh quotient of the
//! product trial state, and the scan over `h`.
//!
//! `E_b` is the binding energy of the relative lattice with the same spacing
//! `δ = Δx/h` as the product grid, so that the `O(δ²)` lattice shift of the
//! binding energy cancels in `E₀ + E_b`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bcs::RelativeLattice;
use crate::error::{usage, Error, Result};
use crate::geometry::{erode, DomainMask};
use crate::grid::{Grid, ScalarField};
use crate::pairing::{chi, linear_fit, Potential};
use crate::report::{fit_power_law, ScanReport};
use crate::spectral::{
    assemble_dirichlet, compute_dc, smallest_eigenpair_from, EigenResult, StencilOperator, DEFAULT_TOL,
};

/// Largest number of product-grid unknowns.
pub const MAX_UNKNOWNS: usize = 400_000;
/// Fewest grid nodes across one pair size `h`.
pub const MIN_NODES_PER_H: f64 = 5.0;

#[derive(Clone, Debug)]
pub struct TwoBodyProblem {
    /// `Ω`, one-dimensional.
    pub mask: DomainMask,
    pub potential: Potential,
    /// On the grid of `mask`.
    pub w: ScalarField,
    pub h: f64,
    product: DomainMask,
    relative: RelativeLattice,
}

impl TwoBodyProblem {
    pub fn new(mask: &DomainMask, potential: &Potential, w: Option<&ScalarField>, h: f64) -> Result<Self> {
        potential.validate()?;
        let g = mask.grid();
        if g.dim() != 1 {
            return usage("two-body eigenproblems are one-dimensional");
        }
        if !(h > 0.0 && h < 1.0) {
            return usage(format!("h = {h} outside (0, 1)"));
        }
        let dx = g.spacing()[0];
        if h < MIN_NODES_PER_H * dx * (1.0 - 1e-12) {
            return usage(format!("h = {h} resolves fewer than {MIN_NODES_PER_H} nodes at spacing {dx}"));
        }
        let n_in = mask.count();
        if n_in * n_in > MAX_UNKNOWNS {
            return usage(format!("{} product unknowns exceed the budget of {MAX_UNKNOWNS}", n_in * n_in));
        }
        let w = match w {
            Some(f) if f.grid != *g => return Err(Error::GridMismatch),
            Some(f) if !f.is_finite() => return usage("W has non-finite values"),
            Some(f) => f.clone(),
            None => ScalarField::zeros(g),
        };
        let n = g.n()[0];
        let pg = Grid::new(&[g.lower()[0]; 2], &[g.upper()[0]; 2], &[n, n])?;
        let inside = (0..pg.len())
            .map(|k| {
                let m = pg.multi_index(k);
                mask.is_inside(m[0]) && mask.is_inside(m[1])
            })
            .collect();
        let product = DomainMask::from_inside(&pg, inside, mask.convex_hint)?;
        let relative = RelativeLattice::solve(potential, 1, dx / h, n - 1, 20.0)?;
        Ok(TwoBodyProblem {
            mask: mask.clone(),
            potential: potential.clone(),
            w,
            h,
            product,
            relative,
        })
    }

    pub fn product_mask(&self) -> &DomainMask {
        &self.product
    }

    pub fn relative(&self) -> &RelativeLattice {
        &self.relative
    }

    /// Binding energy of the relative lattice.
    pub fn e_b(&self) -> f64 {
        self.relative.ground.e_b
    }

    pub fn spacing(&self) -> f64 {
        self.mask.grid().spacing()[0]
    }

    pub fn operator(&self) -> Result<StencilOperator> {
        let pg = self.product.grid();
        let h = self.h;
        let w = &self.w.values;
        let mut pot = ScalarField::zeros(pg);
        for k in 0..pg.len() {
            let m = pg.multi_index(k);
            let x = pg.coord(k);
            pot.values[k] = self.potential.eval((x[0] - x[1]) / h) + 0.5 * h * h * (w[m[0]] + w[m[1]]);
        }
        assemble_dirichlet(&self.product, -0.5 * h * h, Some(&pot), 0.0)
    }

    /// `ψ_ℓ((x+y)/2) χ(|x−y|/ℓ) α_*((x−y)/h)` with `ψ_ℓ` the ground state of
    /// `−¼Δ + W` on `Ω_ℓ^−`, normalized in L²(Ω×Ω).
    pub fn trial_function(&self, q: f64) -> Result<ScalarField> {
        let h = self.h;
        let ell = q * h * (1.0 / h).ln();
        let dx = self.spacing();
        if !(ell >= 4.0 * dx) {
            return usage(format!("ℓ(h) = {ell} is below four grid spacings"));
        }
        let com_mask = erode(&self.mask.refine(), ell)?;
        if com_mask.count() == 0 {
            return usage(format!("Ω has no points farther than ℓ(h) = {ell} from its boundary"));
        }
        let w_com = crate::bcs::prolongate_field(&self.w);
        let psi = compute_dc(&com_mask, Some(&w_com), DEFAULT_TOL)?.eigenvector;
        let pg = self.product.grid();
        let mut f = ScalarField::zeros(pg);
        for k in self.product.nodes() {
            let m = pg.multi_index(k);
            let s = m[0] + m[1];
            let kr = m[0] as i64 - m[1] as i64;
            let r = kr as f64 * dx;
            f.values[k] = psi.values[s] * chi(r.abs() / ell) * self.relative.value(&[kr]);
        }
        let nrm = f.norm();
        if !(nrm > 0.0) {
            return Err(Error::Internal("trial function vanishes".into()));
        }
        Ok(f.scale(1.0 / nrm))
    }

    /// `D_c^−(ℓ)` on the center-of-mass grid, for reference.
    pub fn eroded_dc(&self, q: f64) -> Result<f64> {
        let ell = q * self.h * (1.0 / self.h).ln();
        let com_mask = erode(&self.mask.refine(), ell)?;
        Ok(compute_dc(&com_mask, Some(&crate::bcs::prolongate_field(&self.w)), DEFAULT_TOL)?.eigenvalue)
    }
}

/// Smallest eigenpair of `H_h`, started from the trial function with `q = 1`.
pub fn ground_energy(prob: &TwoBodyProblem, tol: f64) -> Result<EigenResult> {
    let op = prob.operator()?;
    let init = prob.trial_function(1.0).ok();
    smallest_eigenpair_from(&op, tol, 50_000, init.as_ref())
}

/// Largest `|f(x,y) − f(y,x)|`.
pub fn exchange_asymmetry(prob: &TwoBodyProblem, f: &ScalarField) -> f64 {
    let pg = prob.product.grid();
    let mut m = 0.0f64;
    for k in 0..pg.len() {
        let i = pg.multi_index(k);
        let t = pg.index(&[i[1], i[0]]);
        m = m.max((f.values[k] - f.values[t]).abs());
    }
    m
}

/// `−E_b + h²D_c`, the ground energy of the operator with the relative
/// variable freed from the boundary. `d_c` is `inf spec(−¼Δ_Ω + W)`.
pub fn decoupled_lower_bound(prob: &TwoBodyProblem, d_c: f64) -> f64 {
    -prob.e_b() + prob.h * prob.h * d_c
}

/// Rayleigh quotient of the trial function under `H_h`.
pub fn twobody_trial_upper_bound(prob: &TwoBodyProblem, q: f64) -> Result<f64> {
    let f = prob.trial_function(q)?;
    let op = prob.operator()?;
    let x = op.to_local(&f)?;
    let mut y = vec![0.0; x.len()];
    op.apply_local(&x, &mut y);
    let num: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let den: f64 = x.iter().map(|a| a * a).sum();
    Ok(num / den)
}

/// Scan template: `Ω = (lower, upper)` filling its box, `nodes_per_h` grid
/// spacings per `h`, trial cut-off exponent `q`, and the grid factor of the
/// Richardson companion solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoBodySetup {
    pub lower: f64,
    pub upper: f64,
    pub potential: Potential,
    pub nodes_per_h: f64,
    pub q: f64,
    #[serde(default = "default_refine")]
    pub refine_factor: f64,
}

fn default_refine() -> f64 {
    1.5
}

impl TwoBodySetup {
    pub fn problem(&self, h: f64, factor: f64, w: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<TwoBodyProblem> {
        if !(self.upper > self.lower) {
            return usage("two-body setup needs lower < upper");
        }
        if self.nodes_per_h < MIN_NODES_PER_H {
            return usage(format!("nodes_per_h must be at least {MIN_NODES_PER_H}"));
        }
        let n = ((self.upper - self.lower) * self.nodes_per_h * factor / h).ceil() as usize + 1;
        let grid = Grid::cube(1, self.lower, self.upper, n)?;
        let mask = DomainMask::interval(&grid, self.lower, self.upper)?;
        TwoBodyProblem::new(&mask, &self.potential, Some(&ScalarField::from_fn(&grid, w)), h)
    }
}

/// Summary of the linear model `(E₀ + E_b)/h² = D_c + b·h` and of the
/// remainder exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFit {
    #[serde(rename = "D_c_fit")]
    pub d_c_fit: f64,
    pub slope_h: f64,
    /// Exponent `ν̂` of `|E₀ + E_b − h²D_c| ~ h^{2+ν̂}` over the three smallest
    /// `h`; `None` when that fit is refused.
    pub nu_hat: Option<f64>,
    pub residuals: Vec<f64>,
}

/// Rows: `h`, `ground_energy`, `lower_bound`, `upper_bound`,
/// `slope_partial` (`(E₀ + E_b)/h²`), `eps_disc`, `e_b`, `unknowns`,
/// `asymmetry`. `d_c` is the reference `inf spec(−¼Δ_Ω + W)`.
pub fn asymptotic_scan(
    setup: &TwoBodySetup,
    hs: &[f64],
    w: &(dyn Fn(&[f64]) -> f64 + Sync),
    d_c: f64,
    tol: f64,
) -> Result<(ScanReport, AsymptoticFit)> {
    if hs.len() < 3 {
        return usage("asymptotic scan needs at least three values of h");
    }
    if hs.windows(2).any(|p| p[1] >= p[0]) {
        return usage("h values must be strictly descending");
    }
    let rows: Vec<Result<Vec<f64>>> = hs
        .par_iter()
        .map(|&h| {
            let prob = setup.problem(h, 1.0, w)?;
            let r = ground_energy(&prob, tol)?;
            let fine = setup.problem(h, setup.refine_factor, w)?;
            let rf = ground_energy(&fine, tol)?;
            // Richardson on the bound-state-corrected energy; the lattice
            // shift of E_b cancels only against the same lattice.
            let ratio = (fine.spacing() / prob.spacing()).powi(2);
            let (c, cf) = (r.eigenvalue + prob.e_b(), rf.eigenvalue + fine.e_b());
            let eps = ((c - cf) / (1.0 - ratio)).abs();
            let upper = twobody_trial_upper_bound(&prob, setup.q)?;
            Ok(vec![
                h,
                r.eigenvalue,
                decoupled_lower_bound(&prob, d_c),
                upper,
                (r.eigenvalue + prob.e_b()) / (h * h),
                eps,
                prob.e_b(),
                prob.product.count() as f64,
                exchange_asymmetry(&prob, &r.eigenvector),
            ])
        })
        .collect();
    let mut rep = ScanReport::new(&[
        "h",
        "ground_energy",
        "lower_bound",
        "upper_bound",
        "slope_partial",
        "eps_disc",
        "e_b",
        "unknowns",
        "asymmetry",
    ]);
    for r in rows {
        rep.push(r?);
    }
    rep.sort();
    let h = rep.column("h").expect("column");
    let s = rep.column("slope_partial").expect("column");
    let (b, a, _) = linear_fit(&h, &s);
    let residuals: Vec<f64> = h.iter().zip(&s).map(|(x, y)| y - (a + b * x)).collect();
    let rem: Vec<f64> = h.iter().zip(&s).map(|(x, y)| (y - d_c).abs() * x * x).collect();
    let nu_hat = fit_power_law(&h[..3], &rem[..3])
        .ok()
        .filter(|f| !f.refused)
        .map(|f| f.exponent - 2.0);
    rep.metadata.insert("D_c_reference".into(), d_c.into());
    let fit = AsymptoticFit {
        d_c_fit: a,
        slope_h: b,
        nu_hat,
        residuals,
    };
    rep.metadata.insert("fit".into(), serde_json::to_value(&fit)?);
    Ok((rep, fit))
}

/// `inf spec(−¼Δ + W)` on `(lower, upper)` resolved with `n` nodes.
pub fn reference_dc(lower: f64, upper: f64, w: &(dyn Fn(&[f64]) -> f64 + Sync), n: usize) -> Result<f64> {
    let grid = Grid::cube(1, lower, upper, n)?;
    let mask = DomainMask::interval(&grid, lower, upper)?;
    Ok(compute_dc(&mask, Some(&ScalarField::from_fn(&grid, w)), DEFAULT_TOL)?.eigenvalue)
}
