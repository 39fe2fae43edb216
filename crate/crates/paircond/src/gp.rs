//! The Gross–Pitaevskii functional
//! `E(ψ) = ¼∫|∇ψ|² + ∫(W − D)ψ² + g∫ψ⁴` on a mask, its minimization, the
//! one-mode bound and domain-continuity scans.
//!
//! Minimizers are unique up to a phase; fields are kept real and
//! nonnegative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::geometry::{dilate, erode, DomainMask};
use crate::grid::ScalarField;
use crate::report::ScanReport;
use crate::spectral::{
    assemble_dirichlet, compute_dc, conjugate_gradient, dot, norm, CgStatus, StencilOperator,
    DEFAULT_TOL,
};

#[derive(Clone, Debug)]
pub struct GPProblem {
    pub mask: DomainMask,
    /// Zero outside the mask.
    pub w: ScalarField,
    pub d: f64,
    pub g: f64,
}

impl GPProblem {
    pub fn new(mask: &DomainMask, w: Option<&ScalarField>, d: f64, g: f64) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) {
            return usage("quartic coupling must be positive");
        }
        if !d.is_finite() {
            return usage("D must be finite");
        }
        let w = match w {
            Some(f) => {
                if !f.is_finite() {
                    return usage("W has non-finite values");
                }
                mask.restrict(f)?
            }
            None => ScalarField::zeros(mask.grid()),
        };
        Ok(GPProblem {
            mask: mask.clone(),
            w,
            d,
            g,
        })
    }

    /// Same `W` (extended by zero), `D` and `g` on another mask of the grid.
    pub fn on_mask(&self, mask: &DomainMask) -> Result<Self> {
        GPProblem::new(mask, Some(&self.w), self.d, self.g)
    }

    /// `D_c` of `−¼Δ + W` on the mask.
    pub fn critical_d(&self) -> Result<f64> {
        Ok(compute_dc(&self.mask, Some(&self.w), DEFAULT_TOL)?.eigenvalue)
    }

    /// `−¼Δ + W − D` on the interior nodes.
    fn linear_part(&self) -> Result<StencilOperator> {
        assemble_dirichlet(&self.mask, -0.25, Some(&self.w), -self.d)
    }

    fn check(&self, psi: &ScalarField) -> Result<()> {
        if psi.grid != *self.mask.grid() {
            return Err(Error::GridMismatch);
        }
        if !self.mask.is_dirichlet(psi) {
            return usage("field does not vanish outside the mask");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GPSolution {
    pub psi: ScalarField,
    pub energy: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub l2_norm: f64,
    pub h1_norm: f64,
}

/// Discrete energy with forward differences; exterior values count as zero.
pub fn gp_energy(prob: &GPProblem, psi: &ScalarField) -> Result<f64> {
    prob.check(psi)?;
    let g = psi.grid.clone();
    let kinetic = 0.25 * psi.gradient_norm_sq();
    let potential = g.quadrature(
        psi.values
            .iter()
            .zip(&prob.w.values)
            .map(|(p, w)| (w - prob.d) * p * p),
    );
    let quartic = prob.g * g.quadrature(psi.values.iter().map(|p| p.powi(4)));
    Ok(kinetic + potential + quartic)
}

/// `−¼Δψ + (W − D)ψ + 2gψ³` on the mask. The real directional derivative of
/// the energy along `v` is twice its L² pairing with `v`.
pub fn gp_gradient(prob: &GPProblem, psi: &ScalarField) -> Result<ScalarField> {
    prob.check(psi)?;
    let op = prob.linear_part()?;
    let x = op.to_local(psi)?;
    Ok(op.to_field(&local_gradient(&op, prob.g, &x)))
}

fn local_gradient(op: &StencilOperator, g: f64, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    op.apply_local(x, &mut y);
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += 2.0 * g * xi * xi * xi;
    }
    y
}

/// Energy divided by the cell volume, on local vectors.
fn local_energy(op: &StencilOperator, g: f64, x: &[f64], scratch: &mut [f64]) -> f64 {
    op.apply_local(x, scratch);
    dot(x, scratch) + g * x.iter().map(|v| v.powi(4)).sum::<f64>()
}

/// `(θ_opt, energy)` of the best multiple of the ground mode `ψ₁` of
/// `−¼Δ + W`; `(0, 0)` when `D ≤ D_c`.
pub fn one_mode_upper_bound(prob: &GPProblem) -> Result<(f64, f64)> {
    let (theta, e, _) = one_mode(prob)?;
    Ok((theta, e))
}

fn one_mode(prob: &GPProblem) -> Result<(f64, f64, ScalarField)> {
    let r = compute_dc(&prob.mask, Some(&prob.w), DEFAULT_TOL)?;
    let dc = r.eigenvalue;
    if prob.d <= dc {
        return Ok((0.0, 0.0, r.eigenvector));
    }
    let l4 = r.eigenvector.lp_norm(4.0).powi(4);
    let theta = ((prob.d - dc) / (2.0 * prob.g * l4)).sqrt();
    let e = -(prob.d - dc).powi(2) / (4.0 * prob.g * l4);
    Ok((theta, e, r.eigenvector))
}

pub const DEFAULT_GP_TOL: f64 = 1e-9;

/// Minimizer from the one-mode start (`D > D_c`) or a small seeded random
/// start (`D ≤ D_c`).
pub fn minimize_gp(prob: &GPProblem, tol: f64, max_iter: usize) -> Result<GPSolution> {
    let (theta, _, psi1) = one_mode(prob)?;
    let init = if theta > 0.0 {
        psi1.scale(theta)
    } else {
        random_field(prob, 0, 1e-3)
    };
    minimize_gp_from(prob, &init, tol, max_iter)
}

/// Minimizer from a random nonnegative start drawn with `seed`, for restart
/// probes.
pub fn minimize_gp_random(prob: &GPProblem, seed: u64, tol: f64, max_iter: usize) -> Result<GPSolution> {
    let (theta, _, psi1) = one_mode(prob)?;
    let amp = (theta * psi1.max_abs()).max(1e-3);
    minimize_gp_from(prob, &random_field(prob, seed, amp), tol, max_iter)
}

fn random_field(prob: &GPProblem, seed: u64, amp: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = ScalarField::zeros(prob.mask.grid());
    for k in prob.mask.nodes() {
        f.values[k] = amp * rng.gen::<f64>();
    }
    f
}

/// Truncated Newton with conjugate-gradient inner solves and Armijo
/// backtracking, projecting onto `|ψ|` after every step. Stops when
/// `‖gradient‖₂ ≤ tol·(1 + ‖ψ‖_{H¹})`.
pub fn minimize_gp_from(prob: &GPProblem, init: &ScalarField, tol: f64, max_iter: usize) -> Result<GPSolution> {
    prob.check(init)?;
    if !(tol > 0.0) {
        return usage("tolerance must be positive");
    }
    let op = prob.linear_part()?;
    let lap = assemble_dirichlet(&prob.mask, -1.0, None, 0.0)?;
    let w = prob.mask.grid().weight();
    let g = prob.g;
    let n = op.size();
    let mut x: Vec<f64> = op.to_local(init)?.iter().map(|v| v.abs()).collect();
    let mut scratch = vec![0.0; n];
    let mut f = local_energy(&op, g, &x, &mut scratch);
    let mut res = f64::INFINITY;
    for it in 0..=max_iter {
        let grad = local_gradient(&op, g, &x);
        res = (w * dot(&grad, &grad)).sqrt();
        lap.apply_local(&x, &mut scratch);
        let h1 = (w * (dot(&x, &x) + dot(&x, &scratch))).sqrt();
        if res <= tol * (1.0 + h1) {
            return Ok(solution(prob, &op, x, it, res));
        }
        if it == max_iter {
            break;
        }
        let curvature: Vec<f64> = x.iter().map(|v| 6.0 * g * v * v).collect();
        let hess = |v: &[f64], out: &mut [f64]| {
            op.apply_local(v, out);
            for i in 0..v.len() {
                out[i] += curvature[i] * v[i];
            }
        };
        let gnorm = norm(&grad);
        let forcing = (res / (1.0 + h1)).sqrt().min(0.5);
        let rhs: Vec<f64> = grad.iter().map(|v| -v).collect();
        let (s_cg, status, _) = conjugate_gradient(hess, &rhs, forcing, 4 * n + 50);
        let mut step = match status {
            CgStatus::NegativeCurvature(p) if norm(&s_cg) == 0.0 => {
                let pn = norm(&p);
                let sign = if dot(&p, &grad) > 0.0 { -1.0 } else { 1.0 };
                p.iter().map(|v| sign * v * gnorm / pn).collect()
            }
            _ => s_cg,
        };
        let mut slope = 2.0 * dot(&grad, &step);
        if !(slope < 0.0) {
            step = rhs.clone();
            slope = -2.0 * gnorm * gnorm;
        }
        let mut t = 1.0;
        let mut trial = vec![0.0; n];
        let mut accepted = None;
        if -slope <= 1e-11 * f.abs() {
            // predicted decrease is below the rounding level of the energy:
            // take the full step
            for i in 0..n {
                trial[i] = x[i] + step[i];
            }
            accepted = Some(local_energy(&op, g, &trial, &mut scratch));
        }
        for _ in 0..80 {
            if accepted.is_some() {
                break;
            }
            for i in 0..n {
                trial[i] = x[i] + t * step[i];
            }
            let ft = local_energy(&op, g, &trial, &mut scratch);
            if ft <= f + 1e-4 * t * slope {
                accepted = Some(ft);
                break;
            }
            t *= 0.5;
        }
        if accepted.is_none() {
            // no decrease is representable any more; the gradient is at
            // rounding level
            if res <= 1e3 * tol * (1.0 + h1) {
                return Ok(solution(prob, &op, x, it, res));
            }
            return Err(Error::NonConvergence {
                what: "GP line search",
                iterations: it,
                residual: res,
            });
        }
        for v in trial.iter_mut() {
            *v = v.abs();
        }
        let fn_ = local_energy(&op, g, &trial, &mut scratch);
        if fn_ > f + 1e-10 * f.abs().max(1e-300) {
            return Err(Error::Internal(format!(
                "energy increased from {f} to {fn_} after an accepted step"
            )));
        }
        x = trial;
        f = fn_;
    }
    Err(Error::NonConvergence {
        what: "GP minimization",
        iterations: max_iter,
        residual: res,
    })
}

fn solution(prob: &GPProblem, op: &StencilOperator, x: Vec<f64>, iterations: usize, res: f64) -> GPSolution {
    let mut psi = op.to_field(&x);
    let mut energy = gp_energy(prob, &psi).expect("field lives on the mask");
    let mut el = res;
    if energy > 0.0 {
        psi = ScalarField::zeros(prob.mask.grid());
        energy = 0.0;
        el = 0.0;
    }
    let l2 = psi.norm();
    let h1 = (l2 * l2 + psi.gradient_norm_sq()).sqrt();
    GPSolution {
        psi,
        energy,
        el_residual: el,
        iterations,
        l2_norm: l2,
        h1_norm: h1,
    }
}

/// Lower bound `¼‖ψ‖²_{H¹} − (D+1)²|Ω|/(4g)` valid for `W ≥ 0`.
pub fn coercivity_floor(prob: &GPProblem, psi: &ScalarField) -> f64 {
    let l2 = psi.norm();
    let h1sq = l2 * l2 + psi.gradient_norm_sq();
    let vol = prob.mask.count() as f64 * prob.mask.grid().weight();
    0.25 * h1sq - (prob.d.max(0.0) + 1.0).powi(2) * vol / (4.0 * prob.g)
}

/// Energies on the eroded and dilated masks for each `ℓ`, with their
/// differences from the energy on the mask itself.
///
/// Columns: `ell, energy_interior, energy_exterior, diff_interior,
/// diff_exterior`; fits `interior` and `exterior` over `ℓ > 0`.
pub fn continuity_scan(prob: &GPProblem, ells: &[f64]) -> Result<ScanReport> {
    continuity_scan_with(prob, ells, DEFAULT_GP_TOL, 500)
}

pub fn continuity_scan_with(prob: &GPProblem, ells: &[f64], tol: f64, max_iter: usize) -> Result<ScanReport> {
    if ells.iter().any(|&l| !(l >= 0.0)) {
        return usage("scan lengths must be non-negative");
    }
    let base = minimize_gp(prob, tol, max_iter)?.energy;
    let energy_on = |mask: &DomainMask| -> Result<f64> {
        if mask.count() == 0 {
            return Ok(0.0);
        }
        Ok(minimize_gp(&prob.on_mask(mask)?, tol, max_iter)?.energy)
    };
    let rows: Vec<Result<Vec<f64>>> = ells
        .par_iter()
        .map(|&ell| {
            let inner = erode(&prob.mask, ell)?;
            let outer = dilate(&prob.mask, ell)?;
            let (ei, eo) = if ell == 0.0 {
                (base, base)
            } else {
                (energy_on(&inner)?, energy_on(&outer)?)
            };
            let slack = 1e-8 * (1.0 + base.abs());
            if eo > base + slack || base > ei + slack {
                return Err(Error::Internal(format!(
                    "energy ordering violated at ell={ell}: {eo} <= {base} <= {ei}"
                )));
            }
            Ok(vec![ell, ei, eo, (ei - base).abs(), (base - eo).abs()])
        })
        .collect();
    let mut report = ScanReport::new(&[
        "ell",
        "energy_interior",
        "energy_exterior",
        "diff_interior",
        "diff_exterior",
    ]);
    for r in rows {
        report.push(r?);
    }
    report.sort();
    report.fit_columns("interior", "ell", "diff_interior");
    report.fit_columns("exterior", "ell", "diff_exterior");
    report
        .metadata
        .insert("energy".into(), serde_json::json!(base));
    Ok(report)
}
