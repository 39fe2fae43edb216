//! The relative two-body problem `−Δ + V` in a truncation box: binding
//! energy, ground state, decay rate, the quartic couplings and the cut-off
//! pair wave function.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::geometry::DomainMask;
use crate::grid::{fourier_samples, Grid, ScalarField, MAX_DIM};
use crate::spectral::{assemble_dirichlet, lowest_eigenvalues, smallest_eigenpair, DEFAULT_TOL};

/// Radial pair potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Potential {
    /// `−λ(λ+1)a² sech²(a r)`.
    PoschlTeller { lambda: f64, scale: f64 },
    /// `−depth` for `r < radius`, `−depth/2` at `r = radius`.
    SquareWell { depth: f64, radius: f64 },
    /// `−depth·exp(−r²/width²)`.
    GaussianWell { depth: f64, width: f64 },
    /// Linear interpolation of samples `v` at ascending radii `r`, constant
    /// beyond either end.
    Table { r: Vec<f64>, v: Vec<f64> },
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Potential::PoschlTeller { lambda, scale } => {
                lambda.is_finite() && scale.is_finite() && *scale > 0.0
            }
            Potential::SquareWell { depth, radius } => {
                depth.is_finite() && radius.is_finite() && *radius > 0.0
            }
            Potential::GaussianWell { depth, width } => {
                depth.is_finite() && width.is_finite() && *width > 0.0
            }
            Potential::Table { r, v } => {
                !r.is_empty()
                    && r.len() == v.len()
                    && r.iter().chain(v).all(|x| x.is_finite())
                    && r.windows(2).all(|w| w[0] < w[1])
                    && r[0] >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            usage(format!("invalid potential parameters: {self:?}"))
        }
    }

    /// Value at distance `r ≥ 0`.
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        match self {
            Potential::PoschlTeller { lambda, scale } => {
                let s = 1.0 / (scale * r).cosh();
                -lambda * (lambda + 1.0) * scale * scale * s * s
            }
            Potential::SquareWell { depth, radius } => {
                if r < *radius {
                    -depth
                } else if r == *radius {
                    -0.5 * depth
                } else {
                    0.0
                }
            }
            Potential::GaussianWell { depth, width } => -depth * (-(r * r) / (width * width)).exp(),
            Potential::Table { r: rs, v } => {
                if r <= rs[0] {
                    return v[0];
                }
                let last = rs.len() - 1;
                if r >= rs[last] {
                    return v[last];
                }
                let j = rs.partition_point(|&x| x <= r) - 1;
                let t = (r - rs[j]) / (rs[j + 1] - rs[j]);
                v[j] + t * (v[j + 1] - v[j])
            }
        }
    }

    /// Value at a point of `ℝ^d`.
    pub fn at(&self, x: &[f64]) -> f64 {
        self.eval(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Samples on every node of a grid.
    pub fn sample(&self, grid: &Grid) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.at(x))
    }
}

#[derive(Clone, Debug)]
pub struct RelativeGroundState {
    pub e_b: f64,
    /// L²-normalized, positive, Dirichlet on `[−L, L]^d`.
    pub alpha_star: ScalarField,
    /// Fitted decay rate; `None` when the fit was rejected.
    pub rho_star: Option<f64>,
    pub g_bcs: f64,
    pub g_0: f64,
    pub box_halfwidth: f64,
    pub eigen_residual: f64,
    /// Distance from `−E_b` to the next eigenvalue.
    pub gap: f64,
}

/// Ground state of `−Δ + V` on `[−L, L]^d` with `n` nodes per axis.
pub fn solve_relative(v: &Potential, dim: usize, l: f64, n: usize, tol: f64) -> Result<RelativeGroundState> {
    v.validate()?;
    if !(l > 0.0) {
        return usage("box halfwidth must be positive");
    }
    let grid = Grid::cube(dim, -l, l, n)?;
    let mask = DomainMask::from_fn(&grid, true, |_| true)?;
    let pot = v.sample(&grid);
    let op = assemble_dirichlet(&mask, -1.0, Some(&pot), 0.0)?;
    let r = smallest_eigenpair(&op, tol, 20_000)?;
    if r.eigenvalue >= 0.0 {
        return Err(Error::NoBoundState {
            eigenvalue: r.eigenvalue,
        });
    }
    let alpha = r.eigenvector;
    let peak = alpha.max_abs();
    let edge = (0..grid.len())
        .filter(|&k| {
            let idx = grid.multi_index(k);
            (0..dim).any(|a| idx[a] == 1 || idx[a] + 2 == n)
        })
        .fold(0.0f64, |m, k| m.max(alpha.values[k].abs()));
    if edge > 1e-6 * peak {
        return usage(format!(
            "box halfwidth {l} too small: ground state at the box edge is {:.2e} of its peak",
            edge / peak
        ));
    }
    let second = lowest_eigenvalues(&op, 2, tol, 20_000)?[1];
    let e_b = -r.eigenvalue;
    let (g_bcs, g_0) = lattice_couplings(&alpha, e_b)?;
    let rho_star = fit_decay_rate_field(&alpha, l).ok();
    Ok(RelativeGroundState {
        e_b,
        alpha_star: alpha,
        rho_star,
        g_bcs,
        g_0,
        box_halfwidth: l,
        eigen_residual: r.residual,
        gap: second - r.eigenvalue,
    })
}

/// Decay rate `ρ_*` of the ground state (see [`fit_decay_rate_field`]).
pub fn fit_decay_rate(gs: &RelativeGroundState) -> Result<f64> {
    fit_decay_rate_field(&gs.alpha_star, gs.box_halfwidth)
}

/// Least-squares slope of `log` shell L² mass against radius on
/// `[0.2 L, 0.8 L]`, returned as `−slope/2`. Rejects non-monotone shell
/// masses and decay that is not exponential (relative misfit above 1%).
pub fn fit_decay_rate_field(f: &ScalarField, l: f64) -> Result<f64> {
    let g = &f.grid;
    let d = g.dim();
    let (r0, r1) = (0.2 * l, 0.8 * l);
    let bins = 24usize;
    let width = (r1 - r0) / bins as f64;
    if width < 2.0 * g.max_spacing() {
        return Err(Error::Fit("window too narrow for the grid".into()));
    }
    let mut mass = vec![0.0; bins];
    for k in 0..g.len() {
        let x = g.coord(k);
        let r = x[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if r >= r0 && r < r1 {
            let b = (((r - r0) / width) as usize).min(bins - 1);
            mass[b] += f.values[k] * f.values[k] * g.weight();
        }
    }
    if mass.iter().any(|&m| !(m > 1e-290)) {
        return Err(Error::Fit("shell mass vanishes inside the window".into()));
    }
    if mass.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Fit("shell mass is not monotone; enlarge the box".into()));
    }
    let xs: Vec<f64> = (0..bins).map(|b| r0 + (b as f64 + 0.5) * width).collect();
    let ys: Vec<f64> = mass.iter().map(|m| m.ln()).collect();
    let (slope, _, rms) = linear_fit(&xs, &ys);
    let span = ys[0] - ys[bins - 1];
    if rms > 1e-2 * span {
        return Err(Error::Fit(format!(
            "decay is not exponential (misfit {:.3} of the log range)",
            rms / span
        )));
    }
    Ok(-slope / 2.0)
}

/// Ordinary least squares `y ≈ a x + b`; returns `(a, b, rms residual)`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - a * x - b).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (a, b, rms)
}

/// Momentum-space couplings `(2π)^{-d}∫(p²+E_b)|f̂|⁴` and `(2π)^{-d}∫|f̂|⁴`
/// by the trapezoid rule on `[−p_max, p_max]^d` with `n_p` points per axis.
/// The cut-off is doubled twice; the two finest results must agree to 1e-4.
pub fn compute_couplings(f: &ScalarField, e_b: f64, p_max: f64, n_p: usize) -> Result<(f64, f64)> {
    let g = &f.grid;
    let d = g.dim();
    if n_p < 512 {
        return usage("at least 512 momentum points per axis are required");
    }
    if !(e_b > 0.0) {
        return usage("binding energy must be positive");
    }
    if p_max < 8.0 * e_b.sqrt() {
        return usage(format!(
            "momentum cut-off {p_max} is below 8 times the inverse pair length"
        ));
    }
    let nyquist = std::f64::consts::PI / g.max_spacing();
    if f.values.iter().all(|&v| v == 0.0) {
        return Ok((0.0, 0.0));
    }
    let mut results = Vec::new();
    for level in 0..3 {
        let pm = (p_max * (1u32 << level) as f64).min(nyquist);
        let np = n_p << level;
        results.push(momentum_quadrature(f, e_b, pm, np, d)?);
    }
    let (a, b) = (results[1], results[2]);
    let rel = ((a.0 - b.0) / b.0).abs().max(((a.1 - b.1) / b.1).abs());
    if rel > 1e-4 {
        return Err(Error::NonConvergence {
            what: "momentum quadrature",
            iterations: 3,
            residual: rel,
        });
    }
    Ok(b)
}

fn momentum_quadrature(f: &ScalarField, e_b: f64, pm: f64, np: usize, d: usize) -> Result<(f64, f64)> {
    let dp = 2.0 * pm / (np - 1) as f64;
    let axis: Vec<f64> = (0..np).map(|j| -pm + j as f64 * dp).collect();
    let total = np.pow(d as u32);
    let mut momenta = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for t in 0..total {
        let mut rem = t;
        let mut p = vec![0.0; d];
        let mut w = 1.0;
        for a in (0..d).rev() {
            let j = rem % np;
            rem /= np;
            p[a] = axis[j];
            w *= if j == 0 || j + 1 == np { 0.5 * dp } else { dp };
        }
        momenta.push(p);
        weights.push(w);
    }
    let s = fourier_samples(f, &momenta)?;
    let norm = (2.0 * std::f64::consts::PI).powi(d as i32);
    let (mut gb, mut g0) = (0.0, 0.0);
    for ((p, w), v) in momenta.iter().zip(&weights).zip(&s.values) {
        let a4 = Complex::norm_sqr(v).powi(2);
        let p2: f64 = p.iter().map(|x| x * x).sum();
        gb += w * (p2 + e_b) * a4;
        g0 += w * a4;
    }
    Ok((gb / norm, g0 / norm))
}

/// Position-space couplings through the self-convolution `c = f * f` on the
/// sum lattice: `g_0 = ∫c²`, `g_BCS = ∫ c (−Δ + E_b) c` with the lattice
/// Laplacian. Requires equal spacing on every axis.
pub fn lattice_couplings(f: &ScalarField, e_b: f64) -> Result<(f64, f64)> {
    let g = &f.grid;
    let d = g.dim();
    let h = g.spacing()[0];
    if g.spacing().iter().any(|&s| (s - h).abs() > 1e-12 * h) {
        return usage("lattice couplings need equal spacing on every axis");
    }
    let support: Vec<([usize; MAX_DIM], f64)> = (0..g.len())
        .filter(|&k| f.values[k] != 0.0)
        .map(|k| (g.multi_index(k), f.values[k]))
        .collect();
    let sn: Vec<usize> = g.n().iter().map(|&m| 2 * m - 1).collect();
    let mut st = [0usize; MAX_DIM];
    let mut acc = 1;
    for a in (0..d).rev() {
        st[a] = acc;
        acc *= sn[a];
    }
    let mut c = vec![0.0; acc];
    let vol = h.powi(d as i32);
    for (p, fp) in &support {
        for (q, fq) in &support {
            let mut k = 0;
            for a in 0..d {
                k += (p[a] + q[a]) * st[a];
            }
            c[k] += fp * fq * vol;
        }
    }
    let mut g0 = 0.0;
    let mut gb = 0.0;
    let inv = 1.0 / (h * h);
    for k in 0..acc {
        if c[k] == 0.0 {
            continue;
        }
        let mut lap = 0.0;
        let mut rem = k;
        for a in (0..d).rev() {
            let i = rem % sn[a];
            rem /= sn[a];
            let left = if i > 0 { c[k - st[a]] } else { 0.0 };
            let right = if i + 1 < sn[a] { c[k + st[a]] } else { 0.0 };
            lap += (2.0 * c[k] - left - right) * inv;
        }
        g0 += c[k] * c[k];
        gb += c[k] * (lap + e_b * c[k]);
    }
    Ok((gb * vol, g0 * vol))
}

/// Smoothstep profile: 1 for `|s| ≤ 1`, 0 for `|s| ≥ 3/2`.
pub fn chi(s: f64) -> f64 {
    let t = ((1.5 - s.abs()) / 0.5).clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

#[derive(Clone, Debug)]
pub struct CutoffState {
    pub phi_h: f64,
    pub h: f64,
    /// `χ(r/φ_h)·h·α_*(r)`.
    pub a_field: ScalarField,
    pub chi_profile: &'static str,
}

pub const CHI_PROFILE: &str = "smoothstep 6t^5-15t^4+10t^3 of (3/2-|s|)/(1/2), clamped";

pub fn cutoff_state(gs: &RelativeGroundState, phi_h: f64, h: f64) -> Result<CutoffState> {
    if !(phi_h > 0.0 && h > 0.0) {
        return usage("cut-off radius and h must be positive");
    }
    let g = &gs.alpha_star.grid;
    let d = g.dim();
    let mut a = gs.alpha_star.clone();
    for k in 0..g.len() {
        let x = g.coord(k);
        let r = x[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        a.values[k] *= chi(r / phi_h) * h;
    }
    Ok(CutoffState {
        phi_h,
        h,
        a_field: a,
        chi_profile: CHI_PROFILE,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutoffDiagnostics {
    pub norm: f64,
    pub g_bcs: f64,
    pub g_0: f64,
    pub energy: f64,
    /// `e^{−ρ_* φ_h / 2}`, the envelope the residuals are compared against.
    pub envelope: f64,
}

impl CutoffDiagnostics {
    pub fn max(&self) -> f64 {
        self.norm.max(self.g_bcs).max(self.g_0).max(self.energy.abs())
    }

    /// `true` when every residual is at most `c` times the envelope.
    pub fn within(&self, c: f64) -> bool {
        self.max() <= c * self.envelope
    }
}

/// The four cut-off residuals, scaled by the matching powers of `h`:
/// `|‖𝔞‖² − h²|/h²`, `|g_BCS(𝔞) − h⁴g_BCS|/h⁴`, `|g_0(𝔞) − h⁴g_0|/h⁴` and
/// `⟨𝔞, (−Δ + E_b + V)𝔞⟩/h²`.
pub fn cutoff_diagnostics(gs: &RelativeGroundState, v: &Potential, phi_h: f64) -> Result<CutoffDiagnostics> {
    if phi_h < 3.0 {
        return usage("cut-off radius must be at least 3");
    }
    let cs = cutoff_state(gs, phi_h, 1.0)?;
    let a = &cs.a_field;
    let nrm = a.norm().powi(2);
    let (gb, g0) = lattice_couplings(a, gs.e_b)?;
    let g = &a.grid;
    let mask = DomainMask::from_fn(g, true, |_| true)?;
    let op = assemble_dirichlet(&mask, -1.0, Some(&v.sample(g)), gs.e_b)?;
    let la = op.apply(a)?;
    let energy = crate::grid::inner_product(a, &la)?;
    let rho = gs.rho_star.unwrap_or(gs.e_b.sqrt());
    Ok(CutoffDiagnostics {
        norm: (nrm - 1.0).abs(),
        g_bcs: (gb - gs.g_bcs).abs(),
        g_0: (g0 - gs.g_0).abs(),
        energy,
        envelope: (-rho * phi_h / 2.0).exp(),
    })
}

/// Default relative solve with the module tolerance.
pub fn solve_relative_default(v: &Potential, dim: usize, l: f64, n: usize) -> Result<RelativeGroundState> {
    solve_relative(v, dim, l, n, DEFAULT_TOL)
}
