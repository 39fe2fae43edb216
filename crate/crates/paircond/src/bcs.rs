//! Discrete BCS states on `Ω×Ω`: the trial state built from an order
//! parameter, its energy and one-body density, order-parameter extraction in
//! center-of-mass coordinates, and term-by-term semiclassical checks.
//!
//! Kernels are dense `N × N` matrices over the interior nodes of `Ω` with
//! quadrature weight `w = Δx^d` per node, so the operator of a kernel `K` is
//! the matrix `w·K`. The center of mass of the pair `(x_i, x_j)` is node
//! `i + j` of the half-spacing grid; the relative coordinate `(x_i − x_j)/h`
//! is the point `(i − j)·δ` of the lattice `δZ^d`, `δ = Δx/h`.
//!
//! The pair wavefunction is the ground state of `−Δ_δ + V` on that lattice,
//! normalized separately on each parity class of `Z^d` so that every fiber
//! of fixed center of mass carries unit mass.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::geometry::{erode, DomainMask};
use crate::gp::{gp_energy, minimize_gp, GPProblem, DEFAULT_GP_TOL};
use crate::grid::{Grid, ScalarField, MAX_DIM};
use crate::pairing::{chi, lattice_couplings, solve_relative, Potential, RelativeGroundState};
use crate::report::ScanReport;
use crate::spectral::{assemble_dirichlet, smallest_eigenpair, StencilOperator, DEFAULT_TOL};

pub const MAX_NODES_1D: usize = 600;
pub const MAX_NODES_2D: usize = 1200;
pub const DEFAULT_Q: f64 = 6.0;
pub const DEFAULT_RELATIVE_HALFWIDTH: f64 = 20.0;
pub const ADMISSIBILITY_TOL: f64 = 1e-9;

/// Ground state of `−Δ_δ + V` on `δZ^d`, indices `|k_a| ≤ half`.
#[derive(Clone, Debug)]
pub struct RelativeLattice {
    pub delta: f64,
    pub half: usize,
    pub ground: RelativeGroundState,
}

impl RelativeLattice {
    pub fn solve(v: &Potential, dim: usize, delta: f64, min_half: usize, halfwidth: f64) -> Result<Self> {
        if !(delta > 0.0 && halfwidth > 0.0) {
            return usage("lattice spacing and halfwidth must be positive");
        }
        let half = min_half.max((halfwidth / delta).ceil() as usize);
        let l = (half + 1) as f64 * delta;
        let mut ground = solve_relative(v, dim, l, 2 * half + 3, DEFAULT_TOL)?;
        let g = ground.alpha_star.grid.clone();
        let mut mass = [0.0f64; 1 << MAX_DIM];
        for k in 0..g.len() {
            mass[parity(&g.multi_index(k), dim)] += ground.alpha_star.values[k].powi(2);
        }
        let cell = (2.0 * delta).powi(dim as i32);
        for k in 0..g.len() {
            let p = parity(&g.multi_index(k), dim);
            if mass[p] > 0.0 {
                ground.alpha_star.values[k] /= (cell * mass[p]).sqrt();
            }
        }
        let (g_bcs, g_0) = lattice_couplings(&ground.alpha_star, ground.e_b)?;
        ground.g_bcs = g_bcs;
        ground.g_0 = g_0;
        Ok(RelativeLattice { delta, half, ground })
    }

    pub fn dim(&self) -> usize {
        self.ground.alpha_star.grid.dim()
    }

    fn grid(&self) -> &Grid {
        &self.ground.alpha_star.grid
    }

    /// Node of the lattice grid holding `k`, if inside the box.
    fn node(&self, k: &[i64]) -> Option<usize> {
        let mut m = [0usize; MAX_DIM];
        for (a, &ka) in k.iter().enumerate() {
            if ka.unsigned_abs() as usize > self.half {
                return None;
            }
            m[a] = (ka + self.half as i64 + 1) as usize;
        }
        Some(self.grid().index(&m[..k.len()]))
    }

    /// `α_*(kδ)`, zero outside the box.
    pub fn value(&self, k: &[i64]) -> f64 {
        self.node(k).map_or(0.0, |n| self.ground.alpha_star.values[n])
    }

    /// Relative index of a lattice grid node.
    fn offset(&self, node: usize) -> [i64; MAX_DIM] {
        let m = self.grid().multi_index(node);
        let mut k = [0i64; MAX_DIM];
        for a in 0..self.dim() {
            k[a] = m[a] as i64 - self.half as i64 - 1;
        }
        k
    }
}

/// Parity class of a lattice grid node (a relabelling of the class of its
/// relative index).
fn parity(m: &[usize; MAX_DIM], dim: usize) -> usize {
    (0..dim).map(|a| (m[a] % 2) << a).sum()
}

fn parity_i(k: &[i64]) -> usize {
    k.iter().enumerate().map(|(a, &v)| (v.rem_euclid(2) as usize) << a).sum()
}

/// Model parameters: `Ω`, `V`, `W`, `h`, `D` with `μ = −E_b + D h²`, and the
/// cut-off exponent `q` in `ℓ(h) = h log(h^{−q})`.
#[derive(Clone, Debug)]
pub struct BCSConfig {
    pub mask: DomainMask,
    pub potential: Potential,
    /// On the grid of `mask`.
    pub w: ScalarField,
    pub h: f64,
    pub d: f64,
    pub q: f64,
    relative: RelativeLattice,
    hbar_min: f64,
}

impl BCSConfig {
    pub fn new(
        mask: &DomainMask,
        potential: &Potential,
        w: Option<&ScalarField>,
        h: f64,
        d: f64,
        q: f64,
    ) -> Result<Self> {
        Self::with_halfwidth(mask, potential, w, h, d, q, DEFAULT_RELATIVE_HALFWIDTH)
    }

    /// As [`BCSConfig::new`] with the relative box halfwidth (in units of
    /// the pair size) given explicitly.
    pub fn with_halfwidth(
        mask: &DomainMask,
        potential: &Potential,
        w: Option<&ScalarField>,
        h: f64,
        d: f64,
        q: f64,
        halfwidth: f64,
    ) -> Result<Self> {
        potential.validate()?;
        let g = mask.grid();
        let dim = g.dim();
        if dim > 2 {
            return usage("BCS kernels support d ≤ 2");
        }
        if !(h > 0.0 && h < 1.0) {
            return usage(format!("h = {h} outside (0, 1)"));
        }
        if !(q > 0.0 && q.is_finite()) {
            return usage("q must be positive");
        }
        if !d.is_finite() {
            return usage("D must be finite");
        }
        let dx = g.spacing()[0];
        if g.spacing().iter().any(|&s| (s - dx).abs() > 1e-12 * dx) {
            return usage("BCS kernels need equal spacing on every axis");
        }
        let n = mask.count();
        let cap = if dim == 1 { MAX_NODES_1D } else { MAX_NODES_2D };
        if n == 0 {
            return usage("empty domain");
        }
        if n > cap {
            return usage(format!("{n} interior nodes exceed the d={dim} kernel budget of {cap}"));
        }
        let w = match w {
            Some(f) if f.grid != *g => return Err(Error::GridMismatch),
            Some(f) if !f.is_finite() => return usage("W has non-finite values"),
            Some(f) => f.clone(),
            None => ScalarField::zeros(g),
        };
        let min_half = g.n().iter().map(|&m| m - 1).max().unwrap_or(0);
        let relative = RelativeLattice::solve(potential, dim, dx / h, min_half, halfwidth)?;
        let mut cfg = BCSConfig {
            mask: mask.clone(),
            potential: potential.clone(),
            w,
            h,
            d,
            q,
            relative,
            hbar_min: 0.0,
        };
        let op = cfg.one_body_operator()?;
        cfg.hbar_min = smallest_eigenpair(&op, 1e-9, 20_000)?.eigenvalue;
        let e_b = cfg.e_b();
        if cfg.hbar_min < e_b / 2.0 - 1e-9 {
            return usage(format!(
                "h = {h} too large: one-body operator bottom {} below E_b/2 = {}",
                cfg.hbar_min,
                e_b / 2.0
            ));
        }
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.mask.grid().dim()
    }

    pub fn spacing(&self) -> f64 {
        self.mask.grid().spacing()[0]
    }

    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim() as i32)
    }

    /// `φ(h) = q log(1/h)`.
    pub fn phi(&self) -> f64 {
        self.q * (1.0 / self.h).ln()
    }

    /// `ℓ(h) = h φ(h)`.
    pub fn ell(&self) -> f64 {
        self.h * self.phi()
    }

    pub fn e_b(&self) -> f64 {
        self.relative.ground.e_b
    }

    pub fn g_bcs(&self) -> f64 {
        self.relative.ground.g_bcs
    }

    pub fn mu(&self) -> f64 {
        -self.e_b() + self.d * self.h * self.h
    }

    pub fn relative(&self) -> &RelativeLattice {
        &self.relative
    }

    /// Bottom of the spectrum of `𝔥`.
    pub fn hbar_min(&self) -> f64 {
        self.hbar_min
    }

    /// Half-spacing grid of the center-of-mass variable.
    pub fn com_grid(&self) -> Grid {
        self.mask.grid().refine()
    }

    /// `Ω` on the center-of-mass grid.
    pub fn com_mask(&self) -> DomainMask {
        self.mask.refine()
    }

    /// `Ω_{ℓ(h)}^−` on the center-of-mass grid, home of the trial order
    /// parameter.
    pub fn trial_support(&self) -> Result<DomainMask> {
        erode(&self.com_mask(), self.ell())
    }

    /// `W` interpolated to the center-of-mass grid.
    pub fn w_com(&self) -> ScalarField {
        prolongate_field(&self.w)
    }

    /// `𝔥 = −h²Δ_Ω + h²W − μ`.
    pub fn one_body_operator(&self) -> Result<StencilOperator> {
        let h2 = self.h * self.h;
        assemble_dirichlet(&self.mask, -h2, Some(&self.w.scale(h2)), -self.mu())
    }

    /// GP problem with this `D`, `W` and the lattice coupling, on `Ω` or on
    /// `Ω_{ℓ(h)}^−`, both on the center-of-mass grid.
    pub fn gp_problem(&self, eroded: bool) -> Result<GPProblem> {
        let mask = if eroded { self.trial_support()? } else { self.com_mask() };
        GPProblem::new(&mask, Some(&self.w_com()), self.d, self.g_bcs())
    }

    /// `χ(|k|δ/φ)·h·α_*(kδ)`, or `h·α_*(kδ)` without cut-off.
    fn profile(&self, k: &[i64], cut: bool) -> f64 {
        let a = self.relative.value(k);
        if a == 0.0 {
            return 0.0;
        }
        let c = if cut {
            let r = k.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt() * self.relative.delta;
            chi(r / self.phi())
        } else {
            1.0
        };
        c * self.h * a
    }

    /// The cut-off profile `𝔞` as a field on the relative lattice.
    pub fn cutoff_field(&self) -> ScalarField {
        let rel = &self.relative;
        let mut f = rel.ground.alpha_star.clone();
        for n in 0..f.values.len() {
            let k = rel.offset(n);
            f.values[n] = self.profile(&k[..self.dim()], true);
        }
        f
    }
}

/// Multilinear interpolation onto the half-spacing grid.
pub fn prolongate_field(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let d = g.dim();
    let r = g.refine();
    let mut out = ScalarField::zeros(&r);
    for k in 0..r.len() {
        let s = r.multi_index(k);
        let mut corners = vec![[0usize; MAX_DIM]];
        for a in 0..d {
            let mut next = Vec::with_capacity(corners.len() * 2);
            for c in &corners {
                let mut c0 = *c;
                c0[a] = s[a] / 2;
                next.push(c0);
                if s[a] % 2 == 1 {
                    let mut c1 = *c;
                    c1[a] = s[a] / 2 + 1;
                    next.push(c1);
                }
            }
            corners = next;
        }
        let sum: f64 = corners.iter().map(|c| f.values[g.index(&c[..d])]).sum();
        out.values[k] = sum / corners.len() as f64;
    }
    out
}

/// Real symmetric kernel on the interior nodes of a mask.
#[derive(Clone, Debug)]
pub struct PairKernel {
    pub mask: DomainMask,
    /// Grid index of each row.
    pub nodes: Vec<usize>,
    pub values: DMatrix<f64>,
}

#[derive(Serialize)]
struct KernelSidecar<'a> {
    n: usize,
    grid: SidecarGrid<'a>,
    h: f64,
    kind: &'a str,
}

#[derive(Serialize)]
struct SidecarGrid<'a> {
    lower: &'a [f64],
    upper: &'a [f64],
    n: &'a [usize],
    interior: &'a [usize],
}

impl PairKernel {
    pub fn zeros(mask: &DomainMask) -> Self {
        let nodes = mask.nodes();
        let n = nodes.len();
        PairKernel {
            mask: mask.clone(),
            nodes,
            values: DMatrix::zeros(n, n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weight(&self) -> f64 {
        self.mask.grid().weight()
    }

    /// Kernel of the operator product: `Σ_y K(x,y) L(y,z) w`.
    pub fn compose(&self, other: &PairKernel) -> Result<PairKernel> {
        if self.nodes != other.nodes || self.mask != other.mask {
            return Err(Error::GridMismatch);
        }
        Ok(PairKernel {
            mask: self.mask.clone(),
            nodes: self.nodes.clone(),
            values: &self.values * &other.values * self.weight(),
        })
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.len();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                m = m.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        m
    }

    /// `∫K(x,x)dx`.
    pub fn trace(&self) -> f64 {
        self.weight() * self.values.diagonal().sum()
    }

    /// `∬|K|²`.
    pub fn norm_sq(&self) -> f64 {
        self.weight().powi(2) * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// Eigenvalues of the operator `w·K` (symmetric part).
    pub fn operator_spectrum(&self) -> Vec<f64> {
        let m = (&self.values + self.values.transpose()) * (0.5 * self.weight());
        let mut e: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    /// Writes the values row-major as little-endian f64 to `path` and the
    /// sidecar `{n, grid, h, kind}` to `path` with `.json` appended.
    pub fn export(&self, path: &Path, h: f64, kind: &str) -> Result<()> {
        let n = self.len();
        let mut bytes = Vec::with_capacity(8 * n * n);
        for i in 0..n {
            for j in 0..n {
                bytes.extend_from_slice(&self.values[(i, j)].to_le_bytes());
            }
        }
        std::fs::write(path, bytes)?;
        let g = self.mask.grid();
        let side = KernelSidecar {
            n,
            grid: SidecarGrid {
                lower: g.lower(),
                upper: g.upper(),
                n: g.n(),
                interior: &self.nodes,
            },
            h,
            kind,
        };
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        std::fs::write(name, serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }
}

/// Reads a kernel written by [`PairKernel::export`] back as a row-major
/// vector.
pub fn read_kernel_values(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return usage("kernel file length is not a multiple of 8");
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn node_indices(cfg: &BCSConfig, nodes: &[usize]) -> Vec<[usize; MAX_DIM]> {
    let g = cfg.mask.grid();
    nodes.iter().map(|&k| g.multi_index(k)).collect()
}

/// `h^{−d} ψ((x+y)/2) 𝔞((x−y)/h)` on `Ω×Ω`. With `cut` the pair profile
/// carries the cut-off `χ(·/φ(h))` and the kernel must vanish identically
/// off `Ω×Ω`; without it the uncut product is restricted to `Ω×Ω`.
pub fn product_kernel(cfg: &BCSConfig, psi: &ScalarField, cut: bool) -> Result<PairKernel> {
    let com = cfg.com_grid();
    if psi.grid != com {
        return Err(Error::GridMismatch);
    }
    let d = cfg.dim();
    if cut {
        check_kernel_support(cfg, psi)?;
    }
    let mut kern = PairKernel::zeros(&cfg.mask);
    let idx = node_indices(cfg, &kern.nodes);
    let n = idx.len();
    let hd = cfg.h.powi(-(d as i32));
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut row = Vec::new();
            let mut s = [0usize; MAX_DIM];
            let mut k = [0i64; MAX_DIM];
            for b in a..n {
                for ax in 0..d {
                    s[ax] = idx[a][ax] + idx[b][ax];
                    k[ax] = idx[a][ax] as i64 - idx[b][ax] as i64;
                }
                let p = psi.values[com.index(&s[..d])];
                if p == 0.0 {
                    continue;
                }
                let v = hd * p * cfg.profile(&k[..d], cut);
                if v != 0.0 {
                    row.push((b, v));
                }
            }
            row
        })
        .collect();
    for (a, row) in rows.into_iter().enumerate() {
        for (b, v) in row {
            kern.values[(a, b)] = v;
            kern.values[(b, a)] = v;
        }
    }
    Ok(kern)
}

/// Every pair `(x, y)` with `ψ((x+y)/2)𝔞((x−y)/h) ≠ 0` must have both points
/// interior.
fn check_kernel_support(cfg: &BCSConfig, psi: &ScalarField) -> Result<()> {
    let g = cfg.mask.grid();
    let com = &psi.grid;
    let d = cfg.dim();
    let dx = cfg.spacing();
    let reach = 1.5 * cfg.phi() * cfg.relative.delta;
    let radius = (reach / cfg.relative.delta).ceil() as i64 + 1;
    let com_mask = cfg.com_mask();
    let offsets = lattice_ball(d, radius);
    for s_node in 0..com.len() {
        if psi.values[s_node] == 0.0 {
            continue;
        }
        if com_mask.is_inside(s_node) && com_mask.dist()[s_node] > 0.5 * cfg.h * reach + 2.0 * dx {
            continue;
        }
        let s = com.multi_index(s_node);
        for k in &offsets {
            if (0..d).any(|a| (s[a] as i64 - k[a]).rem_euclid(2) != 0) {
                continue;
            }
            if cfg.profile(&k[..d], true) == 0.0 {
                continue;
            }
            let mut i = [0usize; MAX_DIM];
            let mut j = [0usize; MAX_DIM];
            let mut in_box = true;
            for a in 0..d {
                let (ii, jj) = ((s[a] as i64 + k[a]) / 2, (s[a] as i64 - k[a]) / 2);
                if ii < 0 || jj < 0 || ii >= g.n()[a] as i64 || jj >= g.n()[a] as i64 {
                    in_box = false;
                    break;
                }
                i[a] = ii as usize;
                j[a] = jj as usize;
            }
            if !in_box || !cfg.mask.is_inside(g.index(&i[..d])) || !cfg.mask.is_inside(g.index(&j[..d])) {
                let x = com.coord(s_node);
                return Err(Error::Support(format!(
                    "pair kernel leaves Ω×Ω at center of mass {:?}",
                    &x[..d]
                )));
            }
        }
    }
    Ok(())
}

fn lattice_ball(d: usize, r: i64) -> Vec<[i64; MAX_DIM]> {
    let mut out = vec![[0i64; MAX_DIM]];
    for a in 0..d {
        let mut next = Vec::with_capacity(out.len() * (2 * r as usize + 1));
        for c in &out {
            for v in -r..=r {
                let mut c1 = *c;
                c1[a] = v;
                next.push(c1);
            }
        }
        out = next;
    }
    out
}

/// `Γ_ψ` with its kernels and the extreme eigenvalues of the block operator.
#[derive(Clone, Debug)]
pub struct TrialState {
    pub a_psi: PairKernel,
    /// `𝔞_ψ𝔞̄_ψ`.
    pub aa: PairKernel,
    pub gamma_psi: PairKernel,
    pub psi: ScalarField,
    pub spectrum_min: f64,
    pub spectrum_max: f64,
}

impl TrialState {
    /// Smallest eigenvalue of `γ_ψ − 𝔞𝔞̄ − (𝔞𝔞̄)²` as an operator.
    pub fn inequality_probe(&self) -> Result<f64> {
        let sq = self.aa.compose(&self.aa)?;
        let diff = PairKernel {
            values: &self.gamma_psi.values - &self.aa.values - &sq.values,
            ..self.aa.clone()
        };
        Ok(diff.operator_spectrum().first().copied().unwrap_or(0.0))
    }
}

/// Eigenvalues of `[[wγ, wα], [wα, 1 − wγ]]`.
pub fn block_spectrum(alpha: &PairKernel, gamma: &PairKernel) -> (f64, f64) {
    let n = alpha.len();
    let w = alpha.weight();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let g = 0.5 * w * (gamma.values[(i, j)] + gamma.values[(j, i)]);
            let a = 0.5 * w * (alpha.values[(i, j)] + alpha.values[(j, i)]);
            m[(i, j)] = g;
            m[(n + i, n + j)] = -g;
            m[(i, n + j)] = a;
            m[(n + i, j)] = a;
        }
        m[(n + i, n + i)] += 1.0;
    }
    let e = m.symmetric_eigenvalues();
    (e.min(), e.max())
}

/// The trial state `Γ_ψ` for `ψ` on `Ω_{ℓ(h)}^−` (center-of-mass grid).
pub fn build_trial_state(cfg: &BCSConfig, psi: &ScalarField) -> Result<TrialState> {
    trial_state_with(cfg, psi, 1.0 + cfg.h.sqrt())
}

fn trial_state_with(cfg: &BCSConfig, psi: &ScalarField, factor: f64) -> Result<TrialState> {
    if psi.grid != cfg.com_grid() {
        return Err(Error::GridMismatch);
    }
    let support = cfg.trial_support()?;
    if let Some(k) = (0..psi.values.len()).find(|&k| psi.values[k] != 0.0 && !support.is_inside(k)) {
        let x = psi.grid.coord(k);
        return Err(Error::Support(format!(
            "order parameter nonzero at {:?}, outside the interior approximation at distance {}",
            &x[..cfg.dim()],
            cfg.ell()
        )));
    }
    let a = product_kernel(cfg, psi, true)?;
    let aa = a.compose(&a)?;
    let sq = aa.compose(&aa)?;
    let gamma = PairKernel {
        values: &aa.values + &sq.values * factor,
        ..aa.clone()
    };
    let (lo, hi) = block_spectrum(&a, &gamma);
    if lo < -ADMISSIBILITY_TOL || hi > 1.0 + ADMISSIBILITY_TOL {
        return Err(Error::Inadmissible { min: lo, max: hi });
    }
    Ok(TrialState {
        a_psi: a,
        aa,
        gamma_psi: gamma,
        psi: psi.clone(),
        spectrum_min: lo,
        spectrum_max: hi,
    })
}

/// `∫ K(x,x) dx` of `op ∘ K` with `op` acting on the first variable.
fn operator_trace(op: &StencilOperator, k: &PairKernel) -> Result<f64> {
    if op.nodes() != k.nodes.as_slice() {
        return Err(Error::GridMismatch);
    }
    let n = k.len();
    let diag: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = k.values.column(j).iter().copied().collect();
            let mut y = vec![0.0; n];
            op.apply_local(&col, &mut y);
            y[j]
        })
        .collect();
    Ok(k.weight() * diag.iter().sum::<f64>())
}

/// `∬ V((x−y)/h) |α(x,y)|² dx dy`.
fn interaction(cfg: &BCSConfig, alpha: &PairKernel) -> f64 {
    let d = cfg.dim();
    let idx = node_indices(cfg, &alpha.nodes);
    let n = idx.len();
    let delta = cfg.relative.delta;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            let mut r = [0.0; MAX_DIM];
            for j in 0..n {
                let v = alpha.values[(i, j)];
                if v == 0.0 {
                    continue;
                }
                for a in 0..d {
                    r[a] = (idx[i][a] as f64 - idx[j][a] as f64) * delta;
                }
                acc += cfg.potential.at(&r[..d]) * v * v;
            }
            acc
        })
        .collect();
    alpha.weight().powi(2) * rows.iter().sum::<f64>()
}

/// `Tr(𝔥γ) + ∬ V((x−y)/h)|α|²`.
pub fn bcs_energy(cfg: &BCSConfig, state: &TrialState) -> Result<f64> {
    energy_of(cfg, &state.a_psi, &state.gamma_psi)
}

fn energy_of(cfg: &BCSConfig, alpha: &PairKernel, gamma: &PairKernel) -> Result<f64> {
    let op = cfg.one_body_operator()?;
    Ok(operator_trace(&op, gamma)? + interaction(cfg, alpha))
}

/// `ρ_γ(x) = γ(x, x)` on the grid of `Ω`.
pub fn one_body_density(state: &TrialState) -> ScalarField {
    let k = &state.gamma_psi;
    let mut rho = ScalarField::zeros(k.mask.grid());
    for (i, &node) in k.nodes.iter().enumerate() {
        rho.values[node] = k.values[(i, i)];
    }
    rho
}

/// Output of [`extract_order_parameter`].
#[derive(Clone, Debug)]
pub struct OrderParameter {
    /// On the center-of-mass grid.
    pub psi: ScalarField,
    /// `ξ` on the fiber pairs `(x, y) ∈ Ω×Ω`.
    pub xi: PairKernel,
    /// `∬|ξ|²` over relative offsets outside the fiber, where `ξ` reduces to
    /// `−h^{1−d}ψ(X)α_*(r/h)`.
    pub xi_exterior_norm_sq: f64,
    /// `max_X |∫ α_*(r/h) ξ(X, r) dr|` over the full relative lattice.
    pub orthogonality: f64,
    /// `‖α̃(X, ·)‖` on the center-of-mass grid.
    pub fiber_norm: ScalarField,
}

impl OrderParameter {
    /// `∬|ξ|²` over the whole relative lattice.
    pub fn xi_norm_sq(&self) -> f64 {
        self.xi.norm_sq() + self.xi_exterior_norm_sq
    }
}

/// `ψ(X) = h^{−1}∫_{𝒟_X} α_*(r/h) α̃(X, r) dr` and `ξ = α̃ − h^{1−d}ψ α_*(r/h)`.
pub fn extract_order_parameter(cfg: &BCSConfig, alpha: &PairKernel) -> Result<OrderParameter> {
    if alpha.mask != cfg.mask {
        return Err(Error::GridMismatch);
    }
    let scale = alpha.values.amax();
    if alpha.max_asymmetry() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return usage("pairing kernel is not symmetric");
    }
    let d = cfg.dim();
    let h = cfg.h;
    let dx = cfg.spacing();
    let com = cfg.com_grid();
    let fiber_cell = (2.0 * dx).powi(d as i32);
    let idx = node_indices(cfg, &alpha.nodes);
    let n = idx.len();
    let mut num = vec![0.0; com.len()];
    let mut mass = vec![0.0; com.len()];
    let mut fnorm = vec![0.0; com.len()];
    let mut s = [0usize; MAX_DIM];
    let mut k = [0i64; MAX_DIM];
    let key = |a: usize, b: usize, s: &mut [usize; MAX_DIM], k: &mut [i64; MAX_DIM]| {
        for ax in 0..d {
            s[ax] = idx[a][ax] + idx[b][ax];
            k[ax] = idx[a][ax] as i64 - idx[b][ax] as i64;
        }
    };
    for a in 0..n {
        for b in 0..n {
            key(a, b, &mut s, &mut k);
            let sn = com.index(&s[..d]);
            let ak = cfg.relative.value(&k[..d]);
            let v = alpha.values[(a, b)];
            num[sn] += fiber_cell * ak * v;
            mass[sn] += fiber_cell * ak * ak;
            fnorm[sn] += fiber_cell * v * v;
        }
    }
    let psi_vals: Vec<f64> = num.iter().map(|v| v / h).collect();
    let c = h.powi(1 - d as i32);
    let mut xi = PairKernel::zeros(&cfg.mask);
    let mut ortho = vec![0.0; com.len()];
    for a in 0..n {
        for b in 0..n {
            key(a, b, &mut s, &mut k);
            let sn = com.index(&s[..d]);
            let ak = cfg.relative.value(&k[..d]);
            let x = alpha.values[(a, b)] - c * psi_vals[sn] * ak;
            xi.values[(a, b)] = x;
            ortho[sn] += fiber_cell * ak * x;
        }
    }
    let hd = h.powi(d as i32);
    let com_cell = (0.5 * dx).powi(d as i32);
    let mut exterior = 0.0;
    for sn in 0..com.len() {
        let outside = (hd - mass[sn]).max(0.0);
        ortho[sn] -= c * psi_vals[sn] * outside;
        exterior += com_cell * c * c * psi_vals[sn].powi(2) * outside;
    }
    let orthogonality = ortho.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(OrderParameter {
        psi: ScalarField::from_values(&com, psi_vals)?,
        xi,
        xi_exterior_norm_sq: exterior,
        orthogonality,
        fiber_norm: ScalarField::from_values(&com, fnorm.into_iter().map(f64::sqrt).collect())?,
    })
}

/// Both sides of `‖α̃‖² = h^{2−d}‖ψ‖² + ‖ξ‖²`.
pub fn norm_identity(cfg: &BCSConfig, alpha: &PairKernel, op: &OrderParameter) -> (f64, f64) {
    let lhs = alpha.norm_sq();
    let rhs = cfg.h.powi(2 - cfg.dim() as i32) * op.psi.norm().powi(2) + op.xi_norm_sq();
    (lhs, rhs)
}

/// Samples of the pointwise bound `|ψ(X)| ≤ C h^{d/2−1} e^{−2ρ dist(X,Ω)/h} ‖α̃(X,·)‖`
/// at centers of mass outside `Ω`.
#[derive(Clone, Debug, Serialize)]
pub struct DecaySample {
    pub x: Vec<f64>,
    pub dist: f64,
    pub psi: f64,
    pub fiber_norm: f64,
    pub ratio: f64,
}

/// Constant of the pointwise bound fitted on one sample set (its largest
/// ratio) and checked node-wise on another. `slack` absorbs the node
/// resolution of `dist(X, Ω)`: an error `e` in the distance moves a ratio by
/// `e^{2ρ_* e/h}`.
#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub constant: f64,
    pub slack: f64,
    pub fitted: usize,
    pub checked: usize,
    pub worst_checked: f64,
    pub holds: bool,
}

pub fn decay_bound(fit: &[DecaySample], check: &[DecaySample], slack: f64) -> Result<DecayReport> {
    if fit.is_empty() || check.is_empty() {
        return usage("decay bound needs samples to fit and to check");
    }
    let constant = fit.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let worst_checked = check.iter().map(|s| s.ratio).fold(0.0, f64::max);
    Ok(DecayReport {
        constant,
        slack,
        fitted: fit.len(),
        checked: check.len(),
        worst_checked,
        holds: worst_checked <= constant * slack,
    })
}

/// Ratios `|ψ(X)| / (h^{d/2−1} e^{−2ρ_* dist(X,Ω)/h} ‖α̃(X,·)‖)` at every
/// center of mass outside `Ω` with a nonempty fiber, `ρ_*` the fitted decay
/// rate of the lattice pair wavefunction.
pub fn decay_samples(cfg: &BCSConfig, alpha: &PairKernel) -> Result<Vec<DecaySample>> {
    let op = extract_order_parameter(cfg, alpha)?;
    let d = cfg.dim();
    let h = cfg.h;
    let rho = cfg.relative.ground.rho_star.unwrap_or(cfg.e_b().sqrt());
    let com = cfg.com_grid();
    let inside = cfg.com_mask();
    let g = cfg.mask.grid();
    let interior: Vec<[f64; MAX_DIM]> = cfg.mask.nodes().into_iter().map(|k| g.coord(k)).collect();
    let mut samples = Vec::new();
    for sn in 0..com.len() {
        let f = op.fiber_norm.values[sn];
        if inside.is_inside(sn) || f == 0.0 {
            continue;
        }
        let x = com.coord(sn);
        let dist = interior
            .iter()
            .map(|y| (0..d).map(|a| (x[a] - y[a]).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        let env = h.powf(d as f64 / 2.0 - 1.0) * (-2.0 * rho * dist / h).exp() * f;
        let psi = op.psi.values[sn].abs();
        samples.push(DecaySample {
            x: x[..d].to_vec(),
            dist,
            psi,
            fiber_norm: f,
            ratio: psi / env,
        });
    }
    samples.sort_by(|a, b| a.dist.total_cmp(&b.dist));
    Ok(samples)
}

/// The integrand of the center-of-mass form of `Tr(𝔥αᾱ) + ∬V|α|²`,
/// summed over the `(X, r)` lattice: `−(h²/4)Δ_X − h²Δ_r` discretized by
/// the four diagonal neighbours `(X ± Δx/2, r ± Δx)`, plus
/// `h²W(X + r/2) − μ + V(r/h)`.
pub fn com_quadrature(cfg: &BCSConfig, alpha: &PairKernel) -> Result<f64> {
    if alpha.mask != cfg.mask {
        return Err(Error::GridMismatch);
    }
    let d = cfg.dim();
    let g = cfg.mask.grid();
    let dx = cfg.spacing();
    let h = cfg.h;
    let idx = node_indices(cfg, &alpha.nodes);
    let n = idx.len();
    let mut field: HashMap<([usize; MAX_DIM], [i64; MAX_DIM]), f64> = HashMap::with_capacity(n * n);
    let mut wx = HashMap::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let mut s = [0usize; MAX_DIM];
            let mut k = [0i64; MAX_DIM];
            for ax in 0..d {
                s[ax] = idx[a][ax] + idx[b][ax];
                k[ax] = idx[a][ax] as i64 - idx[b][ax] as i64;
            }
            field.insert((s, k), alpha.values[(a, b)]);
            wx.insert((s, k), cfg.w.values[alpha.nodes[a]]);
        }
    }
    let cell = (0.5 * dx).powi(d as i32) * (2.0 * dx).powi(d as i32);
    let get = |s: &[usize; MAX_DIM], k: &[i64; MAX_DIM]| field.get(&(*s, *k)).copied().unwrap_or(0.0);
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    let mu = cfg.mu();
    for ((s, k), &v) in &field {
        let mut r = [0.0; MAX_DIM];
        for a in 0..d {
            r[a] = k[a] as f64 * cfg.relative.delta;
        }
        potential += (h * h * wx[&(*s, *k)] - mu + cfg.potential.at(&r[..d])) * v * v;
        for a in 0..d {
            for sign in [1i64, -1] {
                let mut s1 = *s;
                let mut k1 = *k;
                s1[a] += 1;
                k1[a] += sign;
                kinetic += (get(&s1, &k1) - v).powi(2);
                if s[a] > 0 {
                    let mut s0 = *s;
                    let mut k0 = *k;
                    s0[a] -= 1;
                    k0[a] -= sign;
                    if !field.contains_key(&(s0, k0)) {
                        kinetic += v * v;
                    }
                }
            }
        }
    }
    let _ = g;
    Ok(cell * (0.5 * h * h / (dx * dx) * kinetic + potential))
}

/// `Tr(𝔥αᾱ) + ∬V((x−y)/h)|α|²` evaluated directly on `Ω×Ω`.
pub fn pairing_energy(cfg: &BCSConfig, alpha: &PairKernel) -> Result<f64> {
    let aa = alpha.compose(alpha)?;
    energy_of(cfg, alpha, &aa)
}

/// Left and right sides of the three semiclassical expansions for one `h`.
#[derive(Clone, Debug, Serialize)]
pub struct SemiclassicsRecord {
    pub h: f64,
    /// `Tr((−h²Δ − μ)𝔞_ψ𝔞̄_ψ) + ∬V|𝔞_ψ|²` by kernel traces.
    pub lhs_i: f64,
    /// The same quantity from `ψ` and the lattice moments of `𝔞` (exact on
    /// the lattice).
    pub lattice_rhs_i: f64,
    /// `h^{−d}‖ψ‖²⟨𝔞,(−Δ+E_b+V)𝔞⟩ + ‖𝔞‖²(h^{2−d}‖∇ψ‖²/4 + h^{−d}(−E_b−μ)‖ψ‖²)`.
    pub expansion_i: f64,
    /// `⟨𝔞,(−Δ+E_b+V)𝔞⟩`.
    pub binding: f64,
    /// `|lhs − lattice| / scale`, scale `= h^{−d}‖𝔞‖²‖ψ‖²E_b`.
    pub residual_i: f64,
    /// `|lattice − expansion| / scale`.
    pub defect_i: f64,
    /// `Tr(W 𝔞_ψ𝔞̄_ψ)`.
    pub lhs_ii: f64,
    /// `h^{−d}‖𝔞‖² ∫W|ψ|²`.
    pub rhs_ii: f64,
    /// `|lhs − rhs| / (h^{−d}‖𝔞‖²‖ψ‖²_{H¹})`.
    pub error_ii: f64,
    /// `Tr(𝔞_ψ𝔞̄_ψ𝔞_ψ𝔞̄_ψ)`.
    pub lhs_iii: f64,
    /// `h^{−d} g_0(𝔞) ‖ψ‖₄⁴`.
    pub rhs_iii: f64,
    /// `|lhs − rhs| / rhs`.
    pub error_iii: f64,
}

pub fn semiclassics_check(cfg: &BCSConfig, psi: &ScalarField) -> Result<SemiclassicsRecord> {
    let d = cfg.dim();
    let di = d as i32;
    let h = cfg.h;
    let dx = cfg.spacing();
    let mu = cfg.mu();
    let e_b = cfg.e_b();
    let a = product_kernel(cfg, psi, true)?;
    let aa = a.compose(&a)?;
    let kin = assemble_dirichlet(&cfg.mask, -h * h, None, -mu)?;
    let lhs_i = operator_trace(&kin, &aa)? + interaction(cfg, &a);

    let rel = &cfg.relative;
    let af = cfg.cutoff_field();
    let delta = rel.delta;
    let mut r_p = [0.0f64; 1 << MAX_DIM];
    let mut rv_p = [0.0f64; 1 << MAX_DIM];
    let mut splus = [[0.0f64; 1 << MAX_DIM]; MAX_DIM];
    let mut qminus = [[0.0f64; 1 << MAX_DIM]; MAX_DIM];
    let mut edges = 0.0;
    let mut mass = 0.0;
    let mut pot = 0.0;
    for node in 0..af.values.len() {
        let ak = af.values[node];
        let k = rel.offset(node);
        let p = parity_i(&k[..d]);
        let mut r = [0.0; MAX_DIM];
        for ax in 0..d {
            r[ax] = k[ax] as f64 * delta;
        }
        let v = cfg.potential.at(&r[..d]);
        r_p[p] += ak * ak;
        rv_p[p] += v * ak * ak;
        mass += ak * ak;
        pot += (e_b + v) * ak * ak;
        for ax in 0..d {
            for sign in [1i64, -1] {
                let mut k1 = k;
                k1[ax] += sign;
                let b = rel.node(&k1[..d]).map_or(0.0, |m| af.values[m]);
                splus[ax][p] += (b + ak).powi(2);
                qminus[ax][p] += (b - ak).powi(2);
                if sign == 1 {
                    edges += (b - ak).powi(2);
                } else if rel.node(&k1[..d]).is_none() {
                    edges += ak * ak;
                }
            }
        }
    }
    let com = &psi.grid;
    let mut t = 0.0;
    let mut m_term = 0.0;
    for sn in 0..com.len() {
        let s = com.multi_index(sn);
        let p: usize = (0..d).map(|ax| (s[ax] % 2) << ax).sum();
        let ps = psi.values[sn];
        m_term += ps * ps * (rv_p[p] - mu * r_p[p]);
        for ax in 0..d {
            let mut s1 = s;
            s1[ax] += 1;
            let pn = if s1[ax] < com.n()[ax] { psi.values[com.index(&s1[..d])] } else { 0.0 };
            let flipped = p ^ (1 << ax);
            t += 0.25 * (pn - ps).powi(2) * splus[ax][p]
                + 0.25 * (pn + ps).powi(2) * qminus[ax][p]
                + (pn * pn - ps * ps) * (r_p[flipped] - r_p[p]);
        }
    }
    let lattice_rhs_i = 0.5 * h.powi(2 - 2 * di) * dx.powi(2 * di - 2) * t + h.powi(-2 * di) * dx.powi(2 * di) * m_term;

    let cell = delta.powi(di);
    let a_norm = cell * mass;
    let binding = cell * (edges / (delta * delta) + pot);
    let psi2 = psi.norm().powi(2);
    let grad2 = psi.gradient_norm_sq();
    let expansion_i =
        h.powi(-di) * psi2 * binding + a_norm * (h.powi(2 - di) / 4.0 * grad2 + h.powi(-di) * (-e_b - mu) * psi2);
    let scale = h.powi(-di) * a_norm * psi2 * e_b;

    let lhs_ii = {
        let g = cfg.mask.grid();
        let wloc: Vec<f64> = a.nodes.iter().map(|&k| cfg.w.values[k]).collect();
        let _ = g;
        let mut acc = 0.0;
        for i in 0..a.len() {
            for j in 0..a.len() {
                acc += wloc[i] * a.values[(i, j)].powi(2);
            }
        }
        a.weight().powi(2) * acc
    };
    let wc = cfg.w_com();
    let w_psi = com.quadrature(psi.values.iter().zip(&wc.values).map(|(p, w)| w * p * p));
    let rhs_ii = h.powi(-di) * a_norm * w_psi;
    let h1 = psi2 + grad2;

    let lhs_iii = aa.norm_sq();
    let (_, g0) = lattice_couplings(&af, e_b)?;
    let rhs_iii = h.powi(-di) * g0 * psi.lp_norm(4.0).powi(4);

    Ok(SemiclassicsRecord {
        h,
        lhs_i,
        lattice_rhs_i,
        expansion_i,
        binding,
        residual_i: (lhs_i - lattice_rhs_i).abs() / scale,
        defect_i: (lattice_rhs_i - expansion_i).abs() / scale,
        lhs_ii,
        rhs_ii,
        error_ii: (lhs_ii - rhs_ii).abs() / (h.powi(-di) * a_norm * h1),
        lhs_iii,
        rhs_iii,
        error_iii: (lhs_iii - rhs_iii).abs() / rhs_iii,
    })
}

/// One-dimensional scan setup: `Ω = (lower, upper)` filling its grid box,
/// with `nodes_per_h` grid spacings per unit of `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSetup {
    pub lower: f64,
    pub upper: f64,
    pub potential: Potential,
    pub d: f64,
    pub q: f64,
    pub nodes_per_h: f64,
}

impl IntervalSetup {
    pub fn config(&self, h: f64, w: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<BCSConfig> {
        if !(self.upper > self.lower && self.nodes_per_h >= 1.0) {
            return usage("interval setup needs lower < upper and nodes_per_h ≥ 1");
        }
        if !(h > 0.0 && h < 1.0) {
            return usage(format!("h = {h} outside (0, 1)"));
        }
        let n = ((self.upper - self.lower) * self.nodes_per_h / h).ceil() as usize + 1;
        let grid = Grid::cube(1, self.lower, self.upper, n)?;
        let mask = DomainMask::interval(&grid, self.lower, self.upper)?;
        let wf = ScalarField::from_fn(&grid, w);
        BCSConfig::new(&mask, &self.potential, Some(&wf), h, self.d, self.q)
    }
}

/// Energy comparison at the GP minimizer on `Ω_{ℓ(h)}^−`, or on the fixed
/// subinterval `support` of it when given, for each `h`. Columns: `h`, `e_bcs` (`h^{d−4}E^BCS`), `e_gp`, `diff` (absolute
/// difference), `diff_no_sqrt` (same with the factor `1 + h^{1/2}` in `γ_ψ`
/// replaced by 1), `spectrum_min`, `spectrum_max`, `nodes`.
pub fn upper_bound_scan(
    setup: &IntervalSetup,
    hs: &[f64],
    w: &(dyn Fn(&[f64]) -> f64 + Sync),
    support: Option<(f64, f64)>,
) -> Result<ScanReport> {
    let rows: Vec<Result<Vec<f64>>> = hs
        .par_iter()
        .map(|&h| {
            let cfg = setup.config(h, w)?;
            let mut prob = cfg.gp_problem(true)?;
            if let Some((a, b)) = support {
                let sub = DomainMask::interval(&cfg.com_grid(), a, b)?;
                if !sub.is_subset_of(&prob.mask) {
                    return Err(Error::Support(format!(
                        "({a}, {b}) is not inside the interior approximation at h = {h}"
                    )));
                }
                prob = prob.on_mask(&sub)?;
            }
            let sol = minimize_gp(&prob, DEFAULT_GP_TOL, 500)?;
            let e_gp = gp_energy(&prob, &sol.psi)?;
            let state = build_trial_state(&cfg, &sol.psi)?;
            let s = h.powi(cfg.dim() as i32 - 4);
            let e = s * bcs_energy(&cfg, &state)?;
            let plain = PairKernel {
                values: &state.aa.values + state.aa.compose(&state.aa)?.values,
                ..state.aa.clone()
            };
            let e_plain = s * energy_of(&cfg, &state.a_psi, &plain)?;
            Ok(vec![
                h,
                e,
                e_gp,
                (e - e_gp).abs(),
                (e_plain - e_gp).abs(),
                state.spectrum_min,
                state.spectrum_max,
                cfg.mask.count() as f64,
            ])
        })
        .collect();
    let mut rep = ScanReport::new(&[
        "h",
        "e_bcs",
        "e_gp",
        "diff",
        "diff_no_sqrt",
        "spectrum_min",
        "spectrum_max",
        "nodes",
    ]);
    for r in rows {
        rep.push(r?);
    }
    rep.sort();
    rep.fit_columns("diff", "h", "diff");
    rep.fit_columns("diff_no_sqrt", "h", "diff_no_sqrt");
    Ok(rep)
}

/// Reference minimizer on all of `Ω` for the density comparison.
fn reference_minimizer(
    setup: &IntervalSetup,
    g: f64,
    w: &(dyn Fn(&[f64]) -> f64 + Sync),
    n_ref: usize,
) -> Result<(GPProblem, ScalarField)> {
    let grid = Grid::cube(1, setup.lower, setup.upper, n_ref)?;
    let mask = DomainMask::interval(&grid, setup.lower, setup.upper)?;
    let prob = GPProblem::new(&mask, Some(&ScalarField::from_fn(&grid, w)), setup.d, g)?;
    let sol = minimize_gp(&prob, DEFAULT_GP_TOL, 500)?;
    Ok((prob, sol.psi))
}

/// Weak pairings of `h^{d−2}ρ_γ` with `1_Ω` and the first Dirichlet mode of
/// `Ω`, against the same pairings of `|ψ_*|²`, and the particle number
/// `∫ρ_γ` against `h^{2−d}∫|ψ_*|²`. The trial state is built at the GP
/// minimizer on `Ω_{ℓ(h)}^−`; `ψ_*` minimizes on `Ω` with the same coupling.
pub fn density_scan(
    setup: &IntervalSetup,
    hs: &[f64],
    w: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<ScanReport> {
    let len = setup.upper - setup.lower;
    let mode = |x: &[f64]| (2.0 / len).sqrt() * (std::f64::consts::PI * (x[0] - setup.lower) / len).sin();
    let rows: Vec<Result<Vec<f64>>> = hs
        .par_iter()
        .map(|&h| {
            let cfg = setup.config(h, w)?;
            let (_, psi_ref) = reference_minimizer(setup, cfg.g_bcs(), w, 4001)?;
            let rg = &psi_ref.grid;
            let target_one = psi_ref.norm().powi(2);
            let mode_ref = ScalarField::from_fn(rg, mode);
            let target_mode = rg.quadrature(psi_ref.values.iter().zip(&mode_ref.values).map(|(p, m)| p * p * m));
            let prob = cfg.gp_problem(true)?;
            let sol = minimize_gp(&prob, DEFAULT_GP_TOL, 500)?;
            let state = build_trial_state(&cfg, &sol.psi)?;
            let rho = one_body_density(&state);
            let g = &rho.grid;
            let scale = h.powi(cfg.dim() as i32 - 2);
            let number = g.quadrature(rho.values.iter().copied());
            let mode_c = ScalarField::from_fn(g, mode);
            let pair_mode = scale * g.quadrature(rho.values.iter().zip(&mode_c.values).map(|(r, m)| r * m));
            let pair_one = scale * number;
            Ok(vec![
                h,
                number,
                target_one / scale,
                (number * scale - target_one).abs() / target_one,
                pair_one,
                target_one,
                (pair_one - target_one).abs(),
                pair_mode,
                target_mode,
                (pair_mode - target_mode).abs(),
                rho.values.iter().copied().fold(f64::INFINITY, f64::min),
            ])
        })
        .collect();
    let mut rep = ScanReport::new(&[
        "h",
        "particle_number",
        "particle_target",
        "particle_rel_err",
        "pairing_one",
        "target_one",
        "err_one",
        "pairing_mode",
        "target_mode",
        "err_mode",
        "rho_min",
    ]);
    for r in rows {
        rep.push(r?);
    }
    rep.sort();
    Ok(rep)
}

/// Semiclassical residuals for a fixed order parameter `psi_fn` over the
/// `h` values. Columns: `h`, `residual_i`, `defect_i`, `error_ii`,
/// `error_iii`; fits `ii` and `iii` against `h`.
pub fn semiclassics_scan(
    setup: &IntervalSetup,
    hs: &[f64],
    psi_fn: &(dyn Fn(&[f64]) -> f64 + Sync),
    w: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<(ScanReport, Vec<SemiclassicsRecord>)> {
    let recs: Vec<Result<SemiclassicsRecord>> = hs
        .par_iter()
        .map(|&h| {
            let cfg = setup.config(h, w)?;
            let psi = ScalarField::from_fn(&cfg.com_grid(), psi_fn);
            let psi = cfg.com_mask().restrict(&psi)?;
            semiclassics_check(&cfg, &psi)
        })
        .collect();
    let mut rep = ScanReport::new(&["h", "residual_i", "defect_i", "error_ii", "error_iii"]);
    let mut out = Vec::new();
    for r in recs {
        let r = r?;
        rep.push(vec![r.h, r.residual_i, r.defect_i, r.error_ii, r.error_iii]);
        out.push(r);
    }
    rep.sort();
    out.sort_by(|a, b| a.h.total_cmp(&b.h));
    rep.fit_columns("ii", "h", "error_ii");
    rep.fit_columns("iii", "h", "error_iii");
    Ok((rep, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::minkowski_average_refined;
    use crate::gp::one_mode_upper_bound;

    fn pt() -> Potential {
        Potential::PoschlTeller { lambda: 1.0, scale: 1.0 }
    }

    fn interval_cfg(len: f64, h: f64, per_h: f64, d: f64, q: f64) -> BCSConfig {
        let setup = IntervalSetup {
            lower: 0.0,
            upper: len,
            potential: pt(),
            d,
            q,
            nodes_per_h: per_h,
        };
        setup.config(h, &|_| 0.0).unwrap()
    }

    fn first_mode(cfg: &BCSConfig, amp: f64) -> ScalarField {
        let sup = cfg.trial_support().unwrap();
        let xs: Vec<f64> = sup.nodes().iter().map(|&k| sup.grid().coord(k)[0]).collect();
        let (a, b) = (xs[0] - 0.25 * cfg.spacing(), xs[xs.len() - 1] + 0.25 * cfg.spacing());
        let f = ScalarField::from_fn(&cfg.com_grid(), |x| amp * (std::f64::consts::PI * (x[0] - a) / (b - a)).sin());
        sup.restrict(&f).unwrap()
    }

    #[test]
    fn lattice_parity_normalization() {
        let cfg = interval_cfg(1.0, 0.1, 6.0, 1.0, 2.0);
        let rel = cfg.relative();
        let g = rel.ground.alpha_star.grid.clone();
        let mut m = [0.0; 2];
        for k in 0..g.len() {
            m[parity(&g.multi_index(k), 1)] += rel.ground.alpha_star.values[k].powi(2);
        }
        let c = 2.0 * rel.delta;
        assert!((c * m[0] - 1.0).abs() < 1e-12 && (c * m[1] - 1.0).abs() < 1e-12);
        assert!((rel.ground.alpha_star.norm() - 1.0).abs() < 1e-12);
        // lattice binding energy approaches the continuum value 1
        assert!((cfg.e_b() - 1.0).abs() < 0.01, "{}", cfg.e_b());
    }

    #[test]
    fn zero_order_parameter() {
        let cfg = interval_cfg(1.0, 0.1, 6.0, 1.0, 2.0);
        let psi = ScalarField::zeros(&cfg.com_grid());
        let st = build_trial_state(&cfg, &psi).unwrap();
        assert_eq!(st.a_psi.values.amax(), 0.0);
        assert_eq!(st.gamma_psi.values.amax(), 0.0);
        assert_eq!((st.spectrum_min, st.spectrum_max), (0.0, 1.0));
        assert_eq!(bcs_energy(&cfg, &st).unwrap(), 0.0);
        assert!(one_body_density(&st).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trial_state_invariants() {
        let cfg = interval_cfg(1.0, 0.05, 6.0, 1.0, 1.0);
        let psi = first_mode(&cfg, 1.0);
        let st = build_trial_state(&cfg, &psi).unwrap();
        assert!(st.a_psi.max_asymmetry() <= 1e-12 * st.a_psi.values.amax());
        assert!(st.spectrum_min >= -1e-9 && st.spectrum_max <= 1.0 + 1e-9);
        assert!(st.inequality_probe().unwrap() >= -1e-9);
        // ‖γ − 𝔞𝔞̄‖ ≤ 3‖𝔞𝔞̄‖² in operator norm
        let diff = PairKernel {
            values: &st.gamma_psi.values - &st.aa.values,
            ..st.aa.clone()
        };
        let top = |k: &PairKernel| k.operator_spectrum().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(top(&diff) <= 3.0 * top(&st.aa).powi(2));
        // support: pair centers outside the eroded set or pair distance
        // beyond 3ℓ/2 carry no weight
        let sup = cfg.trial_support().unwrap();
        let g = cfg.mask.grid();
        let com = cfg.com_grid();
        for (a, &i) in st.a_psi.nodes.iter().enumerate() {
            for (b, &j) in st.a_psi.nodes.iter().enumerate() {
                let (xi, xj) = (g.coord(i)[0], g.coord(j)[0]);
                let s = g.multi_index(i)[0] + g.multi_index(j)[0];
                if !sup.is_inside(com.index(&[s])) || (xi - xj).abs() > 1.5 * cfg.ell() {
                    assert_eq!(st.a_psi.values[(a, b)], 0.0);
                }
            }
        }
        // density
        let rho = one_body_density(&st);
        assert!(rho.values.iter().all(|&v| v >= -1e-10));
        assert!((crate::grid::integrate(&rho) - st.gamma_psi.trace()).abs() < 1e-12 * st.gamma_psi.trace());
    }

    #[test]
    fn support_violation_is_rejected() {
        let cfg = interval_cfg(1.0, 0.05, 6.0, 1.0, 1.0);
        let psi = ScalarField::from_fn(&cfg.com_grid(), |x| (std::f64::consts::PI * x[0]).sin());
        let psi = cfg.com_mask().restrict(&psi).unwrap();
        assert!(matches!(build_trial_state(&cfg, &psi), Err(Error::Support(_))));
    }

    #[test]
    fn energy_matches_direct_sums() {
        // independent evaluation of Tr(𝔥γ) + ∬V|α|² with explicit loops
        let cfg = interval_cfg(1.0, 0.1, 6.0, 2.0, 1.0);
        let psi = first_mode(&cfg, 0.7);
        let st = build_trial_state(&cfg, &psi).unwrap();
        let e = bcs_energy(&cfg, &st).unwrap();
        let n = st.a_psi.len();
        let dx = cfg.spacing();
        let h = cfg.h;
        let gm = &st.gamma_psi.values;
        let mut tr = 0.0;
        for i in 0..n {
            let left = if i > 0 { gm[(i - 1, i)] } else { 0.0 };
            let right = if i + 1 < n { gm[(i + 1, i)] } else { 0.0 };
            tr += h * h * (2.0 * gm[(i, i)] - left - right) / (dx * dx) - cfg.mu() * gm[(i, i)];
        }
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                let r = (i as f64 - j as f64) * dx / h;
                v += 2.0 / (r.cosh().powi(2)) * -1.0 * st.a_psi.values[(i, j)].powi(2);
            }
        }
        let oracle = dx * tr + dx * dx * v;
        assert!((e - oracle).abs() <= 1e-10 * oracle.abs(), "{e} vs {oracle}");
    }

    #[test]
    fn pairing_onset_lowers_energy() {
        let cfg = interval_cfg(2.0, 0.05, 6.0, 4.0, 1.0);
        let prob = cfg.gp_problem(true).unwrap();
        let (theta, e_gp) = one_mode_upper_bound(&prob).unwrap();
        assert!(theta > 0.0 && e_gp < 0.0);
        let sol = minimize_gp(&prob, DEFAULT_GP_TOL, 500).unwrap();
        let st = build_trial_state(&cfg, &sol.psi).unwrap();
        assert!(bcs_energy(&cfg, &st).unwrap() < 0.0);
    }

    #[test]
    fn energy_tracks_gp_scaling() {
        // h^{-3}E^BCS = E^GP + h^{1/2} g‖ψ‖₄⁴ + O(h) at the minimizer
        let cfg = interval_cfg(2.0, 0.05, 6.0, 4.0, 2.0);
        let prob = cfg.gp_problem(true).unwrap();
        let sol = minimize_gp(&prob, DEFAULT_GP_TOL, 500).unwrap();
        let st = build_trial_state(&cfg, &sol.psi).unwrap();
        let e = bcs_energy(&cfg, &st).unwrap() / cfg.h.powi(3);
        let gp = gp_energy(&prob, &sol.psi).unwrap();
        let quartic = cfg.g_bcs() * sol.psi.lp_norm(4.0).powi(4);
        let rest = e - gp - cfg.h.sqrt() * quartic;
        assert!(rest.abs() < 0.03 * gp.abs(), "{e} {gp} {rest}");
    }

    #[test]
    fn extraction_round_trip_and_norms() {
        let cfg = interval_cfg(1.0, 0.05, 6.0, 1.0, 2.0);
        let psi = first_mode(&cfg, 1.3);
        let alpha = product_kernel(&cfg, &psi, false).unwrap();
        let op = extract_order_parameter(&cfg, &alpha).unwrap();
        let err = psi.combine(1.0, &op.psi, -1.0).unwrap().max_abs();
        assert!(err < 1e-8, "round trip {err}");
        assert!(op.xi.values.amax() < 1e-8 * alpha.values.amax());
        assert!(op.orthogonality < 1e-10);
        let (l, r) = norm_identity(&cfg, &alpha, &op);
        assert!((l - r).abs() < 1e-8 * l);
        // cut kernel: identity stays exact, ψ moves slightly
        let st = build_trial_state(&cfg, &psi).unwrap();
        let op = extract_order_parameter(&cfg, &st.a_psi).unwrap();
        let (l, r) = norm_identity(&cfg, &st.a_psi, &op);
        assert!((l - r).abs() < 1e-10 * l);
        assert!(op.orthogonality < 1e-10);
    }

    #[test]
    fn generic_kernel_norm_identity() {
        let cfg = interval_cfg(1.0, 0.1, 6.0, 1.0, 1.0);
        let mut k = PairKernel::zeros(&cfg.mask);
        let n = k.len();
        for i in 0..n {
            for j in 0..=i {
                let v = ((i * 7 + j * 3) % 11) as f64 - 5.0;
                k.values[(i, j)] = v;
                k.values[(j, i)] = v;
            }
        }
        let op = extract_order_parameter(&cfg, &k).unwrap();
        let (l, r) = norm_identity(&cfg, &k, &op);
        assert!((l - r).abs() < 1e-10 * l, "{l} {r}");
        assert!(op.orthogonality < 1e-10 * op.psi.max_abs().max(1.0));
    }

    #[test]
    fn two_interval_decay() {
        let run = |h: f64| {
            let n = (2.3 * 6.0 / h).ceil() as usize + 1;
            let grid = Grid::cube(1, 0.0, 2.3, n).unwrap();
            let mask = DomainMask::intervals(&grid, &[(0.0, 1.0), (1.3, 2.3)]).unwrap();
            let cfg = BCSConfig::new(&mask, &pt(), None, h, 1.0, 1.0).unwrap();
            let avg = minkowski_average_refined(&mask).unwrap();
            let psi = avg.restrict(&ScalarField::from_fn(&cfg.com_grid(), |x| 1.0 + 0.3 * x[0])).unwrap();
            let alpha = product_kernel(&cfg, &psi, false).unwrap();
            let rho = cfg.relative().ground.rho_star.unwrap();
            (decay_samples(&cfg, &alpha).unwrap(), rho * cfg.relative().delta)
        };
        let (coarse, e0) = run(0.1);
        for h in [0.07, 0.05] {
            let (fine, e1) = run(h);
            let rep = decay_bound(&coarse, &fine, (e0 + e1).exp()).unwrap();
            println!("{h} {rep:?}");
            assert!(rep.holds, "{rep:?}");
        }
    }

    #[test]
    fn com_identity() {
        let cfg = interval_cfg(1.0, 0.1, 6.0, 1.5, 1.0);
        let psi = first_mode(&cfg, 0.8);
        let st = build_trial_state(&cfg, &psi).unwrap();
        let direct = pairing_energy(&cfg, &st.a_psi).unwrap();
        let com = com_quadrature(&cfg, &st.a_psi).unwrap();
        assert!((direct - com).abs() < 1e-8 * direct.abs().max(1e-12), "{direct} {com}");
    }

    #[test]
    fn semiclassics_identity_exact_on_lattice() {
        let setup = IntervalSetup {
            lower: 0.0,
            upper: 1.0,
            potential: pt(),
            d: 1.0,
            q: 1.0,
            nodes_per_h: 6.0,
        };
        let cfg = setup.config(0.05, &|x| 0.5 * (-(x[0] - 0.5f64).powi(2) * 20.0).exp()).unwrap();
        let psi = ScalarField::from_fn(&cfg.com_grid(), |x| {
            let t = (x[0] - 0.25) / 0.5;
            if t > 0.0 && t < 1.0 {
                (std::f64::consts::PI * t).sin().powi(3)
            } else {
                0.0
            }
        });
        let rec = semiclassics_check(&cfg, &psi).unwrap();
        assert!(rec.residual_i < 1e-10, "{rec:?}");
        assert!(rec.defect_i < 0.1);
        assert!(rec.error_ii < 0.01 && rec.error_iii < 0.2, "{rec:?}");
    }

    #[test]
    fn binding_term_vanishes_uncut() {
        let cfg = interval_cfg(1.0, 0.1, 6.0, 1.0, 6.0);
        let rel = cfg.relative();
        let a = &rel.ground.alpha_star;
        let mask = DomainMask::from_fn(&a.grid, true, |_| true).unwrap();
        let op = assemble_dirichlet(&mask, -1.0, Some(&cfg.potential.sample(&a.grid)), cfg.e_b()).unwrap();
        let v = crate::grid::inner_product(a, &op.apply(a).unwrap()).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn kernel_export_round_trip() {
        let cfg = interval_cfg(1.0, 0.1, 6.0, 1.0, 1.0);
        let psi = first_mode(&cfg, 1.0);
        let st = build_trial_state(&cfg, &psi).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("alpha.bin");
        st.a_psi.export(&p, cfg.h, "alpha").unwrap();
        let v = read_kernel_values(&p).unwrap();
        assert_eq!(v.len(), st.a_psi.len().pow(2));
        assert_eq!(v[1], st.a_psi.values[(0, 1)]);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("alpha.bin.json")).unwrap()).unwrap();
        assert_eq!(side["n"], st.a_psi.len());
        assert_eq!(side["kind"], "alpha");
    }
}
