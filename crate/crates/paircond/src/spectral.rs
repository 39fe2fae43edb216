//! Dirichlet finite-difference operators on masks and the eigen/Hardy solvers
//! built on them.
//!
//! Operators act on *local* vectors holding one value per interior node, in
//! ascending node order. The Euclidean inner product of local vectors is the
//! L² pairing divided by the cell volume, so symmetric in one sense means
//! symmetric in the other.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{usage, Error, Result};
use crate::geometry::DomainMask;
use crate::grid::{Grid, ScalarField, MAX_DIM};

const NONE: u32 = u32::MAX;

/// `c·Δ + V + s` on the interior nodes of a mask with zero exterior values.
#[derive(Clone, Debug)]
pub struct StencilOperator {
    mask: DomainMask,
    pub laplacian_coefficient: f64,
    pub shift: f64,
    nodes: Vec<usize>,
    local: Vec<u32>,
    pot: Vec<f64>,
    diag: Vec<f64>,
    nbr: Vec<[u32; 2 * MAX_DIM]>,
    off: [f64; MAX_DIM],
}

pub fn assemble_dirichlet(
    mask: &DomainMask,
    laplacian_coefficient: f64,
    potential: Option<&ScalarField>,
    shift: f64,
) -> Result<StencilOperator> {
    let g = mask.grid();
    if let Some(v) = potential {
        if v.grid != *g {
            return Err(Error::GridMismatch);
        }
    }
    let nodes = mask.nodes();
    if nodes.is_empty() {
        return usage("operator on an empty mask");
    }
    let pot: Vec<f64> = match potential {
        Some(v) => nodes.iter().map(|&k| v.values[k]).collect(),
        None => vec![0.0; nodes.len()],
    };
    if pot.iter().any(|v| !v.is_finite()) {
        return usage("potential has non-finite values inside the mask");
    }
    StencilOperator::build(mask.clone(), laplacian_coefficient, pot, shift)
}

impl StencilOperator {
    fn build(mask: DomainMask, c: f64, pot: Vec<f64>, shift: f64) -> Result<Self> {
        let g = mask.grid().clone();
        let d = g.dim();
        let nodes = mask.nodes();
        let mut local = vec![NONE; g.len()];
        for (i, &k) in nodes.iter().enumerate() {
            local[k] = i as u32;
        }
        let st = g.strides();
        let mut off = [0.0; MAX_DIM];
        let mut centre = 0.0;
        for a in 0..d {
            off[a] = c / (g.spacing()[a] * g.spacing()[a]);
            centre -= 2.0 * off[a];
        }
        let diag = pot.iter().map(|v| centre + v + shift).collect();
        let nbr = nodes
            .iter()
            .map(|&k| {
                let idx = g.multi_index(k);
                let mut nb = [NONE; 2 * MAX_DIM];
                for a in 0..d {
                    if idx[a] > 0 {
                        nb[2 * a] = local[k - st[a]];
                    }
                    if idx[a] + 1 < g.n()[a] {
                        nb[2 * a + 1] = local[k + st[a]];
                    }
                }
                nb
            })
            .collect();
        Ok(StencilOperator {
            mask,
            laplacian_coefficient: c,
            shift,
            nodes,
            local,
            pot,
            diag,
            nbr,
            off,
        })
    }

    pub fn mask(&self) -> &DomainMask {
        &self.mask
    }

    pub fn grid(&self) -> &Grid {
        self.mask.grid()
    }

    /// Number of unknowns.
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `y = A x` on local vectors.
    pub fn apply_local(&self, x: &[f64], y: &mut [f64]) {
        let d = self.grid().dim();
        for i in 0..self.nodes.len() {
            let nb = &self.nbr[i];
            let mut acc = self.diag[i] * x[i];
            for a in 0..d {
                let mut s = 0.0;
                if nb[2 * a] != NONE {
                    s += x[nb[2 * a] as usize];
                }
                if nb[2 * a + 1] != NONE {
                    s += x[nb[2 * a + 1] as usize];
                }
                acc += self.off[a] * s;
            }
            y[i] = acc;
        }
    }

    /// Full-grid action; the output vanishes outside the mask.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        let x = self.to_local(f)?;
        let mut y = vec![0.0; x.len()];
        self.apply_local(&x, &mut y);
        Ok(self.to_field(&y))
    }

    pub fn to_local(&self, f: &ScalarField) -> Result<Vec<f64>> {
        if f.grid != *self.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(self.nodes.iter().map(|&k| f.values[k]).collect())
    }

    pub fn to_field(&self, x: &[f64]) -> ScalarField {
        let mut f = ScalarField::zeros(self.grid());
        for (&k, &v) in self.nodes.iter().zip(x) {
            f.values[k] = v;
        }
        f
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_estimate(&self) -> f64 {
        let d = self.grid().dim();
        let spread: f64 = (0..d).map(|a| 2.0 * self.off[a].abs()).sum();
        self.diag.iter().fold(0.0f64, |m, v| m.max(v.abs())) + spread
    }

    /// Gershgorin interval containing the spectrum.
    fn spectrum_bounds(&self) -> (f64, f64) {
        let d = self.grid().dim();
        let spread: f64 = (0..d).map(|a| 2.0 * self.off[a].abs()).sum();
        let lo = self.diag.iter().cloned().fold(f64::INFINITY, f64::min) - spread;
        let hi = self.diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + spread;
        (lo, hi)
    }

    /// Symmetric tridiagonal form for one-dimensional masks.
    pub(crate) fn tridiagonal(&self) -> Option<Tridiagonal> {
        if self.grid().dim() != 1 {
            return None;
        }
        let n = self.nodes.len();
        let off = (0..n.saturating_sub(1))
            .map(|i| {
                if self.nbr[i][1] == (i + 1) as u32 {
                    self.off[0]
                } else {
                    0.0
                }
            })
            .collect();
        Some(Tridiagonal {
            diag: self.diag.clone(),
            off,
        })
    }

    /// Same operator on the grid with every other node, sampling the mask
    /// and potential at the retained nodes.
    fn coarsen(&self) -> Option<StencilOperator> {
        let g = self.grid();
        let cg = g.coarsen()?;
        let d = g.dim();
        let mut inside = vec![false; cg.len()];
        let mut pot = Vec::new();
        let mut fine = [0usize; MAX_DIM];
        for (k, v) in inside.iter_mut().enumerate() {
            let idx = cg.multi_index(k);
            for a in 0..d {
                fine[a] = 2 * idx[a];
            }
            let l = self.local[g.index(&fine[..d])];
            if l != NONE {
                *v = true;
                pot.push(self.pot[l as usize]);
            }
        }
        if pot.is_empty() {
            return None;
        }
        let mask = DomainMask::from_inside(&cg, inside, self.mask.convex_hint).ok()?;
        if mask.count() != pot.len() {
            return None;
        }
        StencilOperator::build(mask, self.laplacian_coefficient, pot, self.shift).ok()
    }

    /// Multilinear interpolation of a coarse local vector onto this operator.
    fn prolongate(&self, coarse: &StencilOperator, xc: &[f64]) -> Vec<f64> {
        let g = self.grid();
        let cgd = coarse.grid();
        let d = g.dim();
        self.nodes
            .iter()
            .map(|&k| {
                let idx = g.multi_index(k);
                let mut corners = vec![[0usize; MAX_DIM]];
                for a in 0..d {
                    let mut next = Vec::with_capacity(corners.len() * 2);
                    for c in &corners {
                        let mut c0 = *c;
                        c0[a] = idx[a] / 2;
                        next.push(c0);
                        if idx[a] % 2 == 1 {
                            let mut c1 = *c;
                            c1[a] = idx[a] / 2 + 1;
                            next.push(c1);
                        }
                    }
                    corners = next;
                }
                let m = corners.len() as f64;
                corners
                    .iter()
                    .map(|c| {
                        let l = coarse.local[cgd.index(&c[..d])];
                        if l == NONE {
                            0.0
                        } else {
                            xc[l as usize]
                        }
                    })
                    .sum::<f64>()
                    / m
            })
            .collect()
    }
}

/// Symmetric tridiagonal matrix; `off[i]` couples entries `i` and `i+1`.
#[derive(Clone, Debug)]
pub(crate) struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    /// Number of eigenvalues strictly below `x`.
    pub fn sturm_count(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.diag.len() {
            let e2 = if i == 0 { 0.0 } else { self.off[i - 1] * self.off[i - 1] };
            q = self.diag[i] - x - if e2 == 0.0 { 0.0 } else { e2 / q };
            if q == 0.0 {
                q = -f64::EPSILON * (x.abs() + 1.0);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// `k`-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, k: usize, lo: f64, hi: f64) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.sturm_count(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(T - sigma) x = b`, assuming the shifted matrix is definite.
    pub fn solve_shifted(&self, sigma: f64, b: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut dp = vec![0.0; n];
        let mut l = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            if i == 0 {
                dp[0] = self.diag[0] - sigma;
                y[0] = b[0];
            } else {
                l[i] = self.off[i - 1] / dp[i - 1];
                dp[i] = self.diag[i] - sigma - l[i] * self.off[i - 1];
                y[i] = b[i] - l[i] * y[i - 1];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let next = if i + 1 < n { self.off[i] * x[i + 1] } else { 0.0 };
            x[i] = (y[i] - next) / dp[i];
        }
        x
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }
}

/// Converged lowest eigenpair. The eigenvector is L²-normalized, zero outside
/// the mask, and signed so that its integral is nonnegative.
#[derive(Clone, Debug)]
pub struct EigenResult {
    pub eigenvalue: f64,
    pub eigenvector: ScalarField,
    pub residual: f64,
    pub iterations: usize,
}

pub const DEFAULT_TOL: f64 = 1e-10;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn finish(op: &StencilOperator, lambda: f64, mut x: Vec<f64>, iterations: usize) -> EigenResult {
    let w = op.grid().weight();
    let s = norm(&x);
    let sign = if x.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for v in x.iter_mut() {
        *v *= sign / s;
    }
    let mut ax = vec![0.0; x.len()];
    op.apply_local(&x, &mut ax);
    let residual = ax
        .iter()
        .zip(&x)
        .map(|(a, v)| (a - lambda * v).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = 1.0 / w.sqrt();
    EigenResult {
        eigenvalue: lambda,
        eigenvector: op.to_field(&x.iter().map(|v| v * scale).collect::<Vec<_>>()),
        residual,
        iterations,
    }
}

/// Lowest eigenpair with `residual ≤ tol·‖A‖`.
pub fn smallest_eigenpair(op: &StencilOperator, tol: f64, max_iter: usize) -> Result<EigenResult> {
    smallest_eigenpair_from(op, tol, max_iter, None)
}

/// As [`smallest_eigenpair`], optionally starting from a full-grid guess.
pub fn smallest_eigenpair_from(
    op: &StencilOperator,
    tol: f64,
    max_iter: usize,
    init: Option<&ScalarField>,
) -> Result<EigenResult> {
    if !(tol > 0.0) {
        return usage("eigen tolerance must be positive");
    }
    let target = tol * op.norm_estimate();
    if let Some(t) = op.tridiagonal() {
        return tridiagonal_ground(op, &t, target, max_iter);
    }
    let x0 = match init {
        Some(f) => op.to_local(f)?,
        None => bootstrap(op, tol, max_iter)?,
    };
    let (lambda, x, it) = lobpcg(op, x0, &[], target, max_iter)?;
    Ok(finish(op, lambda, x, it))
}

fn bootstrap(op: &StencilOperator, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if op.size() > 2000 {
        if let Some(coarse) = op.coarsen() {
            if coarse.size() >= 16 {
                let r = smallest_eigenpair_from(&coarse, tol.max(1e-6), max_iter, None)?;
                let xc = coarse.to_local(&r.eigenvector)?;
                let x = op.prolongate(&coarse, &xc);
                if norm(&x) > 0.0 {
                    return Ok(x);
                }
            }
        }
    }
    Ok(op.nodes.iter().map(|&k| op.mask.dist()[k]).collect())
}

fn tridiagonal_ground(
    op: &StencilOperator,
    t: &Tridiagonal,
    target: f64,
    max_iter: usize,
) -> Result<EigenResult> {
    let (lo, hi) = op.spectrum_bounds();
    let lambda0 = t.eigenvalue(0, lo, hi);
    let scale = op.norm_estimate().max(1e-300);
    let sigma = lambda0 - 1e-10 * scale;
    let mut x: Vec<f64> = vec![1.0; t.diag.len()];
    let mut ax = vec![0.0; x.len()];
    let mut res = f64::INFINITY;
    let mut lambda = lambda0;
    for it in 1..=max_iter.max(1) {
        x = t.solve_shifted(sigma, &x);
        let s = norm(&x);
        if !s.is_finite() || s == 0.0 {
            return Err(Error::Internal("inverse iteration broke down".into()));
        }
        x.iter_mut().for_each(|v| *v /= s);
        t.apply(&x, &mut ax);
        lambda = dot(&x, &ax);
        res = ax
            .iter()
            .zip(&x)
            .map(|(a, v)| (a - lambda * v).powi(2))
            .sum::<f64>()
            .sqrt();
        if res <= target {
            return Ok(finish(op, lambda, x, it));
        }
    }
    let _ = lambda;
    Err(Error::NonConvergence {
        what: "inverse iteration",
        iterations: max_iter,
        residual: res,
    })
}

fn project_out(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(x, b);
            axpy(-c, b, x);
        }
    }
}

/// Single-vector locally optimal block preconditioned conjugate gradient
/// (identity preconditioner), optionally orthogonal to `deflate`
/// (orthonormal). Returns `(λ, x, iterations)` with `x` Euclidean-unit.
fn lobpcg(
    op: &StencilOperator,
    mut x: Vec<f64>,
    deflate: &[Vec<f64>],
    target: f64,
    max_iter: usize,
) -> Result<(f64, Vec<f64>, usize)> {
    let n = x.len();
    project_out(&mut x, deflate);
    let s = norm(&x);
    if !(s > 0.0) {
        x = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 * 0.01).collect();
        project_out(&mut x, deflate);
    }
    let s = norm(&x);
    x.iter_mut().for_each(|v| *v /= s);
    let mut ax = vec![0.0; n];
    op.apply_local(&x, &mut ax);
    let mut lambda = dot(&x, &ax);
    let mut p: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut r = vec![0.0; n];
    let mut ar = vec![0.0; n];
    let mut res = f64::INFINITY;
    for it in 1..=max_iter {
        for i in 0..n {
            r[i] = ax[i] - lambda * x[i];
        }
        project_out(&mut r, deflate);
        res = norm(&r);
        if res <= target {
            return Ok((lambda, x, it));
        }
        if n == 1 {
            return Ok((lambda, x, it));
        }
        op.apply_local(&r, &mut ar);
        // Orthonormal basis of span{x, r, p} carrying A-images.
        let mut vs: Vec<Vec<f64>> = vec![x.clone()];
        let mut avs: Vec<Vec<f64>> = vec![ax.clone()];
        let cands: Vec<(Vec<f64>, Vec<f64>)> = match p.take() {
            Some(pp) => vec![(r.clone(), ar.clone()), pp],
            None => vec![(r.clone(), ar.clone())],
        };
        for (mut v, mut av) in cands {
            let before = norm(&v);
            if before == 0.0 {
                continue;
            }
            for _ in 0..2 {
                for (b, ab) in vs.iter().zip(&avs) {
                    let c = dot(&v, b);
                    axpy(-c, b, &mut v);
                    axpy(-c, ab, &mut av);
                }
            }
            let after = norm(&v);
            if after <= 1e-10 * before {
                continue;
            }
            v.iter_mut().for_each(|t| *t /= after);
            av.iter_mut().for_each(|t| *t /= after);
            vs.push(v);
            avs.push(av);
        }
        let m = vs.len();
        let gd = DMatrix::from_fn(m, m, |i, j| 0.5 * (dot(&vs[i], &avs[j]) + dot(&vs[j], &avs[i])));
        let eig = SymmetricEigen::new(gd);
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let c: Vec<f64> = (0..m).map(|i| eig.eigenvectors[(i, imin)]).collect();
        let mut xn = vec![0.0; n];
        let mut axn = vec![0.0; n];
        let mut pn = vec![0.0; n];
        let mut apn = vec![0.0; n];
        for i in 0..m {
            axpy(c[i], &vs[i], &mut xn);
            axpy(c[i], &avs[i], &mut axn);
            if i > 0 {
                axpy(c[i], &vs[i], &mut pn);
                axpy(c[i], &avs[i], &mut apn);
            }
        }
        project_out(&mut xn, deflate);
        let s = norm(&xn);
        xn.iter_mut().for_each(|v| *v /= s);
        axn.iter_mut().for_each(|v| *v /= s);
        x = xn;
        ax = axn;
        if it % 16 == 0 {
            op.apply_local(&x, &mut ax);
        }
        lambda = dot(&x, &ax);
        let pnorm = norm(&pn);
        p = (pnorm > 0.0).then(|| {
            pn.iter_mut().for_each(|v| *v /= pnorm);
            apn.iter_mut().for_each(|v| *v /= pnorm);
            (pn, apn)
        });
    }
    Err(Error::NonConvergence {
        what: "eigensolver",
        iterations: max_iter,
        residual: res,
    })
}

/// The `k` smallest eigenvalues, ascending.
pub fn lowest_eigenvalues(op: &StencilOperator, k: usize, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if k == 0 || k > op.size() {
        return usage("requested eigenvalue count out of range");
    }
    if let Some(t) = op.tridiagonal() {
        let (lo, hi) = op.spectrum_bounds();
        return Ok((0..k).map(|j| t.eigenvalue(j, lo, hi)).collect());
    }
    let target = tol * op.norm_estimate();
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut values = Vec::new();
    let mut x0 = bootstrap(op, tol, max_iter)?;
    for j in 0..k {
        if j > 0 {
            x0 = (0..op.size())
                .map(|i| ((i as f64 + 1.0) * (j as f64 + 0.5) * 0.618).sin())
                .collect();
        }
        let (lambda, x, _) = lobpcg(op, x0.clone(), &found, target, max_iter)?;
        values.push(lambda);
        found.push(x);
    }
    Ok(values)
}

/// `D_c = inf spec(−¼Δ + W)` on the mask.
pub fn compute_dc(mask: &DomainMask, w: Option<&ScalarField>, tol: f64) -> Result<EigenResult> {
    let op = assemble_dirichlet(mask, -0.25, w, 0.0)?;
    smallest_eigenpair(&op, tol, 20_000)
}

/// Outcome of [`conjugate_gradient`].
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum CgStatus {
    Converged,
    MaxIter,
    /// Direction `p` with `pᵀAp ≤ 0` was met; `x` holds the iterate before it.
    NegativeCurvature(Vec<f64>),
}

/// Conjugate gradient for `A x = b` from `x = 0`, stopping at
/// `‖r‖ ≤ tol·‖b‖`.
pub(crate) fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, CgStatus, usize) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return (x, CgStatus::Converged, 0);
    }
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let curv = dot(&p, &ap);
        if curv <= 0.0 {
            return (x, CgStatus::NegativeCurvature(p), it);
        }
        let alpha = rr / curv;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * bnorm {
            return (x, CgStatus::Converged, it);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    (x, CgStatus::MaxIter, max_iter)
}

/// Largest `μ` with `∫ d⁻²|φ|² ≤ μ (∫|∇φ|² + λ∫|φ|²)` over discrete Dirichlet
/// fields. Nodes closer than one spacing to the exterior get weight zero.
/// Krylov iteration on `M^{1/2} K^{-1} M^{1/2}`.
pub fn hardy_quotient(mask: &DomainMask, lambda_offset: f64, tol: f64) -> Result<f64> {
    let g = mask.grid();
    let h = g.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let cutoff = h * (1.0 - 1e-9);
    let k_op = assemble_dirichlet(mask, -1.0, None, lambda_offset)?;
    let m: Vec<f64> = k_op
        .nodes()
        .iter()
        .map(|&k| {
            let d = mask.dist()[k];
            if d < cutoff {
                0.0
            } else {
                1.0 / d
            }
        })
        .collect();
    if m.iter().all(|&v| v == 0.0) {
        return usage("no interior node farther than one spacing from the exterior");
    }
    let lmin = if let Some(t) = k_op.tridiagonal() {
        let (lo, hi) = k_op.spectrum_bounds();
        t.eigenvalue(0, lo, hi)
    } else if lambda_offset < 0.0 {
        smallest_eigenpair(&k_op, 1e-8, 20_000)?.eigenvalue
    } else {
        lambda_offset
    };
    if !(lambda_offset >= 0.0 || lmin > 0.0) || !(lmin >= 0.0) {
        return usage(format!(
            "offset {lambda_offset} leaves the stiffness operator indefinite (lowest {lmin})"
        ));
    }
    let tri = k_op.tridiagonal();
    let solve = |b: &[f64]| -> Result<Vec<f64>> {
        match &tri {
            Some(t) => Ok(t.solve_shifted(0.0, b)),
            None => {
                let (x, status, it) =
                    conjugate_gradient(|v, out| k_op.apply_local(v, out), b, 1e-12, 50_000);
                match status {
                    CgStatus::Converged => Ok(x),
                    CgStatus::NegativeCurvature(_) => {
                        usage("stiffness operator is not positive definite")
                    }
                    CgStatus::MaxIter => Err(Error::NonConvergence {
                        what: "stiffness solve",
                        iterations: it,
                        residual: f64::NAN,
                    }),
                }
            }
        }
    };
    let apply_s = |q: &[f64]| -> Result<Vec<f64>> {
        let b: Vec<f64> = q.iter().zip(&m).map(|(a, s)| a * s).collect();
        let y = solve(&b)?;
        Ok(y.iter().zip(&m).map(|(a, s)| a * s).collect())
    };

    let n = m.len();
    let max_steps = n.min(400);
    let mut q: Vec<f64> = m.clone();
    let s = norm(&q);
    q.iter_mut().for_each(|v| *v /= s);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut prev = f64::NAN;
    let mut stable = 0;
    for j in 0..max_steps {
        let mut w = apply_s(&basis[j])?;
        let a = dot(&w, &basis[j]);
        alphas.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                axpy(-c, b, &mut w);
            }
        }
        let beta = norm(&w);
        let k = alphas.len();
        let t = DMatrix::from_fn(k, k, |r, c| {
            if r == c {
                alphas[r]
            } else if r + 1 == c {
                betas[r]
            } else if c + 1 == r {
                betas[c]
            } else {
                0.0
            }
        });
        let theta = SymmetricEigen::new(t).eigenvalues.max();
        if (theta - prev).abs() <= tol * theta.abs() {
            stable += 1;
            if stable >= 2 {
                return Ok(theta);
            }
        } else {
            stable = 0;
        }
        prev = theta;
        if beta <= 1e-14 * theta.abs().max(1e-300) {
            return Ok(theta);
        }
        betas.push(beta);
        w.iter_mut().for_each(|v| *v /= beta);
        basis.push(w);
    }
    Ok(prev)
}

/// Hardy constant `c_U = 2/√μ` implied by a quotient estimate.
pub fn hardy_constant(mu: f64) -> f64 {
    2.0 / mu.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::inner_product;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_interval(n: usize) -> DomainMask {
        let g = Grid::new(&[0.0], &[1.0], &[n]).unwrap();
        DomainMask::interval(&g, 0.0, 1.0).unwrap()
    }

    fn unit_square(n: usize) -> DomainMask {
        let g = Grid::cube(2, 0.0, 1.0, n).unwrap();
        DomainMask::open_box(&g, &[0.0, 0.0], &[1.0, 1.0]).unwrap()
    }

    fn random_dirichlet(mask: &DomainMask, rng: &mut ChaCha8Rng) -> ScalarField {
        let f = ScalarField::from_fn(mask.grid(), |_| 0.0);
        let mut f = f;
        for k in mask.nodes() {
            f.values[k] = rng.gen_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn interval_laplacian() {
        let op = assemble_dirichlet(&unit_interval(2001), -1.0, None, 0.0).unwrap();
        let r = smallest_eigenpair(&op, DEFAULT_TOL, 100).unwrap();
        assert!((r.eigenvalue - PI * PI).abs() < 1e-4);
        assert!((r.eigenvector.norm() - 1.0).abs() < 1e-12);
        let exact = ScalarField::from_fn(&r.eigenvector.grid, |x| {
            2f64.sqrt() * (PI * x[0]).sin()
        });
        assert!(r.eigenvector.combine(1.0, &exact, -1.0).unwrap().max_abs() < 1e-4);
    }

    #[test]
    fn square_laplacian() {
        let op = assemble_dirichlet(&unit_square(101), -1.0, None, 0.0).unwrap();
        let r = smallest_eigenpair(&op, DEFAULT_TOL, 5000).unwrap();
        assert!((r.eigenvalue - 2.0 * PI * PI).abs() < 5e-3 * 2.0 * PI * PI);
        assert!(r.residual <= DEFAULT_TOL * op.norm_estimate());
        let q = inner_product(&r.eigenvector, &op.apply(&r.eigenvector).unwrap()).unwrap();
        assert!((q - r.eigenvalue).abs() < 1e-8);
    }

    #[test]
    fn shift_translates_spectrum() {
        for mask in [unit_interval(301), unit_square(41)] {
            let a = assemble_dirichlet(&mask, -1.0, None, 0.0).unwrap();
            let b = assemble_dirichlet(&mask, -1.0, None, 3.25).unwrap();
            let ra = smallest_eigenpair(&a, DEFAULT_TOL, 5000).unwrap();
            let rb = smallest_eigenpair(&b, DEFAULT_TOL, 5000).unwrap();
            assert!((rb.eigenvalue - ra.eigenvalue - 3.25).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_and_zero_extended() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::cube(2, -1.2, 1.2, 25).unwrap();
        let mask = DomainMask::l_shape(&g, 1.0).unwrap();
        let w = ScalarField::from_fn(&g, |x| x[0] * x[1]);
        let op = assemble_dirichlet(&mask, -0.25, Some(&w), 0.5).unwrap();
        for _ in 0..5 {
            let f = random_dirichlet(&mask, &mut rng);
            let h = random_dirichlet(&mask, &mut rng);
            let af = op.apply(&f).unwrap();
            let ah = op.apply(&h).unwrap();
            let l = inner_product(&f, &ah).unwrap();
            let r = inner_product(&af, &h).unwrap();
            assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0));
            assert!(mask.is_dirichlet(&af));
        }
    }

    #[test]
    fn matches_dense_eigensolver() {
        let g = Grid::cube(2, -1.2, 1.2, 15).unwrap();
        for mask in [
            DomainMask::l_shape(&g, 1.0).unwrap(),
            DomainMask::slit_square(&g, 1.0).unwrap(),
        ] {
            let w = ScalarField::from_fn(&g, |x| (x[0] - 0.3 * x[1]).cos());
            let op = assemble_dirichlet(&mask, -1.0, Some(&w), 0.0).unwrap();
            let n = op.size();
            let mut dense = DMatrix::zeros(n, n);
            let mut e = vec![0.0; n];
            let mut col = vec![0.0; n];
            for j in 0..n {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[j] = 1.0;
                op.apply_local(&e, &mut col);
                for i in 0..n {
                    dense[(i, j)] = col[i];
                }
            }
            let mut ev: Vec<f64> = SymmetricEigen::new(dense).eigenvalues.iter().cloned().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let r = smallest_eigenpair(&op, 1e-12, 5000).unwrap();
            assert!((r.eigenvalue - ev[0]).abs() < 1e-9 * ev[0].abs().max(1.0));
            let low = lowest_eigenvalues(&op, 2, 1e-12, 5000).unwrap();
            assert!((low[1] - ev[1]).abs() < 1e-8 * ev[1].abs().max(1.0));
        }
    }

    #[test]
    fn tridiagonal_second_eigenvalue() {
        let op = assemble_dirichlet(&unit_interval(201), -1.0, None, 0.0).unwrap();
        let ev = lowest_eigenvalues(&op, 2, DEFAULT_TOL, 100).unwrap();
        let h = 1.0 / 200.0;
        let exact = |k: f64| 4.0 / (h * h) * (k * PI * h / 2.0).sin().powi(2);
        assert!((ev[0] - exact(1.0)).abs() < 1e-8);
        assert!((ev[1] - exact(2.0)).abs() < 1e-8);
    }

    #[test]
    fn critical_value_closed_forms() {
        let r = compute_dc(&unit_interval(2001), None, DEFAULT_TOL).unwrap();
        assert!((r.eigenvalue - PI * PI / 4.0).abs() < 1e-3);
        let r = compute_dc(&unit_square(101), None, DEFAULT_TOL).unwrap();
        assert!((r.eigenvalue - PI * PI / 2.0).abs() < 5e-3);
        let m = unit_interval(501);
        let big = ScalarField::constant(m.grid(), 1e3);
        let a = compute_dc(&m, None, DEFAULT_TOL).unwrap();
        let b = compute_dc(&m, Some(&big), DEFAULT_TOL).unwrap();
        assert!((b.eigenvalue - a.eigenvalue - 1e3).abs() < 1e-8);
    }

    #[test]
    fn bootstrap_converges_on_fine_disk() {
        let g = Grid::cube(2, -1.1, 1.1, 161).unwrap();
        let mask = DomainMask::disk(&g, &[0.0, 0.0], 1.0).unwrap();
        let op = assemble_dirichlet(&mask, -1.0, None, 0.0).unwrap();
        let r = smallest_eigenpair(&op, DEFAULT_TOL, 10_000).unwrap();
        // first zero of J0 squared
        let j0: f64 = 2.404_825_557_695_773;
        assert!((r.eigenvalue - j0 * j0).abs() < 2e-2 * j0 * j0);
    }

    #[test]
    fn hardy_interval_below_four() {
        let coarse = hardy_quotient(&unit_interval(101), 0.0, 1e-8).unwrap();
        let fine = hardy_quotient(&unit_interval(401), 0.0, 1e-8).unwrap();
        assert!(coarse <= 4.0 && fine <= 4.0);
        assert!(fine > coarse);
        let g = Grid::new(&[0.0], &[2.0], &[201]).unwrap();
        let wide = hardy_quotient(&DomainMask::interval(&g, 0.0, 2.0).unwrap(), 0.0, 1e-8).unwrap();
        let same = hardy_quotient(&unit_interval(201), 0.0, 1e-8).unwrap();
        assert!((wide - same).abs() < 1e-6 * same);
        assert!(hardy_quotient(&unit_interval(101), -1e3, 1e-8).is_err());
    }

    #[test]
    fn hardy_square_below_four() {
        let mu = hardy_quotient(&unit_square(41), 0.0, 1e-7).unwrap();
        assert!(mu > 0.5 && mu <= 4.0);
    }

    #[test]
    fn cg_solves_spd() {
        let op = assemble_dirichlet(&unit_square(21), -1.0, None, 1.0).unwrap();
        let b: Vec<f64> = (0..op.size()).map(|i| (i as f64).sin()).collect();
        let (x, status, _) = conjugate_gradient(|v, o| op.apply_local(v, o), &b, 1e-12, 10_000);
        assert_eq!(status, CgStatus::Converged);
        let mut ax = vec![0.0; b.len()];
        op.apply_local(&x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * norm(&b));
        let neg = assemble_dirichlet(&unit_square(21), 1.0, None, 0.0).unwrap();
        let (_, status, _) = conjugate_gradient(|v, o| neg.apply_local(v, o), &b, 1e-12, 100);
        assert!(matches!(status, CgStatus::NegativeCurvature(_)));
    }
}
