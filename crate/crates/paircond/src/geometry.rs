//! Domain masks on grids, exact Euclidean distance transforms, metric
//! erosion/dilation, the Minkowski average `(Ω+Ω)/2`, and the distance ramp
//! `η_{ℓ,U}`.
//!
//! A node belongs to a domain by its center. Nodes on the box faces are
//! always exterior, so Dirichlet fields vanish there.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::grid::{Grid, ScalarField, MAX_DIM};

#[derive(Clone, Debug, PartialEq)]
pub struct DomainMask {
    grid: Grid,
    inside: Vec<bool>,
    dist: Vec<f64>,
    pub convex_hint: Option<bool>,
}

impl DomainMask {
    /// Builds a mask from a per-node indicator. Box-face nodes are forced
    /// outside.
    pub fn from_inside(grid: &Grid, mut inside: Vec<bool>, convex_hint: Option<bool>) -> Result<Self> {
        if inside.len() != grid.len() {
            return usage("indicator length differs from grid size");
        }
        for (k, v) in inside.iter_mut().enumerate() {
            if grid.is_box_boundary(k) {
                *v = false;
            }
        }
        let dist = if inside.iter().any(|&b| b) {
            squared_edt(grid, &inside.iter().map(|&b| !b).collect::<Vec<_>>())
                .into_iter()
                .map(f64::sqrt)
                .collect()
        } else {
            vec![0.0; grid.len()]
        };
        Ok(DomainMask {
            grid: grid.clone(),
            inside,
            dist,
            convex_hint,
        })
    }

    pub fn from_fn(grid: &Grid, convex: bool, f: impl Fn(&[f64]) -> bool) -> Result<Self> {
        let d = grid.dim();
        let inside = (0..grid.len()).map(|k| f(&grid.coord(k)[..d])).collect();
        DomainMask::from_inside(grid, inside, Some(convex))
    }

    /// Union of open intervals (d = 1).
    pub fn intervals(grid: &Grid, pieces: &[(f64, f64)]) -> Result<Self> {
        if grid.dim() != 1 {
            return usage("intervals need a one-dimensional grid");
        }
        let convex = pieces.len() == 1;
        DomainMask::from_fn(grid, convex, |x| {
            pieces.iter().any(|&(a, b)| a < x[0] && x[0] < b)
        })
    }

    pub fn interval(grid: &Grid, a: f64, b: f64) -> Result<Self> {
        DomainMask::intervals(grid, &[(a, b)])
    }

    /// Open axis-aligned box.
    pub fn open_box(grid: &Grid, lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != grid.dim() || upper.len() != grid.dim() {
            return usage("box bounds differ from grid dimension");
        }
        DomainMask::from_fn(grid, true, |x| {
            (0..x.len()).all(|a| lower[a] < x[a] && x[a] < upper[a])
        })
    }

    /// Open ball.
    pub fn disk(grid: &Grid, center: &[f64], radius: f64) -> Result<Self> {
        if center.len() != grid.dim() {
            return usage("disk center differs from grid dimension");
        }
        DomainMask::from_fn(grid, true, |x| {
            let r2: f64 = (0..x.len()).map(|a| (x[a] - center[a]).powi(2)).sum();
            r2 < radius * radius
        })
    }

    /// `(-s,s)²` with the quadrant `[0,s)²` removed.
    pub fn l_shape(grid: &Grid, s: f64) -> Result<Self> {
        if grid.dim() != 2 {
            return usage("the L-shape is two-dimensional");
        }
        DomainMask::from_fn(grid, false, |x| {
            x[0].abs() < s && x[1].abs() < s && !(x[0] >= 0.0 && x[1] >= 0.0)
        })
    }

    /// `(-s,s)²` minus the one-node-wide slit `(-s,0] × {0}`. Needs a node row
    /// at `y = 0`.
    pub fn slit_square(grid: &Grid, s: f64) -> Result<Self> {
        if grid.dim() != 2 {
            return usage("the slit square is two-dimensional");
        }
        let half = 0.5 * grid.spacing()[1];
        let row = (0..grid.n()[1]).any(|j| grid.coord_axis(1, j).abs() < 1e-9 * half);
        if !row {
            return usage("slit square needs a grid row at y = 0");
        }
        DomainMask::from_fn(grid, false, |x| {
            let on_slit = x[1].abs() < half && x[0] <= 1e-12;
            x[0].abs() < s && x[1].abs() < s && !on_slit
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn is_inside(&self, k: usize) -> bool {
        self.inside[k]
    }

    /// Cached distance to the nearest exterior node (0 outside).
    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Linear indices of the interior nodes, ascending.
    pub fn nodes(&self) -> Vec<usize> {
        (0..self.inside.len()).filter(|&k| self.inside[k]).collect()
    }

    /// `true` when every interior node of `self` is interior in `other`.
    pub fn is_subset_of(&self, other: &DomainMask) -> bool {
        self.grid == other.grid && self.inside.iter().zip(&other.inside).all(|(&a, &b)| !a || b)
    }

    /// Distance from each interior node to the nearest box face.
    pub fn box_margin(&self) -> f64 {
        let g = &self.grid;
        let mut m = f64::INFINITY;
        for k in self.nodes() {
            let x = g.coord(k);
            for a in 0..g.dim() {
                m = m.min(x[a] - g.lower()[a]).min(g.upper()[a] - x[a]);
            }
        }
        m
    }

    /// Zeroes a field outside the mask.
    pub fn restrict(&self, f: &ScalarField) -> Result<ScalarField> {
        if f.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let values = f
            .values
            .iter()
            .zip(&self.inside)
            .map(|(&v, &b)| if b { v } else { 0.0 })
            .collect();
        Ok(ScalarField {
            grid: self.grid.clone(),
            values,
        })
    }

    /// `true` when `f` vanishes on every exterior node.
    pub fn is_dirichlet(&self, f: &ScalarField) -> bool {
        f.grid == self.grid && f.values.iter().zip(&self.inside).all(|(&v, &b)| b || v == 0.0)
    }

    /// Same domain on the half-spacing grid: a refined node is interior when
    /// every coarse node surrounding it is interior.
    pub fn refine(&self) -> DomainMask {
        let g = &self.grid;
        let r = g.refine();
        let d = g.dim();
        let inside = (0..r.len())
            .map(|k| {
                let s = r.multi_index(k);
                let mut corners = vec![[0usize; MAX_DIM]];
                for a in 0..d {
                    let lo = s[a] / 2;
                    let hi = (s[a] + 1) / 2;
                    let mut next = Vec::with_capacity(corners.len() * 2);
                    for c in &corners {
                        let mut c0 = *c;
                        c0[a] = lo;
                        next.push(c0);
                        if hi != lo {
                            let mut c1 = *c;
                            c1[a] = hi;
                            next.push(c1);
                        }
                    }
                    corners = next;
                }
                corners.iter().all(|c| self.inside[g.index(&c[..d])])
            })
            .collect();
        DomainMask::from_inside(&r, inside, self.convex_hint).expect("refined mask")
    }

    /// Brute-force convexity probe: every sample on every segment between two
    /// interior nodes lies within one spacing of an interior node. Quadratic
    /// in the node count; meant for small grids.
    pub fn segment_convexity_probe(&self) -> bool {
        let g = &self.grid;
        let d = g.dim();
        let nodes = self.nodes();
        let h = g.max_spacing();
        for (ia, &a) in nodes.iter().enumerate() {
            let xa = g.coord(a);
            for &b in &nodes[ia + 1..] {
                let xb = g.coord(b);
                let len = g.distance(a, b);
                let steps = (2.0 * len / h).ceil() as usize;
                for t in 1..steps {
                    let s = t as f64 / steps as f64;
                    let mut idx = [0usize; MAX_DIM];
                    let mut ok = true;
                    for ax in 0..d {
                        let x = xa[ax] + s * (xb[ax] - xa[ax]);
                        let f = ((x - g.lower()[ax]) / g.spacing()[ax]).round();
                        if f < 0.0 || f >= g.n()[ax] as f64 {
                            ok = false;
                        }
                        idx[ax] = f.max(0.0) as usize;
                    }
                    if !ok {
                        return false;
                    }
                    let k = g.index(&idx[..d]);
                    if !self.inside[k] && self.dist_to_inside_node(k) > h * 1.000001 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn dist_to_inside_node(&self, k: usize) -> f64 {
        self.nodes()
            .into_iter()
            .map(|j| self.grid.distance(j, k))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> MaskFile {
        let mut runs: Vec<(u8, usize)> = Vec::new();
        for &b in &self.inside {
            let bit = b as u8;
            match runs.last_mut() {
                Some((v, c)) if *v == bit => *c += 1,
                _ => runs.push((bit, 1)),
            }
        }
        MaskFile {
            dim: self.grid.dim(),
            lower: self.grid.lower().to_vec(),
            upper: self.grid.upper().to_vec(),
            n: self.grid.n().to_vec(),
            inside: runs,
        }
    }

    pub fn from_json(file: &MaskFile) -> Result<Self> {
        if file.lower.len() != file.dim {
            return usage("mask dimension disagrees with its bounds");
        }
        let grid = Grid::new(&file.lower, &file.upper, &file.n)?;
        let mut inside = Vec::with_capacity(grid.len());
        for &(bit, count) in &file.inside {
            if bit > 1 {
                return usage("mask run bits must be 0 or 1");
            }
            inside.extend(std::iter::repeat(bit == 1).take(count));
        }
        if inside.len() != grid.len() {
            return usage(format!(
                "mask runs cover {} nodes, grid has {}",
                inside.len(),
                grid.len()
            ));
        }
        DomainMask::from_inside(&grid, inside, None)
    }
}

/// Portable mask description; `inside` holds `(bit, run length)` pairs in
/// node order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFile {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n: Vec<usize>,
    pub inside: Vec<(u8, usize)>,
}

fn check_nontrivial(mask: &DomainMask) -> Result<()> {
    let c = mask.count();
    if c == 0 {
        return usage("mask has no interior node");
    }
    if c == mask.grid.len() {
        return usage("mask has no exterior node");
    }
    Ok(())
}

/// Distance from every interior node to the nearest exterior node center,
/// via the separable exact transform.
pub fn distance_field(mask: &DomainMask) -> Result<ScalarField> {
    check_nontrivial(mask)?;
    ScalarField::from_values(&mask.grid, mask.dist.clone())
}

/// Same as [`distance_field`] by exhaustive search over node pairs.
pub fn distance_field_brute(mask: &DomainMask) -> Result<ScalarField> {
    check_nontrivial(mask)?;
    let g = &mask.grid;
    let d = g.dim();
    let outside: Vec<[usize; MAX_DIM]> = (0..g.len())
        .filter(|&k| !mask.inside[k])
        .map(|k| g.multi_index(k))
        .collect();
    let values = (0..g.len())
        .map(|k| {
            if !mask.inside[k] {
                return 0.0;
            }
            let p = g.multi_index(k);
            outside
                .iter()
                .map(|q| {
                    (0..d)
                        .map(|a| {
                            let t = p[a] as f64 - q[a] as f64;
                            g.spacing()[a] * g.spacing()[a] * (t * t)
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    ScalarField::from_values(g, values)
}

/// Squared distance from every node to the nearest `feature` node, one
/// lower-envelope pass per axis.
fn squared_edt(grid: &Grid, feature: &[bool]) -> Vec<f64> {
    let mut f: Vec<f64> = feature
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let st = grid.strides();
    let mut line = Vec::new();
    let mut out = Vec::new();
    for a in 0..grid.dim() {
        let n = grid.n()[a];
        let h2 = grid.spacing()[a] * grid.spacing()[a];
        for start in 0..grid.len() {
            if grid.multi_index(start)[a] != 0 {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|i| f[start + i * st[a]]));
            envelope_1d(&line, h2, &mut out);
            for i in 0..n {
                f[start + i * st[a]] = out[i];
            }
        }
    }
    f
}

/// `out[p] = min_q h2 (p-q)² + f[q]` over the finite entries of `f`.
fn envelope_1d(f: &[f64], h2: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let inter = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + h2 * qf * qf) - (f[p] + h2 * pf * pf)) / (2.0 * h2 * (qf - pf))
    };
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&top) => {
                    let s = inter(q, top);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let t = p as f64 - v[k] as f64;
        *o = h2 * (t * t) + f[v[k]];
    }
}

/// Interior approximation: nodes farther than `ell` from the exterior.
pub fn erode(mask: &DomainMask, ell: f64) -> Result<DomainMask> {
    if !(ell >= 0.0) {
        return usage("erosion length must be non-negative");
    }
    let inside = mask
        .inside
        .iter()
        .zip(&mask.dist)
        .map(|(&b, &d)| b && d > ell)
        .collect();
    DomainMask::from_inside(&mask.grid, inside, mask.convex_hint)
}

/// Exterior approximation: the mask together with all nodes closer than
/// `ell` to it.
pub fn dilate(mask: &DomainMask, ell: f64) -> Result<DomainMask> {
    if !(ell >= 0.0) {
        return usage("dilation length must be non-negative");
    }
    if mask.count() == 0 {
        return usage("cannot dilate an empty mask");
    }
    let margin = mask.box_margin();
    let need = ell + 2.0 * mask.grid.max_spacing();
    if margin < need {
        return Err(Error::BoxOverflow { ell, margin });
    }
    let to_inside = squared_edt(&mask.grid, &mask.inside);
    let inside = mask
        .inside
        .iter()
        .zip(&to_inside)
        .map(|(&b, &d2)| b || d2.sqrt() < ell)
        .collect();
    DomainMask::from_inside(&mask.grid, inside, mask.convex_hint)
}

/// Set of multi-index sums `i + j` over interior pairs, on the refined index
/// range `0..2n-1`.
fn pair_sums(mask: &DomainMask) -> (Grid, Vec<bool>) {
    let g = &mask.grid;
    let d = g.dim();
    let r = g.refine();
    let mut hit = vec![false; r.len()];
    let idx: Vec<[usize; MAX_DIM]> = mask.nodes().into_iter().map(|k| g.multi_index(k)).collect();
    let mut s = [0usize; MAX_DIM];
    for (a, p) in idx.iter().enumerate() {
        for q in &idx[a..] {
            for ax in 0..d {
                s[ax] = p[ax] + q[ax];
            }
            hit[r.index(&s[..d])] = true;
        }
    }
    (r, hit)
}

/// Minkowski average `(Ω+Ω)/2` on the same grid: node `X` is interior when
/// some interior pair has its midpoint within half a spacing of `X`.
pub fn minkowski_average(mask: &DomainMask) -> Result<DomainMask> {
    if mask.count() == 0 {
        return usage("empty mask");
    }
    let g = &mask.grid;
    let d = g.dim();
    let (r, hit) = pair_sums(mask);
    let tol = 0.25 * g.max_spacing().powi(2) * (1.0 + 1e-9);
    let mut inside = vec![false; g.len()];
    for (k, _) in hit.iter().enumerate().filter(|(_, &b)| b) {
        let s = r.multi_index(k);
        let mut cands = vec![([0usize; MAX_DIM], 0.0f64)];
        for a in 0..d {
            let mut next = Vec::new();
            for (c, e) in &cands {
                if s[a] % 2 == 0 {
                    let mut c0 = *c;
                    c0[a] = s[a] / 2;
                    next.push((c0, *e));
                } else {
                    let off = 0.25 * g.spacing()[a] * g.spacing()[a];
                    for m in [s[a] / 2, s[a] / 2 + 1] {
                        let mut c1 = *c;
                        c1[a] = m;
                        next.push((c1, e + off));
                    }
                }
            }
            cands = next;
        }
        for (c, e) in cands {
            if e <= tol {
                inside[g.index(&c[..d])] = true;
            }
        }
    }
    DomainMask::from_inside(g, inside, mask.convex_hint)
}

/// Exact midpoint set `{(x+y)/2}` of interior pairs, as a mask on the
/// half-spacing grid.
pub fn minkowski_average_refined(mask: &DomainMask) -> Result<DomainMask> {
    if mask.count() == 0 {
        return usage("empty mask");
    }
    let (r, hit) = pair_sums(mask);
    DomainMask::from_inside(&r, hit, mask.convex_hint)
}

/// Ramp `η_{ℓ,U}`: 0 within `ell` of the exterior, `(d-ℓ)/ℓ` up to `2ell`,
/// 1 beyond.
pub fn cutoff_eta(mask: &DomainMask, ell: f64) -> Result<ScalarField> {
    if !(ell > 0.0 && ell < 1.0) {
        return usage(format!("cutoff length {ell} outside (0, 1)"));
    }
    ScalarField::from_values(&mask.grid, mask.dist.iter().map(|&d| eta(d, ell)).collect())
}

pub fn eta(d: f64, ell: f64) -> f64 {
    if d <= ell {
        0.0
    } else if d <= 2.0 * ell {
        (d - ell) / ell
    } else {
        1.0
    }
}
