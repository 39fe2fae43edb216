//! Uniform Cartesian lattices, real fields on them, node-sum quadrature and
//! direct Fourier sums.
//!
//! Nodes are stored row-major with axis 0 slowest. The quadrature weight of
//! a node is the product of the spacings, halved once for every box face the
//! node lies on. Dirichlet fields vanish on the box faces, where this rule
//! coincides with the plain node sum.

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(lower: &[f64], upper: &[f64], n: &[usize]) -> Result<Grid> {
        let dim = lower.len();
        if dim == 0 || dim > MAX_DIM {
            return usage(format!("grid dimension {dim} not in 1..=3"));
        }
        if upper.len() != dim || n.len() != dim {
            return usage("grid bounds and node counts disagree in length");
        }
        let mut spacing = Vec::with_capacity(dim);
        for a in 0..dim {
            if n[a] < 3 {
                return usage(format!("axis {a} has {} nodes, need at least 3", n[a]));
            }
            let h = (upper[a] - lower[a]) / (n[a] - 1) as f64;
            if !(h > 0.0 && h.is_finite()) {
                return usage(format!("axis {a} has non-positive extent"));
            }
            spacing.push(h);
        }
        Ok(Grid {
            dim,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            n: n.to_vec(),
            spacing,
        })
    }

    /// Same box and node count on every axis.
    pub fn cube(dim: usize, lower: f64, upper: f64, n: usize) -> Result<Grid> {
        Grid::new(&vec![lower; dim], &vec![upper; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Largest spacing over the axes.
    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of a node off the box faces.
    pub fn weight(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Quadrature weight of node `k`.
    pub fn node_weight(&self, k: usize) -> f64 {
        let idx = self.multi_index(k);
        let mut w = self.weight();
        for a in 0..self.dim {
            if idx[a] == 0 || idx[a] + 1 == self.n[a] {
                w *= 0.5;
            }
        }
        w
    }

    /// Weighted sum `Σ values[k] · node_weight(k)`.
    pub fn quadrature(&self, values: impl Iterator<Item = f64>) -> f64 {
        values
            .enumerate()
            .map(|(k, v)| {
                if v != 0.0 && self.is_box_boundary(k) {
                    v * self.node_weight(k)
                } else {
                    v * self.weight()
                }
            })
            .sum()
    }

    pub fn coord_axis(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.n[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing[axis]
        }
    }

    /// Linear index of a multi-index.
    pub fn index(&self, idx: &[usize]) -> usize {
        let mut k = 0;
        for a in 0..self.dim {
            k = k * self.n[a] + idx[a];
        }
        k
    }

    pub fn multi_index(&self, mut k: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        for a in (0..self.dim).rev() {
            idx[a] = k % self.n[a];
            k /= self.n[a];
        }
        idx
    }

    pub fn coord(&self, k: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(k);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.coord_axis(a, idx[a]);
        }
        x
    }

    /// Linear stride of each axis.
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0; MAX_DIM];
        let mut acc = 1;
        for a in (0..self.dim).rev() {
            s[a] = acc;
            acc *= self.n[a];
        }
        s
    }

    /// Nodes on the box faces.
    pub fn is_box_boundary(&self, k: usize) -> bool {
        let idx = self.multi_index(k);
        (0..self.dim).any(|a| idx[a] == 0 || idx[a] + 1 == self.n[a])
    }

    /// Half-spacing grid over the same box (`2n - 1` nodes per axis). Node
    /// `2i` of the refined grid coincides with node `i` of `self`.
    pub fn refine(&self) -> Grid {
        let n: Vec<usize> = self.n.iter().map(|&m| 2 * m - 1).collect();
        Grid::new(&self.lower, &self.upper, &n).expect("refinement of a valid grid")
    }

    /// Grid with every other node (requires odd node counts).
    pub fn coarsen(&self) -> Option<Grid> {
        if self.n.iter().any(|&m| m % 2 == 0 || m < 5) {
            return None;
        }
        let n: Vec<usize> = self.n.iter().map(|&m| (m + 1) / 2).collect();
        Grid::new(&self.lower, &self.upper, &n).ok()
    }

    /// Euclidean distance between two nodes.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (xa, xb) = (self.coord(a), self.coord(b));
        (0..self.dim)
            .map(|d| (xa[d] - xb[d]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Real values on every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return usage(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            ));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples `f` at every node; `f` receives the first `dim` coordinates.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let d = grid.dim();
        let values = (0..grid.len()).map(|k| f(&grid.coord(k)[..d])).collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        same_grid(self, other)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn norm(&self) -> f64 {
        self.grid
            .quadrature(self.values.iter().map(|v| v * v))
            .sqrt()
    }

    /// `(∫|f|^p)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        self.grid
            .quadrature(self.values.iter().map(|v| v.abs().powf(p)))
            .powf(1.0 / p)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫|∇f|²` with forward differences; values beyond the box count as zero.
    pub fn gradient_norm_sq(&self) -> f64 {
        let g = &self.grid;
        let st = g.strides();
        let mut acc = 0.0;
        for a in 0..g.dim() {
            let inv = 1.0 / (g.spacing()[a] * g.spacing()[a]);
            for k in 0..g.len() {
                let i = g.multi_index(k)[a];
                let next = if i + 1 < g.n()[a] {
                    self.values[k + st[a]]
                } else {
                    0.0
                };
                let first = if i == 0 { self.values[k].powi(2) } else { 0.0 };
                acc += ((next - self.values[k]).powi(2) + first) * inv;
            }
        }
        acc * g.weight()
    }
}

pub(crate) fn same_grid(f: &ScalarField, g: &ScalarField) -> Result<()> {
    if f.grid != g.grid || f.values.len() != g.values.len() {
        Err(Error::GridMismatch)
    } else {
        Ok(())
    }
}

/// `Σ f · weight` over all nodes.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid.quadrature(f.values.iter().cloned())
}

/// L² pairing `∫ conj(f) g`; the fields are real so conjugation is trivial.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    same_grid(f, g)?;
    Ok(f.grid
        .quadrature(f.values.iter().zip(&g.values).map(|(a, b)| a * b)))
}

#[derive(Clone, Debug)]
pub struct FourierSamples {
    pub values: Vec<Complex<f64>>,
    /// Set when the field does not decay at the box boundary.
    pub warning: Option<String>,
}

/// `f̂(p) = Σ e^{-i p·x} f(x) · weight` for each momentum in `momenta`.
pub fn fourier_samples(f: &ScalarField, momenta: &[Vec<f64>]) -> Result<FourierSamples> {
    let g = &f.grid;
    let d = g.dim();
    if momenta.iter().any(|p| p.len() != d) {
        return usage("momentum dimension differs from grid dimension");
    }
    let interior = (0..g.len())
        .filter(|&k| !g.is_box_boundary(k))
        .fold(0.0f64, |m, k| m.max(f.values[k].abs()));
    let edge = (0..g.len())
        .filter(|&k| g.is_box_boundary(k))
        .fold(0.0f64, |m, k| m.max(f.values[k].abs()));
    let warning = (edge > 1e-6 * interior).then(|| {
        format!("field does not decay at the box boundary (edge {edge:e}, interior {interior:e})")
    });

    let support: Vec<(usize, f64)> = f
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(k, v)| (k, *v * g.node_weight(k)))
        .collect();
    let coords: Vec<[f64; MAX_DIM]> = support.iter().map(|&(k, _)| g.coord(k)).collect();
    let values = momenta
        .par_iter()
        .map(|p| {
            let (mut re, mut im) = (0.0, 0.0);
            for ((_, v), x) in support.iter().zip(&coords) {
                let phase: f64 = (0..d).map(|a| p[a] * x[a]).sum();
                let (s, c) = phase.sin_cos();
                re += v * c;
                im -= v * s;
            }
            Complex::new(re, im)
        })
        .collect();
    Ok(FourierSamples { values, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(a: f64, b: f64, n: usize) -> Grid {
        Grid::new(&[a], &[b], &[n]).unwrap()
    }

    #[test]
    fn constant_integrates_to_box_length() {
        let g = line(0.0, 1.0, 101);
        assert!((integrate(&ScalarField::constant(&g, 1.0)) - 1.0).abs() < 1e-12);
        let sq = Grid::cube(2, 0.0, 2.0, 41).unwrap();
        assert!((integrate(&ScalarField::constant(&sq, 1.0)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sine_integral() {
        let g = line(0.0, 1.0, 1001);
        let f = ScalarField::from_fn(&g, |x| (PI * x[0]).sin());
        assert!((integrate(&f) - 2.0 / PI).abs() < 1e-5);
        assert_eq!(integrate(&ScalarField::zeros(&g)), 0.0);
    }

    #[test]
    fn inner_products() {
        let g = line(0.0, 1.0, 1001);
        let s1 = ScalarField::from_fn(&g, |x| (PI * x[0]).sin());
        let s2 = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        assert!(inner_product(&s1, &s2).unwrap().abs() < 1e-10);
        let one = ScalarField::constant(&g, 1.0);
        assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-12);
        assert!((inner_product(&s1, &s1).unwrap() - 0.5).abs() < 1e-6);
        let other = line(0.0, 2.0, 1001);
        assert!(matches!(
            inner_product(&s1, &ScalarField::zeros(&other)),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn gaussian_transform_at_zero() {
        let g = line(-12.0, 12.0, 2401);
        let f = ScalarField::from_fn(&g, |x| (-x[0] * x[0] / 2.0).exp());
        let s = fourier_samples(&f, &[vec![0.0], vec![0.7], vec![-0.7]]).unwrap();
        assert!(s.warning.is_none());
        assert!((s.values[0].re - (2.0 * PI).sqrt()).abs() < 1e-6);
        assert!(s.values[1].im.abs() < 1e-10);
        assert!((s.values[1].re - s.values[2].re).abs() < 1e-10);
    }

    #[test]
    fn boundary_warning() {
        let g = line(-1.0, 1.0, 51);
        let f = ScalarField::constant(&g, 1.0);
        assert!(fourier_samples(&f, &[vec![0.0]]).unwrap().warning.is_some());
    }

    #[test]
    fn extreme_nodes_hit_bounds() {
        let g = Grid::new(&[-0.3, 0.1], &[0.7, 2.9], &[7, 13]).unwrap();
        assert_eq!(g.coord_axis(0, 6), 0.7);
        assert_eq!(g.coord_axis(1, 12), 2.9);
        assert_eq!(g.coord_axis(1, 0), 0.1);
        let k = g.index(&[3, 5]);
        assert_eq!(&g.multi_index(k)[..2], &[3, 5]);
        assert!(Grid::new(&[0.0], &[1.0], &[2]).is_err());
    }

    #[test]
    fn refine_embeds_coarse_nodes() {
        let g = Grid::new(&[0.0, -1.0], &[1.0, 1.0], &[11, 21]).unwrap();
        let r = g.refine();
        assert_eq!(r.n(), &[21, 41]);
        for i in 0..11 {
            assert!((r.coord_axis(0, 2 * i) - g.coord_axis(0, i)).abs() < 1e-15);
        }
        assert_eq!(r.coarsen().unwrap(), g);
    }
}
