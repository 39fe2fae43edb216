//! Run configuration: schema, defaults, and validation.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use paircond::geometry::{DomainMask, MaskFile};
use paircond::grid::Grid;
use paircond::pairing::Potential;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Dc,
    Relative,
    GpMin,
    Continuity,
    TwobodyScan,
    BcsTrial,
    Semiclassics,
    Hardy,
    Density,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Dc => "dc",
            Experiment::Relative => "relative",
            Experiment::GpMin => "gp-min",
            Experiment::Continuity => "continuity",
            Experiment::TwobodyScan => "twobody-scan",
            Experiment::BcsTrial => "bcs-trial",
            Experiment::Semiclassics => "semiclassics",
            Experiment::Hardy => "hardy",
            Experiment::Density => "density",
        }
    }

    fn needs_potential(self) -> bool {
        matches!(
            self,
            Experiment::Relative
                | Experiment::TwobodyScan
                | Experiment::BcsTrial
                | Experiment::Semiclassics
                | Experiment::Density
        )
    }

    /// Experiments that build their own grids from `h`.
    fn scans_h(self) -> bool {
        matches!(
            self,
            Experiment::TwobodyScan | Experiment::BcsTrial | Experiment::Semiclassics | Experiment::Density
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Interval { lower: f64, upper: f64 },
    Intervals { pieces: Vec<(f64, f64)> },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Disk { center: Vec<f64>, radius: f64 },
    LShape { s: f64 },
    SlitSquare { s: f64 },
    MaskFile { path: PathBuf },
}

impl Domain {
    fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Domain::Interval { lower, upper } => Some((vec![*lower], vec![*upper])),
            Domain::Intervals { pieces } => {
                let lo = pieces.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let hi = pieces.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                Some((vec![lo], vec![hi]))
            }
            Domain::Box { lower, upper } => Some((lower.clone(), upper.clone())),
            Domain::Disk { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Domain::LShape { s } | Domain::SlitSquare { s } => Some((vec![-s; 2], vec![*s; 2])),
            Domain::MaskFile { .. } => None,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.bounds().map(|b| b.0.len())
    }

    /// The mask on a grid spanning the bounding box widened by `margin`,
    /// with `n` nodes per axis; mask files carry their own grid.
    pub fn mask(&self, grid: Option<&GridSpec>, base: &Path) -> Result<DomainMask, String> {
        if let Domain::MaskFile { path } = self {
            let p = if path.is_absolute() { path.clone() } else { base.join(path) };
            let text = std::fs::read_to_string(&p).map_err(|e| format!("cannot read mask file {}: {e}", p.display()))?;
            let file: MaskFile = serde_json::from_str(&text).map_err(|e| format!("mask file {}: {e}", p.display()))?;
            return DomainMask::from_json(&file).map_err(|e| e.to_string());
        }
        let spec = grid.ok_or("grid is required for this domain")?;
        let (lo, hi) = self.bounds().expect("builtin bounds");
        let lower: Vec<f64> = lo.iter().map(|v| v - spec.margin).collect();
        let upper: Vec<f64> = hi.iter().map(|v| v + spec.margin).collect();
        let g = Grid::new(&lower, &upper, &vec![spec.n; lower.len()]).map_err(|e| e.to_string())?;
        let m = match self {
            Domain::Interval { lower, upper } => DomainMask::interval(&g, *lower, *upper),
            Domain::Intervals { pieces } => DomainMask::intervals(&g, pieces),
            Domain::Box { lower, upper } => DomainMask::open_box(&g, lower, upper),
            Domain::Disk { center, radius } => DomainMask::disk(&g, center, *radius),
            Domain::LShape { s } => DomainMask::l_shape(&g, *s),
            Domain::SlitSquare { s } => DomainMask::slit_square(&g, *s),
            Domain::MaskFile { .. } => unreachable!(),
        };
        let m = m.map_err(|e| e.to_string())?;
        if m.count() == 0 {
            return Err("domain has no interior grid node".into());
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per axis.
    pub n: usize,
    /// Padding of the bounding box on every side.
    #[serde(default)]
    pub margin: f64,
}

/// External potential `W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum WSpec {
    Zero,
    Constant { value: f64 },
    /// `slope · x`.
    Linear { slope: Vec<f64> },
    /// `amplitude · |x − center|²`.
    Harmonic { amplitude: f64, center: Vec<f64> },
    /// `amplitude · exp(−|x − center|²/width²)`.
    Gaussian { amplitude: f64, center: Vec<f64>, width: f64 },
}

impl Default for WSpec {
    fn default() -> Self {
        WSpec::Zero
    }
}

impl WSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2 = |c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        match self {
            WSpec::Zero => 0.0,
            WSpec::Constant { value } => *value,
            WSpec::Linear { slope } => x.iter().zip(slope).map(|(a, b)| a * b).sum(),
            WSpec::Harmonic { amplitude, center } => amplitude * r2(center),
            WSpec::Gaussian { amplitude, center, width } => amplitude * (-r2(center) / (width * width)).exp(),
        }
    }

    fn check(&self, dim: Option<usize>) -> Result<(), String> {
        let len = match self {
            WSpec::Zero => None,
            WSpec::Constant { value } => {
                finite("w.value", *value)?;
                None
            }
            WSpec::Linear { slope } => Some(slope.len()),
            WSpec::Harmonic { amplitude, center } => {
                finite("w.amplitude", *amplitude)?;
                Some(center.len())
            }
            WSpec::Gaussian { amplitude, center, width } => {
                finite("w.amplitude", *amplitude)?;
                positive("w.width", *width)?;
                Some(center.len())
            }
        };
        match (len, dim) {
            (Some(l), Some(d)) if l != d => Err(format!("W has dimension {l}, domain has {d}")),
            _ => Ok(()),
        }
    }
}

/// Fixed order parameter for the semiclassics experiment:
/// `amplitude · sin^power(π(x − lower)/(upper − lower))` on `(lower, upper)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub lower: f64,
    pub upper: f64,
    pub power: i32,
    pub amplitude: f64,
}

impl Bump {
    pub fn eval(&self, x: &[f64]) -> f64 {
        if x[0] <= self.lower || x[0] >= self.upper {
            return 0.0;
        }
        let t = std::f64::consts::PI * (x[0] - self.lower) / (self.upper - self.lower);
        self.amplitude * t.sin().powi(self.power)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Potential>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<WSpec>,
    /// Chemical-potential shift `D`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Quartic coupling; defaults to the pair coupling where one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell_list: Option<Vec<f64>>,
    /// Cut-off exponent in `ℓ(h) = q·h·ln(1/h)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes_per_h: Option<f64>,
    /// Node counts per axis for refinement scans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// Relative box halfwidth `L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halfwidth: Option<f64>,
    /// Dimension of the relative problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Random restarts of the GP minimizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    /// Fixed GP support `(a, b)` for the trial-state scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_parameter: Option<Bump>,
    /// Mass shift `λ` in the Hardy quotient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_offset: Option<f64>,
}

fn finite(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be finite"))
    }
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive"))
    }
}

fn reject(name: &str, present: bool, exp: Experiment) -> Result<(), String> {
    if present {
        Err(format!("`{name}` is not used by {}", exp.name()))
    } else {
        Ok(())
    }
}

fn descending(name: &str, v: &[f64], lo: f64, hi: f64) -> Result<(), String> {
    if v.len() < 3 {
        return Err(format!("{name} needs at least three values"));
    }
    if v.iter().any(|x| !(*x > lo && *x < hi)) {
        return Err(format!("{name} values must lie in ({lo}, {hi})"));
    }
    if v.windows(2).any(|p| p[1] >= p[0]) {
        return Err(format!("{name} must be strictly descending"));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    /// Fills experiment-specific defaults and checks every field; the
    /// result reproduces the run when parsed back.
    pub fn resolve(mut self, exp: Experiment) -> Result<Self, String> {
        if let Some(e) = self.experiment {
            if e != exp {
                return Err(format!("config is for {}, command asks for {}", e.name(), exp.name()));
            }
        }
        self.experiment = Some(exp);
        if exp.needs_potential() && self.potential.is_none() {
            return Err(format!("{} needs a potential", exp.name()));
        }
        if let Some(p) = &self.potential {
            p.validate().map_err(|e| e.to_string())?;
        }
        if exp != Experiment::Relative {
            let dom = self.domain.as_ref().ok_or_else(|| format!("{} needs a domain", exp.name()))?;
            if exp.scans_h() {
                if !matches!(dom, Domain::Interval { .. }) {
                    return Err(format!("{} runs on an interval domain", exp.name()));
                }
                reject("grid", self.grid.is_some(), exp)?;
            } else if !matches!(dom, Domain::MaskFile { .. }) && self.grid.is_none() && exp != Experiment::Hardy {
                let n = match dom.dim() {
                    Some(1) => 2001,
                    _ => 201,
                };
                self.grid = Some(GridSpec { n, margin: 0.0 });
            }
        }
        let dim = self.domain.as_ref().and_then(|d| d.dim());
        let w = self.w.get_or_insert_with(WSpec::default);
        w.check(dim)?;
        let tol = *self.tol.get_or_insert(match exp {
            Experiment::GpMin | Experiment::Continuity => 1e-9,
            _ => 1e-10,
        });
        positive("tol", tol)?;
        if let Some(g) = &self.grid {
            if g.n < 3 {
                return Err("grid.n must be at least 3".into());
            }
            if !(g.margin >= 0.0) {
                return Err("grid.margin must be non-negative".into());
            }
        }
        let default_hs = |e: Experiment| match e {
            Experiment::TwobodyScan => vec![0.1, 0.07, 0.05, 0.035, 0.025],
            Experiment::BcsTrial => vec![0.1, 0.07, 0.05, 0.035],
            Experiment::Semiclassics => vec![0.1, 0.07, 0.05, 0.035, 0.025, 0.02],
            _ => vec![0.1, 0.07, 0.05],
        };
        match exp {
            Experiment::Dc => {
                for (k, p) in [("d", self.d.is_some()), ("g", self.g.is_some()), ("h_list", self.h_list.is_some())] {
                    reject(k, p, exp)?;
                }
            }
            Experiment::Relative => {
                reject("domain", self.domain.is_some(), exp)?;
                let l = *self.halfwidth.get_or_insert(20.0);
                positive("halfwidth", l)?;
                let dim = *self.dim.get_or_insert(1);
                if !(1..=3).contains(&dim) {
                    return Err("dim must be 1, 2 or 3".into());
                }
                let default_n = if dim == 1 { 8001 } else { 161 };
                let g = self.grid.get_or_insert(GridSpec {
                    n: default_n,
                    margin: 0.0,
                });
                if g.n < 5 {
                    return Err("grid.n must be at least 5".into());
                }
            }
            Experiment::GpMin | Experiment::Continuity => {
                finite("d", self.d.ok_or("d is required")?)?;
                positive("g", *self.g.get_or_insert(1.0))?;
                if exp == Experiment::GpMin {
                    self.restarts.get_or_insert(0);
                } else {
                    let ells = self.ell_list.as_ref().ok_or("ell_list is required")?;
                    if ells.len() < 3 || ells.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
                        return Err("ell_list needs at least three values in (0, 1)".into());
                    }
                }
            }
            Experiment::Hardy => {
                let ns = self.n_list.get_or_insert_with(|| vec![41, 81, 161]);
                if ns.is_empty() || ns.iter().any(|&n| n < 5) || ns.windows(2).any(|p| p[1] <= p[0]) {
                    return Err("n_list must be ascending node counts ≥ 5".into());
                }
                reject("grid", self.grid.is_some(), exp)?;
                finite("lambda_offset", *self.lambda_offset.get_or_insert(0.0))?;
                if matches!(self.domain, Some(Domain::MaskFile { .. })) {
                    return Err("hardy refines builtin domains only".into());
                }
            }
            Experiment::TwobodyScan => {
                let hs = self.h_list.get_or_insert_with(|| default_hs(exp));
                descending("h_list", hs, 0.0, 1.0)?;
                let nph = *self.nodes_per_h.get_or_insert(8.0);
                if nph < paircond::twobody::MIN_NODES_PER_H {
                    return Err(format!("nodes_per_h must be at least {}", paircond::twobody::MIN_NODES_PER_H));
                }
                positive("q", *self.q.get_or_insert(1.0))?;
                reject("d", self.d.is_some(), exp)?;
            }
            Experiment::BcsTrial | Experiment::Semiclassics | Experiment::Density => {
                let hs = self.h_list.get_or_insert_with(|| default_hs(exp));
                descending("h_list", hs, 0.0, 1.0)?;
                finite("d", self.d.ok_or("d is required")?)?;
                let nph = *self.nodes_per_h.get_or_insert(6.0);
                if nph < 2.0 {
                    return Err("nodes_per_h must be at least 2".into());
                }
                positive(
                    "q",
                    *self.q.get_or_insert(if exp == Experiment::BcsTrial { 2.0 } else { 1.0 }),
                )?;
                reject("g", self.g.is_some(), exp)?;
                if exp == Experiment::Semiclassics {
                    let b = self.order_parameter.as_ref().ok_or("order_parameter is required")?;
                    if !(b.upper > b.lower) || b.power < 1 {
                        return Err("order_parameter needs lower < upper and power ≥ 1".into());
                    }
                } else {
                    reject("order_parameter", self.order_parameter.is_some(), exp)?;
                }
                if exp != Experiment::BcsTrial {
                    reject("support", self.support.is_some(), exp)?;
                }
            }
        }
        if exp != Experiment::Continuity {
            reject("ell_list", self.ell_list.is_some(), exp)?;
        }
        if !exp.scans_h() {
            reject("h_list", self.h_list.is_some(), exp)?;
        }
        Ok(self)
    }

    pub fn w(&self) -> WSpec {
        self.w.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse(r#"{"domain": {"kind": "interval", "params": {"lower": 0, "upper": 1}}, "bogus": 1}"#).is_err());
        assert!(RunConfig::parse(r#"{"domain": {"kind": "interval", "params": {"lower": 0, "upper": 1, "x": 2}}}"#).is_err());
    }

    #[test]
    fn resolve_fills_defaults_and_round_trips() {
        let c = RunConfig::parse(r#"{"domain": {"kind": "interval", "params": {"lower": 0, "upper": 1}}}"#).unwrap();
        let r = c.resolve(Experiment::Dc).unwrap();
        assert_eq!(r.grid.as_ref().unwrap().n, 2001);
        let echo = serde_json::to_string(&r).unwrap();
        assert_eq!(RunConfig::parse(&echo).unwrap().resolve(Experiment::Dc).unwrap(), r);
    }

    #[test]
    fn missing_potential_and_mismatch() {
        let c = RunConfig::parse(r#"{"domain": {"kind": "interval", "params": {"lower": 0, "upper": 1}}}"#).unwrap();
        assert!(c.clone().resolve(Experiment::TwobodyScan).is_err());
        let c = RunConfig {
            experiment: Some(Experiment::Hardy),
            ..c
        };
        assert!(c.resolve(Experiment::Dc).is_err());
    }

    #[test]
    fn w_evaluates() {
        let w = WSpec::Harmonic {
            amplitude: 2.0,
            center: vec![1.0],
        };
        assert_eq!(w.eval(&[3.0]), 8.0);
        assert!(w.check(Some(2)).is_err());
    }
}
