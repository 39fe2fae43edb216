//! Experiment orchestration and report assembly.

use std::path::{Path, PathBuf};
use std::time::Instant;

use paircond::bcs::{density_scan, semiclassics_scan, upper_bound_scan, IntervalSetup};
use paircond::geometry::DomainMask;
use paircond::gp::{continuity_scan_with, minimize_gp, minimize_gp_random, one_mode_upper_bound, GPProblem};
use paircond::grid::ScalarField;
use paircond::pairing::solve_relative;
use paircond::report::ScanReport;
use paircond::spectral::{compute_dc, hardy_constant, hardy_quotient};
use paircond::twobody::{asymptotic_scan, reference_dc, TwoBodySetup};
use paircond::Error;
use serde_json::{json, Value};

use crate::config::{Domain, Experiment, RunConfig};

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or inputs; exit 2.
    Validation(String),
    /// A solver gave up; exit 3.
    Solver(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Usage(_) | Error::GridMismatch | Error::BoxOverflow { .. } | Error::Support(_) | Error::Json(_) => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Solver(e.to_string()),
        }
    }
}

/// A CSV table to be written as `<name>.csv`.
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn from_scan(name: &str, rep: &ScanReport) -> Self {
        Table {
            name: name.into(),
            columns: rep.columns.clone(),
            rows: rep.rows.clone(),
        }
    }
}

pub struct Outcome {
    pub results: Value,
    pub tables: Vec<Table>,
    /// Extra JSON documents, written as `<name>.json`.
    pub documents: Vec<(String, Value)>,
}

pub struct Options {
    pub seed: u64,
    pub threads: usize,
    pub config_dir: PathBuf,
}

fn field_table(name: &str, f: &ScalarField, mask: Option<&DomainMask>) -> Table {
    let g = &f.grid;
    let d = g.dim();
    let axes = ["x", "y", "z"];
    let mut columns: Vec<String> = axes[..d].iter().map(|s| s.to_string()).collect();
    columns.push("value".into());
    let rows = (0..g.len())
        .filter(|&k| mask.map_or(true, |m| m.is_inside(k)))
        .map(|k| {
            let c = g.coord(k);
            let mut r = c[..d].to_vec();
            r.push(f.values[k]);
            r
        })
        .collect();
    Table {
        name: name.into(),
        columns,
        rows,
    }
}

fn interval_of(cfg: &RunConfig) -> (f64, f64) {
    match cfg.domain {
        Some(Domain::Interval { lower, upper }) => (lower, upper),
        _ => unreachable!("validated"),
    }
}

fn interval_setup(cfg: &RunConfig) -> IntervalSetup {
    let (lower, upper) = interval_of(cfg);
    IntervalSetup {
        lower,
        upper,
        potential: cfg.potential.clone().expect("validated"),
        d: cfg.d.expect("validated"),
        q: cfg.q.expect("validated"),
        nodes_per_h: cfg.nodes_per_h.expect("validated"),
    }
}

fn fits_json(rep: &ScanReport) -> Value {
    serde_json::to_value(&rep.fits).unwrap_or(Value::Null)
}

/// Validation that needs the filesystem or grid construction; runs before
/// any output is written.
pub fn prepare(cfg: &RunConfig, opts: &Options) -> Result<Option<DomainMask>, Failure> {
    let exp = cfg.experiment.expect("resolved");
    match exp {
        Experiment::Dc | Experiment::GpMin | Experiment::Continuity => {
            let dom = cfg.domain.as_ref().expect("validated");
            let m = dom.mask(cfg.grid.as_ref(), &opts.config_dir).map_err(Failure::Validation)?;
            Ok(Some(m))
        }
        _ => Ok(None),
    }
}

pub fn execute(cfg: &RunConfig, mask: Option<DomainMask>, opts: &Options) -> Result<Outcome, Failure> {
    let exp = cfg.experiment.expect("resolved");
    let wspec = cfg.w();
    let w = move |x: &[f64]| wspec.eval(x);
    let tol = cfg.tol.expect("resolved");
    let mut tables = vec![];
    let mut documents = vec![];
    let results = match exp {
        Experiment::Dc => {
            let m = mask.expect("prepared");
            let wf = ScalarField::from_fn(m.grid(), &w);
            let r = compute_dc(&m, Some(&wf), tol)?;
            tables.push(field_table("eigenvector", &r.eigenvector, Some(&m)));
            json!({"D_c": r.eigenvalue, "residual": r.residual, "iterations": r.iterations, "interior_nodes": m.count()})
        }
        Experiment::Relative => {
            let v = cfg.potential.as_ref().expect("validated");
            let dim = cfg.dim.expect("resolved");
            let n = cfg.grid.as_ref().expect("resolved").n;
            let gs = solve_relative(v, dim, cfg.halfwidth.expect("resolved"), n, tol)?;
            if dim == 1 {
                tables.push(field_table("alpha_star", &gs.alpha_star, None));
            }
            json!({
                "E_b": gs.e_b, "rho_star": gs.rho_star, "g_BCS": gs.g_bcs, "g_0": gs.g_0,
                "gap": gs.gap, "residual": gs.eigen_residual, "box_halfwidth": gs.box_halfwidth,
            })
        }
        Experiment::GpMin => {
            let m = mask.expect("prepared");
            let wf = ScalarField::from_fn(m.grid(), &w);
            let prob = GPProblem::new(&m, Some(&wf), cfg.d.expect("validated"), cfg.g.expect("resolved"))?;
            let dc = prob.critical_d()?;
            let sol = minimize_gp(&prob, tol, 500)?;
            let (theta, one_mode) = one_mode_upper_bound(&prob)?;
            let mut restarts = vec![];
            let dens = sol.psi.map(|p| p * p);
            for i in 0..cfg.restarts.expect("resolved") {
                let seed = opts.seed.wrapping_add(i as u64);
                let r = minimize_gp_random(&prob, seed, tol, 500)?;
                let diff = r.psi.map(|p| p * p).combine(1.0, &dens, -1.0)?.norm();
                restarts.push(json!({"seed": seed, "energy": r.energy, "density_l2_difference": diff}));
            }
            tables.push(field_table("psi", &sol.psi, Some(&m)));
            json!({
                "energy": sol.energy, "D_c": dc, "one_mode_energy": one_mode, "one_mode_theta": theta,
                "el_residual": sol.el_residual, "iterations": sol.iterations,
                "l2_norm": sol.l2_norm, "h1_norm": sol.h1_norm, "restarts": restarts,
            })
        }
        Experiment::Continuity => {
            let m = mask.expect("prepared");
            let wf = ScalarField::from_fn(m.grid(), &w);
            let prob = GPProblem::new(&m, Some(&wf), cfg.d.expect("validated"), cfg.g.expect("resolved"))?;
            let rep = continuity_scan_with(&prob, cfg.ell_list.as_ref().expect("validated"), tol, 500)?;
            tables.push(Table::from_scan("scan", &rep));
            json!({"fits": fits_json(&rep), "D_c": prob.critical_d()?})
        }
        Experiment::Hardy => {
            let dom = cfg.domain.as_ref().expect("validated");
            let mut rows = vec![];
            for &n in cfg.n_list.as_ref().expect("resolved") {
                let m = dom
                    .mask(Some(&crate::config::GridSpec { n, margin: 0.0 }), &opts.config_dir)
                    .map_err(Failure::Validation)?;
                let mu = hardy_quotient(&m, cfg.lambda_offset.expect("resolved"), tol)?;
                rows.push(vec![n as f64, m.grid().max_spacing(), mu, hardy_constant(mu)]);
            }
            let t = Table {
                name: "scan".into(),
                columns: ["n", "spacing", "quotient", "constant"].iter().map(|s| s.to_string()).collect(),
                rows,
            };
            let last = t.rows.last().map(|r| r[2]).unwrap_or(f64::NAN);
            tables.push(t);
            json!({"quotient_finest": last})
        }
        Experiment::TwobodyScan => {
            let (lower, upper) = interval_of(cfg);
            let setup = TwoBodySetup {
                lower,
                upper,
                potential: cfg.potential.clone().expect("validated"),
                nodes_per_h: cfg.nodes_per_h.expect("resolved"),
                q: cfg.q.expect("resolved"),
                refine_factor: 1.5,
            };
            let dc = reference_dc(lower, upper, &w, 4001)?;
            let (rep, fit) = asymptotic_scan(&setup, cfg.h_list.as_ref().expect("resolved"), &w, dc, tol)?;
            tables.push(Table::from_scan("scan", &rep));
            let fit_json = json!({"D_c_fit": fit.d_c_fit, "nu_hat": fit.nu_hat, "residuals": fit.residuals});
            documents.push(("fit".to_string(), fit_json.clone()));
            json!({"D_c": dc, "slope_h": fit.slope_h, "fit": fit_json})
        }
        Experiment::BcsTrial => {
            let rep = upper_bound_scan(&interval_setup(cfg), cfg.h_list.as_ref().expect("resolved"), &w, cfg.support)?;
            tables.push(Table::from_scan("scan", &rep));
            json!({"fits": fits_json(&rep)})
        }
        Experiment::Semiclassics => {
            let bump = cfg.order_parameter.clone().expect("validated");
            let psi = move |x: &[f64]| bump.eval(x);
            let (rep, recs) = semiclassics_scan(&interval_setup(cfg), cfg.h_list.as_ref().expect("resolved"), &psi, &w)?;
            tables.push(Table::from_scan("scan", &rep));
            json!({"fits": fits_json(&rep), "records": recs})
        }
        Experiment::Density => {
            let rep = density_scan(&interval_setup(cfg), cfg.h_list.as_ref().expect("resolved"), &w)?;
            tables.push(Table::from_scan("scan", &rep));
            json!({"fits": fits_json(&rep)})
        }
    };
    Ok(Outcome {
        results,
        tables,
        documents,
    })
}

/// Floats as shortest round-trip decimals.
pub fn write_table(dir: &Path, t: &Table) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name)))?;
    w.write_record(&t.columns)?;
    for r in &t.rows {
        w.write_record(r.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()
}

/// Runs `cfg` (already resolved) and writes `report.json` plus tables into
/// `out`. Nothing is written unless the run succeeds.
pub fn run(cfg: &RunConfig, out: &Path, opts: &Options) -> Result<Value, Failure> {
    let mask = prepare(cfg, opts)?;
    let start = Instant::now();
    let outcome = execute(cfg, mask, opts)?;
    let report = json!({
        "experiment": cfg.experiment.expect("resolved").name(),
        "config": cfg,
        "seed": opts.seed,
        "threads": opts.threads,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "results": outcome.results,
        "tables": outcome.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
    });
    let io = |e: std::io::Error| Failure::Validation(format!("output directory {}: {e}", out.display()));
    std::fs::create_dir_all(out).map_err(io)?;
    for t in &outcome.tables {
        write_table(out, t).map_err(|e| io(e.into()))?;
    }
    for (name, doc) in &outcome.documents {
        std::fs::write(out.join(format!("{name}.json")), serde_json::to_string_pretty(doc).expect("json")).map_err(io)?;
    }
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).expect("json")).map_err(io)?;
    Ok(report)
}
