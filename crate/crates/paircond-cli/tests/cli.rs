use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_paircond"));
    c.env("PAIRCOND_TEST_MODE", "1");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(exp: &str, config: &Path, out: &Path) -> (i32, String) {
    let o = bin()
        .args([exp, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn column(csv_path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(csv_path).unwrap();
    let j = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[j].parse().unwrap()).collect()
}

#[test]
fn dc_on_unit_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dc");
    let (code, err) = run("dc", &configs().join("dc.json"), &out);
    assert_eq!(code, 0, "{err}");
    let rep = report(&out);
    let dc = rep["results"]["D_c"].as_f64().unwrap();
    assert!((dc - std::f64::consts::PI.powi(2) / 4.0).abs() < 1e-3, "{dc}");
    assert_eq!(rep["config"]["grid"]["n"], 2001);
    assert!(out.join("eigenvector.csv").exists());
}

#[test]
fn twobody_scan_default() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tb");
    let (code, err) = run("twobody-scan", &configs().join("twobody_scan.json"), &out);
    assert_eq!(code, 0, "{err}");
    let csv = out.join("scan.csv");
    let mut r = csv::Reader::from_path(&csv).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..5], ["h", "ground_energy", "lower_bound", "upper_bound", "slope_partial"]);
    let e = column(&csv, "ground_energy");
    assert!(e.windows(2).all(|p| p[1] > p[0]), "{e:?}");
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    let dc = fit["D_c_fit"].as_f64().unwrap();
    let exact = std::f64::consts::PI.powi(2) / 4.0;
    assert!((dc - exact).abs() < 0.03 * exact, "{dc}");
    assert!(fit["residuals"].as_array().unwrap().len() == 5);
}

#[test]
fn missing_potential_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"domain": {"kind": "interval", "params": {"lower": 0, "upper": 1}}}"#).unwrap();
    let out = tmp.path().join("out");
    let (code, err) = run("twobody-scan", &cfg, &out);
    assert_eq!(code, 2);
    assert!(err.contains("potential"), "{err}");
    assert!(!out.exists());

    std::fs::write(&cfg, r#"{"domain": {"kind": "interval", "params": {"lower": 0, "upper": 1}}, "extra": 1}"#).unwrap();
    assert_eq!(run("dc", &cfg, &out).0, 2);
    assert_eq!(run("dc", &tmp.path().join("absent.json"), &out).0, 2);
    assert!(!out.exists());
}

#[test]
fn solver_failure_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("flat.json");
    std::fs::write(&cfg, r#"{"potential": {"kind": "table", "params": {"r": [0, 1], "v": [0, 0]}}, "grid": {"n": 101}}"#).unwrap();
    let out = tmp.path().join("out");
    let (code, err) = run("relative", &cfg, &out);
    assert_eq!(code, 3, "{err}");
    assert!(!out.exists());
}

#[test]
fn reproducible_and_echo_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let cfg = configs().join("bcs_trial.json");
    assert_eq!(run("bcs-trial", &cfg, &a).0, 0);
    assert_eq!(run("bcs-trial", &cfg, &b).0, 0);
    let bytes = |d: &Path| std::fs::read(d.join("scan.csv")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let echo = tmp.path().join("echo.json");
    std::fs::write(&echo, report(&a)["config"].to_string()).unwrap();
    assert_eq!(run("bcs-trial", &echo, &c).0, 0);
    assert_eq!(bytes(&a), bytes(&c));
    assert_eq!(report(&a)["config"], report(&c)["config"]);
}

#[test]
fn gp_restarts_use_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gp");
    let o = bin()
        .args(["gp-min", "--seed", "7", "--config"])
        .arg(configs().join("gp_min.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    let rep = report(&out);
    let restarts = rep["results"]["restarts"].as_array().unwrap();
    assert_eq!(restarts[0]["seed"], 7);
    for r in restarts {
        assert!(r["density_l2_difference"].as_f64().unwrap() < 1e-6);
    }
    assert!(rep["results"]["one_mode_energy"].as_f64().unwrap() >= rep["results"]["energy"].as_f64().unwrap());
}
