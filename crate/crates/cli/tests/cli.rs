use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data");

fn data(name: &str) -> PathBuf {
    Path::new(DATA).join(name)
}

fn nscov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nscov")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let o = nscov(args);
    assert!(o.status.success(), "nscov {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let o = nscov(args);
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_columns(path: &Path, names: &[&str]) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    let idx: Vec<usize> = names.iter().map(|n| header.iter().position(|h| h == *n).unwrap()).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.unwrap();
        for (c, &i) in idx.iter().enumerate() {
            cols[c].push(rec[i].parse::<f64>().unwrap());
        }
    }
    cols
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Stationary Matérn 3/2 fit by profile likelihood: the mean and variance
/// are profiled out in closed form and the range is found by golden section.
struct Oracle {
    x: Vec<f64>,
    y: Vec<f64>,
    z: DVector<f64>,
}

struct OracleFit {
    beta: f64,
    log_var: f64,
    log_range: f64,
    loglik: f64,
}

impl Oracle {
    fn load() -> Self {
        let c = read_columns(&data("synthetic200.csv"), &["x", "y", "z"]);
        Self { x: c[0].clone(), y: c[1].clone(), z: DVector::from_vec(c[2].clone()) }
    }

    fn profile(&self, log_range: f64) -> OracleFit {
        let n = self.z.len();
        let range = log_range.exp();
        let r = DMatrix::from_fn(n, n, |i, j| {
            let h = (self.x[i] - self.x[j]).hypot(self.y[i] - self.y[j]);
            let u = 12f64.sqrt() * h / range;
            (1.0 + u) * (-u).exp()
        });
        let chol = r.cholesky().expect("correlation matrix is positive definite");
        let ones = DVector::from_element(n, 1.0);
        let ri1 = chol.solve(&ones);
        let riz = chol.solve(&self.z);
        let beta = ones.dot(&riz) / ones.dot(&ri1);
        let res = &self.z - &ones * beta;
        let var = res.dot(&chol.solve(&res)) / n as f64;
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let nf = n as f64;
        let loglik = -0.5 * nf * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * logdet - 0.5 * nf;
        OracleFit { beta, log_var: var.ln(), log_range, loglik }
    }

    fn fit(&self) -> OracleFit {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = ((0.01f64).ln(), (2.0f64).ln());
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (self.profile(c).loglik, self.profile(d).loglik);
        while b - a > 1e-9 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.profile(c).loglik;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.profile(d).loglik;
            }
        }
        self.profile(0.5 * (a + b))
    }
}

fn golden_json(f: &OracleFit) -> Value {
    serde_json::json!({
        "labels": ["beta[intercept]", "alpha[intercept]", "theta_ms[intercept]"],
        "estimates": [f.beta, f.log_var, f.log_range],
        "loglik": f.loglik,
    })
}

#[test]
#[ignore = "rewrites tests/data/stationary_golden.json"]
fn regenerate_stationary_golden() {
    let f = Oracle::load().fit();
    let text = serde_json::to_string_pretty(&golden_json(&f)).unwrap() + "\n";
    std::fs::write(data("stationary_golden.json"), text).unwrap();
}

#[test]
fn golden_file_matches_oracle() {
    let f = Oracle::load().fit();
    let g = read_json(&data("stationary_golden.json"));
    let want = golden_json(&f);
    for (a, b) in g["estimates"].as_array().unwrap().iter().zip(want["estimates"].as_array().unwrap()) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-6);
    }
    assert!((g["loglik"].as_f64().unwrap() - f.loglik).abs() < 1e-8);
    assert!(f.log_range > (0.01f64).ln() + 0.1 && f.log_range < (2.0f64).ln() - 0.1, "interior optimum");
}

#[test]
fn fit_reproduces_stationary_golden() {
    let out = tempfile::tempdir().unwrap();
    run_ok(&["fit", "--config", s(&data("stationary.toml")), "--data", s(&data("synthetic200.csv")), "--out", s(out.path())]);
    let report = read_json(&out.path().join("fit.json"));
    let golden = read_json(&data("stationary_golden.json"));
    assert_eq!(report["fit"]["labels"], golden["labels"]);
    let got = report["fit"]["estimates"].as_array().unwrap();
    for (a, b) in got.iter().zip(golden["estimates"].as_array().unwrap()) {
        let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
        assert!((a - b).abs() < 1e-4, "estimate {a} vs golden {b}");
    }
    let ll = report["fit"]["loglik"].as_f64().unwrap();
    assert!((ll - golden["loglik"].as_f64().unwrap()).abs() < 1e-6, "loglik {ll}");
    assert!(out.path().join("params.json").exists());
    for key in ["standard_errors", "condition_estimate", "wall_time", "objective"] {
        assert!(!report["fit"][key].is_null(), "fit.json lacks {key}");
    }
    assert!(report["active"].is_array());
}

#[test]
fn predict_at_training_sites_interpolates() {
    let out = tempfile::tempdir().unwrap();
    let d = data("synthetic200.csv");
    run_ok(&["fit", "--config", s(&data("stationary.toml")), "--data", s(&d), "--out", s(out.path())]);
    run_ok(&["predict", "--config", s(&data("stationary.toml")), "--data", s(&d), "--out", s(out.path())]);
    let p = read_columns(&out.path().join("predictions.csv"), &["x", "y", "mean", "sd"]);
    let t = read_columns(&d, &["x", "y", "z"]);
    assert_eq!(p[0].len(), 200);
    for i in 0..200 {
        assert_eq!((p[0][i], p[1][i]), (t[0][i], t[1][i]));
        assert!((p[2][i] - t[2][i]).abs() < 1e-8, "row {i}: {} vs {}", p[2][i], t[2][i]);
        assert!(p[3][i] < 1e-4);
    }
}

#[test]
fn one_cell_tune_has_one_row() {
    let out = tempfile::tempdir().unwrap();
    run_ok(&["tune", "--config", s(&data("tune1.toml")), "--data", s(&data("synthetic200.csv")), "--out", s(out.path())]);
    let text = std::fs::read_to_string(out.path().join("tune.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "lambda_r,lambda_mu,lambda_sigma,crps,active,chosen,error");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.0,0.01,0.0,"));
}

#[test]
fn simulate_writes_dataset_and_truth() {
    let out = tempfile::tempdir().unwrap();
    run_ok(&["simulate", "--config", s(&data("simulate200.toml")), "--out", s(out.path())]);
    let a = std::fs::read(out.path().join("train.csv")).unwrap();
    assert_eq!(a, std::fs::read(data("synthetic200.csv")).unwrap());
    let truth = read_json(&out.path().join("truth.json"));
    assert_eq!(truth["labels"][1], "beta[sin_x]");
    assert_eq!(truth["values"][1], 0.8);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (c, msg) = code(&["fit", "--config", s(&dir.path().join("missing.toml")), "--out", s(dir.path())]);
    assert_eq!(c, 2, "{msg}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[taper]\nfamily = \"wendland1\"\ndelta = -1.0\n").unwrap();
    let (c, msg) = code(&["fit", "--config", s(&bad), "--data", s(&data("synthetic200.csv")), "--out", s(dir.path())]);
    assert_eq!(c, 2);
    assert!(msg.contains("taper.delta"), "{msg}");

    let (c, msg) = code(&["fit", "--taper", "gaussian:0.2", "--data", s(&data("synthetic200.csv")), "--out", s(dir.path())]);
    assert_eq!(c, 2, "{msg}");

    let (c, _) = code(&["study", "fig9", "--out", s(dir.path())]);
    assert_eq!(c, 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (c, msg) = code(&["fit", "--data", s(&dir.path().join("absent.csv")), "--out", s(dir.path())]);
    assert_eq!(c, 3, "{msg}");

    let csv = dir.path().join("dup.csv");
    std::fs::write(&csv, "x,y,z\n0.1,0.2,1.0\n0.5,0.5,2.0\n0.1,0.2,3.0\n0.9,0.1,0.5\n").unwrap();
    let (c, msg) = code(&["fit", "--data", s(&csv), "--out", s(dir.path())]);
    assert_eq!(c, 3, "{msg}");

    let csv = dir.path().join("nocol.csv");
    std::fs::write(&csv, "x,y,w\n0.1,0.2,1.0\n0.5,0.5,2.0\n").unwrap();
    let (c, msg) = code(&["fit", "--data", s(&csv), "--out", s(dir.path())]);
    assert_eq!(c, 3);
    assert!(msg.contains('z'), "{msg}");
}

#[test]
fn numerical_failure_exits_4() {
    let out = tempfile::tempdir().unwrap();
    let d = data("synthetic200.csv");
    run_ok(&["fit", "--config", s(&data("stationary.toml")), "--data", s(&d), "--out", s(out.path())]);
    let path = out.path().join("params.json");
    let mut p = read_json(&path);
    p["estimates"][2] = serde_json::json!(40.0);
    std::fs::write(&path, serde_json::to_string(&p).unwrap()).unwrap();
    let (c, msg) = code(&["predict", "--config", s(&data("stationary.toml")), "--data", s(&d), "--out", s(out.path())]);
    assert_eq!(c, 4, "{msg}");
}

#[test]
fn study_output_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let msg = run_ok(&["study", "nested_model_check", "--replicates", "2", "--seed", "3", "--out", s(dir.path())]);
        assert!(msg.contains("2/2"), "{msg}");
    }
    for f in ["nested.csv", "nested_summary.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    run_ok(&["study", "fig3", "--replicates", "20", "--out", s(a.path())]);
    for f in ["fig3_pairs.csv", "fig3_summary.json", "fig3_one_jump.csv"] {
        assert!(a.path().join(f).exists(), "{f}");
    }
}
