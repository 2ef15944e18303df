use std::path::Path;
use std::process::{Command, Output};

fn stabilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stabilab")).args(args).output().unwrap()
}

fn domain(dir: &Path, name: &str) -> String {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("domains").join(name);
    let dst = dir.join(name);
    std::fs::copy(src, &dst).unwrap();
    dst.to_str().unwrap().to_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eigen_writes_json_and_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = domain(dir.path(), "square.json");
    let out = dir.path().join("out");
    let o = stabilab(&["eigen", "--domain", &d, "--resolution", "64", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1);
    let v = json(&out.join("eigen.json"));
    let h = 1.0 / 64.0;
    let exact = 8.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
    assert!((v["lambda1"].as_f64().unwrap() / exact - 1.0).abs() < 1e-7);
    assert_eq!(v["richardson_order"], 2);
    let ex = v["lambda1_extrapolated"].as_f64().unwrap();
    assert!((ex / (2.0 * std::f64::consts::PI.powi(2)) - 1.0).abs() < 1e-5);
}

#[test]
fn threshold_example() {
    let dir = tempfile::tempdir().unwrap();
    let d = domain(dir.path(), "square.json");
    let out = dir.path().join("out");
    let o = stabilab(&[
        "threshold", "--domain", &d, "--beta", "25", "--noise", "linear:alpha=3.4641", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let v = json(&out.join("threshold.json"));
    assert_eq!(v["verdict"], "stabilized");
    assert!((v["margin"].as_f64().unwrap() - 0.739).abs() < 1e-3);
    assert!(v["epsilon0"].is_null());
    for key in ["margin", "epsilon0", "predicted_exponent", "verdict"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn capacity_and_asymptotics_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = domain(dir.path(), "disk-hole.json");
    let out = dir.path().join("out");
    let o = stabilab(&["capacity", "--domain", &d, "--resolution", "96", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let v = json(&out.join("capacity.json"));
    let exact = 2.0 * std::f64::consts::PI / 10f64.ln();
    assert!((v["capacity_extrapolated"].as_f64().unwrap() / exact - 1.0).abs() < 0.03);

    let o = stabilab(&["asymptotics", "--domain", &d, "--eps", "0.2,0.1", "--mode", "lemma1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("expansion.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("eps,"));
    assert!(lines[1].starts_with("0.2,"));

    let o = stabilab(&["asymptotics", "--domain", &d, "--eps", "0.1,0.2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_summary_and_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = domain(dir.path(), "square.json");
    let out = dir.path().join("out");
    let o = stabilab(&[
        "simulate", "--domain", &d, "--beta", "25", "--noise", "linear:alpha=3.4641", "--paths", "4", "--T", "2",
        "--seed", "42", "--resolution", "32", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out.join("summary.json"));
    assert_eq!(v["paths"], 4);
    assert!(v["median_lyapunov"].as_f64().unwrap() < 0.0);
    assert!(v["decay_bound"].as_f64().unwrap() < 0.0);
    for p in 0..4 {
        let csv = std::fs::read_to_string(out.join("paths").join(format!("path_{p:04}.csv"))).unwrap();
        assert!(csv.starts_with("t,norm_sq,"));
        assert!(csv.lines().count() > 10);
    }
}

#[test]
fn errors_name_the_module_and_set_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = domain(dir.path(), "square-hole.json");
    let o = stabilab(&["eigen", "--domain", &d, "--resolution", "32"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("domain:"), "{err}");

    let o = stabilab(&["simulate", "--domain", &d, "--beta", "25", "--noise", "linear"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("noise"));

    let o = stabilab(&["simulate", "--domain", &d, "--beta", "25", "--noise", "zero", "--dt=-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("spde:"));

    let o = stabilab(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}
