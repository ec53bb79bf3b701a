//! End-to-end runs of the `gpdflow` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpdflow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(dir.path(), &["--help"]);
    let s = String::from_utf8_lossy(&o.stdout);
    for c in ["simulate", "returns", "select-threshold", "fit", "sample", "density", "chi", "covar"] {
        assert!(s.contains(c), "{c} missing from help");
    }
    assert_eq!(code(&run(dir.path(), &["no-such-command"])), 2);
}

#[test]
fn simulate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--generator", "gumbel-copula", "--n", "50", "--seed", "3", "-o", "a.csv"]);
    ok(d, &["simulate", "--generator", "gumbel-copula", "--n", "50", "--seed", "3", "-o", "b.csv"]);
    ok(d, &["simulate", "--generator", "gumbel-copula", "--n", "50", "--seed", "4", "-o", "c.csv"]);
    let a = lines(&d.join("a.csv"));
    assert_eq!(a.len(), 51);
    assert_eq!(a[0], "y1,y2");
    assert_eq!(a, lines(&d.join("b.csv")));
    assert_ne!(a, lines(&d.join("c.csv")));

    let o = ok(d, &["simulate", "--generator", "revexp", "--d", "3", "--n", "10"]);
    let s = String::from_utf8(o.stdout).unwrap();
    assert_eq!(s.lines().count(), 11);
    assert!(s.starts_with("x1,x2,x3"));
}

#[test]
fn negative_list_values_parse() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--generator", "revexp", "--d", "2", "--gamma", "-0.1,0.2", "--sigma", "0.5,1.2", "-o", "a.csv"]);
    ok(d, &["simulate", "--generator", "revexp", "--d", "2", "--gamma=-0.1,0.2", "--sigma", "0.5,1.2", "-o", "b.csv"]);
    assert_eq!(lines(&d.join("a.csv")), lines(&d.join("b.csv")));
    let o = ok(d, &["fit", "--input", "a.csv", "--threshold", "-0.5,-1", "--epochs", "2", "--layers", "2"]);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["threshold"], serde_json::json!([-0.5, -1.0]));
}

#[test]
fn parameter_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["simulate", "--generator", "gumbel-copula", "--theta", "0.5"])), 2);
    assert_eq!(code(&run(d, &["simulate", "--generator", "revexp", "--d", "2", "--a", "1,1"])), 2);
    assert_eq!(code(&run(d, &["simulate", "--generator", "gumbel", "--d", "2", "--sigma", "1,-1"])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["select-threshold", "--input", "missing.csv"]);
    assert_eq!(code(&o), 3);
    fs::write(d.join("bad.csv"), "y1,y2\n1,2\n3,oops\n").unwrap();
    let o = run(d, &["select-threshold", "--input", "bad.csv"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    fs::write(d.join("m.json"), "{\"format_version\": 99}").unwrap();
    assert_eq!(code(&run(d, &["sample", "--model", "m.json"])), 3);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), r#"{"n": 20, "seed": 5}"#).unwrap();
    ok(d, &["--config", "cfg.json", "simulate", "--generator", "gumbel-copula", "-o", "a.csv"]);
    ok(d, &["simulate", "--generator", "gumbel-copula", "--n", "20", "--seed", "5", "-o", "b.csv"]);
    assert_eq!(lines(&d.join("a.csv")), lines(&d.join("b.csv")));
    ok(d, &["--config", "cfg.json", "simulate", "--generator", "gumbel-copula", "--n", "7", "-o", "c.csv"]);
    assert_eq!(lines(&d.join("c.csv")).len(), 8);
    fs::write(d.join("bad.json"), "[1, 2]").unwrap();
    assert_eq!(code(&run(d, &["--config", "bad.json", "simulate", "--generator", "revexp"])), 2);
}

#[test]
fn returns_join_on_dates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("p1.csv"), "date,a\n2024-01-01,100\n2024-01-02,110\n2024-01-03,99\n2024-01-04,99\n").unwrap();
    fs::write(d.join("p2.csv"), "date,b\n2024-01-01,10\n2024-01-02,10\n2024-01-04,20\n").unwrap();
    let o = ok(d, &["returns", "--input", "p1.csv,p2.csv"]);
    let s = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = s.lines().collect();
    assert_eq!(rows[0], "date,a,b");
    assert_eq!(rows.len(), 3);
    let r2: Vec<f64> = rows[2].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((r2[0] - (-(99f64 / 110.0).ln())).abs() < 1e-12);
    assert!((r2[1] + 2f64.ln()).abs() < 1e-12);
    fs::write(d.join("dup.csv"), "date,c\n2024-01-01,1\n2024-01-01,2\n").unwrap();
    assert_eq!(code(&run(d, &["returns", "--input", "dup.csv"])), 3);
    fs::write(d.join("neg.csv"), "date,c\n2024-01-01,1\n2024-01-02,-2\n").unwrap();
    assert_eq!(code(&run(d, &["returns", "--input", "neg.csv"])), 3);
}

#[test]
fn pipeline_from_data_to_covar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--generator", "gumbel-copula", "--seed", "1", "-o", "y.csv"]);
    ok(d, &[
        "select-threshold", "--input", "y.csv", "--q-override", "0.95", "-o", "thr.json",
        "--report", "report.csv", "--exceedances", "x.csv",
    ]);
    let thr: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("thr.json")).unwrap()).unwrap();
    assert_eq!(thr["q_star"], 0.95);
    assert_eq!(thr["threshold"].as_array().unwrap().len(), 2);
    assert_eq!(lines(&d.join("report.csv"))[0], "q,chi,chi_lo,chi_hi,omega,omega_lo,omega_hi");
    let n_exc = lines(&d.join("x.csv")).len() - 1;
    assert!(n_exc > 50 && n_exc < 160);

    ok(d, &[
        "fit", "--input", "y.csv", "--threshold-from", "thr.json", "--epochs", "15", "--layers", "2",
        "--log", "loss.csv", "-o", "model.json",
    ]);
    let loss = lines(&d.join("loss.csv"));
    assert_eq!(loss[0], "epoch,loss");
    assert_eq!(loss.len(), 17);

    ok(d, &["sample", "--model", "model.json", "--n", "30", "-o", "s.csv"]);
    ok(d, &["sample", "--model", "model.json", "--n", "30", "-o", "s2.csv"]);
    assert_eq!(lines(&d.join("s.csv")), lines(&d.join("s2.csv")));
    assert_eq!(lines(&d.join("s.csv")).len(), 31);

    fs::write(d.join("pts.csv"), "x1,x2\n0.5,0.2\n-1,-1\n").unwrap();
    ok(d, &["density", "--model", "model.json", "--input", "pts.csv", "-o", "dens.csv"]);
    let dens = lines(&d.join("dens.csv"));
    assert_eq!(dens[0], "row,log_density,flag");
    assert!(dens[1].ends_with(",ok"));
    assert!(dens[2].contains("NaN"));

    ok(d, &[
        "chi", "--model", "model.json", "--n-mc", "5000", "--n-samples", "5000", "--summary", "chi.json",
        "-o", "chi.csv",
    ]);
    let chi: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("chi.json")).unwrap()).unwrap();
    let v = chi["chi"]["value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&v));

    ok(d, &[
        "covar", "--model", "model.json", "--data", "y.csv", "--alpha", "0.5,0.9", "--n-mc", "500",
        "--replicates", "20", "-o", "covar.csv", "--empirical", "emp.csv",
    ]);
    let cv = lines(&d.join("covar.csv"));
    assert_eq!(cv.len(), 1 + 2 * 2);
    assert_eq!(lines(&d.join("emp.csv")).len(), cv.len());

    // the model threshold check applies to the conditioner
    let o = run(d, &["covar", "--model", "model.json", "--data", "y.csv", "--beta", "0.5", "--n-mc", "100"]);
    assert_eq!(code(&o), 2);
}
