use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonconcave-dp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let b1 = fixture("b1.json");
    let arb = fixture("arb.json");
    let sqrt = fixture("sqrt.json");
    let exp = fixture("exp.json");

    assert_eq!(run(&["certify-na", "--tree", path(&b1)]).status.code(), Some(0));
    assert_eq!(run(&["certify-na", "--tree", path(&arb)]).status.code(), Some(3));
    assert_eq!(run(&["certify-utility", "--utility", path(&sqrt)]).status.code(), Some(0));
    assert_eq!(run(&["certify-utility", "--utility", path(&exp)]).status.code(), Some(4));
    assert_eq!(
        run(&["optimize", "--tree", path(&arb), "--utility", path(&sqrt)]).status.code(),
        Some(3)
    );

    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ \"assets\": 1, ").unwrap();
    assert_eq!(run(&["validate", "--tree", path(&broken)]).status.code(), Some(2));
    assert_eq!(run(&["optimize", "--utility", path(&sqrt)]).status.code(), Some(2));
}

#[test]
fn optimize_writes_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "optimize",
        "--tree",
        path(&fixture("b1.json")),
        "--utility",
        path(&fixture("sqrt.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let art: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    let v = art["v_star"].as_f64().unwrap();
    assert!((v - 1.0607).abs() < 1e-3, "{v}");
    assert_eq!(art["seed"], 7);
    assert_eq!(art["na_verification"]["passed"], true);
    assert_eq!(art["bounds"]["passed"], true);
}

#[test]
fn export_is_layered_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    let tree = fixture("b2.json");
    let util = fixture("kf.json");
    let opt = run(&["optimize", "--tree", path(&tree), "--utility", path(&util), "--out", d, "--n-grid", "64"]);
    assert_eq!(opt.status.code(), Some(0), "{}", String::from_utf8_lossy(&opt.stderr));

    assert_eq!(run(&["export", "--out", d, "--layer", "0"]).status.code(), Some(0));
    let root = std::fs::read_to_string(dir.path().join("curves_t0.csv")).unwrap();
    let mut lines = root.lines();
    assert!(lines.next().unwrap().starts_with("t,node,wealth,value,xi_1"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.starts_with("0,")));

    assert_eq!(run(&["export", "--out", d]).status.code(), Some(0));
    let first = std::fs::read(dir.path().join("curves.csv")).unwrap();
    assert_eq!(run(&["export", "--out", d]).status.code(), Some(0));
    let second = std::fs::read(dir.path().join("curves.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "tree = {:?}\nutility = {:?}\nn-grid = 32\nseed = 11\nout = {:?}\n",
            path(&fixture("b1.json")),
            path(&fixture("sqrt.json")),
            path(dir.path()),
        ),
    )
    .unwrap();
    let out = run(&["--config", path(&cfg), "optimize", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let art: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(art["seed"], 3);
    assert_eq!(art["n_grid"], 32);

    std::fs::write(&cfg, "no-such-key = 1\n").unwrap();
    assert_eq!(run(&["--config", path(&cfg), "validate"]).status.code(), Some(2));
}

#[test]
fn elasticity_table() {
    let out = run(&["elasticity", "--utility", path(&fixture("kf.json")), "--n-max", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,x,u,elasticity"));
    let row7: Vec<f64> = lines
        .find(|l| l.starts_with("7,"))
        .unwrap()
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(row7[1], 7.5);
    assert!((row7[3] - 19.64).abs() < 0.01, "{}", row7[3]);
}
