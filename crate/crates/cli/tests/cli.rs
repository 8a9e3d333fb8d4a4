use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-psatz"))
        .args(args)
        .env_remove("SPARSE_PSATZ_THREADS")
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn read_json(p: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_s"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn verify_writes_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let (m, r) = (path(dir.path(), "m.json"), path(dir.path(), "r.json"));
    assert!(run(&["gen", "--layers", "2", "--nodes", "2", "--seed", "5", "--out", &m]).status.success());
    let out = run(&[
        "verify", "--model", &m, "--box", "-1", "1", "--face", "1", "--mode", "sparse", "--order", "2", "--tol", "1e-8", "--out", &r,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&r);
    let face = &report["faces"][0];
    assert!(face["gamma"].as_f64().is_some_and(f64::is_finite));
    assert!(face["gamma"].as_f64().unwrap() <= face["ibp_bound"].as_f64().unwrap() + 1e-6);
}

#[test]
fn deep_generated_model_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let (m, r) = (path(dir.path(), "m.json"), path(dir.path(), "r.json"));
    let out = run(&["gen", "--layers", "100", "--nodes", "2", "--act", "relu", "--seed", "3", "--out", &m]);
    assert!(out.status.success());
    let out = run(&["verify", "--model", &m, "--out", &r, "--strict"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&r);
    for face in report["faces"].as_array().unwrap() {
        assert_eq!(face["status"], "optimal");
    }
}

#[test]
fn order_zero_is_a_usage_error() {
    let out = run(&["verify", "--layers", "1", "--act", "sigmoid", "--order", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("order"));
}

#[test]
fn bad_flags_exit_one() {
    assert_eq!(run(&["verify", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["verify"]).status.code(), Some(1));
    assert_eq!(run(&["verify", "--layers", "1", "--box", "0", "1", "2"]).status.code(), Some(1));
    assert_eq!(run(&["verify", "--model", "/nonexistent/model.json"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn strict_flags_non_convergence() {
    let args = ["verify", "--layers", "2", "--act", "tanh", "--order", "2", "--max-iter", "3"];
    assert_eq!(run(&args).status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(run(&strict).status.code(), Some(2));
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.json"), path(dir.path(), "b.json"));
    let args = |out: &str| {
        vec![
            "verify".to_owned(),
            "--layers".into(),
            "3".into(),
            "--inputs".into(),
            "2".into(),
            "--outputs".into(),
            "2".into(),
            "--act".into(),
            "sigmoid".into(),
            "--axis-faces".into(),
            "--out".into(),
            out.to_owned(),
        ]
    };
    let argv_a = args(&a);
    let argv_b = args(&b);
    assert!(run(&argv_a.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    assert!(run(&argv_b.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    let (mut ja, mut jb) = (read_json(&a), read_json(&b));
    strip_timing(&mut ja);
    strip_timing(&mut jb);
    assert_eq!(ja, jb);
    assert_eq!(ja["faces"].as_array().unwrap().len(), 4);
}

#[test]
fn export_sdpa_header_matches_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (s, l) = (path(dir.path(), "p.dat-s"), path(dir.path(), "layout.json"));
    let out = run(&[
        "export-sdpa", "--layers", "2", "--order", "2", "--face", "-1", "--out", &s, "--layout", &l,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&s).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('*') && !l.starts_with('"'));
    let m: usize = lines.next().unwrap().trim().parse().unwrap();
    let nblocks: usize = lines.next().unwrap().trim().parse().unwrap();
    let sizes: Vec<i64> = lines.next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    let costs = lines.next().unwrap().split_whitespace().count();
    assert_eq!(sizes.len(), nblocks);
    assert_eq!(costs, m);
    assert!(read_json(&l).is_object());
}

#[test]
fn ibp_dumps_every_hidden_node() {
    let out = run(&["ibp", "--layers", "3", "--nodes", "4", "--box", "-2", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "layer,node,pre_lo,pre_hi,post_lo,post_hi");
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').skip(2).map(|t| t.parse().unwrap()).collect();
        assert!(v[0] <= v[1] && v[2] <= v[3]);
    }
    assert!(rows.len() - 1 >= 12);
}

#[test]
fn sweep_writes_csv() {
    let out = run(&["sweep", "--counts", "1,2", "--modes", "sparse", "--inputs", "1", "--outputs", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[0].starts_with("mode,omega,layers"));
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("sparse,min,1,"));
}

#[test]
fn threads_flag_is_accepted() {
    let out = run(&["--threads", "1", "verify", "--layers", "1"]);
    assert!(out.status.success());
}
