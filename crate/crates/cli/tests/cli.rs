use std::path::PathBuf;
use std::process::{Command, Output};

use fastmix::dependency::{bound_matrix, mixing_time};
use fastmix::{BoundVariant, PairwiseMrf};
use serde_json::Value;

fn fastmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastmix")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fastmix(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fastmix-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn gen_grid(name: &str, coupling: &str) -> PathBuf {
    let path = scratch(name);
    ok(&["--seed", "11", "--out", path.to_str().unwrap(), "gen", "--rows", "3", "--cols", "3", "--coupling", coupling]);
    path
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array().unwrap().iter().map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()).collect()
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let a = ok(&["--seed", "4", "gen", "--topology", "random", "--n", "7", "--coupling", "2"]);
    let b = ok(&["--seed", "4", "gen", "--topology", "random", "--n", "7", "--coupling", "2"]);
    let c = ok(&["--seed", "5", "gen", "--topology", "random", "--n", "7", "--coupling", "2"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let m = PairwiseMrf::from_json_str(&a).unwrap();
    assert_eq!(m.n(), 7);
    let potts = PairwiseMrf::from_json_str(&ok(&["gen", "--topology", "potts", "--rows", "2", "--cols", "3", "--states", "4"])).unwrap();
    assert!(potts.cards().iter().all(|&l| l == 4));
}

#[test]
fn bound_reports_matrix_norm_and_mixing_time() {
    let path = gen_grid("bound.json", "0.2");
    let out: Value = serde_json::from_str(&ok(&["bound", "--model", path.to_str().unwrap(), "--epsilon", "0.05"])).unwrap();
    let m = PairwiseMrf::load(&path).unwrap();
    let r = bound_matrix(&m, BoundVariant::InfCorollary).unwrap().matrix;
    let got = matrix(&out["matrix"]);
    for i in 0..9 {
        for j in 0..9 {
            assert_eq!(got[i][j], r[(i, j)]);
        }
    }
    let norm = out["norm_value"].as_f64().unwrap();
    let row_max = got.iter().map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max);
    assert!((norm - row_max).abs() < 1e-12);
    assert_eq!(out["tau"].as_f64(), mixing_time(9, norm, 0.05));
}

#[test]
fn project_output_is_feasible_and_reports_gap() {
    let path = gen_grid("project.json", "2");
    for (norm, mode) in [("inf", "exact"), ("spectral", "smoothed")] {
        let out: Value =
            serde_json::from_str(&ok(&["project", "--model", path.to_str().unwrap(), "--norm", norm, "--c", "1", "--mode", mode]))
                .unwrap();
        assert!(out["converged"].as_bool().unwrap(), "{norm}");
        assert!(out["duality_gap"].as_f64().unwrap().abs() < 1e-4);
        assert!(out["max_violation"].as_f64().unwrap() < 1e-6);
        let z = matrix(&out["z"]);
        let inf = z.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        if norm == "inf" {
            assert!(inf <= 1.0 + 1e-9);
        }
        let theta: PairwiseMrf = serde_json::from_value::<fastmix::mrf::ModelFile>(out["model"].clone()).unwrap().try_into().unwrap();
        assert_eq!(theta.edges(), PairwiseMrf::load(&path).unwrap().edges());
    }
}

#[test]
fn divergence_projection_feeds_the_sampler() {
    let model = gen_grid("div.json", "2");
    let projected = scratch("div-out.json");
    for divergence in ["piecewise", "reversed"] {
        ok(&[
            "--seed", "2", "--out", projected.to_str().unwrap(), "project-div", "--model", model.to_str().unwrap(),
            "--divergence", divergence, "--grid", "3x3", "--c", "1", "--steps", "5", "--pool", "50",
        ]);
        let p = PairwiseMrf::load(&projected).unwrap();
        let r = bound_matrix(&p, BoundVariant::InfCorollary).unwrap().matrix;
        let norm = r.row_iter().map(|row| row.sum()).fold(0.0, f64::max);
        assert!(norm <= 1.0 + 1e-5, "{divergence}: {norm}");
    }
    let a = ok(&["--seed", "9", "sample", "--model", projected.to_str().unwrap(), "--sweeps", "500"]);
    let b = ok(&["--seed", "9", "sample", "--model", projected.to_str().unwrap(), "--sweeps", "500"]);
    assert_eq!(a, b);
    let est: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(est["count"].as_u64(), Some(450));
    for row in matrix(&est["frequencies"]) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn evaluate_writes_one_row_per_method() {
    let path = gen_grid("evaluate.json", "1");
    let csv = ok(&["evaluate", "--model", path.to_str().unwrap(), "--methods", "gibbs_original,mf,lbp", "--sweeps", "2000"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,error,seconds,exact_truth,failure");
    assert_eq!(lines.len(), 4);
    for (line, tag) in lines[1..].iter().zip(["gibbs_original", "mf", "lbp"]) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], tag);
        let err: f64 = fields[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&err));
        assert_eq!(fields[3], "true");
    }
}

#[test]
fn sweeps_write_the_documented_csv() {
    let header = fastmix::experiment::CSV_COLUMNS.join(",");
    let args = [
        "--seed", "3", "--threads", "2", "sweep-strength", "--topology", "random", "--n", "5", "--trials", "2",
        "--strengths", "0,1", "--methods", "mf,gibbs_original", "--sweeps", "1000",
    ];
    let csv = ok(&args);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], header);
    assert_eq!(lines.len(), 1 + 2 * 2);
    let strip = |s: &str| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(&csv), strip(&ok(&args)));

    let csv = ok(&[
        "sweep-time", "--rows", "2", "--cols", "2", "--trials", "2", "--original-max", "100", "--projected-max", "50",
        "--methods", "gibbs_original,reversed+gibbs,lbp", "--pool", "20", "--steps", "3",
    ]);
    let sweeps: Vec<(String, u64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[8].to_string(), f[9].parse().unwrap())
        })
        .collect();
    let of = |tag: &str| sweeps.iter().filter(|(m, _)| m == tag).map(|(_, s)| *s).collect::<Vec<_>>();
    assert_eq!(of("gibbs_original"), vec![1, 2, 5, 10, 20, 50, 100]);
    assert_eq!(of("reversed+gibbs"), vec![1, 2, 5, 10, 20, 50]);
    assert_eq!(of("lbp"), vec![0]);
}

#[test]
fn bad_input_fails_cleanly() {
    let missing = fastmix(&["bound", "--model", "/nonexistent/model.json"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let bad = scratch("bad.json");
    std::fs::write(&bad, r#"{"n": 2, "cards": [2, 2], "edges": [{"i": 1, "j": 0, "table": [[0, 1], [1, 0]]}]}"#).unwrap();
    assert!(!fastmix(&["sample", "--model", bad.to_str().unwrap()]).status.success());

    let path = gen_grid("radius.json", "1");
    assert!(!fastmix(&["project", "--model", path.to_str().unwrap(), "--c", "0"]).status.success());
    assert!(!fastmix(&["evaluate", "--model", path.to_str().unwrap(), "--methods", "bogus"]).status.success());
}
