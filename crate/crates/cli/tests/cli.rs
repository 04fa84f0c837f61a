//! End-to-end runs of the `pcbf` binary.

use std::path::Path;
use std::process::{Command, Output};

fn pcbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcbf")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .trim()
        .to_string()
}

fn parse_vec(s: &str) -> Vec<f64> {
    s.trim_matches(|c| c == '[' || c == ']').split(',').map(|v| v.trim().parse().unwrap()).collect()
}

/// `(file, sha256)` pairs of the CSVs listed in a run's manifest.
fn csv_hashes(dir: &Path) -> Vec<(String, String)> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["file"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
        .filter(|(f, _)| f.ends_with(".csv"))
        .collect()
}

#[test]
fn cert_reports_the_per_step_risk() {
    let o = pcbf(&["cert", "--epsilon", "0.1", "--horizon", "20"]);
    assert!(o.status.success());
    let out = stdout(&o);
    // [DERIVED] 1 − 0.9^(1/20).
    let d: f64 = field(&out, "delta_step").parse().unwrap();
    assert!((d - (1.0 - 0.9f64.powf(0.05))).abs() < 1e-10);
    assert!((d - 0.00525).abs() < 1e-5);
    assert!(out.contains("scenario") && out.contains("conformal") && out.contains("hoeffding"));

    let o = pcbf(&["cert", "--epsilon", "0.1", "--horizon", "1", "--method", "markov"]);
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "delta_step").parse::<f64>().unwrap(), 0.1);

    for bad in [&["cert", "--epsilon", "1.0"][..], &["cert", "--epsilon", "0.1", "--beta-total", "0"]] {
        assert_eq!(pcbf(bad).status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn filter_solves_once() {
    let o = pcbf(&["filter", "--state", "0,0,0", "--sigma", "0"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(parse_vec(&field(&out, "u_star")), parse_vec(&field(&out, "u_nom")));

    // [DERIVED] 0.25 − σ² − α·0.25 − 0.25·(1 − δ) at σ = 0.06.
    let o = pcbf(&["filter", "--state", "0,0,0", "--method", "markov"]);
    let out = stdout(&o);
    assert_eq!(field(&out, "status"), "optimal");
    assert!((field(&out, "margin").parse::<f64>().unwrap() - 0.0189).abs() < 1e-12);

    // Infeasibility is a result, not a failure.
    let o = pcbf(&["filter", "--state", "0,0.45,0.3", "--method", "hoeffding"]);
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "status"), "infeasible");

    for bad in ["1,2", "a,b,c", "0,0,inf"] {
        assert_eq!(pcbf(&["filter", "--state", bad]).status.code(), Some(2), "{bad}");
    }
}

#[test]
fn sweep_hashes_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let dir = tmp.path().join(name);
        let o = pcbf(&[
            "sweep", "--methods", "none,markov,scenario", "--values", "0.04,0.1", "--n-traj", "12",
            "--seed", "5", "--jobs", jobs, "--out-dir", dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dir
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(csv_hashes(&a), csv_hashes(&b));
    let table = std::fs::read_to_string(a.join("sweep_sigma.csv")).unwrap();
    assert!(table.starts_with("method,axis,value,n_traj,n_unsafe,n_infeasible,mean_solve_ms\n"));
    assert_eq!(table.lines().count(), 1 + 3 * 2);

    // The snapshot in the output directory reproduces the run on its own.
    let c = tmp.path().join("c");
    let o = pcbf(&[
        "sweep", "--values", "0.04,0.1", "--config", a.join("config.toml").to_str().unwrap(),
        "--out-dir", c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(csv_hashes(&a), csv_hashes(&c));
}

#[test]
fn batch_commands_write_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    std::fs::write(&cfg, "n_traj = 3\nhorizon = 5\nbench_solves = 10\nsigma0_max = 0.1\n").unwrap();
    for (cmd, file) in [
        ("rollout", "trajectories_cantelli.csv"),
        ("sigma0", "sigma0.csv"),
        ("bench", "bench.csv"),
    ] {
        let dir = tmp.path().join(cmd);
        let o = pcbf(&[
            cmd, "--config", cfg.to_str().unwrap(), "--methods", "markov,cantelli", "--out-dir",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let hashes = csv_hashes(&dir);
        assert!(hashes.iter().any(|(f, _)| f == file), "{cmd}: {hashes:?}");
        for (f, h) in hashes {
            let data = std::fs::read(dir.join(&f)).unwrap();
            assert_eq!(h.len(), 64);
            assert!(!data.is_empty(), "{f}");
        }
    }
    let traj = std::fs::read_to_string(tmp.path().join("rollout/trajectories_markov.csv")).unwrap();
    assert!(traj.starts_with("traj,t,x,y,theta,h,status\n"));
    assert_eq!(traj.lines().count(), 1 + 3 * 6);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let unwritable = blocker.join("out");
    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "sigmaa = 0.1\n").unwrap();
    let empty_cfg = tmp.path().join("empty.toml");
    std::fs::write(&empty_cfg, "methods = []\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["rollout", "--n-traj", "1", "--out-dir", unwritable.to_str().unwrap()],
        vec!["sweep", "--methods", ""],
        vec!["sweep", "--methods", "markov,bogus"],
        vec!["sweep", "--config", bad_cfg.to_str().unwrap()],
        vec!["sweep", "--config", empty_cfg.to_str().unwrap()],
        vec!["sweep", "--axis", "horizon", "--values", "2.5", "--out-dir", tmp.path().to_str().unwrap()],
        vec!["rollout", "--jobs", "0"],
        vec!["rollout", "--sigma", "-1"],
        vec!["config", "--config", "/nonexistent/config.toml"],
        vec!["frobnicate"],
    ];
    for args in cases {
        assert_eq!(pcbf(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn printed_config_parses_back_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let first = pcbf(&["config", "--sigma", "0.07", "--seed", "11"]);
    assert!(first.status.success());
    let path = tmp.path().join("c.toml");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = pcbf(&["config", "--config", path.to_str().unwrap()]);
    assert_eq!(first.stdout, second.stdout);
    assert!(stdout(&first).contains("sigma = 0.07\n"));
}
