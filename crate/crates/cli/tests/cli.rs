use std::path::Path;
use std::process::{Command, Output};

use movebandit::harness::{AdversarySpec, LossOracle, RunTrace};
use movebandit::metric::{make_metric, MetricFamily};
use serde_json::Value;

fn movebandit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_movebandit"))
        .current_dir(dir)
        .env_remove("MOVEBANDIT_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = movebandit(d, &["run", "--metric", "uniform:4", "--horizon", "50", "--seed", "1"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("movement_regret="));

    assert_eq!(code(&movebandit(d, &["run", "--metric", "uniform:4", "--horizon", "50"])), 2);
    assert_eq!(code(&movebandit(d, &["run", "--metric", "nope:3", "--horizon", "5", "--seed", "1"])), 2);
    assert_eq!(code(&movebandit(d, &["run", "--bogus"])), 2);
    assert_eq!(code(&movebandit(d, &["verify", "--only", "nothing"])), 2);

    std::fs::write(d.join("bad.csv"), "0,1,5\n1,0,1\n5,1,0\n").unwrap();
    let bad = movebandit(d, &["metric", "analyze", "--metric", "bad.csv"]);
    assert_eq!(code(&bad), 2);

    std::fs::write(d.join("short.csv"), "0.1,0.2\n0.3,0.4\n").unwrap();
    let short = movebandit(
        d,
        &["run", "--metric", "uniform:2", "--adversary", "file:path=short.csv", "--horizon", "5", "--seed", "1"],
    );
    assert_ne!(code(&short), 0);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"metric": "uniform:4", "horizon": 100, "seed": 3, "algorithm": "exp3", "summary": "from_file.json"}"#,
    )
    .unwrap();
    let o = movebandit(d, &["run", "--config", "cfg.json", "--horizon", "40", "--summary", "s.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&d.join("s.json"));
    assert_eq!(s["config"]["horizon"], 40);
    assert_eq!(s["config"]["seed"], 3);
    assert_eq!(s["config"]["algorithm"], "exp3");
    assert!(!d.join("from_file.json").exists());

    std::fs::write(d.join("typo.json"), r#"{"metric": "uniform:4", "horizn": 10}"#).unwrap();
    assert_eq!(code(&movebandit(d, &["run", "--config", "typo.json", "--seed", "1"])), 2);
}

#[test]
fn env_seed_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |extra: &[&str]| {
        let mut args = vec!["run", "--metric", "uniform:3", "--horizon", "20"];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_movebandit"))
            .current_dir(d)
            .env("MOVEBANDIT_SEED", "9")
            .args(&args)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run(&[])), 0);
    assert_eq!(read_json(&d.join("summary.json"))["seed"], 9);
    assert_eq!(code(&run(&["--seed", "4"])), 0);
    assert_eq!(read_json(&d.join("summary.json"))["seed"], 4);
}

#[test]
fn summary_matches_its_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = movebandit(
        d,
        &["run", "--metric", "grid1d:6", "--adversary", "drift:period=20,step=0.3", "--horizon", "2000", "--seed", "5"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&d.join("summary.json"));
    let trace = RunTrace::read_csv(std::fs::File::open(d.join("trace.csv")).unwrap(), 5).unwrap();
    let m = make_metric(MetricFamily::Grid1d { k: 6 }).unwrap();
    let spec: AdversarySpec = "drift:period=20,step=0.3".parse().unwrap();
    let oracle = LossOracle::new(&spec, 5, &m, 2000).unwrap();
    let b = trace.breakdown(oracle.comparator().1);
    assert_eq!(s["movement_regret"].as_f64().unwrap(), b.movement_regret);
    assert_eq!(s["total_move"].as_f64().unwrap(), b.total_move);
    assert!(s["tree"]["H"].as_u64().unwrap() >= 1);
}

#[test]
fn continuous_run_reports_the_cover() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = movebandit(d, &["run", "--metric", "interval", "--horizon", "1000", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&d.join("summary.json"));
    assert!((s["continuous"]["eps"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(s["continuous"]["cover_size"], 3);
    let bad = movebandit(d, &["run", "--metric", "interval", "--algorithm", "exp3", "--horizon", "10", "--seed", "2"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn sweep_rows_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = movebandit(
        d,
        &[
            "sweep", "--metric", "uniform:4", "--horizons", "1024,4096", "--seeds", "1,2", "--jobs", "2",
            "--out", "sweep.csv", "--fit-slope",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], "T,seed,movement_regret,total_move,status");
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("slope="));

    let again = movebandit(d, &["slope", "--input", "sweep.csv"]);
    assert_eq!(code(&again), 0);
    assert_eq!(
        String::from_utf8_lossy(&again.stdout).trim(),
        String::from_utf8_lossy(&o.stdout).trim()
    );

    let empty = movebandit(d, &["sweep", "--metric", "uniform:4", "--horizons", "--seeds", "1"]);
    assert_eq!(code(&empty), 2);
}

#[test]
fn hst_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&movebandit(d, &["hst", "build", "--spec", "grid1d:5", "--out", "t.json"])), 0);
    assert_eq!(
        code(&movebandit(d, &["hst", "reshape", "--tree", "t.json", "--horizon", "1000000", "--out", "r.json"])),
        0
    );
    let c = movebandit(d, &["hst", "check", "--tree", "r.json", "--horizon", "1000000", "--spec", "grid1d:5"]);
    assert_eq!(code(&c), 0, "{}", String::from_utf8_lossy(&c.stderr));
    let report: Value = serde_json::from_slice(&c.stdout).unwrap();
    assert_eq!(report["wellBehaved"], true);
}

#[test]
fn verify_filters_and_faults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = movebandit(d, &["verify", "--only", "marginals", "--report", "r.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&d.join("r.json"));
    let names: Vec<&str> = r["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["marginals"]);

    let bad = movebandit(d, &["verify", "--only", "dominance", "--inject-faulty-tree"]);
    assert_eq!(code(&bad), 1);
    let r: Value = serde_json::from_slice(&bad.stdout).unwrap();
    let injected = &r["checks"][1];
    assert_eq!(injected["name"], "injected-tree");
    assert_eq!(injected["details"]["violations"][0]["i"], 0);
    assert_eq!(injected["details"]["violations"][0]["j"], 1);
}
