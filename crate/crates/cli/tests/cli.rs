use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dmpc::SolverKind;
use dmpc_cli::{load_config, parse_k_list, simulate, sweep, Overrides};

const SMALL: &str = "\
[graph]
N = 3
edge = 1 2
edge = 2 3
[mpc]
T = 4
admm_iters = 5
[sim]
steps = 12
seed = 3
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.ini");
    fs::write(&path, text).unwrap();
    path
}

fn overrides(out: &Path) -> Overrides {
    Overrides {
        out: Some(out.to_path_buf()),
        ..Overrides::default()
    }
}

fn dmpc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmpc"))
}

#[test]
fn simulate_writes_self_describing_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SMALL);
    let cfg = load_config(&path, &overrides(&dir.path().join("run"))).unwrap();
    let out = simulate(&cfg).unwrap();
    assert_eq!(out.written.len(), 2);

    let csv = fs::read_to_string(dir.path().join("run/trajectory.csv")).unwrap();
    assert!(csv.contains("# mpc.T = 4\n"));
    assert!(csv.contains("# mpc.rho = 1 (default)\n"));
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 12 * 3);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["solver"], "admm");
    assert_eq!(summary["steps_completed"], 12);
    assert_eq!(summary["config"]["sim"]["horizon"], 4);
    assert!(summary["timing"]["subproblem"]["median_seconds"].as_f64().unwrap() > 0.0);
    let total = summary["total_cost"].as_f64().unwrap();
    assert!((total - out.log.total_cost).abs() <= 1e-12 * total);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SMALL);
    let mut csvs = Vec::new();
    for _ in 0..2 {
        let cfg = load_config(&path, &overrides(dir.path())).unwrap();
        simulate(&cfg).unwrap();
        csvs.push(fs::read(dir.path().join("trajectory.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn solver_override_is_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SMALL);
    let cfg = load_config(
        &path,
        &Overrides {
            solver: Some(SolverKind::Centralized),
            seed: Some(8),
            ..overrides(dir.path())
        },
    )
    .unwrap();
    assert_eq!(cfg.sim.seed, 8);
    simulate(&cfg).unwrap();
    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"solver\": \"centralized\""));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.contains("# mpc.solver = centralized\n"));
}

#[test]
fn sweep_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SMALL);
    let cfg = load_config(&path, &overrides(dir.path())).unwrap();
    let ks = parse_k_list("1, 2,5").unwrap();
    let (rows, out) = sweep(&cfg, &ks, 2).unwrap();
    assert_eq!(rows.len(), 3);
    let first = fs::read(&out).unwrap();
    sweep(&cfg, &ks, 2).unwrap();
    assert_eq!(first, fs::read(&out).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.contains("K,mean_excess_pct,std_pct,trials\n"));

    let (single, _) = sweep(&cfg, &[30], 1).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].std_pct, 0.0);
}

#[test]
fn k_list_parsing() {
    assert_eq!(parse_k_list("1,2,5,10,20,30").unwrap(), vec![1, 2, 5, 10, 20, 30]);
    assert!(parse_k_list("1,0").is_err());
    assert!(parse_k_list("a").is_err());
}

#[test]
fn binary_simulate_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SMALL);
    let out = dir.path().join("bin");
    let status = dmpc()
        .args(["simulate", "--config"])
        .arg(&path)
        .args(["--iters", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(fs::read_to_string(out.join("trajectory.csv"))
        .unwrap()
        .contains("# mpc.admm_iters = 3\n"));

    let bad = write_config(dir.path(), "[graph]\nN = 2\nedge = 1 2\nedge = 1 2\n");
    let result = dmpc().args(["simulate", "--config"]).arg(&bad).output().unwrap();
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("line 4: duplicate edge 1-2"));

    let unknown = dmpc().args(["verify", "thorough"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));

    let bad_solver = dmpc()
        .args(["simulate", "--config"])
        .arg(&path)
        .args(["--solver", "magic"])
        .output()
        .unwrap();
    assert!(!bad_solver.status.success());
}

#[test]
fn example_config_produces_full_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/flocking5.ini");
    let cfg = load_config(&config, &overrides(dir.path())).unwrap();
    let out = simulate(&cfg).unwrap();
    assert_eq!(out.log.num_steps(), 250);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 250 * 5);
}
