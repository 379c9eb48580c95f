//! `simulate` and `sweep`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dmpc::sim::{sweep_csv, SweepRow};
use dmpc::{iteration_sweep, run_closed_loop, SimLog, SolverKind};
use serde_json::json;

use crate::config::{parse_config, ScenarioConfig};

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub solver: Option<SolverKind>,
    pub iters: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> anyhow::Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut set = |key: &str| {
        cfg.defaulted.remove(key);
    };
    if overrides.seed.is_some() {
        set("sim.seed");
    }
    if overrides.solver.is_some() {
        set("mpc.solver");
    }
    if overrides.iters.is_some() {
        set("mpc.admm_iters");
    }
    if overrides.out.is_some() {
        set("output.directory");
    }
    if let Some(seed) = overrides.seed {
        cfg.sim.seed = seed;
    }
    if let Some(solver) = overrides.solver {
        cfg.sim.solver = solver;
    }
    if let Some(k) = overrides.iters {
        cfg.sim.admm_iterations = k;
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    cfg.sim.validate()?;
    Ok(cfg)
}

#[derive(Debug)]
pub struct SimulateOutput {
    pub log: SimLog<f64>,
    pub written: Vec<PathBuf>,
}

/// Runs the closed loop and writes `trajectory.csv` / `summary.json` as configured.
/// Files are written even when the run aborts; the abort is then returned as an error.
pub fn simulate(cfg: &ScenarioConfig) -> anyhow::Result<SimulateOutput> {
    let scenario = cfg.scenario()?;
    let started = std::time::Instant::now();
    let log = run_closed_loop(&cfg.sim, &scenario)?;
    let wall = started.elapsed().as_secs_f64();

    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let mut written = Vec::new();
    if cfg.formats.csv {
        let path = cfg.output_dir.join("trajectory.csv");
        write(&path, &log.trajectory_csv(&cfg.echo_lines()))?;
        written.push(path);
    }
    if cfg.formats.json {
        let path = cfg.output_dir.join("summary.json");
        let summary = summary_json(cfg, &log, wall);
        write(&path, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
        written.push(path);
    }
    if let Some((step, reason)) = &log.abort {
        bail!("{} solver failed at step {step}: {reason}", cfg.sim.solver.name());
    }
    Ok(SimulateOutput { log, written })
}

fn summary_json(cfg: &ScenarioConfig, log: &SimLog<f64>, wall_seconds: f64) -> serde_json::Value {
    let last = log.states.len() - 1;
    let step_walls: Vec<f64> = log.stats.iter().map(|s| s.wall_seconds).collect();
    json!({
        "config": cfg.to_json(),
        "solver": cfg.sim.solver.name(),
        "steps_completed": log.num_steps(),
        "total_cost": log.total_cost,
        "aborted": log.abort.as_ref().map(|(step, reason)| json!({ "step": step, "reason": reason })),
        "iterations_total": log.stats.iter().map(|s| s.iterations).sum::<usize>(),
        "max_dual_sum": log.stats.iter().map(|s| s.max_dual_sum).fold(0.0, f64::max),
        "final_position_spread": log.max_pairwise_distance(last, &[0, 2, 4]),
        "final_velocity_spread": log.max_pairwise_distance(last, &[1, 3, 5]),
        "timing": {
            "wall_seconds": wall_seconds,
            "subproblem": log.timing_summary(),
            "step": dmpc::sim::TimingSummary::from_samples(&step_walls),
        },
    })
}

pub const DEFAULT_K_LIST: &[usize] = &[1, 2, 5, 10, 20, 30];

/// Runs the paired iteration sweep and writes `sweep.csv`.
pub fn sweep(cfg: &ScenarioConfig, k_list: &[usize], trials: usize) -> anyhow::Result<(Vec<SweepRow>, PathBuf)> {
    let scenario = cfg.scenario()?;
    let rows = iteration_sweep(&cfg.sim, &scenario, k_list, trials)?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let path = cfg.output_dir.join("sweep.csv");
    let mut preamble = cfg.echo_lines();
    preamble.push(format!("sweep.trials = {trials}"));
    preamble.push(format!(
        "sweep.k_list = {}",
        k_list.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    ));
    write(&path, &sweep_csv(&rows, &preamble))?;
    Ok((rows, path))
}

pub fn parse_k_list(text: &str) -> anyhow::Result<Vec<usize>> {
    let ks = text
        .split(',')
        .map(|s| {
            let k: usize = s
                .trim()
                .parse()
                .with_context(|| format!("invalid iteration budget '{s}'"))?;
            if k == 0 {
                bail!("iteration budgets must be positive");
            }
            Ok(k)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if ks.is_empty() {
        bail!("empty K list");
    }
    Ok(ks)
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
