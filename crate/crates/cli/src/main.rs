use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dmpc::SolverKind;
use dmpc_cli::{load_config, parse_k_list, run_verify, simulate, sweep, Overrides, VerifyLevel, DEFAULT_K_LIST};

#[derive(Parser)]
#[command(name = "dmpc", version, about = "Distributed MPC consensus experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// admm, dual_decomp or centralized
    #[arg(long)]
    solver: Option<String>,
    /// Iteration budget per sampling period
    #[arg(long)]
    iters: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> anyhow::Result<Overrides> {
        Ok(Overrides {
            seed: self.seed,
            solver: self.solver.as_deref().map(str::parse::<SolverKind>).transpose()?,
            iters: self.iters,
            out: self.out.clone(),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop simulation
    Simulate(Common),
    /// Compare ADMM iteration budgets against the centralized solution
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Comma-separated iteration budgets
        #[arg(long)]
        k_list: Option<String>,
    },
    /// Run the built-in self-check suites
    Verify {
        #[arg(value_enum, default_value = "fast")]
        level: VerifyLevel,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load_config(&common.config, &common.overrides()?)?;
            let out = simulate(&cfg).context("simulation failed")?;
            println!(
                "{}: {} steps, total cost {:.6}",
                cfg.sim.solver.name(),
                out.log.num_steps(),
                out.log.total_cost
            );
            for path in &out.written {
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
        Command::Sweep { common, trials, k_list } => {
            let cfg = load_config(&common.config, &common.overrides()?)?;
            let ks = match k_list {
                Some(text) => parse_k_list(&text)?,
                None => DEFAULT_K_LIST.to_vec(),
            };
            let (rows, path) = sweep(&cfg, &ks, trials)?;
            println!("{:>4}  {:>14}  {:>10}", "K", "mean excess %", "std %");
            for r in &rows {
                println!("{:>4}  {:>14.4}  {:>10.4}", r.k, r.mean_excess_pct, r.std_pct);
            }
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Verify { level } => {
            let results = run_verify(level, |r| println!("{r}"));
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
