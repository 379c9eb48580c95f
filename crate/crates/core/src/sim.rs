//! Receding-horizon closed-loop simulation and the iteration-budget sweep.
//!
//! At every step the agents measure their states, solve the finite-horizon
//! problem (distributed or centrally), apply the first input and the plant
//! moves on with a fresh noise draw. Initial conditions and the whole noise
//! sequence are drawn up front from the seed, so runs that share a seed see
//! byte-identical disturbances regardless of the solver.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{run_admm, AdmmSettings, AdmmState};
use crate::agent::LtiAgent;
use crate::centralized::CentralizedSolver;
use crate::dual_decomp::{run_dual_decomposition, DualDecompState, StepSchedule};
use crate::graph::InfoGraph;
use crate::problem::{global_cost, ScenarioProblem, Subproblem};
use crate::qp::QpSettings;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Admm,
    DualDecomp,
    Centralized,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Admm => "admm",
            SolverKind::DualDecomp => "dual_decomp",
            SolverKind::Centralized => "centralized",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "admm" => Ok(SolverKind::Admm),
            "dual_decomp" => Ok(SolverKind::DualDecomp),
            "centralized" => Ok(SolverKind::Centralized),
            other => Err(Error::InvalidArgument(format!(
                "unknown solver '{other}' (expected admm, dual_decomp or centralized)"
            ))),
        }
    }
}

/// Simulation parameters. Plain `f64` so configs serialize the same whatever
/// scalar the simulation runs in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_steps: usize,
    pub horizon: usize,
    /// ADMM (or dual decomposition) iteration budget per sampling period.
    pub admm_iterations: usize,
    pub rho: f64,
    /// Per-component variance of the acceleration noise.
    pub noise_variance: f64,
    pub seed: u64,
    pub solver: SolverKind,
    /// Shift the previous ADMM state by one step instead of restarting from `λ = 0, z = 0`.
    pub warm_start: bool,
    /// Apply the `z`-averaged first input instead of each agent's own copy.
    pub apply_averaged_input: bool,
    /// Optional early exit when both ADMM residuals fall below this value.
    pub admm_tolerance: Option<f64>,
    /// Initial positions uniform in `[-r, r]`.
    pub init_position_range: f64,
    /// Initial velocities uniform in `[-r, r]`.
    pub init_velocity_range: f64,
    pub qp_tolerance: f64,
    pub qp_max_iter: usize,
    pub centralized_tolerance: f64,
    /// Initial step of the `α_0 / k` schedule for dual decomposition.
    pub dual_step: f64,
    pub parallel_agents: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_steps: 250,
            horizon: 10,
            admm_iterations: 30,
            rho: 1.0,
            noise_variance: 0.1,
            seed: 0,
            solver: SolverKind::Admm,
            warm_start: true,
            apply_averaged_input: false,
            admm_tolerance: None,
            init_position_range: 5.0,
            init_velocity_range: 1.0,
            qp_tolerance: 1e-6,
            qp_max_iter: 5000,
            centralized_tolerance: 1e-8,
            dual_step: 1.0,
            parallel_agents: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.num_steps < 1 {
            return bad("num_steps must be at least 1".into());
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.solver != SolverKind::Centralized && self.admm_iterations < 1 {
            return bad("iteration budget must be at least 1".into());
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return bad(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            ));
        }
        for (name, v) in [
            ("init_position_range", self.init_position_range),
            ("init_velocity_range", self.init_velocity_range),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("qp_tolerance", self.qp_tolerance),
            ("centralized_tolerance", self.centralized_tolerance),
            ("dual_step", self.dual_step),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// The plant: information graph plus one model per agent.
#[derive(Debug, Clone)]
pub struct Scenario<T: Real> {
    pub graph: InfoGraph<T>,
    pub agents: Vec<LtiAgent<T>>,
}

impl<T: Real> Scenario<T> {
    pub fn new(graph: InfoGraph<T>, agents: Vec<LtiAgent<T>>) -> Result<Self> {
        if agents.len() != graph.num_agents() {
            return Err(Error::DimensionMismatch {
                what: "number of agents",
                expected: graph.num_agents(),
                got: agents.len(),
            });
        }
        Ok(Self { graph, agents })
    }

    /// Identical double integrators on a unit-weight path.
    pub fn flocking(num_agents: usize, ts: T, mass: T, u_max: T) -> Result<Self> {
        let agent = LtiAgent::double_integrator_3d(ts, mass, u_max)?;
        Self::new(InfoGraph::path(num_agents)?, vec![agent; num_agents])
    }

    /// Five agents on a path, `T_s = 0.1`, unit mass, `u_max = 1`.
    pub fn five_agent_path() -> Self {
        Self::flocking(5, T::lit(0.1), T::one(), T::one()).expect("valid defaults")
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }
}

/// Initial states and per-step noise for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance<T: Real> {
    pub initial_states: Vec<DVector<T>>,
    /// `noise[t][i]`.
    pub noise: Vec<Vec<DVector<T>>>,
}

impl<T: Real> Disturbance<T> {
    /// Positions are the even state components and velocities the odd ones.
    pub fn sample(cfg: &SimConfig, scenario: &Scenario<T>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let initial_states = scenario
            .agents
            .iter()
            .map(|a| {
                DVector::from_fn(a.n(), |k, _| {
                    let r = if k % 2 == 0 {
                        cfg.init_position_range
                    } else {
                        cfg.init_velocity_range
                    };
                    T::lit(if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 })
                })
            })
            .collect();
        let normal = Normal::new(0.0, cfg.noise_variance.sqrt())
            .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
        let noise = (0..cfg.num_steps)
            .map(|_| {
                scenario
                    .agents
                    .iter()
                    .map(|a| DVector::from_fn(a.noise_dim(), |_, _| T::lit(normal.sample(&mut rng))))
                    .collect()
            })
            .collect();
        Ok(Self { initial_states, noise })
    }
}

/// Solver statistics of one sampling period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub iterations: usize,
    pub r_primal: f64,
    pub r_dual: f64,
    /// Largest per-entry dual sum seen over the iterations of this step.
    pub max_dual_sum: f64,
    pub qp_iterations: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog<T: Real> {
    pub solver: SolverKind,
    /// `states[t][i]` for `t = 0..=num_steps`.
    pub states: Vec<Vec<DVector<T>>>,
    /// Applied inputs `inputs[t][i]`.
    pub inputs: Vec<Vec<DVector<T>>>,
    /// Realized stage cost `x(t)ᵀ(L ⊗ I)x(t) + u(t)ᵀu(t)`.
    pub stage_costs: Vec<T>,
    /// Each agent's share of the stage cost: half of every incident edge term plus its input energy.
    pub agent_costs: Vec<Vec<T>>,
    pub noise: Vec<Vec<DVector<T>>>,
    pub stats: Vec<StepStats>,
    /// Wall time of every subproblem solve, in seconds.
    pub solve_seconds: Vec<f64>,
    pub total_cost: T,
    /// Step and reason when the run stopped early on a solver failure.
    pub abort: Option<(usize, String)>,
}

impl<T: Real> SimLog<T> {
    fn new(solver: SolverKind) -> Self {
        Self {
            solver,
            states: Vec::new(),
            inputs: Vec::new(),
            stage_costs: Vec::new(),
            agent_costs: Vec::new(),
            noise: Vec::new(),
            stats: Vec::new(),
            solve_seconds: Vec::new(),
            total_cost: T::zero(),
            abort: None,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.inputs.len()
    }

    /// Errors if the run was aborted.
    pub fn check(&self) -> Result<()> {
        match &self.abort {
            None => Ok(()),
            Some((step, reason)) => Err(Error::SimulationAborted {
                step: *step,
                source: Box::new(Error::InvalidArgument(reason.clone())),
            }),
        }
    }

    /// One row per step and agent: `t,agent,x1..xn,u1..um,stage_cost` where
    /// `agent` is 1-based and `stage_cost` is the agent's share. Lines in
    /// `preamble` are emitted first as `# ` comments.
    pub fn trajectory_csv(&self, preamble: &[String]) -> String {
        let mut out = String::new();
        for line in preamble {
            let _ = writeln!(out, "# {line}");
        }
        let n = self.states.first().and_then(|s| s.first()).map_or(0, |x| x.len());
        let m = self.inputs.first().and_then(|s| s.first()).map_or(0, |u| u.len());
        out.push_str("t,agent");
        for k in 1..=n {
            let _ = write!(out, ",x{k}");
        }
        for k in 1..=m {
            let _ = write!(out, ",u{k}");
        }
        out.push_str(",stage_cost\n");
        for t in 0..self.num_steps() {
            for i in 0..self.inputs[t].len() {
                let _ = write!(out, "{t},{}", i + 1);
                for v in self.states[t][i].iter().chain(self.inputs[t][i].iter()) {
                    let _ = write!(out, ",{:.16e}", v.to_f64_lossy());
                }
                let _ = writeln!(out, ",{:.16e}", self.agent_costs[t][i].to_f64_lossy());
            }
        }
        out
    }

    pub fn timing_summary(&self) -> TimingSummary {
        TimingSummary::from_samples(&self.solve_seconds)
    }

    /// Largest pairwise distance between agents over the given state components at step `t`.
    pub fn max_pairwise_distance(&self, t: usize, components: &[usize]) -> f64 {
        let xs = &self.states[t];
        let mut worst = 0.0f64;
        for a in 0..xs.len() {
            for b in a + 1..xs.len() {
                let d: f64 = components
                    .iter()
                    .map(|&c| (xs[a][c] - xs[b][c]).to_f64_lossy().powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(d);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingSummary {
    pub samples: usize,
    pub median_seconds: f64,
    pub p95_seconds: f64,
    pub max_seconds: f64,
}

impl TimingSummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self {
                samples: 0,
                median_seconds: 0.0,
                p95_seconds: 0.0,
                max_seconds: 0.0,
            };
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
        Self {
            samples: sorted.len(),
            median_seconds: pick(0.5),
            p95_seconds: pick(0.95),
            max_seconds: *sorted.last().expect("non-empty"),
        }
    }
}

enum Controller<T: Real> {
    Admm {
        subproblems: Vec<Subproblem<T>>,
        settings: AdmmSettings<T>,
        previous: Option<AdmmState<T>>,
    },
    DualDecomp {
        subproblems: Vec<Subproblem<T>>,
        qp: QpSettings<T>,
    },
    Centralized {
        solver: Box<CentralizedSolver<T>>,
        previous: Option<DVector<T>>,
    },
}

struct Decision<T: Real> {
    inputs: Vec<DVector<T>>,
    stats: StepStats,
    solve_seconds: Vec<f64>,
}

/// Closed loop with the disturbance drawn from `cfg.seed`.
pub fn run_closed_loop<T: Real>(cfg: &SimConfig, scenario: &Scenario<T>) -> Result<SimLog<T>> {
    let disturbance = Disturbance::sample(cfg, scenario)?;
    run_closed_loop_with(cfg, scenario, &disturbance)
}

/// Closed loop against a given disturbance. A solver failure stops the run and
/// is recorded in [`SimLog::abort`]; everything up to that step is kept.
pub fn run_closed_loop_with<T: Real>(
    cfg: &SimConfig,
    scenario: &Scenario<T>,
    disturbance: &Disturbance<T>,
) -> Result<SimLog<T>> {
    cfg.validate()?;
    if disturbance.noise.len() < cfg.num_steps {
        return Err(Error::DimensionMismatch {
            what: "noise sequence length",
            expected: cfg.num_steps,
            got: disturbance.noise.len(),
        });
    }
    let problem = ScenarioProblem::new(scenario.graph.clone(), scenario.agents.clone(), cfg.horizon)?;
    let mut controller = build_controller(cfg, &problem, &disturbance.initial_states)?;

    let mut log = SimLog::new(cfg.solver);
    let mut x = disturbance.initial_states.clone();
    for t in 0..cfg.num_steps {
        let decision = match decide(cfg, &problem, &mut controller, &x) {
            Ok(d) => d,
            Err(e) => {
                log.states.push(x);
                log.abort = Some((t, e.to_string()));
                return Ok(log);
            }
        };
        let stage_states: Vec<Vec<DVector<T>>> = x.iter().map(|xi| vec![xi.clone()]).collect();
        let stage_inputs: Vec<Vec<DVector<T>>> = decision.inputs.iter().map(|u| vec![u.clone()]).collect();
        let stage = global_cost(&scenario.graph, &stage_states, &stage_inputs)?;
        log.agent_costs
            .push(agent_shares(&scenario.graph, &x, &decision.inputs));

        let next = scenario
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.step(&x[i], &decision.inputs[i], &disturbance.noise[t][i]))
            .collect::<Result<Vec<_>>>()?;

        log.states.push(std::mem::replace(&mut x, next));
        log.inputs.push(decision.inputs);
        log.noise.push(disturbance.noise[t].clone());
        log.stage_costs.push(stage);
        log.total_cost += stage;
        log.stats.push(decision.stats);
        log.solve_seconds.extend(decision.solve_seconds);
    }
    log.states.push(x);
    Ok(log)
}

fn agent_shares<T: Real>(graph: &InfoGraph<T>, x: &[DVector<T>], u: &[DVector<T>]) -> Vec<T> {
    let half = T::lit(0.5);
    let mut shares: Vec<T> = u.iter().map(|ui| ui.norm_squared()).collect();
    for (i, j, a) in graph.edges() {
        let e = a * (&x[i] - &x[j]).norm_squared() * half;
        shares[i] += e;
        shares[j] += e;
    }
    shares
}

fn build_controller<T: Real>(
    cfg: &SimConfig,
    problem: &ScenarioProblem<T>,
    x0: &[DVector<T>],
) -> Result<Controller<T>> {
    let qp = QpSettings::new(T::lit(cfg.qp_tolerance), cfg.qp_max_iter);
    Ok(match cfg.solver {
        SolverKind::Admm => {
            let rho = T::lit(cfg.rho);
            let subproblems = problem
                .local_problems(x0)?
                .iter()
                .map(|p| Subproblem::new(p, rho))
                .collect::<Result<Vec<_>>>()?;
            let eps = T::lit(cfg.admm_tolerance.unwrap_or(0.0));
            let settings = AdmmSettings {
                rho,
                max_iter: cfg.admm_iterations,
                eps_primal: eps,
                eps_dual: eps,
                qp,
                parallel: cfg.parallel_agents,
            };
            Controller::Admm {
                subproblems,
                settings,
                previous: None,
            }
        }
        SolverKind::DualDecomp => {
            let subproblems = problem
                .local_problems(x0)?
                .iter()
                .map(|p| Subproblem::new(p, T::zero()))
                .collect::<Result<Vec<_>>>()?;
            Controller::DualDecomp { subproblems, qp }
        }
        SolverKind::Centralized => {
            let settings = QpSettings::new(T::lit(cfg.centralized_tolerance), 50_000);
            Controller::Centralized {
                solver: Box::new(CentralizedSolver::new(problem.clone(), settings)?),
                previous: None,
            }
        }
    })
}

fn member_states<T: Real>(members: &[usize], x: &[DVector<T>]) -> Vec<DVector<T>> {
    members.iter().map(|&j| x[j].clone()).collect()
}

fn own_first_input<T: Real>(problem: &ScenarioProblem<T>, owner: usize, local: &DVector<T>) -> DVector<T> {
    let map = &problem.maps()[owner];
    let k = map.members().binary_search(&owner).expect("owner is a member");
    let agent = &problem.agents()[owner];
    let off = map.member_offset(k) + (problem.horizon() + 1) * agent.n();
    local.rows(off, agent.m()).into_owned()
}

fn clamp_input<T: Real>(agent: &LtiAgent<T>, u: DVector<T>) -> DVector<T> {
    u.map(|v| v.clamp(-agent.u_max(), agent.u_max()))
}

fn decide<T: Real>(
    cfg: &SimConfig,
    problem: &ScenarioProblem<T>,
    controller: &mut Controller<T>,
    x: &[DVector<T>],
) -> Result<Decision<T>> {
    let start = Instant::now();
    let pick_inputs = |locals: &[DVector<T>], z: &DVector<T>| -> Vec<DVector<T>> {
        let averaged = cfg.apply_averaged_input.then(|| problem.decode_inputs(z));
        (0..problem.num_agents())
            .map(|i| {
                let u = match &averaged {
                    Some(all) => all[i][0].clone(),
                    None => own_first_input(problem, i, &locals[i]),
                };
                clamp_input(&problem.agents()[i], u)
            })
            .collect()
    };

    match controller {
        Controller::Admm {
            subproblems,
            settings,
            previous,
        } => {
            for (sp, map) in subproblems.iter_mut().zip(problem.maps()) {
                sp.set_initial_states(&member_states(map.members(), x));
            }
            let init = match (cfg.warm_start, previous.as_ref()) {
                (true, Some(prev)) => Some(prev.shifted(problem)),
                _ => None,
            };
            let state = run_admm(subproblems, problem.maps(), problem.z_dim(), settings, init)?;
            let inputs = pick_inputs(&state.locals, &state.z);
            let last = state.history.records.last().copied();
            let stats = StepStats {
                iterations: state.history.records.len(),
                r_primal: last.map_or(0.0, |r| r.r_primal.to_f64_lossy()),
                r_dual: last.map_or(0.0, |r| r.r_dual.to_f64_lossy()),
                max_dual_sum: state
                    .history
                    .records
                    .iter()
                    .map(|r| r.max_dual_sum.to_f64_lossy())
                    .fold(0.0, f64::max),
                qp_iterations: state.history.records.iter().map(|r| r.qp_iterations).sum(),
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            let solve_seconds = state.history.solve_seconds.clone();
            *previous = Some(state);
            Ok(Decision {
                inputs,
                stats,
                solve_seconds,
            })
        }
        Controller::DualDecomp { subproblems, qp } => {
            for (sp, map) in subproblems.iter_mut().zip(problem.maps()) {
                sp.set_initial_states(&member_states(map.members(), x));
            }
            let schedule = StepSchedule::Diminishing(T::lit(cfg.dual_step));
            let init = DualDecompState::new(subproblems, problem.z_dim(), schedule);
            let state = run_dual_decomposition(
                subproblems,
                problem.maps(),
                problem.z_dim(),
                schedule,
                cfg.admm_iterations,
                *qp,
                Some(init),
            )?;
            let inputs = pick_inputs(&state.locals, &state.z);
            let last = state.history.last();
            let stats = StepStats {
                iterations: state.history.len(),
                r_primal: last.map_or(0.0, |r| r.disagreement.to_f64_lossy()),
                r_dual: 0.0,
                max_dual_sum: 0.0,
                qp_iterations: 0,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            Ok(Decision {
                inputs,
                stats,
                solve_seconds: vec![start.elapsed().as_secs_f64()],
            })
        }
        Controller::Centralized { solver, previous } => {
            let warm = previous.as_ref().map(|u| shift_stacked_inputs(problem, u));
            let plan = solver.solve(x, warm.as_ref())?;
            let elapsed = start.elapsed().as_secs_f64();
            let inputs = plan
                .inputs
                .iter()
                .zip(problem.agents())
                .map(|(seq, a)| clamp_input(a, seq[0].clone()))
                .collect();
            let stats = StepStats {
                iterations: 1,
                r_primal: 0.0,
                r_dual: 0.0,
                max_dual_sum: 0.0,
                qp_iterations: plan.qp.iterations,
                wall_seconds: elapsed,
            };
            *previous = Some(plan.qp.x);
            Ok(Decision {
                inputs,
                stats,
                solve_seconds: vec![elapsed],
            })
        }
    }
}

/// Stacked `[u_1(0..T); u_2(0..T); ...]` moved one step earlier, last step repeated.
fn shift_stacked_inputs<T: Real>(problem: &ScenarioProblem<T>, u: &DVector<T>) -> DVector<T> {
    let mut out = u.clone();
    let horizon = problem.horizon();
    let mut base = 0;
    for agent in problem.agents() {
        let m = agent.m();
        for t in 0..horizon {
            let from = (t + 1).min(horizon - 1);
            for c in 0..m {
                out[base + t * m + c] = u[base + from * m + c];
            }
        }
        base += m * horizon;
    }
    out
}

/// Total realized cost `Σ_t stage_cost(t)`.
pub fn closed_loop_cost<T: Real>(log: &SimLog<T>) -> T {
    log.stage_costs.iter().copied().sum()
}

/// Excess cost of `candidate` over `reference` in percent.
pub fn performance_ratio<T: Real>(candidate: &SimLog<T>, reference: &SimLog<T>) -> Result<T> {
    let base = closed_loop_cost(reference);
    if base == T::zero() {
        return Err(Error::ZeroReferenceCost);
    }
    Ok(T::lit(100.0) * (closed_loop_cost(candidate) - base) / base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub mean_excess_pct: f64,
    pub std_pct: f64,
    pub trials: usize,
}

/// Seed of trial `k` in a sweep starting from `base`.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64)
}

/// Paired ADMM-vs-centralized closed loops for every budget in `k_values`.
/// Trial `k` uses seed `cfg.seed + k` for the reference and every budget.
pub fn iteration_sweep<T: Real>(
    cfg: &SimConfig,
    scenario: &Scenario<T>,
    k_values: &[usize],
    num_trials: usize,
) -> Result<Vec<SweepRow>> {
    if num_trials < 1 {
        return Err(Error::InvalidArgument("a sweep needs at least one trial".into()));
    }
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(Error::InvalidArgument("iteration budgets must be positive".into()));
    }
    let per_trial: Vec<Result<Vec<f64>>> = (0..num_trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(cfg.seed, trial);
            let base = SimConfig { seed, ..cfg.clone() };
            let disturbance = Disturbance::sample(&base, scenario)?;
            let central_cfg = SimConfig {
                solver: SolverKind::Centralized,
                ..base.clone()
            };
            let central = run_closed_loop_with(&central_cfg, scenario, &disturbance)?;
            central.check()?;
            k_values
                .iter()
                .map(|&k| {
                    let admm_cfg = SimConfig {
                        solver: SolverKind::Admm,
                        admm_iterations: k,
                        ..base.clone()
                    };
                    let log = run_closed_loop_with(&admm_cfg, scenario, &disturbance)?;
                    log.check()?;
                    Ok(performance_ratio(&log, &central)?.to_f64_lossy())
                })
                .collect()
        })
        .collect();
    let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(k_values
        .iter()
        .enumerate()
        .map(|(col, &k)| {
            let xs: Vec<f64> = per_trial.iter().map(|r| r[col]).collect();
            let (mean, std) = mean_std(&xs);
            SweepRow {
                k,
                mean_excess_pct: mean,
                std_pct: std,
                trials: xs.len(),
            }
        })
        .collect())
}

/// Sample mean and (n − 1) standard deviation; the deviation is 0 for one sample.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `K,mean_excess_pct,std_pct,trials` with optional `# ` preamble lines.
pub fn sweep_csv(rows: &[SweepRow], preamble: &[String]) -> String {
    let mut out = String::new();
    for line in preamble {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("K,mean_excess_pct,std_pct,trials\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{}",
            r.k, r.mean_excess_pct, r.std_pct, r.trials
        );
    }
    out
}
