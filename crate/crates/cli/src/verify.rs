//! Self-check suites: each one compares a solver against an independent
//! reference on small random instances and reports pass/fail.

use std::time::Instant;

use dmpc::oracle::enumerate_box_qp;
use dmpc::problem::ScenarioProblem;
use dmpc::{
    global_cost, iteration_sweep, run_admm, run_closed_loop, AdmmSettings, BoxQp, CentralizedSolver, InfoGraph,
    LtiAgent, QpSettings, Scenario, SimConfig, Subproblem,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VerifyLevel {
    Fast,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<22} {} ({:.1} s)", self.name, self.detail, self.seconds)
    }
}

type Suite = fn() -> (bool, String);

pub fn run_verify(level: VerifyLevel, mut report: impl FnMut(&SuiteResult)) -> Vec<SuiteResult> {
    let mut suites: Vec<(&'static str, Suite)> = vec![
        ("qp_vs_enumeration", qp_vs_enumeration),
        ("admm_vs_centralized", admm_vs_centralized),
        ("cost_decomposition", cost_decomposition),
        ("dual_average_zero", dual_average_zero),
        ("determinism", determinism),
    ];
    if level == VerifyLevel::Full {
        suites.push(("consensus", consensus));
        suites.push(("iteration_sweep", sweep_acceptance));
    }
    suites
        .into_iter()
        .map(|(name, suite)| {
            let start = Instant::now();
            let (passed, detail) = suite();
            let result = SuiteResult {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            };
            report(&result);
            result
        })
        .collect()
}

fn random_psd_qp(rng: &mut impl Rng) -> BoxQp<f64> {
    let n = rng.random_range(1..=4);
    let rank = rng.random_range(1..=n);
    let m = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-2.0..2.0));
    let p = m.transpose() * m + DMatrix::identity(n, n) * rng.random_range(0.0..0.5);
    let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let lower = DVector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
    let upper = DVector::from_fn(n, |i, _| lower[i] + rng.random_range(0.1..3.0));
    BoxQp::new(p, q, lower, upper).expect("well-formed instance")
}

fn qp_vs_enumeration() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let solver = dmpc::qp::BoxQpSolver::new(QpSettings::new(1e-12, 200_000));
    let (mut worst_obj, mut worst_arg) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let qp = random_psd_qp(&mut rng);
        let sol = solver.solve(&qp, None, None);
        let Some((x_ref, f_ref)) = enumerate_box_qp(&qp) else {
            return (false, "enumeration found no feasible pattern".into());
        };
        worst_obj = worst_obj.max((sol.objective - f_ref).abs() / (1.0 + f_ref.abs()));
        if qp.p.clone().symmetric_eigenvalues().min() > 1e-3 {
            worst_arg = worst_arg.max((&sol.x - &x_ref).amax());
        }
    }
    (
        worst_obj <= 1e-9 && worst_arg <= 1e-6,
        format!("100 instances, objective gap {worst_obj:.1e}, argument gap {worst_arg:.1e}"),
    )
}

/// Connected graph on `n` vertices: a random spanning tree plus extra edges.
pub fn random_connected_graph(rng: &mut impl Rng, n: usize) -> InfoGraph<f64> {
    let mut g = InfoGraph::new(n).expect("n >= 1");
    for v in 1..n {
        let u = rng.random_range(0..v);
        g.add_edge(u, v, rng.random_range(0.5..2.0)).expect("fresh edge");
    }
    for i in 0..n {
        for j in i + 1..n {
            if g.weight(i, j).is_none() && rng.random_bool(0.3) {
                g.add_edge(i, j, rng.random_range(0.5..2.0)).expect("fresh edge");
            }
        }
    }
    g
}

fn random_states(rng: &mut impl Rng, n: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| {
            DVector::from_fn(6, |k, _| {
                if k % 2 == 0 {
                    rng.random_range(-5.0..5.0)
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
        })
        .collect()
}

fn admm_vs_centralized() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut worst_u, mut worst_cost) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        let n = rng.random_range(2..=4);
        let horizon = rng.random_range(2..=4);
        let graph = random_connected_graph(&mut rng, n);
        let agents: Vec<_> = (0..n)
            .map(|_| {
                LtiAgent::double_integrator_3d(0.1, rng.random_range(0.5..2.0), rng.random_range(0.3..1.5))
                    .expect("valid")
            })
            .collect();
        let x0 = random_states(&mut rng, n);
        match compare_with_centralized(&graph, &agents, horizon, &x0) {
            Ok((du, dc)) => {
                worst_u = worst_u.max(du);
                worst_cost = worst_cost.max(dc);
            }
            Err(e) => return (false, e.to_string()),
        }
    }
    (
        worst_u <= 1e-4 && worst_cost <= 1e-6,
        format!("3 scenarios, input gap {worst_u:.1e}, relative cost gap {worst_cost:.1e}"),
    )
}

/// ADMM run to tight residuals against the centralized solve: returns the
/// largest input difference and the relative cost difference.
pub fn compare_with_centralized(
    graph: &InfoGraph<f64>,
    agents: &[LtiAgent<f64>],
    horizon: usize,
    x0: &[DVector<f64>],
) -> dmpc::Result<(f64, f64)> {
    let problem = ScenarioProblem::new(graph.clone(), agents.to_vec(), horizon)?;
    let settings = AdmmSettings {
        rho: 1.0,
        max_iter: 20_000,
        eps_primal: 1e-8,
        eps_dual: 1e-8,
        qp: QpSettings::new(1e-12, 50_000),
        parallel: false,
    };
    let subs = problem
        .local_problems(x0)?
        .iter()
        .map(|p| Subproblem::new(p, settings.rho))
        .collect::<dmpc::Result<Vec<_>>>()?;
    let state = run_admm(&subs, problem.maps(), problem.z_dim(), &settings, None)?;
    let mut central = CentralizedSolver::new(problem.clone(), QpSettings::new(1e-12, 500_000))?;
    let plan = central.solve(x0, None)?;

    let admm_inputs = problem.decode_inputs(&state.z);
    let mut gap = 0.0f64;
    for (a, c) in admm_inputs.iter().zip(&plan.inputs) {
        for (ua, uc) in a.iter().zip(c) {
            gap = gap.max((ua - uc).amax());
        }
    }
    let rolled = agents
        .iter()
        .zip(x0)
        .zip(&admm_inputs)
        .map(|((a, x), u)| a.rollout(x, u))
        .collect::<dmpc::Result<Vec<_>>>()?;
    let admm_cost = global_cost(graph, &rolled, &admm_inputs)?;
    let central_cost = global_cost(graph, &plan.states, &plan.inputs)?;
    Ok((gap, (admm_cost - central_cost).abs() / central_cost.abs().max(1e-300)))
}

fn cost_decomposition() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let horizon = rng.random_range(1..=4);
        let graph = random_connected_graph(&mut rng, n);
        let agents = vec![LtiAgent::double_integrator_3d(0.1, 1.0, 1.0).expect("valid"); n];
        let problem = ScenarioProblem::new(graph.clone(), agents, horizon).expect("valid");
        let z = DVector::from_fn(problem.z_dim(), |_, _| rng.random_range(-3.0..3.0));
        let x0: Vec<_> = problem.decode_states(&z).iter().map(|s| s[0].clone()).collect();
        let locals = problem.local_problems(&x0).expect("valid");
        let split: f64 = locals
            .iter()
            .zip(problem.maps())
            .map(|(p, m)| p.cost(&m.gather(&z)))
            .sum();
        let whole = global_cost(&graph, &problem.decode_states(&z), &problem.decode_inputs(&z)).expect("valid");
        worst = worst.max((split - whole).abs() / whole.abs().max(1e-300));
    }
    (worst <= 1e-9, format!("200 assignments, relative gap {worst:.1e}"))
}

fn short_config(seed: u64) -> SimConfig {
    SimConfig {
        num_steps: 20,
        seed,
        ..SimConfig::default()
    }
}

fn dual_average_zero() -> (bool, String) {
    let scenario = Scenario::<f64>::five_agent_path();
    let log = match run_closed_loop(&short_config(5), &scenario) {
        Ok(log) => log,
        Err(e) => return (false, e.to_string()),
    };
    let worst = log.stats.iter().map(|s| s.max_dual_sum).fold(0.0, f64::max);
    (
        log.abort.is_none() && worst <= 1e-9,
        format!("{} steps, max dual sum {worst:.1e}", log.num_steps()),
    )
}

fn determinism() -> (bool, String) {
    let scenario = Scenario::<f64>::five_agent_path();
    let parallel = short_config(9);
    let serial = SimConfig {
        parallel_agents: false,
        ..parallel.clone()
    };
    let csv = |cfg: &SimConfig| run_closed_loop(cfg, &scenario).map(|log| log.trajectory_csv(&[]));
    match (csv(&parallel), csv(&parallel), csv(&serial)) {
        (Ok(a), Ok(b), Ok(c)) => (a == b && a == c, "repeated and serial runs byte-identical".into()),
        _ => (false, "simulation failed".into()),
    }
}

/// Noiseless runs should end within 1% of the initial spread. Where the
/// centralized controller itself stops short of that, ADMM has to match it.
fn consensus() -> (bool, String) {
    let scenario = Scenario::<f64>::five_agent_path();
    let spreads = |log: &dmpc::SimLog<f64>| {
        let last = log.states.len() - 1;
        let pos = log.max_pairwise_distance(last, &[0, 2, 4]) / log.max_pairwise_distance(0, &[0, 2, 4]);
        let vel = log.max_pairwise_distance(last, &[1, 3, 5]) / log.max_pairwise_distance(0, &[1, 3, 5]);
        pos.max(vel)
    };
    let (mut ok, mut within, mut worst) = (true, 0, 0.0f64);
    let seeds = 0..5u64;
    let total = seeds.clone().count();
    for seed in seeds {
        let cfg = SimConfig {
            noise_variance: 0.0,
            seed,
            ..SimConfig::default()
        };
        let central_cfg = SimConfig {
            solver: dmpc::SolverKind::Centralized,
            ..cfg.clone()
        };
        let (admm, central) = match (
            run_closed_loop(&cfg, &scenario),
            run_closed_loop(&central_cfg, &scenario),
        ) {
            (Ok(a), Ok(c)) => (spreads(&a), spreads(&c)),
            _ => return (false, "simulation failed".into()),
        };
        worst = worst.max(admm);
        if admm <= 0.01 {
            within += 1;
        } else {
            ok &= (admm - central).abs() <= 1e-4;
        }
    }
    (
        ok,
        format!(
            "{within}/{total} seeds within 1% of the initial spread (worst {:.2}%), the rest match the centralized controller",
            100.0 * worst
        ),
    )
}

fn sweep_acceptance() -> (bool, String) {
    let scenario = Scenario::<f64>::five_agent_path();
    let cfg = SimConfig {
        seed: 1000,
        ..SimConfig::default()
    };
    let rows = match iteration_sweep(&cfg, &scenario, &[1, 10, 30], 20) {
        Ok(rows) => rows,
        Err(e) => return (false, e.to_string()),
    };
    let (k1, k10, k30) = (
        rows[0].mean_excess_pct,
        rows[1].mean_excess_pct,
        rows[2].mean_excess_pct,
    );
    (
        k30 <= 3.0 && k10 <= 5.0 && k1 >= 5.0 * k10,
        format!("mean excess K=1 {k1:.3}%, K=10 {k10:.3}%, K=30 {k30:.4}% (20 trials)"),
    )
}
