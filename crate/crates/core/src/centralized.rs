//! Centralized baseline: the whole finite-horizon problem as one box QP over
//! every agent's inputs, states eliminated.
//!
//! The Hessian is assembled straight from the graph Laplacian
//! (`Σ_t x(t)ᵀ (L ⊗ I_n) x(t) + Σ_t u(t)ᵀu(t)`), not from the per-agent costs,
//! so it serves as an independent reference for the distributed solvers.

use nalgebra::{DMatrix, DVector};

use crate::agent::LtiAgent;
use crate::graph::InfoGraph;
use crate::problem::{LocalProblem, ScenarioProblem, Subproblem};
use crate::qp::{BoxQpSolver, QpSettings, QpSolution};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedPlan<T: Real> {
    /// `inputs[i][t]`, `t < T`.
    pub inputs: Vec<Vec<DVector<T>>>,
    /// `states[i][t]`, `t ≤ T`.
    pub states: Vec<Vec<DVector<T>>>,
    /// Finite-horizon objective at the optimum.
    pub cost: T,
    pub qp: QpSolution<T>,
}

/// Reusable centralized solver; only the initial states change between calls.
#[derive(Debug, Clone)]
pub struct CentralizedSolver<T: Real> {
    scenario: ScenarioProblem<T>,
    subproblem: Subproblem<T>,
    solver: BoxQpSolver<T>,
}

impl<T: Real> CentralizedSolver<T> {
    pub fn new(scenario: ScenarioProblem<T>, settings: QpSettings<T>) -> Result<Self> {
        let horizon = scenario.horizon();
        let agents = scenario.agents();
        let laplacian = scenario.graph().laplacian();
        let probe = LocalProblem::over_all_agents(agents, horizon, &zero_states(agents), DMatrix::zeros(0, 0));
        let dim = probe.dim();
        let mut hessian = DMatrix::zeros(dim, dim);
        let two = T::lit(2.0);
        for i in 0..agents.len() {
            for j in 0..agents.len() {
                let l = laplacian[(i, j)];
                if l == T::zero() {
                    continue;
                }
                let n = agents[i].n();
                for t in 0..=horizon {
                    let (pi, pj) = (probe.state_offset(i, t), probe.state_offset(j, t));
                    for c in 0..n {
                        hessian[(pi + c, pj + c)] += two * l;
                    }
                }
            }
            for t in 0..horizon {
                let base = probe.input_offset(i, t);
                for c in 0..agents[i].m() {
                    hessian[(base + c, base + c)] += two;
                }
            }
        }
        let problem = LocalProblem::over_all_agents(agents, horizon, &zero_states(agents), hessian);
        let subproblem = Subproblem::new(&problem, T::zero())?;
        Ok(Self {
            scenario,
            subproblem,
            solver: BoxQpSolver::new(settings),
        })
    }

    pub fn scenario(&self) -> &ScenarioProblem<T> {
        &self.scenario
    }

    pub fn solve(
        &mut self,
        initial_states: &[DVector<T>],
        warm_inputs: Option<&DVector<T>>,
    ) -> Result<CentralizedPlan<T>> {
        let agents = self.scenario.agents();
        if initial_states.len() != agents.len() {
            return Err(Error::DimensionMismatch {
                what: "number of initial states",
                expected: agents.len(),
                got: initial_states.len(),
            });
        }
        for (a, x) in agents.iter().zip(initial_states) {
            if x.len() != a.n() {
                return Err(Error::DimensionMismatch {
                    what: "initial state",
                    expected: a.n(),
                    got: x.len(),
                });
            }
        }
        self.subproblem.set_initial_states(initial_states);
        let zeros = DVector::zeros(self.subproblem.dim());
        let (x, sol) = self.subproblem.solve(&zeros, &zeros, &self.solver, warm_inputs);
        if !sol.is_optimal() {
            return Err(Error::CentralizedFailed(format!(
                "{:?} after {} iterations (kkt residual {:e})",
                sol.status,
                sol.iterations,
                sol.kkt_residual.to_f64_lossy()
            )));
        }
        let cost = self.subproblem.cost_of_inputs(&sol.x);
        Ok(CentralizedPlan {
            inputs: self.scenario.decode_inputs(&x),
            states: self.scenario.decode_states(&x),
            cost,
            qp: sol,
        })
    }
}

fn zero_states<T: Real>(agents: &[LtiAgent<T>]) -> Vec<DVector<T>> {
    agents.iter().map(|a| DVector::zeros(a.n())).collect()
}

/// One-shot centralized solve of the finite-horizon problem.
pub fn solve_centralized<T: Real>(
    graph: &InfoGraph<T>,
    agents: &[LtiAgent<T>],
    horizon: usize,
    initial_states: &[DVector<T>],
    tol: T,
) -> Result<CentralizedPlan<T>> {
    let scenario = ScenarioProblem::new(graph.clone(), agents.to_vec(), horizon)?;
    let mut solver = CentralizedSolver::new(scenario, QpSettings::new(tol, 20_000))?;
    solver.solve(initial_states, None)
}
