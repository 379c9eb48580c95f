//! Distributed model predictive consensus.
//!
//! A coupled multi-agent MPC problem is rewritten as per-agent subproblems over
//! local copies of their own and their neighbours' trajectories, tied together by
//! consistency constraints. The copies are reconciled with consensus ADMM
//! (or, as a baseline, dual decomposition) and the result is compared against a
//! centralized solve of the same finite-horizon problem in closed loop.
//!
//! The numerical core is generic over the scalar type through [`Real`]; the
//! `*64` aliases at the crate root fix it to `f64`, which is what the simulator
//! and CLI use.

// NaN-rejecting `!(a > b)` checks and index loops over matrices are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod admm;
pub mod agent;
pub mod centralized;
pub mod dual_decomp;
mod error;
pub mod graph;
pub mod oracle;
pub mod problem;
pub mod qp;
mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

pub use admm::{run_admm, AdmmHistory, AdmmRecord, AdmmSettings, AdmmState};
pub use agent::LtiAgent;
pub use centralized::{solve_centralized, CentralizedPlan, CentralizedSolver};
pub use dual_decomp::{run_dual_decomposition, DualDecompRecord, DualDecompState, StepSchedule};

pub use graph::InfoGraph;
pub use problem::{
    build_local_problems, global_cost, LocalIndexMap, LocalProblem, ScenarioProblem, Subproblem, VarKind, VarTag,
};
pub use qp::{solve_box_qp, solve_equality_qp, BoxQp, QpSettings, QpSolution, QpStatus};
pub use sim::{
    closed_loop_cost, iteration_sweep, performance_ratio, run_closed_loop, run_closed_loop_with, Disturbance, Scenario,
    SimConfig, SimLog, SolverKind, SweepRow,
};

pub type InfoGraph64 = InfoGraph<f64>;
pub type LtiAgent64 = LtiAgent<f64>;
pub type BoxQp64 = BoxQp<f64>;
pub type QpSolution64 = QpSolution<f64>;
pub type LocalProblem64 = LocalProblem<f64>;
pub type Subproblem64 = Subproblem<f64>;
pub type AdmmState64 = AdmmState<f64>;
pub type AdmmSettings64 = AdmmSettings<f64>;
pub type DualDecompState64 = DualDecompState<f64>;
pub type SimLog64 = SimLog<f64>;
pub type Scenario64 = Scenario<f64>;
