//! Dual decomposition baseline for the consistency-constraint form.
//!
//! Each agent minimizes `f_i(x_i) + λ_iᵀ x_i` over its own constraint set, the
//! copies are averaged, and the multipliers ascend along the disagreement
//! `x_i − Ē_i z` with step `α_k`. Without the quadratic penalty this needs
//! strictly convex local costs and a diminishing step to converge reliably.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::admm::{dual_update, z_update};
use crate::problem::{LocalIndexMap, Subproblem};
use crate::qp::{BoxQpSolver, QpSettings, QpStatus};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule<T> {
    Constant(T),
    /// `α_k = α_0 / k` for `k = 1, 2, ...`
    Diminishing(T),
}

impl<T: Real> StepSchedule<T> {
    pub fn step(&self, k: usize) -> T {
        match *self {
            StepSchedule::Constant(a) => a,
            StepSchedule::Diminishing(a0) => a0 / T::from_usize(k.max(1)).expect("k fits"),
        }
    }
}

impl<T: Real> Default for StepSchedule<T> {
    fn default() -> Self {
        StepSchedule::Diminishing(T::one())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualDecompRecord<T> {
    pub step: T,
    /// `sqrt(Σ_i ‖x_i − Ē_i z‖²)` with `z` the average of the new copies.
    pub disagreement: T,
    pub objective: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualDecompState<T: Real> {
    pub locals: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
    pub duals: Vec<DVector<T>>,
    pub z: DVector<T>,
    pub schedule: StepSchedule<T>,
    pub history: Vec<DualDecompRecord<T>>,
}

impl<T: Real> DualDecompState<T> {
    pub fn new(subproblems: &[Subproblem<T>], z_dim: usize, schedule: StepSchedule<T>) -> Self {
        Self {
            locals: subproblems.iter().map(|s| DVector::zeros(s.dim())).collect(),
            inputs: subproblems.iter().map(|s| DVector::zeros(s.num_inputs())).collect(),
            duals: subproblems.iter().map(|s| DVector::zeros(s.dim())).collect(),
            z: DVector::zeros(z_dim),
            schedule,
            history: Vec::new(),
        }
    }
}

/// Runs `max_iter` dual-ascent iterations. Subproblems must be built with `ρ = 0`.
/// Inner solves are cold-started so identical multipliers reproduce identical plans.
pub fn run_dual_decomposition<T: Real>(
    subproblems: &[Subproblem<T>],
    maps: &[LocalIndexMap],
    z_dim: usize,
    schedule: StepSchedule<T>,
    max_iter: usize,
    qp: QpSettings<T>,
    init: Option<DualDecompState<T>>,
) -> Result<DualDecompState<T>> {
    if let Some(sp) = subproblems.iter().find(|s| s.rho() != T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "dual decomposition needs unaugmented subproblems (agent {} has rho {})",
            sp.owner(),
            sp.rho()
        )));
    }
    if subproblems.len() != maps.len() {
        return Err(Error::DimensionMismatch {
            what: "subproblems vs index maps",
            expected: maps.len(),
            got: subproblems.len(),
        });
    }
    let mut state = init.unwrap_or_else(|| DualDecompState::new(subproblems, z_dim, schedule));
    state.schedule = schedule;
    let solver = BoxQpSolver::new(qp);
    let zero_targets: Vec<DVector<T>> = subproblems.iter().map(|s| DVector::zeros(s.dim())).collect();
    let mut reference: Option<T> = None;

    for k in 1..=max_iter {
        let results: Vec<_> = (0..subproblems.len())
            .into_par_iter()
            .map(|i| {
                let (x, sol) = subproblems[i].solve(&zero_targets[i], &state.duals[i], &solver, None);
                if sol.status != QpStatus::Optimal {
                    return Err(Error::SubproblemFailed {
                        agent: i,
                        iteration: state.history.len() + 1,
                        reason: format!("{:?}", sol.status),
                    });
                }
                Ok((x, sol))
            })
            .collect();
        let mut objective = T::zero();
        for (i, r) in results.into_iter().enumerate() {
            let (x, sol) = r?;
            objective += subproblems[i].cost_of_inputs(&sol.x);
            state.locals[i] = x;
            state.inputs[i] = sol.x;
        }
        state.z = z_update(&state.locals, maps, z_dim)?;
        let disagreement = state
            .locals
            .iter()
            .zip(maps)
            .map(|(x, m)| (x - m.gather(&state.z)).norm_squared())
            .sum::<T>()
            .sqrt();
        let step = schedule.step(k);
        for (i, map) in maps.iter().enumerate() {
            state.duals[i] = dual_update(&state.duals[i], &state.locals[i], &state.z, map, step);
        }
        state.history.push(DualDecompRecord {
            step,
            disagreement,
            objective,
        });

        let base = *reference.get_or_insert(disagreement);
        if !disagreement.is_finite_value() || (base > T::zero() && disagreement > base * T::lit(1e6)) {
            return Err(Error::Diverged {
                iteration: state.history.len(),
                disagreement: disagreement.to_f64_lossy(),
            });
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::LtiAgent;
    use crate::graph::InfoGraph;
    use crate::problem::ScenarioProblem;
    use nalgebra::{DMatrix, DVector};

    /// Three scalar agents on a path, each with a strictly convex
    /// `½ Σ w_k (x_k − c_k)²` over its local copies and a box.
    fn toy() -> (Vec<Subproblem<f64>>, Vec<LocalIndexMap>, usize) {
        let scalar = LtiAgent::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 10.0).unwrap();
        let s = ScenarioProblem::new(InfoGraph::path(3).unwrap(), vec![scalar; 3], 1).unwrap();
        let subs = s
            .maps()
            .iter()
            .map(|m| {
                let d = m.len();
                let (h, g) = toy_cost(m);
                Subproblem::from_parts(
                    m.owner(),
                    h,
                    g,
                    DMatrix::identity(d, d),
                    DVector::zeros(d),
                    DVector::from_element(d, -10.0),
                    DVector::from_element(d, 10.0),
                    0.0,
                )
                .unwrap()
            })
            .collect();
        (subs, s.maps().to_vec(), s.z_dim())
    }

    fn toy_cost(m: &LocalIndexMap) -> (DMatrix<f64>, DVector<f64>) {
        let d = m.len();
        let w = DVector::from_fn(d, |k, _| 1.0 + 0.3 * ((k + m.owner()) % 4) as f64);
        let c = DVector::from_fn(d, |k, _| ((k * 7 + m.owner() * 3) % 5) as f64 - 2.0);
        (DMatrix::from_diagonal(&w), -w.component_mul(&c))
    }

    fn qp() -> QpSettings<f64> {
        QpSettings::new(1e-12, 10_000)
    }

    #[test]
    fn zero_step_repeats_plans() {
        let (subs, maps, z_dim) = toy();
        let st = run_dual_decomposition(&subs, &maps, z_dim, StepSchedule::Constant(0.0), 5, qp(), None).unwrap();
        assert!(st.duals.iter().all(|d| d.amax() == 0.0));
        let d: Vec<f64> = st.history.iter().map(|r| r.disagreement).collect();
        assert!(d.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn diminishing_step_drives_disagreement_down() {
        let (subs, maps, z_dim) = toy();
        let st = run_dual_decomposition(&subs, &maps, z_dim, StepSchedule::Diminishing(2.0), 500, qp(), None).unwrap();
        let first = st.history[0].disagreement;
        let last = st.history.last().unwrap().disagreement;
        assert!(last < 1e-3 * first, "{last} vs {first}");

        // Same instance through ADMM: both head for the same consensus point.
        let augmented: Vec<_> = maps
            .iter()
            .zip(&subs)
            .map(|(m, _)| {
                let (h, g) = toy_cost(m);
                let d = m.len();
                Subproblem::from_parts(
                    m.owner(),
                    h,
                    g,
                    DMatrix::identity(d, d),
                    DVector::zeros(d),
                    DVector::from_element(d, -10.0),
                    DVector::from_element(d, 10.0),
                    1.0,
                )
                .unwrap()
            })
            .collect();
        let settings = crate::admm::AdmmSettings {
            max_iter: 2000,
            eps_primal: 1e-10,
            eps_dual: 1e-10,
            qp: qp(),
            ..Default::default()
        };
        let admm = crate::admm::run_admm(&augmented, &maps, z_dim, &settings, None).unwrap();
        assert!((&admm.z - &st.z).amax() < 1e-2);
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let (subs, maps, z_dim) = toy();
        let converged =
            run_dual_decomposition(&subs, &maps, z_dim, StepSchedule::Constant(0.8), 3000, qp(), None).unwrap();
        assert!(converged.history.last().unwrap().disagreement < 1e-9);
        let again = run_dual_decomposition(
            &subs,
            &maps,
            z_dim,
            StepSchedule::Constant(0.8),
            1,
            qp(),
            Some(converged.clone()),
        )
        .unwrap();
        assert!((&again.z - &converged.z).amax() < 1e-9);
    }

    #[test]
    fn rejects_augmented_subproblems() {
        let (mut subs, maps, z_dim) = toy();
        let d = maps[0].len();
        subs[0] = Subproblem::from_parts(
            0,
            DMatrix::identity(d, d),
            DVector::zeros(d),
            DMatrix::identity(d, d),
            DVector::zeros(d),
            DVector::from_element(d, -1.0),
            DVector::from_element(d, 1.0),
            1.0,
        )
        .unwrap();
        assert!(run_dual_decomposition(&subs, &maps, z_dim, StepSchedule::default(), 1, qp(), None).is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(StepSchedule::Constant(0.5).step(10), 0.5);
        assert_eq!(StepSchedule::Diminishing(2.0).step(4), 0.5);
    }
}
