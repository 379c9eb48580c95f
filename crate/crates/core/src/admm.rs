//! General-form consensus ADMM.
//!
//! One iteration, bulk synchronous across agents:
//!
//! 1. every agent minimizes `f_i(x_i) + λ_iᵀ(x_i − Ē_i z) + (ρ/2)‖x_i − Ē_i z‖²`
//!    over its own constraint set (in parallel);
//! 2. each `z` entry becomes the plain average of the copies mapped to it;
//! 3. `λ_i ← λ_i + ρ (x_i − Ē_i z)`.
//!
//! With zero initial duals the per-entry dual sums stay zero, which is why the
//! `z` update needs no dual term. The sum is tracked every iteration as a check.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::problem::{LocalIndexMap, ScenarioProblem, Subproblem};
use crate::qp::{BoxQpSolver, QpSettings, QpSolution, QpStatus};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings<T> {
    pub rho: T,
    pub max_iter: usize,
    /// Absolute stopping threshold on `sqrt(Σ_i ‖x_i − Ē_i z‖²)`.
    pub eps_primal: T,
    /// Absolute stopping threshold on `ρ sqrt(Σ_c copies(c) (Δz_c)²)`.
    pub eps_dual: T,
    pub qp: QpSettings<T>,
    /// Solve the agents' x-updates on the rayon pool.
    pub parallel: bool,
}

impl<T: Real> Default for AdmmSettings<T> {
    fn default() -> Self {
        Self {
            rho: T::one(),
            max_iter: 30,
            eps_primal: T::lit(1e-6),
            eps_dual: T::lit(1e-6),
            qp: QpSettings::new(T::lit(1e-6), 5000),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmRecord<T> {
    pub r_primal: T,
    pub r_dual: T,
    /// `Σ_i f_i(x_i)` at the new local iterates.
    pub objective: T,
    /// `max_c |Σ_{copies of c} λ|` after the dual update.
    pub max_dual_sum: T,
    /// Inner solver iterations summed over agents.
    pub qp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmHistory<T> {
    pub records: Vec<AdmmRecord<T>>,
    /// Wall time of every individual x-update, in seconds.
    pub solve_seconds: Vec<f64>,
}

impl<T> Default for AdmmHistory<T> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            solve_seconds: Vec::new(),
        }
    }
}

impl<T: Real> AdmmHistory<T> {
    /// `iter,r_primal,r_dual,objective` rows, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,r_primal,r_dual,objective\n");
        for (k, r) in self.records.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                k + 1,
                r.r_primal.to_f64_lossy(),
                r.r_dual.to_f64_lossy(),
                r.objective.to_f64_lossy()
            ));
        }
        out
    }

    pub fn converged(&self, eps_primal: T, eps_dual: T) -> bool {
        self.records
            .last()
            .is_some_and(|r| r.r_primal <= eps_primal && r.r_dual <= eps_dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState<T: Real> {
    /// Local plans `x_i`.
    pub locals: Vec<DVector<T>>,
    /// Condensed decision (stacked member inputs) behind each `x_i`; seeds the inner solver.
    pub inputs: Vec<DVector<T>>,
    pub duals: Vec<DVector<T>>,
    pub z: DVector<T>,
    pub rho: T,
    pub history: AdmmHistory<T>,
}

impl<T: Real> AdmmState<T> {
    /// `λ = 0`, `z = 0`, zero local plans.
    pub fn cold(subproblems: &[Subproblem<T>], z_dim: usize, rho: T) -> Self {
        Self {
            locals: subproblems.iter().map(|s| DVector::zeros(s.dim())).collect(),
            inputs: subproblems.iter().map(|s| DVector::zeros(s.num_inputs())).collect(),
            duals: subproblems.iter().map(|s| DVector::zeros(s.dim())).collect(),
            z: DVector::zeros(z_dim),
            rho,
            history: AdmmHistory::default(),
        }
    }

    pub fn iteration(&self) -> usize {
        self.history.records.len()
    }

    /// Receding-horizon warm start: every trajectory moves one step earlier
    /// (the last step is repeated), duals are kept, and the history is cleared.
    pub fn shifted(&self, scenario: &ScenarioProblem<T>) -> Self {
        let src = scenario.shift_sources();
        let z = DVector::from_iterator(src.len(), src.iter().map(|&s| self.z[s]));
        let shift_local = |v: &DVector<T>, map: &LocalIndexMap| {
            let g = map.global_offsets();
            DVector::from_iterator(v.len(), (0..v.len()).map(|k| v[k + src[g[k]] - g[k]]))
        };
        let maps = scenario.maps();
        let locals: Vec<_> = self.locals.iter().zip(maps).map(|(v, m)| shift_local(v, m)).collect();
        let duals: Vec<_> = self.duals.iter().zip(maps).map(|(v, m)| shift_local(v, m)).collect();
        let inputs = self
            .inputs
            .iter()
            .zip(maps)
            .map(|(u, map)| shift_inputs(u, map, scenario))
            .collect();
        Self {
            locals,
            inputs,
            duals,
            z,
            rho: self.rho,
            history: AdmmHistory::default(),
        }
    }

    pub fn primal_residual(&self, maps: &[LocalIndexMap]) -> T {
        self.locals
            .iter()
            .zip(maps)
            .map(|(x, map)| (x - map.gather(&self.z)).norm_squared())
            .sum::<T>()
            .sqrt()
    }

    /// `max_c |Σ_{copies of c} λ|`.
    pub fn max_dual_sum(&self, maps: &[LocalIndexMap]) -> T {
        let mut sums = DVector::<T>::zeros(self.z.len());
        for (dual, map) in self.duals.iter().zip(maps) {
            for (k, &g) in map.global_offsets().iter().enumerate() {
                sums[g] += dual[k];
            }
        }
        sums.amax()
    }
}

fn shift_inputs<T: Real>(u: &DVector<T>, map: &LocalIndexMap, scenario: &ScenarioProblem<T>) -> DVector<T> {
    let mut out = u.clone();
    let horizon = scenario.horizon();
    let mut base = 0;
    for &j in map.members() {
        let m = scenario.agents()[j].m();
        for t in 0..horizon {
            let from = (t + 1).min(horizon - 1);
            for c in 0..m {
                if base + from * m + c < u.len() {
                    out[base + t * m + c] = u[base + from * m + c];
                }
            }
        }
        base += m * horizon;
    }
    out
}

/// Argmin of agent `i`'s augmented Lagrangian at the current `z` and `λ_i`.
/// Returns the full local plan and the condensed inner solution.
pub fn x_update<T: Real>(
    agent: usize,
    state: &AdmmState<T>,
    subproblem: &Subproblem<T>,
    map: &LocalIndexMap,
    solver: &BoxQpSolver<T>,
) -> Result<(DVector<T>, QpSolution<T>)> {
    let target = map.gather(&state.z);
    let warm = state.inputs.get(agent).filter(|u| u.len() == subproblem.num_inputs());
    let (x, sol) = subproblem.solve(&target, &state.duals[agent], solver, warm);
    if sol.status != QpStatus::Optimal {
        return Err(Error::SubproblemFailed {
            agent,
            iteration: state.iteration() + 1,
            reason: format!("{:?} (kkt residual {:e})", sol.status, sol.kkt_residual.to_f64_lossy()),
        });
    }
    Ok((x, sol))
}

/// Plain average of all copies of each `z` entry, summed in owner order.
pub fn z_update<T: Real>(locals: &[DVector<T>], maps: &[LocalIndexMap], z_dim: usize) -> Result<DVector<T>> {
    let mut sums = DVector::<T>::zeros(z_dim);
    let mut counts = vec![0usize; z_dim];
    for (x, map) in locals.iter().zip(maps) {
        for (k, &g) in map.global_offsets().iter().enumerate() {
            sums[g] += x[k];
            counts[g] += 1;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("z entry {c} has no local copies")));
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        *s /= T::from_usize(n).expect("count fits");
    }
    Ok(sums)
}

/// `λ_i + ρ (x_i − Ē_i z)`.
pub fn dual_update<T: Real>(
    dual: &DVector<T>,
    local: &DVector<T>,
    z: &DVector<T>,
    map: &LocalIndexMap,
    rho: T,
) -> DVector<T> {
    let mut out = dual.clone();
    for (k, &g) in map.global_offsets().iter().enumerate() {
        out[k] += rho * (local[k] - z[g]);
    }
    out
}

/// Primal and dual residuals for the transition `z_old → z_new` at the current locals.
pub fn residuals<T: Real>(
    locals: &[DVector<T>],
    maps: &[LocalIndexMap],
    z_new: &DVector<T>,
    z_old: &DVector<T>,
    rho: T,
) -> (T, T) {
    let mut primal = T::zero();
    let mut dual = T::zero();
    for (x, map) in locals.iter().zip(maps) {
        for (k, &g) in map.global_offsets().iter().enumerate() {
            let r = x[k] - z_new[g];
            primal += r * r;
            let dz = z_new[g] - z_old[g];
            dual += dz * dz;
        }
    }
    (primal.sqrt(), rho * dual.sqrt())
}

/// Runs ADMM from `init` (or the cold start `λ = 0, z = 0`)
/// until both residuals drop below their thresholds or `max_iter` iterations ran.
pub fn run_admm<T: Real>(
    subproblems: &[Subproblem<T>],
    maps: &[LocalIndexMap],
    z_dim: usize,
    settings: &AdmmSettings<T>,
    init: Option<AdmmState<T>>,
) -> Result<AdmmState<T>> {
    if !(settings.rho > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "rho must be positive, got {}",
            settings.rho
        )));
    }
    if subproblems.len() != maps.len() {
        return Err(Error::DimensionMismatch {
            what: "subproblems vs index maps",
            expected: maps.len(),
            got: subproblems.len(),
        });
    }
    for (sp, map) in subproblems.iter().zip(maps) {
        if sp.dim() != map.len() {
            return Err(Error::DimensionMismatch {
                what: "local vector",
                expected: map.len(),
                got: sp.dim(),
            });
        }
        if (sp.rho() - settings.rho).abs() > T::zero() {
            return Err(Error::InvalidArgument(
                "subproblem was prepared for a different rho".into(),
            ));
        }
    }
    let mut state = init.unwrap_or_else(|| AdmmState::cold(subproblems, z_dim, settings.rho));
    if state.z.len() != z_dim || state.duals.len() != subproblems.len() {
        return Err(Error::DimensionMismatch {
            what: "initial ADMM state",
            expected: z_dim,
            got: state.z.len(),
        });
    }
    state.rho = settings.rho;
    let solver = BoxQpSolver::new(settings.qp);

    for _ in 0..settings.max_iter {
        let solve_one = |i: usize| -> Result<(DVector<T>, QpSolution<T>, f64)> {
            let start = Instant::now();
            let (x, sol) = x_update(i, &state, &subproblems[i], &maps[i], &solver)?;
            Ok((x, sol, start.elapsed().as_secs_f64()))
        };
        let results: Vec<Result<_>> = if settings.parallel {
            (0..subproblems.len()).into_par_iter().map(solve_one).collect()
        } else {
            (0..subproblems.len()).map(solve_one).collect()
        };

        let mut qp_iterations = 0;
        let mut objective = T::zero();
        for (i, r) in results.into_iter().enumerate() {
            let (x, sol, secs) = r?;
            qp_iterations += sol.iterations;
            objective += subproblems[i].cost_of_inputs(&sol.x);
            state.history.solve_seconds.push(secs);
            state.locals[i] = x;
            state.inputs[i] = sol.x;
        }

        let z_new = z_update(&state.locals, maps, z_dim)?;
        let (r_primal, r_dual) = residuals(&state.locals, maps, &z_new, &state.z, settings.rho);
        for (i, map) in maps.iter().enumerate() {
            state.duals[i] = dual_update(&state.duals[i], &state.locals[i], &z_new, map, settings.rho);
        }
        state.z = z_new;
        let max_dual_sum = state.max_dual_sum(maps);
        state.history.records.push(AdmmRecord {
            r_primal,
            r_dual,
            objective,
            max_dual_sum,
            qp_iterations,
        });
        if r_primal <= settings.eps_primal && r_dual <= settings.eps_dual {
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::LtiAgent;
    use crate::graph::InfoGraph;
    use nalgebra::{dvector, DMatrix};

    fn scenario(n: usize, horizon: usize) -> ScenarioProblem<f64> {
        let graph = InfoGraph::path(n).unwrap();
        let agents = vec![LtiAgent::double_integrator_3d(0.1, 1.0, 1.0).unwrap(); n];
        ScenarioProblem::new(graph, agents, horizon).unwrap()
    }

    fn subproblems(s: &ScenarioProblem<f64>, x0: &[DVector<f64>], rho: f64) -> Vec<Subproblem<f64>> {
        s.local_problems(x0)
            .unwrap()
            .iter()
            .map(|p| Subproblem::new(p, rho).unwrap())
            .collect()
    }

    /// Two agents sharing one scalar, no local cost: a pure proximal problem.
    fn trivial_pair() -> (Vec<Subproblem<f64>>, Vec<LocalIndexMap>) {
        let s = ScenarioProblem::new(
            InfoGraph::path(2).unwrap(),
            vec![LtiAgent::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 1.0).unwrap(); 2],
            1,
        )
        .unwrap();
        let maps = s.maps().to_vec();
        let subs = maps
            .iter()
            .map(|m| {
                let d = m.len();
                Subproblem::from_parts(
                    m.owner(),
                    DMatrix::zeros(d, d),
                    DVector::zeros(d),
                    DMatrix::identity(d, d),
                    DVector::zeros(d),
                    DVector::from_element(d, f64::NEG_INFINITY),
                    DVector::from_element(d, f64::INFINITY),
                    2.0,
                )
                .unwrap()
            })
            .collect();
        (subs, maps)
    }

    #[test]
    fn pure_proximal_step() {
        let (subs, maps) = trivial_pair();
        let mut state = AdmmState::cold(&subs, 6, 2.0);
        state.z = dvector![1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        state.duals[0] = dvector![2.0, 0.0, -4.0, 1.0, 0.5, 0.0];
        let solver = BoxQpSolver::new(QpSettings::new(1e-12, 1000));
        let (x, _) = x_update(0, &state, &subs[0], &maps[0], &solver).unwrap();
        let expected = maps[0].gather(&state.z) - &state.duals[0] / 2.0;
        assert!((x - expected).amax() < 1e-12);
    }

    #[test]
    fn z_update_examples() {
        let (_, maps) = trivial_pair();
        let v = dvector![0.25, -1.0, 3.0, 7.0, 1.5, 2.0];
        let z = z_update(&[v.clone(), v.clone()], &maps, 6).unwrap();
        assert_eq!(z, v);
        let z = z_update(&[DVector::zeros(6), DVector::from_element(6, 1.0)], &maps, 6).unwrap();
        assert_eq!(z, DVector::from_element(6, 0.5));
        assert!(z_update(&[DVector::<f64>::zeros(6), DVector::zeros(6)], &maps, 7).is_err());
    }

    #[test]
    fn dual_update_examples() {
        let (_, maps) = trivial_pair();
        let z = dvector![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let lam = DVector::from_element(6, 0.5);
        assert_eq!(dual_update(&lam, &z, &z, &maps[0], 3.0), lam);
        let mut x = z.clone();
        x[0] += 1.0;
        let mut e1 = DVector::zeros(6);
        e1[0] = 2.0;
        assert_eq!(dual_update(&DVector::zeros(6), &x, &z, &maps[0], 2.0), e1);
    }

    #[test]
    fn residual_examples() {
        let (_, maps) = trivial_pair();
        let z = dvector![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(residuals(&[z.clone(), z.clone()], &maps, &z, &z, 1.0), (0.0, 0.0));
        let mut off = z.clone();
        off[2] += 0.75;
        let (rp, rd) = residuals(&[z.clone(), off], &maps, &z, &z, 1.0);
        assert_eq!((rp, rd), (0.75, 0.0));
        // Two copies of every entry: r_dual = ρ sqrt(2 ‖Δz‖²).
        let mut z2 = z.clone();
        z2[0] += 1.0;
        let (_, rd) = residuals(&[z.clone(), z.clone()], &maps, &z2, &z, 3.0);
        assert!((rd - 3.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_iterations_returns_init() {
        let s = scenario(3, 2);
        let x0 = vec![dvector![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]; 3];
        let subs = subproblems(&s, &x0, 1.0);
        let settings = AdmmSettings {
            max_iter: 0,
            ..AdmmSettings::default()
        };
        let state = run_admm(&subs, s.maps(), s.z_dim(), &settings, None).unwrap();
        assert_eq!(state, AdmmState::cold(&subs, s.z_dim(), 1.0));
        assert!(state.history.records.is_empty());
    }

    #[test]
    fn consensus_at_rest_converges_immediately() {
        let s = scenario(4, 3);
        let x0 = vec![DVector::zeros(6); 4];
        let subs = subproblems(&s, &x0, 1.0);
        let settings = AdmmSettings {
            max_iter: 50,
            ..AdmmSettings::default()
        };
        let state = run_admm(&subs, s.maps(), s.z_dim(), &settings, None).unwrap();
        assert_eq!(state.iteration(), 1);
        assert!(state.z.amax() == 0.0);
    }

    #[test]
    fn common_nonzero_state_converges_in_one_step_from_consistent_z() {
        let s = scenario(3, 3);
        let x = dvector![2.0, 0.0, -1.0, 0.0, 0.5, 0.0];
        let x0 = vec![x.clone(); 3];
        let subs = subproblems(&s, &x0, 1.0);
        let states = vec![vec![x; 4]; 3];
        let inputs = vec![vec![DVector::zeros(3); 3]; 3];
        let mut init = AdmmState::cold(&subs, s.z_dim(), 1.0);
        init.z = s.encode(&states, &inputs).unwrap();
        let settings = AdmmSettings {
            max_iter: 50,
            ..AdmmSettings::default()
        };
        let state = run_admm(&subs, s.maps(), s.z_dim(), &settings, Some(init.clone())).unwrap();
        assert_eq!(state.iteration(), 1);
        assert!((&state.z - &init.z).amax() < 1e-6);
    }

    #[test]
    fn dual_sums_stay_zero_and_constraints_hold() {
        let s = scenario(4, 4);
        let x0 = vec![
            dvector![1.0, 0.5, -2.0, 0.0, 0.3, -0.1],
            dvector![-1.0, 0.0, 2.0, 0.2, 0.0, 0.4],
            dvector![3.0, -0.5, 0.0, 0.0, -1.0, 0.0],
            dvector![0.0, 0.0, 1.0, -0.3, 2.0, 0.1],
        ];
        let subs = subproblems(&s, &x0, 1.0);
        let problems = s.local_problems(&x0).unwrap();
        let settings = AdmmSettings {
            max_iter: 1,
            ..AdmmSettings::default()
        };
        let mut state = None;
        for _ in 0..40 {
            let next = run_admm(&subs, s.maps(), s.z_dim(), &settings, state.take()).unwrap();
            assert!(next.history.records[0].max_dual_sum < 1e-9);
            for (x, p) in next.locals.iter().zip(&problems) {
                let (a, b) = p.equality_constraints();
                assert!((&a * x - &b).amax() < 1e-10);
                let (lo, hi) = p.bounds();
                assert!(x
                    .iter()
                    .zip(lo.iter().zip(hi.iter()))
                    .all(|(v, (l, h))| l <= v && v <= h));
            }
            state = Some(AdmmState {
                history: AdmmHistory::default(),
                ..next
            });
        }
    }

    #[test]
    fn deterministic_parallel_and_serial() {
        let s = scenario(5, 4);
        let x0: Vec<_> = (0..5)
            .map(|i| DVector::from_fn(6, |k, _| ((i * 7 + k * 3) % 5) as f64 - 2.0))
            .collect();
        let subs = subproblems(&s, &x0, 1.0);
        let par = AdmmSettings {
            max_iter: 20,
            ..AdmmSettings::default()
        };
        let ser = AdmmSettings { parallel: false, ..par };
        let a = run_admm(&subs, s.maps(), s.z_dim(), &par, None).unwrap();
        let b = run_admm(&subs, s.maps(), s.z_dim(), &ser, None).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.duals, b.duals);
        assert_eq!(a.history.records, b.history.records);
    }

    #[test]
    fn shift_moves_trajectories_forward() {
        let s = scenario(2, 3);
        let x0 = vec![DVector::zeros(6); 2];
        let subs = subproblems(&s, &x0, 1.0);
        let mut st = AdmmState::cold(&subs, s.z_dim(), 1.0);
        st.z = DVector::from_fn(s.z_dim(), |i, _| i as f64);
        st.locals = s.maps().iter().map(|m| m.gather(&st.z)).collect();
        let shifted = st.shifted(&s);
        let src = s.shift_sources();
        for (k, &from) in src.iter().enumerate() {
            assert_eq!(shifted.z[k], from as f64);
        }
        for (x, m) in shifted.locals.iter().zip(s.maps()) {
            assert_eq!(*x, m.gather(&shifted.z));
        }
    }

    #[test]
    fn history_csv_shape() {
        let s = scenario(2, 2);
        let x0 = vec![dvector![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], DVector::zeros(6)];
        let subs = subproblems(&s, &x0, 1.0);
        let settings = AdmmSettings {
            max_iter: 3,
            eps_primal: 0.0,
            eps_dual: 0.0,
            ..AdmmSettings::default()
        };
        let st = run_admm(&subs, s.maps(), s.z_dim(), &settings, None).unwrap();
        let csv = st.history.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "iter,r_primal,r_dual,objective");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,"));
    }
}
