//! Consistency-constraint form of the multi-agent finite-horizon problem.
//!
//! Every agent `i` owns a local vector holding its own and each neighbour's
//! state trajectory (`t = 0..=T`) and input trajectory (`t = 0..T`). Copies of
//! the same quantity held by different agents map to one entry of the global
//! consensus vector `z`. The layout of an agent's segment is the same in `z`
//! and in every local vector that contains it: states by step then component,
//! followed by inputs by step then component.
//!
//! The local cost of agent `i` is
//!
//! ```text
//! f_i = Σ_{t=0..=T} Σ_{j∈N_i} (a_ij / 2) ‖x_i(t) − x_j(t)‖²  +  Σ_{t<T} ‖u_i(t)‖²
//! ```
//!
//! evaluated on agent `i`'s own copies, stored as `½ xᵀHx + gᵀx + constant`.
//! Summed over agents on a consistent assignment this is exactly the global
//! Laplacian stage cost plus input energy.

use nalgebra::{DMatrix, DVector};

use crate::agent::LtiAgent;
use crate::graph::InfoGraph;
use crate::qp::{BoxQp, BoxQpSolver, QpSolution};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    State,
    Input,
}

/// Identifies one scalar of the global problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarTag {
    pub agent: usize,
    pub kind: VarKind,
    pub step: usize,
    pub component: usize,
}

/// Selector between an owner's local vector and the global vector `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalIndexMap {
    owner: usize,
    members: Vec<usize>,
    member_offsets: Vec<usize>,
    global: Vec<usize>,
    tags: Vec<VarTag>,
}

impl LocalIndexMap {
    pub fn owner(&self) -> usize {
        self.owner
    }

    /// `N_i ∪ {i}` in increasing order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn member_offset(&self, k: usize) -> usize {
        self.member_offsets[k]
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// `z` offset of every local entry, indexed by local offset.
    pub fn global_offsets(&self) -> &[usize] {
        &self.global
    }

    /// `(local_offset, global_offset, tag)` in local order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, VarTag)> + '_ {
        self.global
            .iter()
            .zip(&self.tags)
            .enumerate()
            .map(|(k, (&g, &tag))| (k, g, tag))
    }

    /// `Ē_i z`.
    pub fn gather<T: Real>(&self, z: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.global.len(), self.global.iter().map(|&g| z[g]))
    }
}

/// Layout of the global vector plus the per-agent selectors.
#[derive(Debug, Clone)]
pub struct ScenarioProblem<T: Real> {
    graph: InfoGraph<T>,
    agents: Vec<LtiAgent<T>>,
    horizon: usize,
    agent_offsets: Vec<usize>,
    z_dim: usize,
    maps: Vec<LocalIndexMap>,
    copies: Vec<usize>,
}

impl<T: Real> ScenarioProblem<T> {
    pub fn new(graph: InfoGraph<T>, agents: Vec<LtiAgent<T>>, horizon: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if agents.len() != graph.num_agents() {
            return Err(Error::DimensionMismatch {
                what: "number of agents",
                expected: graph.num_agents(),
                got: agents.len(),
            });
        }
        for (i, j, _) in graph.edges() {
            if agents[i].n() != agents[j].n() {
                return Err(Error::InvalidArgument(format!(
                    "coupled agents {i} and {j} have different state dimensions"
                )));
            }
        }

        let mut agent_offsets = Vec::with_capacity(agents.len());
        let mut z_dim = 0;
        for agent in &agents {
            agent_offsets.push(z_dim);
            z_dim += segment_len(agent, horizon);
        }

        let mut maps = Vec::with_capacity(agents.len());
        let mut copies = vec![0usize; z_dim];
        for owner in 0..agents.len() {
            let mut members = graph.neighbors(owner)?;
            members.push(owner);
            members.sort_unstable();
            let mut member_offsets = Vec::with_capacity(members.len());
            let mut global = Vec::new();
            let mut tags = Vec::new();
            for &j in &members {
                member_offsets.push(global.len());
                let agent = &agents[j];
                for t in 0..=horizon {
                    for c in 0..agent.n() {
                        tags.push(VarTag {
                            agent: j,
                            kind: VarKind::State,
                            step: t,
                            component: c,
                        });
                    }
                }
                for t in 0..horizon {
                    for c in 0..agent.m() {
                        tags.push(VarTag {
                            agent: j,
                            kind: VarKind::Input,
                            step: t,
                            component: c,
                        });
                    }
                }
                let base = agent_offsets[j];
                global.extend(base..base + segment_len(agent, horizon));
            }
            for &g in &global {
                copies[g] += 1;
            }
            maps.push(LocalIndexMap {
                owner,
                members,
                member_offsets,
                global,
                tags,
            });
        }

        Ok(Self {
            graph,
            agents,
            horizon,
            agent_offsets,
            z_dim,
            maps,
            copies,
        })
    }

    pub fn graph(&self) -> &InfoGraph<T> {
        &self.graph
    }

    pub fn agents(&self) -> &[LtiAgent<T>] {
        &self.agents
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn maps(&self) -> &[LocalIndexMap] {
        &self.maps
    }

    /// Number of local copies of each `z` entry.
    pub fn copies(&self) -> &[usize] {
        &self.copies
    }

    pub fn z_offset(&self, tag: VarTag) -> usize {
        let agent = &self.agents[tag.agent];
        let base = self.agent_offsets[tag.agent];
        match tag.kind {
            VarKind::State => base + tag.step * agent.n() + tag.component,
            VarKind::Input => base + (self.horizon + 1) * agent.n() + tag.step * agent.m() + tag.component,
        }
    }

    /// Source index for every `z` entry under a one-step receding-horizon shift:
    /// step `t` takes the value of step `t + 1`, and the last step keeps its own.
    pub fn shift_sources(&self) -> Vec<usize> {
        let mut src = vec![0; self.z_dim];
        for (j, agent) in self.agents.iter().enumerate() {
            for (kind, last, dim) in [
                (VarKind::State, self.horizon, agent.n()),
                (VarKind::Input, self.horizon - 1, agent.m()),
            ] {
                for t in 0..=last {
                    for c in 0..dim {
                        let tag = VarTag {
                            agent: j,
                            kind,
                            step: t,
                            component: c,
                        };
                        let from = VarTag {
                            step: (t + 1).min(last),
                            ..tag
                        };
                        src[self.z_offset(tag)] = self.z_offset(from);
                    }
                }
            }
        }
        src
    }

    /// Consistent global vector from per-agent state (`T+1`) and input (`T`) sequences.
    pub fn encode(&self, states: &[Vec<DVector<T>>], inputs: &[Vec<DVector<T>>]) -> Result<DVector<T>> {
        check_traj(&self.agents, states, self.horizon + 1, true)?;
        check_traj(&self.agents, inputs, self.horizon, false)?;
        let mut z = DVector::zeros(self.z_dim);
        for (j, agent) in self.agents.iter().enumerate() {
            let mut k = self.agent_offsets[j];
            for x in &states[j] {
                z.rows_mut(k, agent.n()).copy_from(x);
                k += agent.n();
            }
            for u in &inputs[j] {
                z.rows_mut(k, agent.m()).copy_from(u);
                k += agent.m();
            }
        }
        Ok(z)
    }

    /// Per-agent input sequences stored in `z`.
    pub fn decode_inputs(&self, z: &DVector<T>) -> Vec<Vec<DVector<T>>> {
        self.agents
            .iter()
            .enumerate()
            .map(|(j, agent)| {
                let base = self.agent_offsets[j] + (self.horizon + 1) * agent.n();
                (0..self.horizon)
                    .map(|t| z.rows(base + t * agent.m(), agent.m()).into_owned())
                    .collect()
            })
            .collect()
    }

    /// Per-agent state sequences stored in `z`.
    pub fn decode_states(&self, z: &DVector<T>) -> Vec<Vec<DVector<T>>> {
        self.agents
            .iter()
            .enumerate()
            .map(|(j, agent)| {
                let base = self.agent_offsets[j];
                (0..=self.horizon)
                    .map(|t| z.rows(base + t * agent.n(), agent.n()).into_owned())
                    .collect()
            })
            .collect()
    }

    /// Local problem of `owner` with the measured initial states of all agents.
    pub fn local_problem(&self, owner: usize, initial_states: &[DVector<T>]) -> Result<LocalProblem<T>> {
        self.check_initial_states(initial_states)?;
        let map = &self.maps[owner];
        let dim = map.len();
        let mut hessian = DMatrix::zeros(dim, dim);
        let two = T::lit(2.0);

        let owner_k = map.members.binary_search(&owner).expect("owner is a member");
        let owner_off = map.member_offsets[owner_k];
        let n = self.agents[owner].n();
        for &(j, a) in self.graph.weighted_neighbors(owner)? {
            let k = map.members.binary_search(&j).expect("neighbour is a member");
            let off = map.member_offsets[k];
            for t in 0..=self.horizon {
                for c in 0..n {
                    let p = owner_off + t * n + c;
                    let q = off + t * n + c;
                    hessian[(p, p)] += a;
                    hessian[(q, q)] += a;
                    hessian[(p, q)] -= a;
                    hessian[(q, p)] -= a;
                }
            }
        }
        let m = self.agents[owner].m();
        let input_base = owner_off + (self.horizon + 1) * n;
        for k in 0..self.horizon * m {
            hessian[(input_base + k, input_base + k)] += two;
        }

        Ok(LocalProblem {
            owner,
            horizon: self.horizon,
            members: map.members.clone(),
            member_offsets: map.member_offsets.clone(),
            agents: map.members.iter().map(|&j| self.agents[j].clone()).collect(),
            initial_states: map.members.iter().map(|&j| initial_states[j].clone()).collect(),
            hessian,
            linear: DVector::zeros(dim),
            constant: T::zero(),
        })
    }

    pub fn local_problems(&self, initial_states: &[DVector<T>]) -> Result<Vec<LocalProblem<T>>> {
        (0..self.num_agents())
            .map(|i| self.local_problem(i, initial_states))
            .collect()
    }

    fn check_initial_states(&self, initial_states: &[DVector<T>]) -> Result<()> {
        if initial_states.len() != self.num_agents() {
            return Err(Error::DimensionMismatch {
                what: "number of initial states",
                expected: self.num_agents(),
                got: initial_states.len(),
            });
        }
        for (agent, x0) in self.agents.iter().zip(initial_states) {
            if x0.len() != agent.n() {
                return Err(Error::DimensionMismatch {
                    what: "initial state",
                    expected: agent.n(),
                    got: x0.len(),
                });
            }
        }
        Ok(())
    }
}

fn segment_len<T: Real>(agent: &LtiAgent<T>, horizon: usize) -> usize {
    agent.n() * (horizon + 1) + agent.m() * horizon
}

fn check_traj<T: Real>(agents: &[LtiAgent<T>], traj: &[Vec<DVector<T>>], len: usize, states: bool) -> Result<()> {
    if traj.len() != agents.len() {
        return Err(Error::DimensionMismatch {
            what: "number of agent trajectories",
            expected: agents.len(),
            got: traj.len(),
        });
    }
    for (agent, seq) in agents.iter().zip(traj) {
        if seq.len() != len {
            return Err(Error::DimensionMismatch {
                what: "trajectory length",
                expected: len,
                got: seq.len(),
            });
        }
        let dim = if states { agent.n() } else { agent.m() };
        if let Some(v) = seq.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: if states { "state vector" } else { "input vector" },
                expected: dim,
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// Builds every agent's local problem and selector map; returns them with `dim z`.
pub fn build_local_problems<T: Real>(
    graph: &InfoGraph<T>,
    agents: &[LtiAgent<T>],
    horizon: usize,
    initial_states: &[DVector<T>],
) -> Result<(Vec<LocalProblem<T>>, Vec<LocalIndexMap>, usize)> {
    let scenario = ScenarioProblem::new(graph.clone(), agents.to_vec(), horizon)?;
    let problems = scenario.local_problems(initial_states)?;
    Ok((problems, scenario.maps, scenario.z_dim))
}

/// `Σ_t Σ_{(i,j)∈E} a_ij ‖x_i(t) − x_j(t)‖² + Σ_i Σ_t ‖u_i(t)‖²`.
///
/// `states[i]` and `inputs[i]` are agent `i`'s sequences; every agent must have
/// the same number of states, and coupled agents the same state dimension.
/// Input sequences may have any length.
pub fn global_cost<T: Real>(graph: &InfoGraph<T>, states: &[Vec<DVector<T>>], inputs: &[Vec<DVector<T>>]) -> Result<T> {
    let n = graph.num_agents();
    for (what, got) in [
        ("state trajectories", states.len()),
        ("input trajectories", inputs.len()),
    ] {
        if got != n {
            return Err(Error::DimensionMismatch { what, expected: n, got });
        }
    }
    let steps = states[0].len();
    if let Some(seq) = states.iter().find(|s| s.len() != steps) {
        return Err(Error::DimensionMismatch {
            what: "state trajectory length",
            expected: steps,
            got: seq.len(),
        });
    }
    let mut cost = T::zero();
    for (i, j, a) in graph.edges() {
        for t in 0..steps {
            let (xi, xj) = (&states[i][t], &states[j][t]);
            if xi.len() != xj.len() {
                return Err(Error::DimensionMismatch {
                    what: "coupled state dimension",
                    expected: xi.len(),
                    got: xj.len(),
                });
            }
            cost += a * (xi - xj).norm_squared();
        }
    }
    for seq in inputs {
        for u in seq {
            cost += u.norm_squared();
        }
    }
    Ok(cost)
}

/// One agent's subproblem: quadratic cost over its local vector, the dynamics of
/// every member, measured initial states, and input boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalProblem<T: Real> {
    owner: usize,
    horizon: usize,
    members: Vec<usize>,
    member_offsets: Vec<usize>,
    agents: Vec<LtiAgent<T>>,
    initial_states: Vec<DVector<T>>,
    hessian: DMatrix<T>,
    linear: DVector<T>,
    constant: T,
}

impl<T: Real> LocalProblem<T> {
    /// Problem over the full trajectories of `agents`, laid out back to back in
    /// the same per-agent segment format as `z`.
    pub(crate) fn over_all_agents(
        agents: &[LtiAgent<T>],
        horizon: usize,
        initial_states: &[DVector<T>],
        hessian: DMatrix<T>,
    ) -> Self {
        let mut member_offsets = Vec::with_capacity(agents.len());
        let mut dim = 0;
        for agent in agents {
            member_offsets.push(dim);
            dim += segment_len(agent, horizon);
        }
        Self {
            owner: usize::MAX,
            horizon,
            members: (0..agents.len()).collect(),
            member_offsets,
            agents: agents.to_vec(),
            initial_states: initial_states.to_vec(),
            hessian,
            linear: DVector::zeros(dim),
            constant: T::zero(),
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn hessian(&self) -> &DMatrix<T> {
        &self.hessian
    }

    pub fn linear(&self) -> &DVector<T> {
        &self.linear
    }

    pub fn constant(&self) -> T {
        self.constant
    }

    pub fn initial_states(&self) -> &[DVector<T>] {
        &self.initial_states
    }

    /// `½ xᵀHx + gᵀx + constant`.
    pub fn cost(&self, x: &DVector<T>) -> T {
        (&self.hessian * x).dot(x) * T::lit(0.5) + self.linear.dot(x) + self.constant
    }

    pub fn state_offset(&self, member: usize, step: usize) -> usize {
        self.member_offsets[member] + step * self.agents[member].n()
    }

    pub fn input_offset(&self, member: usize, step: usize) -> usize {
        let agent = &self.agents[member];
        self.member_offsets[member] + (self.horizon + 1) * agent.n() + step * agent.m()
    }

    /// Local offsets of every input entry, members in order, then step, then component.
    pub fn input_offsets(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (k, agent) in self.agents.iter().enumerate() {
            for t in 0..self.horizon {
                let base = self.input_offset(k, t);
                out.extend(base..base + agent.m());
            }
        }
        out
    }

    /// Initial-state and dynamics equalities `A_eq x = b_eq` over the full local vector.
    pub fn equality_constraints(&self) -> (DMatrix<T>, DVector<T>) {
        let rows: usize = self.agents.iter().map(|a| a.n() * (self.horizon + 1)).sum();
        let mut a_eq = DMatrix::zeros(rows, self.dim());
        let mut b_eq = DVector::zeros(rows);
        let mut r = 0;
        for (k, agent) in self.agents.iter().enumerate() {
            let n = agent.n();
            let x0 = self.state_offset(k, 0);
            for c in 0..n {
                a_eq[(r + c, x0 + c)] = T::one();
                b_eq[r + c] = self.initial_states[k][c];
            }
            r += n;
            for t in 0..self.horizon {
                let next = self.state_offset(k, t + 1);
                let cur = self.state_offset(k, t);
                let inp = self.input_offset(k, t);
                for row in 0..n {
                    a_eq[(r + row, next + row)] = T::one();
                    for c in 0..n {
                        a_eq[(r + row, cur + c)] -= agent.a()[(row, c)];
                    }
                    for c in 0..agent.m() {
                        a_eq[(r + row, inp + c)] -= agent.b()[(row, c)];
                    }
                }
                r += n;
            }
        }
        (a_eq, b_eq)
    }

    /// Box on the full local vector: `±u_max` on inputs, free on states.
    pub fn bounds(&self) -> (DVector<T>, DVector<T>) {
        let mut lower = DVector::from_element(self.dim(), -T::infinity());
        let mut upper = DVector::from_element(self.dim(), T::infinity());
        for (k, agent) in self.agents.iter().enumerate() {
            for t in 0..self.horizon {
                let base = self.input_offset(k, t);
                for c in 0..agent.m() {
                    lower[base + c] = -agent.u_max();
                    upper[base + c] = agent.u_max();
                }
            }
        }
        (lower, upper)
    }

    fn structure(&self) -> Structure<T> {
        Structure::build(self)
    }
}

/// Adds `λᵀ(x − Ē z) + (ρ/2)‖x − Ē z‖²` to the local cost.
pub fn augment_with_admm_terms<T: Real>(
    problem: &LocalProblem<T>,
    z: &DVector<T>,
    dual: &DVector<T>,
    rho: T,
    map: &LocalIndexMap,
) -> Result<LocalProblem<T>> {
    if dual.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            what: "dual vector",
            expected: problem.dim(),
            got: dual.len(),
        });
    }
    if map.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            what: "index map",
            expected: problem.dim(),
            got: map.len(),
        });
    }
    if let Some(&g) = map.global_offsets().iter().max() {
        if g >= z.len() {
            return Err(Error::DimensionMismatch {
                what: "global vector",
                expected: g + 1,
                got: z.len(),
            });
        }
    }
    let target = map.gather(z);
    let mut out = problem.clone();
    for k in 0..out.dim() {
        out.hessian[(k, k)] += rho;
    }
    out.linear += dual - &target * rho;
    out.constant += target.norm_squared() * rho * T::lit(0.5) - dual.dot(&target);
    Ok(out)
}

/// Affine map from the stacked inputs of all members to the full local vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion<T: Real> {
    pub map: DMatrix<T>,
    pub offset: DVector<T>,
    pub input_offsets: Vec<usize>,
}

impl<T: Real> Expansion<T> {
    pub fn expand(&self, inputs: &DVector<T>) -> DVector<T> {
        let mut x = &self.map * inputs + &self.offset;
        for (k, &off) in self.input_offsets.iter().enumerate() {
            x[off] = inputs[k];
        }
        x
    }
}

/// Eliminates states through the dynamics; returns the box QP over stacked
/// member inputs and the map back to the full local vector.
pub fn condense<T: Real>(problem: &LocalProblem<T>) -> Result<(BoxQp<T>, Expansion<T>)> {
    let s = problem.structure();
    let offset = s.offset_for(&problem.initial_states);
    let gt = s.g_map.transpose();
    let p = symmetrize(&gt * &problem.hessian * &s.g_map);
    let q = &gt * (&problem.hessian * &offset + &problem.linear);
    let qp = BoxQp::new(p, q, s.lower.clone(), s.upper.clone())?;
    Ok((
        qp,
        Expansion {
            map: s.g_map,
            offset,
            input_offsets: s.input_offsets,
        },
    ))
}

fn symmetrize<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::lit(0.5)
}

/// Dynamics elimination data: `x = G u + F x0`.
#[derive(Debug, Clone)]
struct Structure<T: Real> {
    g_map: DMatrix<T>,
    f_map: DMatrix<T>,
    input_offsets: Vec<usize>,
    lower: DVector<T>,
    upper: DVector<T>,
}

impl<T: Real> Structure<T> {
    fn build(p: &LocalProblem<T>) -> Self {
        let dim = p.dim();
        let input_offsets = p.input_offsets();
        let nu = input_offsets.len();
        let nx0: usize = p.agents.iter().map(|a| a.n()).sum();
        let mut g_map = DMatrix::zeros(dim, nu);
        let mut f_map = DMatrix::zeros(dim, nx0);
        let mut col_u = 0;
        let mut col_x = 0;
        for (k, agent) in p.agents.iter().enumerate() {
            let n = agent.n();
            let m = agent.m();
            let block_u = m * p.horizon;
            // Sensitivities of x(t) to this member's inputs and to its x(0).
            let mut du = DMatrix::<T>::zeros(n, block_u);
            let mut dx = DMatrix::<T>::identity(n, n);
            for t in 0..=p.horizon {
                let row = p.state_offset(k, t);
                g_map.view_mut((row, col_u), (n, block_u)).copy_from(&du);
                f_map.view_mut((row, col_x), (n, n)).copy_from(&dx);
                if t < p.horizon {
                    du = agent.a() * &du;
                    du.view_mut((0, t * m), (n, m)).copy_from(agent.b());
                    dx = agent.a() * &dx;
                }
            }
            for t in 0..p.horizon {
                let row = p.input_offset(k, t);
                for c in 0..m {
                    g_map[(row + c, col_u + t * m + c)] = T::one();
                }
            }
            col_u += block_u;
            col_x += n;
        }
        let (lo, hi) = p.bounds();
        let lower = DVector::from_iterator(nu, input_offsets.iter().map(|&k| lo[k]));
        let upper = DVector::from_iterator(nu, input_offsets.iter().map(|&k| hi[k]));
        Self {
            g_map,
            f_map,
            input_offsets,
            lower,
            upper,
        }
    }

    fn offset_for(&self, initial_states: &[DVector<T>]) -> DVector<T> {
        let stacked: Vec<T> = initial_states.iter().flat_map(|x| x.iter().copied()).collect();
        &self.f_map * DVector::from_vec(stacked)
    }
}

/// Condensed subproblem prepared for repeated augmented solves with fixed `ρ`.
///
/// Algebraically identical to `augment_with_admm_terms` followed by
/// [`condense`], but the Hessian, its step bound and `Gᵀ(H + ρI)` are built once;
/// each solve only forms the linear term.
#[derive(Debug, Clone)]
pub struct Subproblem<T: Real> {
    owner: usize,
    rho: T,
    hessian: DMatrix<T>,
    linear: DVector<T>,
    constant: T,
    g_map: DMatrix<T>,
    g_t: DMatrix<T>,
    f_map: DMatrix<T>,
    input_offsets: Vec<usize>,
    lower: DVector<T>,
    upper: DVector<T>,
    qp_hessian: DMatrix<T>,
    lipschitz: T,
    gt_h_rho: DMatrix<T>,
    offset: DVector<T>,
    q_base: DVector<T>,
    cost_hessian: DMatrix<T>,
    cost_linear: DVector<T>,
    cost_constant: T,
}

impl<T: Real> Subproblem<T> {
    /// `ρ = 0` gives the unaugmented problem used by dual decomposition.
    pub fn new(problem: &LocalProblem<T>, rho: T) -> Result<Self> {
        let s = problem.structure();
        let offset = s.offset_for(&problem.initial_states);
        Self::assemble(
            problem.owner,
            problem.hessian.clone(),
            problem.linear.clone(),
            problem.constant,
            s.g_map,
            s.f_map,
            s.input_offsets,
            s.lower,
            s.upper,
            offset,
            rho,
        )
    }

    /// Generic subproblem `min ½xᵀHx + gᵀx` over `x = G u + offset`, `lower ≤ u ≤ upper`.
    /// Inputs are not copied verbatim into `x` (there is no designated input slot).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        owner: usize,
        hessian: DMatrix<T>,
        linear: DVector<T>,
        g_map: DMatrix<T>,
        offset: DVector<T>,
        lower: DVector<T>,
        upper: DVector<T>,
        rho: T,
    ) -> Result<Self> {
        let dim = linear.len();
        if hessian.shape() != (dim, dim) || g_map.nrows() != dim || offset.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "subproblem parts",
                expected: dim,
                got: hessian.nrows(),
            });
        }
        let f_map = DMatrix::zeros(dim, 0);
        Self::assemble(
            owner,
            hessian,
            linear,
            T::zero(),
            g_map,
            f_map,
            Vec::new(),
            lower,
            upper,
            offset,
            rho,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        owner: usize,
        hessian: DMatrix<T>,
        linear: DVector<T>,
        constant: T,
        g_map: DMatrix<T>,
        f_map: DMatrix<T>,
        input_offsets: Vec<usize>,
        lower: DVector<T>,
        upper: DVector<T>,
        offset: DVector<T>,
        rho: T,
    ) -> Result<Self> {
        if rho < T::zero() {
            return Err(Error::InvalidArgument(format!(
                "penalty must be non-negative, got {rho}"
            )));
        }
        let g_t = g_map.transpose();
        let mut h_rho = hessian.clone();
        for k in 0..h_rho.nrows() {
            h_rho[(k, k)] += rho;
        }
        let gt_h_rho = &g_t * &h_rho;
        let qp_hessian = symmetrize(&gt_h_rho * &g_map);
        let cost_hessian = symmetrize(&g_t * &hessian * &g_map);
        let probe = BoxQp::new(
            qp_hessian.clone(),
            DVector::zeros(g_map.ncols()),
            lower.clone(),
            upper.clone(),
        )?;
        let lipschitz = probe.lipschitz_estimate();
        let mut sp = Self {
            owner,
            rho,
            hessian,
            linear,
            constant,
            g_map,
            g_t,
            f_map,
            input_offsets,
            lower,
            upper,
            qp_hessian,
            lipschitz,
            gt_h_rho,
            offset: DVector::zeros(0),
            q_base: DVector::zeros(0),
            cost_hessian,
            cost_linear: DVector::zeros(0),
            cost_constant: T::zero(),
        };
        sp.set_offset(offset);
        Ok(sp)
    }

    fn set_offset(&mut self, offset: DVector<T>) {
        self.q_base = &self.gt_h_rho * &offset + &self.g_t * &self.linear;
        let h_offset = &self.hessian * &offset;
        self.cost_linear = &self.g_t * (&h_offset + &self.linear);
        self.cost_constant = h_offset.dot(&offset) * T::lit(0.5) + self.linear.dot(&offset) + self.constant;
        self.offset = offset;
    }

    /// Rebinds the measured initial states of the members (one per member, in member order).
    pub fn set_initial_states(&mut self, initial_states: &[DVector<T>]) {
        let stacked: Vec<T> = initial_states.iter().flat_map(|x| x.iter().copied()).collect();
        let offset = &self.f_map * DVector::from_vec(stacked);
        self.set_offset(offset);
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.g_map.ncols()
    }

    /// Unaugmented local cost `f_i(x)`.
    pub fn cost(&self, x: &DVector<T>) -> T {
        (&self.hessian * x).dot(x) * T::lit(0.5) + self.linear.dot(x) + self.constant
    }

    /// `f_i(G u + offset)` evaluated in condensed form.
    pub fn cost_of_inputs(&self, inputs: &DVector<T>) -> T {
        (&self.cost_hessian * inputs).dot(inputs) * T::lit(0.5) + self.cost_linear.dot(inputs) + self.cost_constant
    }

    /// Input entries of a local vector, in condensed order.
    pub fn inputs_of(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.input_offsets.len(), self.input_offsets.iter().map(|&k| x[k]))
    }

    pub fn expand(&self, inputs: &DVector<T>) -> DVector<T> {
        let mut x = &self.g_map * inputs + &self.offset;
        for (k, &off) in self.input_offsets.iter().enumerate() {
            x[off] = inputs[k];
        }
        x
    }

    /// The condensed box QP of `f_i + λᵀ(x − t) + (ρ/2)‖x − t‖²` for `t = Ē z`.
    pub fn augmented_qp(&self, target: &DVector<T>, dual: &DVector<T>) -> BoxQp<T> {
        BoxQp {
            p: self.qp_hessian.clone(),
            q: self.linear_term(target, dual),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    fn linear_term(&self, target: &DVector<T>, dual: &DVector<T>) -> DVector<T> {
        let mut shift = dual.clone();
        shift.axpy(-self.rho, target, T::one());
        let mut q = self.q_base.clone();
        q.gemv(T::one(), &self.g_t, &shift, T::one());
        q
    }

    /// Minimizes the augmented local Lagrangian; returns the full local vector
    /// and the inner QP report. `warm_inputs` seeds the inner solver.
    pub fn solve(
        &self,
        target: &DVector<T>,
        dual: &DVector<T>,
        solver: &BoxQpSolver<T>,
        warm_inputs: Option<&DVector<T>>,
    ) -> (DVector<T>, QpSolution<T>) {
        let qp = BoxQp {
            p: self.qp_hessian.clone(),
            q: self.linear_term(target, dual),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        };
        let sol = solver.solve(&qp, warm_inputs, Some(self.lipschitz));
        let x = self.expand(&sol.x);
        (x, sol)
    }
}
