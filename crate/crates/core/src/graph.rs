//! Undirected weighted information architecture.
//!
//! Vertices are `0..num_agents`. The weight type only needs ring arithmetic, so
//! Laplacians can be built exactly over rationals as well as over floats.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Debug;

use nalgebra::DMatrix;
use num_traits::Num;

use crate::{Error, Result};

/// Communication graph with strictly positive edge weights and no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoGraph<W> {
    num_agents: usize,
    /// Keyed by `(min, max)` so each unordered pair appears once.
    edges: BTreeMap<(usize, usize), W>,
    adjacency: Vec<Vec<(usize, W)>>,
}

impl<W> InfoGraph<W>
where
    W: Num + Copy + PartialOrd + Debug,
{
    pub fn new(num_agents: usize) -> Result<Self> {
        if num_agents == 0 {
            return Err(Error::InvalidArgument("graph needs at least one agent".into()));
        }
        Ok(Self {
            num_agents,
            edges: BTreeMap::new(),
            adjacency: vec![Vec::new(); num_agents],
        })
    }

    /// Builds a graph from `(i, j, a_ij)` triples.
    pub fn from_edges(num_agents: usize, edges: &[(usize, usize, W)]) -> Result<Self> {
        let mut g = Self::new(num_agents)?;
        for &(i, j, w) in edges {
            g.add_edge(i, j, w)?;
        }
        Ok(g)
    }

    /// Unit-weight path `0 - 1 - ... - (n-1)`.
    pub fn path(num_agents: usize) -> Result<Self> {
        let mut g = Self::new(num_agents)?;
        for i in 1..num_agents {
            g.add_edge(i - 1, i, W::one())?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, i: usize, j: usize, weight: W) -> Result<()> {
        self.check_vertex(i)?;
        self.check_vertex(j)?;
        if i == j {
            return Err(Error::InvalidArgument(format!("self-loop on vertex {i}")));
        }
        if !(weight > W::zero()) {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) weight {weight:?} is not strictly positive"
            )));
        }
        let key = (i.min(j), i.max(j));
        if self.edges.contains_key(&key) {
            return Err(Error::InvalidArgument(format!("duplicate edge ({i}, {j})")));
        }
        self.edges.insert(key, weight);
        self.adjacency[i].push((j, weight));
        self.adjacency[j].push((i, weight));
        self.adjacency[i].sort_by_key(|&(v, _)| v);
        self.adjacency[j].sort_by_key(|&(v, _)| v);
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(i, j, a_ij)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, W)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<W> {
        self.edges.get(&(i.min(j), i.max(j))).copied()
    }

    /// Neighbours of `i` in increasing vertex order.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        self.check_vertex(i)?;
        Ok(self.adjacency[i].iter().map(|&(j, _)| j).collect())
    }

    /// Neighbours of `i` with their edge weights.
    pub fn weighted_neighbors(&self, i: usize) -> Result<&[(usize, W)]> {
        self.check_vertex(i)?;
        Ok(&self.adjacency[i])
    }

    /// Weighted Laplacian: `l_ii = sum_j a_ij`, `l_ij = -a_ij` on edges.
    pub fn laplacian(&self) -> DMatrix<W>
    where
        W: nalgebra::Scalar,
    {
        let n = self.num_agents;
        let mut l = DMatrix::from_element(n, n, W::zero());
        for (&(i, j), &w) in &self.edges {
            l[(i, i)] = l[(i, i)] + w;
            l[(j, j)] = l[(j, j)] + w;
            l[(i, j)] = l[(i, j)] - w;
            l[(j, i)] = l[(j, i)] - w;
        }
        l
    }

    /// Breadth-first reachability from vertex 0.
    pub fn is_connected(&self) -> bool {
        self.num_components() == 1
    }

    pub fn num_components(&self) -> usize {
        let mut seen = vec![false; self.num_agents];
        let mut components = 0;
        for start in 0..self.num_agents {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &(u, _) in &self.adjacency[v] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        components
    }

    fn check_vertex(&self, i: usize) -> Result<()> {
        if i >= self.num_agents {
            Err(Error::InvalidArgument(format!(
                "vertex {i} out of range for {} agents",
                self.num_agents
            )))
        } else {
            Ok(())
        }
    }
}
