//! Random benchmark instances.
//!
//! * Network: multicommodity routing with linear flow costs and a total-delay
//!   cost on the aggregate link load `y = Σ x_i`.
//! * Quadratic: semidefinite QPs `½xᵀQ_iᵀQ_ix + c_iᵀx` coupled by `Σ x_i = b`.
//!
//! Both are deterministic functions of the [`GenSpec`].

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::{BoxSet, Objective};
use crate::problem::{numerical_rank, Block, SeparableProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Network,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub family: Family,
    /// Local equality rows per block (network: nodes minus one).
    pub m1: usize,
    /// Variables per block (network: links).
    pub n1: usize,
    /// Number of blocks (network: commodities).
    pub n_blocks: usize,
    pub seed: u64,
}

const MAX_ATTEMPTS: u64 = 100;

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m1 >= self.n1 {
            return Err(Error::Config(format!("need m1 < n1, got m1={} n1={}", self.m1, self.n1)));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("need at least one block".into()));
        }
        if self.family == Family::Network && self.m1 == 0 {
            return Err(Error::Config("network needs at least two nodes (m1 ≥ 1)".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SeparableProblem> {
        match self.family {
            Family::Network => gen_network(self),
            Family::Quadratic => gen_quadratic(self),
        }
    }
}

/// Directed multigraph on `nodes` nodes.
#[derive(Clone, Debug)]
struct Graph {
    nodes: usize,
    arcs: Vec<(usize, usize)>,
}

impl Graph {
    /// Random Hamiltonian cycle (strong connectivity) plus random extra arcs.
    /// Requires `links ≥ nodes`.
    fn random(nodes: usize, links: usize, rng: &mut ChaCha8Rng) -> Graph {
        let mut order: Vec<usize> = (0..nodes).collect();
        order.shuffle(rng);
        let mut arcs = Vec::with_capacity(links);
        for k in 0..nodes {
            arcs.push((order[k], order[(k + 1) % nodes]));
        }
        let mut seen: HashSet<(usize, usize)> = arcs.iter().copied().collect();
        let simple_capacity = nodes * (nodes - 1);
        while arcs.len() < links {
            let u = rng.random_range(0..nodes);
            let v = rng.random_range(0..nodes);
            if u == v {
                continue;
            }
            if seen.insert((u, v)) || seen.len() >= simple_capacity {
                arcs.push((u, v));
            }
        }
        Graph { nodes, arcs }
    }

    /// Node-link incidence matrix: +1 where a link leaves a node, −1 where it
    /// enters.
    fn incidence(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nodes, self.arcs.len());
        for (e, &(u, v)) in self.arcs.iter().enumerate() {
            a[(u, e)] = 1.0;
            a[(v, e)] = -1.0;
        }
        a
    }

    /// Arc indices of a shortest path `s → t`, if one exists.
    fn path(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let mut prev: Vec<Option<usize>> = vec![None; self.nodes];
        let mut visited = vec![false; self.nodes];
        visited[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            if u == t {
                break;
            }
            for (e, &(a, b)) in self.arcs.iter().enumerate() {
                if a == u && !visited[b] {
                    visited[b] = true;
                    prev[b] = Some(e);
                    queue.push_back(b);
                }
            }
        }
        if !visited[t] {
            return None;
        }
        let mut path = Vec::new();
        let mut v = t;
        while v != s {
            let e = prev[v]?;
            path.push(e);
            v = self.arcs[e].0;
        }
        path.reverse();
        Some(path)
    }

    /// A positive circulation through every arc: each arc `u→v` is closed by a
    /// path `v → u`. `None` if some arc lies on no cycle.
    fn covering_circulation(&self) -> Option<DVector<f64>> {
        let mut circ = DVector::zeros(self.arcs.len());
        for (e, &(u, v)) in self.arcs.iter().enumerate() {
            circ[e] += 1.0;
            for back in self.path(v, u)? {
                circ[back] += 1.0;
            }
        }
        Some(circ)
    }
}

/// Multicommodity routing instance.
///
/// Blocks `0..N` are commodity flows on `[0, x̄_i]` with linear costs and local
/// flow conservation `A x_i = a_i` (reference node removed); block `N` is the
/// link load `y` on `[0, d]` with the total-delay cost. Coupling is
/// `Σ x_i − y = 0`.
pub fn gen_network(spec: &GenSpec) -> Result<SeparableProblem> {
    spec.validate()?;
    if spec.family != Family::Network {
        return Err(Error::Config("gen_network called with a non-network spec".into()));
    }
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        match try_network(spec, spec.seed.wrapping_add(attempt)) {
            Ok(p) => return Ok(p),
            Err(e @ Error::GenInfeasible(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::GenInfeasible("no attempts".into())))
}

fn try_network(spec: &GenSpec, seed: u64) -> Result<SeparableProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = spec.m1 + 1;
    let links = spec.n1;
    let graph = Graph::random(nodes, links, &mut rng);
    let full = graph.incidence();
    let a = full.rows(0, spec.m1).into_owned();
    if numerical_rank(&a) < spec.m1 {
        return Err(Error::GenInfeasible("incidence matrix is rank deficient".into()));
    }
    // flows must be strictly positive, so every arc has to lie on a cycle
    let circulation =
        graph.covering_circulation().ok_or_else(|| Error::GenInfeasible("some link lies on no cycle".into()))? / 10.0;

    let mut blocks = Vec::with_capacity(spec.n_blocks + 1);
    let mut load: DVector<f64> = DVector::zeros(links);
    for _ in 0..spec.n_blocks {
        let (s, t) = loop {
            let s = rng.random_range(0..nodes);
            let t = rng.random_range(0..nodes);
            if s != t {
                break (s, t);
            }
        };
        let path = graph.path(s, t).ok_or_else(|| Error::GenInfeasible(format!("sink {t} unreachable from {s}")))?;
        let mut xhat = circulation.clone();
        for e in path {
            xhat[e] += 1.0;
        }
        if xhat.min() <= 0.0 {
            return Err(Error::GenInfeasible("seed routing leaves a link unused".into()));
        }
        let supply = &full * &xhat;
        let rhs = supply.rows(0, spec.m1).into_owned();
        let cost = DVector::from_fn(links, |_, _| rng.random_range(0.1..1.0));
        let upper = 2.0 * xhat.max();
        load += &xhat;
        blocks.push(Block::new(
            Objective::Linear { c: cost.iter().copied().collect() },
            BoxSet::uniform(links, 0.0, upper)?,
            a.clone(),
            rhs,
            DMatrix::identity(links, links),
        )?);
    }
    let capacity: Vec<f64> = load.iter().map(|l| 2.0 * l).collect();
    blocks.push(Block::unconstrained(
        Objective::TotalDelay { capacity: capacity.clone() },
        BoxSet::new(vec![0.0; links], capacity)?,
        -DMatrix::identity(links, links),
    )?);
    SeparableProblem::new(blocks, DVector::zeros(links))
}

/// Semidefinite QP family: `Q_i` is `m1×n1` standard normal, `A_i` random,
/// `a_i = A_i x̂_i` for `x̂_i ∈ (0.1, 1)`, box `[0, 2·max x̂_i]`, `B_i = I` and
/// `b = Σ x̂_i`.
pub fn gen_quadratic(spec: &GenSpec) -> Result<SeparableProblem> {
    spec.validate()?;
    if spec.family != Family::Quadratic {
        return Err(Error::Config("gen_quadratic called with a non-quadratic spec".into()));
    }
    let (m1, n1) = (spec.m1, spec.n1);
    if spec.n_blocks * (n1 - m1) < n1 {
        return Err(Error::RankDeficient(format!(
            "coupling Σx_i = b needs N(n1−m1) ≥ n1, got N={} n1={n1} m1={m1}",
            spec.n_blocks
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal =
        |r: usize, c: usize, rng: &mut ChaCha8Rng| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut blocks = Vec::with_capacity(spec.n_blocks);
    let mut b = DVector::zeros(n1);
    for _ in 0..spec.n_blocks {
        let qf = normal(m1.max(1), n1, &mut rng);
        let q = qf.tr_mul(&qf);
        let c = normal(n1, 1, &mut rng).column(0).into_owned();
        let a = normal(m1, n1, &mut rng);
        let xhat = DVector::from_fn(n1, |_, _| rng.random_range(0.1..1.0));
        let upper = 2.0 * xhat.max();
        b += &xhat;
        blocks.push(Block::new(
            Objective::quadratic(&q, &c),
            BoxSet::uniform(n1, 0.0, upper)?,
            a.clone(),
            &a * &xhat,
            DMatrix::identity(n1, n1),
        )?);
    }
    SeparableProblem::new(blocks, b)
}
