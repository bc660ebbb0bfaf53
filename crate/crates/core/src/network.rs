//! Time-varying undirected communication graphs, Metropolis mixing
//! matrices, and the geometric decay certificate of their products.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Undirected simple graph; edges stored once as `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidParams(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidParams(format!(
                    "edge ({a}, {b}) outside {n} nodes"
                )));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self { n, edges: out })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
        }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self { n, edges }
    }

    pub fn path(n: usize) -> Self {
        Self {
            n,
            edges: (1..n).map(|i| (i - 1, i)).collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn is_connected(&self) -> bool {
        connected(self.n, self.edges.iter().copied())
    }
}

fn connected(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    if n <= 1 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut comps = n;
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            comps -= 1;
        }
    }
    comps == 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum GraphKind {
    /// Watts–Strogatz ring lattice with `neighbors` neighbours per node,
    /// each lattice edge rewired with probability `rewire_prob`; redrawn
    /// every iteration until connected.
    SmallWorld { neighbors: usize, rewire_prob: f64 },
    /// The ring's edges dealt round-robin over `q` consecutive slots.
    RingSplit { q: usize },
    /// `G(N, p)` redrawn every iteration until connected.
    ErdosRenyiConnected { p: f64 },
    /// The complete graph at every iteration.
    Complete,
    /// Explicit per-iteration edge lists.
    Custom,
}

impl GraphKind {
    pub const DEFAULT_REWIRE: f64 = 0.2;

    pub fn small_world(neighbors: usize) -> Self {
        GraphKind::SmallWorld {
            neighbors,
            rewire_prob: Self::DEFAULT_REWIRE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    n_nodes: usize,
    q_window: usize,
    kind: GraphKind,
    seed: u64,
    graphs: Vec<Graph>,
}

const FAMILY_GRAPH: u32 = 100;
const MAX_REDRAWS: u64 = 10_000;

impl GraphSchedule {
    /// A schedule from explicit graphs, claiming union connectivity over `q_window`.
    pub fn from_graphs(n_nodes: usize, graphs: Vec<Graph>, q_window: usize) -> Result<Self> {
        if graphs.is_empty() || q_window == 0 {
            return Err(Error::InvalidParams(
                "need at least one graph and a positive window".into(),
            ));
        }
        if graphs.iter().any(|g| g.n_nodes() != n_nodes) {
            return Err(Error::InvalidParams("graph node counts differ".into()));
        }
        Ok(Self {
            n_nodes,
            q_window,
            kind: GraphKind::Custom,
            seed: 0,
            graphs,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of materialized iterations.
    pub fn horizon(&self) -> usize {
        self.graphs.len()
    }

    pub fn q_window(&self) -> usize {
        self.q_window
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    /// Graph at iteration `k`, cycling past the horizon.
    pub fn graph_at(&self, k: usize) -> &Graph {
        &self.graphs[k % self.graphs.len()]
    }

    /// First window start `k` (with `k + Q ≤ horizon`) whose union graph is disconnected.
    pub fn first_disconnected_window(&self, q: usize) -> Option<usize> {
        let q = q.max(1);
        let last = self.horizon().saturating_sub(q);
        (0..=last).find(|&k| {
            let edges = (k..k + q).flat_map(|t| self.graph_at(t).edges().iter().copied());
            !connected(self.n_nodes, edges)
        })
    }
}

/// Generates a schedule of `horizon` graphs on `n` nodes.
pub fn generate_schedule(
    kind: GraphKind,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<GraphSchedule> {
    if n < 2 {
        return Err(Error::InvalidParams(
            "a network needs at least two nodes".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let rng = CounterRng::new(seed);
    let q_window = match kind {
        GraphKind::RingSplit { q } if q == 0 => {
            return Err(Error::InvalidParams("RingSplit needs q ≥ 1".into()))
        }
        GraphKind::RingSplit { q } if n > 2 => q,
        GraphKind::Custom => {
            return Err(Error::InvalidParams(
                "custom schedules are built with from_graphs".into(),
            ))
        }
        _ => 1,
    };
    if let GraphKind::ErdosRenyiConnected { p } = kind {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParams(
                "edge probability must lie in (0, 1]".into(),
            ));
        }
    }
    if let GraphKind::SmallWorld {
        neighbors,
        rewire_prob,
    } = kind
    {
        if !(0.0..=1.0).contains(&rewire_prob) {
            return Err(Error::InvalidParams(
                "rewire probability must lie in [0, 1]".into(),
            ));
        }
        if n > 2 && (neighbors == 0 || neighbors % 2 != 0 || neighbors >= n) {
            return Err(Error::InvalidParams(format!(
                "small world needs an even neighbour count in [2, {n})"
            )));
        }
    }
    let graphs = if n == 2 {
        // Only one connected topology exists.
        vec![Graph::complete(2); horizon]
    } else {
        (0..horizon)
            .map(|k| match kind {
                GraphKind::SmallWorld {
                    neighbors,
                    rewire_prob,
                } => redraw_connected(n, |attempt| {
                    small_world(n, neighbors, rewire_prob, &rng, k, attempt)
                }),
                GraphKind::ErdosRenyiConnected { p } => {
                    redraw_connected(n, |attempt| erdos_renyi(n, p, &rng, k, attempt))
                }
                GraphKind::RingSplit { q } => Ok(ring_slot(n, q, k)),
                GraphKind::Complete => Ok(Graph::complete(n)),
                GraphKind::Custom => unreachable!(),
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(GraphSchedule {
        n_nodes: n,
        q_window,
        kind,
        seed,
        graphs,
    })
}

fn redraw_connected(n: usize, mut draw: impl FnMut(u64) -> Graph) -> Result<Graph> {
    for attempt in 0..MAX_REDRAWS {
        let g = draw(attempt);
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::InvalidParams(format!(
        "no connected graph on {n} nodes after {MAX_REDRAWS} draws"
    )))
}

fn stream_index(k: usize, attempt: u64) -> u64 {
    ((k as u64) << 16) | attempt
}

fn small_world(
    n: usize,
    neighbors: usize,
    p: f64,
    rng: &CounterRng,
    k: usize,
    attempt: u64,
) -> Graph {
    let mut r = rng.stream(FAMILY_GRAPH, stream_index(k, attempt));
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 1..=neighbors / 2 {
            let t = (i + j) % n;
            adj[i][t] = true;
            adj[t][i] = true;
        }
    }
    for j in 1..=neighbors / 2 {
        for i in 0..n {
            let t = (i + j) % n;
            if !adj[i][t] || r.random::<f64>() >= p {
                continue;
            }
            let free: Vec<usize> = (0..n).filter(|&c| c != i && !adj[i][c]).collect();
            if free.is_empty() {
                continue;
            }
            let c = free[r.random_range(0..free.len())];
            adj[i][t] = false;
            adj[t][i] = false;
            adj[i][c] = true;
            adj[c][i] = true;
        }
    }
    let edges = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| adj[i][j]);
    Graph {
        n,
        edges: edges.collect(),
    }
}

fn erdos_renyi(n: usize, p: f64, rng: &CounterRng, k: usize, attempt: u64) -> Graph {
    let mut r = rng.stream(FAMILY_GRAPH + 1, stream_index(k, attempt));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph { n, edges }
}

fn ring_slot(n: usize, q: usize, k: usize) -> Graph {
    let slot = k % q;
    let edges = (0..n).filter(|e| e % q == slot).map(|e| {
        let (a, b) = (e, (e + 1) % n);
        (a.min(b), a.max(b))
    });
    let mut edges: Vec<_> = edges.collect();
    edges.sort_unstable();
    edges.dedup();
    Graph { n, edges }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MixingVariant {
    /// `w_ij = 1/max{|N_i|, |N_j|}`; the diagonal can vanish on regular graphs.
    PaperExact,
    /// `w_ij = 1/(1 + max{|N_i|, |N_j|})`; the diagonal stays positive.
    #[default]
    SafeDiagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    pub weights: DMatrix<f64>,
    /// Smallest weight in use (edges and diagonal); zero entries on the diagonal count.
    pub epsilon: f64,
}

pub fn metropolis_weights(graph: &Graph, variant: MixingVariant) -> MixingMatrix {
    let n = graph.n_nodes();
    let deg = graph.degrees();
    let mut w = DMatrix::zeros(n, n);
    let extra = match variant {
        MixingVariant::PaperExact => 0.0,
        MixingVariant::SafeDiagonal => 1.0,
    };
    for &(i, j) in graph.edges() {
        let v = 1.0 / (extra + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    let epsilon = used_weight_min(&w, graph);
    MixingMatrix {
        weights: w,
        epsilon,
    }
}

fn used_weight_min(w: &DMatrix<f64>, graph: &Graph) -> f64 {
    let diag = (0..w.nrows())
        .map(|i| w[(i, i)])
        .fold(f64::INFINITY, f64::min);
    graph
        .edges()
        .iter()
        .map(|&(i, j)| w[(i, j)].min(w[(j, i)]))
        .fold(diag, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationReport {
    /// Every edge carries weight ≥ ε.
    pub edge_ok: bool,
    /// Every diagonal entry is ≥ ε.
    pub diag_ok: bool,
    /// Rows and columns sum to one.
    pub stochastic_ok: bool,
    /// Off-diagonal weight only on edges.
    pub support_ok: bool,
    pub max_stochasticity_error: f64,
    /// Largest ε the matrix satisfies.
    pub max_feasible_epsilon: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.edge_ok && self.diag_ok && self.stochastic_ok && self.support_ok
    }
}

pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Rounding allowance when comparing weights with ε (e.g. `1 − 4·(1/5)`).
const WEIGHT_TOL: f64 = 1e-12;

pub fn verify_mixing(w: &DMatrix<f64>, graph: &Graph, epsilon: f64) -> ValidationReport {
    let n = w.nrows();
    let mut support_ok = w.ncols() == n && graph.n_nodes() == n;
    let mut err: f64 = 0.0;
    if support_ok {
        for i in 0..n {
            for j in 0..n {
                if i != j && w[(i, j)] != 0.0 && !graph.has_edge(i, j) {
                    support_ok = false;
                }
            }
            let row: f64 = w.row(i).iter().sum();
            let col: f64 = w.column(i).iter().sum();
            err = err.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
    }
    let edge_min = graph
        .edges()
        .iter()
        .map(|&(i, j)| w[(i, j)].min(w[(j, i)]))
        .fold(f64::INFINITY, f64::min);
    let diag_min = (0..n).map(|i| w[(i, i)]).fold(f64::INFINITY, f64::min);
    ValidationReport {
        edge_ok: edge_min >= epsilon - WEIGHT_TOL,
        diag_ok: diag_min >= epsilon - WEIGHT_TOL && diag_min > 0.0,
        stochastic_ok: err <= STOCHASTIC_TOL,
        support_ok,
        max_stochasticity_error: err,
        max_feasible_epsilon: edge_min.min(diag_min).max(0.0),
    }
}

/// A source of mixing matrices indexed by iteration.
pub trait MixingSequence {
    fn n_nodes(&self) -> usize;
    fn mixing_at(&self, k: usize) -> Result<DMatrix<f64>>;
}

/// Metropolis weights of a schedule; optionally refuses to cycle past the horizon.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleMixing<'a> {
    pub schedule: &'a GraphSchedule,
    pub variant: MixingVariant,
    pub cycle: bool,
}

impl MixingSequence for ScheduleMixing<'_> {
    fn n_nodes(&self) -> usize {
        self.schedule.n_nodes()
    }
    fn mixing_at(&self, k: usize) -> Result<DMatrix<f64>> {
        if !self.cycle && k >= self.schedule.horizon() {
            return Err(Error::ScheduleExhausted {
                iteration: k,
                horizon: self.schedule.horizon(),
            });
        }
        Ok(metropolis_weights(self.schedule.graph_at(k), self.variant).weights)
    }
}

/// Mixing matrices produced by a closure.
pub struct FnMixing<F> {
    pub n_nodes: usize,
    pub f: F,
}

impl<F: Fn(usize) -> DMatrix<f64>> MixingSequence for FnMixing<F> {
    fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    fn mixing_at(&self, k: usize) -> Result<DMatrix<f64>> {
        Ok((self.f)(k))
    }
}

/// `Ψ(k, s) = W(k) W(k−1) ··· W(s)`.
pub fn transition_matrix(
    schedule: &GraphSchedule,
    variant: MixingVariant,
    k: usize,
    s: usize,
) -> Result<DMatrix<f64>> {
    if s > k || k >= schedule.horizon() {
        return Err(Error::RangeError(format!(
            "need s ≤ k < {}, got k={k}, s={s}",
            schedule.horizon()
        )));
    }
    let mut psi = metropolis_weights(schedule.graph_at(s), variant).weights;
    for t in s + 1..=k {
        psi = metropolis_weights(schedule.graph_at(t), variant).weights * psi;
    }
    Ok(psi)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecayCertificate {
    pub theta: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub q_window: usize,
    /// `(k, s, ‖Ψ(k,s) − 11ᵀ/N‖)`
    pub observed: Vec<(usize, usize, f64)>,
    pub violations: usize,
}

impl DecayCertificate {
    pub fn valid(&self) -> bool {
        self.violations == 0
    }

    pub fn bound(&self, gap: usize) -> f64 {
        self.theta * libm::pow(self.rho, gap as f64)
    }
}

/// `θ = N(1 − ε/(4N²))^{−2}`, `ρ = (1 − ε/(4N²))^{1/Q}`.
pub fn decay_constants(n: usize, epsilon: f64, q: usize) -> (f64, f64) {
    let base = 1.0 - epsilon / (4.0 * (n * n) as f64);
    (n as f64 / (base * base), libm::pow(base, 1.0 / q as f64))
}

/// Checks the mixing and window-connectivity assumptions over the whole
/// horizon, then compares `‖Ψ(k,s) − 11ᵀ/N‖` with `θρ^{k−s}` on the given
/// pairs.  With `epsilon = None` the largest ε valid for every iteration is used.
pub fn certify_decay(
    schedule: &GraphSchedule,
    variant: MixingVariant,
    epsilon: Option<f64>,
    q: usize,
    sample_pairs: &[(usize, usize)],
) -> Result<DecayCertificate> {
    let n = schedule.n_nodes();
    let mut feasible = f64::INFINITY;
    for k in 0..schedule.horizon() {
        let g = schedule.graph_at(k);
        let w = metropolis_weights(g, variant);
        let rep = verify_mixing(&w.weights, g, 0.0);
        if !(rep.stochastic_ok && rep.support_ok && rep.max_feasible_epsilon > 0.0) {
            return Err(Error::AssumptionViolated(format!(
                "mixing matrix at k={k} fails the weight conditions"
            )));
        }
        feasible = feasible.min(rep.max_feasible_epsilon);
    }
    let eps = epsilon.unwrap_or(feasible);
    if !(eps > 0.0) || eps > feasible + WEIGHT_TOL {
        return Err(Error::AssumptionViolated(format!(
            "ε = {eps} exceeds the largest valid value {feasible}"
        )));
    }
    if let Some(k) = schedule.first_disconnected_window(q) {
        return Err(Error::AssumptionViolated(format!(
            "union graph over [{k}, {}] is disconnected",
            k + q - 1
        )));
    }
    let (theta, rho) = decay_constants(n, eps, q);
    let avg = DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut observed = Vec::with_capacity(sample_pairs.len());
    let mut violations = 0;
    for &(k, s) in sample_pairs {
        let psi = transition_matrix(schedule, variant, k, s)?;
        let norm = (psi - &avg).singular_values().max();
        if norm > theta * libm::pow(rho, (k - s) as f64) {
            violations += 1;
        }
        observed.push((k, s, norm));
    }
    Ok(DecayCertificate {
        theta,
        rho,
        epsilon: eps,
        q_window: q,
        observed,
        violations,
    })
}

/// Deterministic `(k, s)` pairs with `s ≤ k < horizon` and `k − s ≤ max_gap`.
pub fn sample_pairs(
    horizon: usize,
    count: usize,
    max_gap: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let rng = CounterRng::new(seed);
    (0..count)
        .map(|t| {
            let mut r = rng.stream(FAMILY_GRAPH + 2, t as u64);
            let k = r.random_range(0..horizon);
            let gap = r.random_range(0..=max_gap.min(k));
            (k, k - gap)
        })
        .collect()
}
