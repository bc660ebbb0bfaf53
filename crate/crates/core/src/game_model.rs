//! Aggregative games with affine coupling constraints.
//!
//! Agent `i` chooses `x_i ∈ Ω_i ⊂ R^n` and pays `J_i(x_i, x̄)` where
//! `x̄ = (1/N) Σ_j x_j`.  The agents share the coupling constraint
//! `Σ_i C_i x_i ≤ Σ_i c_i`.  The quadratic family
//! `J_i = x_iᵀA_i x_i + b_iᵀx_i + (Δx̄)ᵀx_i` has an affine pseudo-gradient
//! `F(x) = Px + b`, which is what [`GameInstance`] stores.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, dot, POWER_MAX_ITER, POWER_TOL};
use crate::projection;
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.offset - dot(&self.normal, x)
    }
}

/// Shape of a local constraint set.  Every variant is bounded by an explicit box.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SetShape {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    BoxHalfspace {
        lower: Vec<f64>,
        upper: Vec<f64>,
        normal: Vec<f64>,
        offset: f64,
    },
    /// `{x : lower ≤ x ≤ upper, rowsᵢ·x ≤ offsetᵢ}`
    Polyhedron {
        rows: Vec<Halfspace>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl SetShape {
    pub fn bounds(&self) -> (&[f64], &[f64]) {
        match self {
            SetShape::Box { lower, upper }
            | SetShape::BoxHalfspace { lower, upper, .. }
            | SetShape::Polyhedron { lower, upper, .. } => (lower, upper),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds().0.len()
    }
}

/// A validated local set together with a stored strictly feasible point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSetDesc {
    shape: SetShape,
    interior_point: Vec<f64>,
}

pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_ITER: usize = 10_000;
pub const HALFSPACE_TOL: f64 = 1e-12;

impl LocalSetDesc {
    /// Validates the shape and constructs a strictly feasible point.
    pub fn new(shape: SetShape) -> Result<Self> {
        validate_shape(&shape)?;
        let (lower, upper) = shape.bounds();
        let mid: Vec<f64> = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect();
        let interior = match &shape {
            SetShape::Box { .. } => mid,
            SetShape::BoxHalfspace { normal, offset, .. } => {
                interior_box_halfspace(lower, upper, normal, *offset, mid)?
            }
            SetShape::Polyhedron { rows, .. } => {
                if rows.iter().all(|h| h.slack(&mid) > 0.0) {
                    mid
                } else {
                    return Err(Error::InvalidParams(
                        "polyhedron: box midpoint is not strictly feasible; supply an interior point".into(),
                    ));
                }
            }
        };
        Ok(Self {
            shape,
            interior_point: interior,
        })
    }

    /// Validates the shape and a caller-supplied strictly feasible point.
    pub fn with_interior(shape: SetShape, point: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        check_len(shape.dim(), point.len())?;
        let (lower, upper) = shape.bounds();
        let in_box = point
            .iter()
            .zip(lower.iter().zip(upper))
            .all(|(p, (l, u))| l <= p && p <= u);
        let rows_ok = match &shape {
            SetShape::Box { .. } => true,
            SetShape::BoxHalfspace { normal, offset, .. } => offset - dot(normal, &point) > 0.0,
            SetShape::Polyhedron { rows, .. } => rows.iter().all(|h| h.slack(&point) > 0.0),
        };
        if !(in_box && rows_ok) {
            return Err(Error::InvalidParams(
                "supplied point is not strictly feasible".into(),
            ));
        }
        Ok(Self {
            shape,
            interior_point: point,
        })
    }

    pub fn shape(&self) -> &SetShape {
        &self.shape
    }

    pub fn interior_point(&self) -> &[f64] {
        &self.interior_point
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        self.shape.bounds()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let (lower, upper) = self.bounds();
        if x.len() != lower.len() {
            return false;
        }
        let in_box = x
            .iter()
            .zip(lower.iter().zip(upper))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol);
        in_box
            && match &self.shape {
                SetShape::Box { .. } => true,
                SetShape::BoxHalfspace { normal, offset, .. } => dot(normal, x) <= offset + tol,
                SetShape::Polyhedron { rows, .. } => rows.iter().all(|h| h.slack(x) >= -tol),
            }
    }

    /// Euclidean projection of `y` onto the set.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; y.len()];
        self.project_into(y, &mut out)?;
        Ok(out)
    }

    pub fn project_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.dim(), y.len())?;
        match &self.shape {
            SetShape::Box { lower, upper } => {
                projection::clamp_into(y, lower, upper, out);
                Ok(())
            }
            SetShape::BoxHalfspace {
                lower,
                upper,
                normal,
                offset,
            } => projection::project_box_halfspace_into(
                y,
                lower,
                upper,
                normal,
                *offset,
                HALFSPACE_TOL,
                out,
            ),
            SetShape::Polyhedron { rows, lower, upper } => {
                let p = projection::dykstra(
                    y,
                    rows,
                    Some((lower, upper)),
                    DYKSTRA_TOL,
                    DYKSTRA_MAX_ITER,
                )?;
                out.copy_from_slice(&p);
                Ok(())
            }
        }
    }
}

fn validate_shape(shape: &SetShape) -> Result<()> {
    let (lower, upper) = shape.bounds();
    check_len(lower.len(), upper.len())?;
    for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
        if !(l.is_finite() && u.is_finite()) {
            return Err(Error::InvalidParams(format!("box bound {i} is not finite")));
        }
        if l > u {
            return Err(Error::InvalidBox { index: i });
        }
    }
    match shape {
        SetShape::Box { .. } => {}
        SetShape::BoxHalfspace { normal, offset, .. } => {
            check_len(lower.len(), normal.len())?;
            if !offset.is_finite() || normal.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams("halfspace is not finite".into()));
            }
        }
        SetShape::Polyhedron { rows, .. } => {
            for h in rows {
                check_len(lower.len(), h.normal.len())?;
                if !h.offset.is_finite() || h.normal.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParams("polyhedron row is not finite".into()));
                }
            }
        }
    }
    Ok(())
}

fn interior_box_halfspace(
    lower: &[f64],
    upper: &[f64],
    a: &[f64],
    b: f64,
    mid: Vec<f64>,
) -> Result<Vec<f64>> {
    // The box corner minimizing aᵀx.
    let corner: Vec<f64> = a
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(ai, (l, u))| if *ai > 0.0 { *l } else { *u })
        .collect();
    let amin = dot(a, &corner);
    if amin >= b {
        return Err(Error::InfeasibleSet);
    }
    let target = 0.5 * (amin + b);
    let amid = dot(a, &mid);
    if amid <= target {
        return Ok(mid);
    }
    let t = (amid - target) / (amid - amin);
    Ok(mid
        .iter()
        .zip(&corner)
        .map(|(m, c)| (1.0 - t) * m + t * c)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    /// `A_i`, symmetric positive semidefinite.
    pub quad_matrix: DMatrix<f64>,
    pub lin_vector: DVector<f64>,
    pub local_set: LocalSetDesc,
    /// `C_i`, `m × n`.
    pub coupling_block: DMatrix<f64>,
    pub coupling_offset: DVector<f64>,
}

/// How a Cournot instance was generated, kept for exact replay.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CournotOrigin {
    pub params: CournotParams,
    pub seed: u64,
}

/// The interface an iterative solver needs from a game.  Quadratic games
/// implement it through [`GameInstance`]; other smooth aggregative games
/// can implement it directly, in which case the regularity constants must
/// be supplied by the caller (see [`GameConstants::user_supplied`]).
pub trait AggregativeGame {
    fn n_agents(&self) -> usize;
    fn decision_dim(&self) -> usize;
    fn coupling_dim(&self) -> usize;
    fn local_set(&self, i: usize) -> &LocalSetDesc;
    fn coupling_block(&self, i: usize) -> &DMatrix<f64>;
    fn coupling_offset(&self, i: usize) -> &DVector<f64>;
    /// `F_i(v, w)`: gradient of `J_i` in its own decision with the aggregate replaced by `w`.
    fn partial_gradient(&self, i: usize, v: &[f64], w: &[f64], out: &mut [f64]);
    fn cost(&self, i: usize, own: &[f64], aggregate: &[f64]) -> f64;
    fn as_quadratic(&self) -> Option<&GameInstance> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    n_agents: usize,
    decision_dim: usize,
    coupling_dim: usize,
    agents: Vec<AgentSpec>,
    /// Diagonal of `Δ`, entries in {0, 1}.
    agg_coupling: Vec<f64>,
    slater_point: DVector<f64>,
    origin: Option<CournotOrigin>,
}

impl GameInstance {
    pub fn new(
        agents: Vec<AgentSpec>,
        agg_coupling: Vec<f64>,
        slater_point: DVector<f64>,
    ) -> Result<Self> {
        let n_agents = agents.len();
        if n_agents == 0 {
            return Err(Error::InvalidParams(
                "a game needs at least one agent".into(),
            ));
        }
        let n = agents[0].lin_vector.len();
        let m = agents[0].coupling_offset.len();
        check_len(n, agg_coupling.len())?;
        if agg_coupling.iter().any(|d| *d != 0.0 && *d != 1.0) {
            return Err(Error::InvalidParams(
                "aggregate coupling must be diagonal with 0/1 entries".into(),
            ));
        }
        for (i, a) in agents.iter().enumerate() {
            check_len(n, a.lin_vector.len())?;
            check_len(m, a.coupling_offset.len())?;
            if a.quad_matrix.shape() != (n, n) {
                return Err(Error::InvalidParams(format!(
                    "agent {i}: A_i must be {n}x{n}"
                )));
            }
            if a.coupling_block.shape() != (m, n) {
                return Err(Error::InvalidParams(format!(
                    "agent {i}: C_i must be {m}x{n}"
                )));
            }
            check_len(n, a.local_set.dim())?;
            let asym = (&a.quad_matrix - a.quad_matrix.transpose()).abs().max();
            if asym > 1e-12 * (1.0 + a.quad_matrix.abs().max()) {
                return Err(Error::InvalidParams(format!(
                    "agent {i}: A_i is not symmetric"
                )));
            }
            let scale = 1.0 + a.quad_matrix.abs().max();
            if n > 0 && linalg::min_eigenvalue_sym(&a.quad_matrix) < -1e-9 * scale {
                return Err(Error::InvalidParams(format!(
                    "agent {i}: A_i is not positive semidefinite"
                )));
            }
            let all_finite = a
                .quad_matrix
                .iter()
                .chain(a.lin_vector.iter())
                .chain(a.coupling_block.iter())
                .chain(a.coupling_offset.iter())
                .all(|v| v.is_finite());
            if !all_finite {
                return Err(Error::InvalidParams(format!("agent {i}: non-finite data")));
            }
        }
        check_len(n * n_agents, slater_point.len())?;
        let game = Self {
            n_agents,
            decision_dim: n,
            coupling_dim: m,
            agents,
            agg_coupling,
            slater_point,
            origin: None,
        };
        for i in 0..n_agents {
            if !game.agents[i]
                .local_set
                .contains(game.block(game.slater_point.as_slice(), i), 1e-12)
            {
                return Err(Error::InfeasibleInstance(format!(
                    "Slater point outside the local set of agent {i}"
                )));
            }
        }
        let viol = coupling_violation(&game, game.slater_point.as_slice())?;
        if m > 0 && !viol.iter().all(|v| *v < 0.0) {
            return Err(Error::InfeasibleInstance(
                "Slater point has no strict coupling slack".into(),
            ));
        }
        Ok(game)
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agg_coupling(&self) -> &[f64] {
        &self.agg_coupling
    }

    pub fn slater_point(&self) -> &DVector<f64> {
        &self.slater_point
    }

    pub fn origin(&self) -> Option<&CournotOrigin> {
        self.origin.as_ref()
    }

    /// Attaches generation metadata (kept for replay, not used numerically).
    pub fn with_origin(mut self, origin: CournotOrigin) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn primal_len(&self) -> usize {
        self.n_agents * self.decision_dim
    }

    pub fn stacked_dual_len(&self) -> usize {
        self.n_agents * self.coupling_dim
    }

    pub fn block<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[i * self.decision_dim..(i + 1) * self.decision_dim]
    }

    /// Matrix-free `P v` (the linear part of the pseudo-gradient).
    pub fn apply_p(&self, v: &[f64], out: &mut [f64]) {
        let n = self.decision_dim;
        let nn = self.n_agents as f64;
        let vbar = linalg::block_mean(v, self.n_agents);
        for i in 0..self.n_agents {
            let vi = &v[i * n..(i + 1) * n];
            let oi = &mut out[i * n..(i + 1) * n];
            linalg::matvec_into(&self.agents[i].quad_matrix, vi, oi);
            for j in 0..n {
                oi[j] = 2.0 * oi[j] + self.agg_coupling[j] * (vi[j] / nn + vbar[j]);
            }
        }
    }

    /// Dense `P = 2A + (1/N) I⊗Δ + (1/N) 11ᵀ⊗Δ`.
    pub fn assemble_p(&self) -> DMatrix<f64> {
        let n = self.decision_dim;
        let nn = self.n_agents;
        let mut p = DMatrix::zeros(n * nn, n * nn);
        for i in 0..nn {
            for r in 0..n {
                for c in 0..n {
                    p[(i * n + r, i * n + c)] += 2.0 * self.agents[i].quad_matrix[(r, c)];
                }
                p[(i * n + r, i * n + r)] += self.agg_coupling[r] / nn as f64;
                for j in 0..nn {
                    p[(i * n + r, j * n + r)] += self.agg_coupling[r] / nn as f64;
                }
            }
        }
        p
    }

    pub fn stacked_b(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.primal_len());
        for (i, a) in self.agents.iter().enumerate() {
            b.rows_mut(i * self.decision_dim, self.decision_dim)
                .copy_from(&a.lin_vector);
        }
        b
    }

    /// Dense `C = [C_1 … C_N]` and `c = Σ c_i`.
    pub fn assemble_coupling(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (n, m) = (self.decision_dim, self.coupling_dim);
        let mut c_mat = DMatrix::zeros(m, n * self.n_agents);
        let mut c_vec = DVector::zeros(m);
        for (i, a) in self.agents.iter().enumerate() {
            c_mat
                .view_mut((0, i * n), (m, n))
                .copy_from(&a.coupling_block);
            c_vec += &a.coupling_offset;
        }
        (c_mat, c_vec)
    }
}

impl AggregativeGame for GameInstance {
    fn n_agents(&self) -> usize {
        self.n_agents
    }
    fn decision_dim(&self) -> usize {
        self.decision_dim
    }
    fn coupling_dim(&self) -> usize {
        self.coupling_dim
    }
    fn local_set(&self, i: usize) -> &LocalSetDesc {
        &self.agents[i].local_set
    }
    fn coupling_block(&self, i: usize) -> &DMatrix<f64> {
        &self.agents[i].coupling_block
    }
    fn coupling_offset(&self, i: usize) -> &DVector<f64> {
        &self.agents[i].coupling_offset
    }
    fn partial_gradient(&self, i: usize, v: &[f64], w: &[f64], out: &mut [f64]) {
        let a = &self.agents[i];
        let nn = self.n_agents as f64;
        linalg::matvec_into(&a.quad_matrix, v, out);
        for j in 0..self.decision_dim {
            out[j] = 2.0 * out[j] + self.agg_coupling[j] * (v[j] / nn + w[j]) + a.lin_vector[j];
        }
    }
    fn cost(&self, i: usize, own: &[f64], aggregate: &[f64]) -> f64 {
        let a = &self.agents[i];
        let mut ax = vec![0.0; self.decision_dim];
        linalg::matvec_into(&a.quad_matrix, own, &mut ax);
        let mut s = dot(own, &ax) + dot(a.lin_vector.as_slice(), own);
        for j in 0..self.decision_dim {
            s += self.agg_coupling[j] * aggregate[j] * own[j];
        }
        s
    }
    fn as_quadratic(&self) -> Option<&GameInstance> {
        Some(self)
    }
}

/// Stacked pseudo-gradient `F(x) = col(∇_{x_i} J_i(x_i, x̄))`.
pub fn pseudo_gradient<G: AggregativeGame + ?Sized>(game: &G, x: &[f64]) -> Result<DVector<f64>> {
    let (nn, n) = (game.n_agents(), game.decision_dim());
    check_len(nn * n, x.len())?;
    let xbar = linalg::block_mean(x, nn);
    let mut out = DVector::zeros(nn * n);
    for i in 0..nn {
        game.partial_gradient(
            i,
            &x[i * n..(i + 1) * n],
            &xbar,
            &mut out.as_mut_slice()[i * n..(i + 1) * n],
        );
    }
    Ok(out)
}

/// Extended pseudo-gradient: component `i` is `F_i(v_i, w_i)`.
pub fn extended_pseudo_gradient<G: AggregativeGame + ?Sized>(
    game: &G,
    v: &[f64],
    w: &[f64],
) -> Result<DVector<f64>> {
    let (nn, n) = (game.n_agents(), game.decision_dim());
    check_len(nn * n, v.len())?;
    check_len(nn * n, w.len())?;
    let mut out = DVector::zeros(nn * n);
    for i in 0..nn {
        let r = i * n..(i + 1) * n;
        game.partial_gradient(i, &v[r.clone()], &w[r.clone()], &mut out.as_mut_slice()[r]);
    }
    Ok(out)
}

/// `Cx − c = Σ_i (C_i x_i − c_i)`.
pub fn coupling_violation<G: AggregativeGame + ?Sized>(
    game: &G,
    x: &[f64],
) -> Result<DVector<f64>> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    check_len(nn * n, x.len())?;
    let mut out = DVector::zeros(m);
    let mut tmp = vec![0.0; m];
    for i in 0..nn {
        linalg::matvec_into(game.coupling_block(i), &x[i * n..(i + 1) * n], &mut tmp);
        for l in 0..m {
            out[l] += tmp[l] - game.coupling_offset(i)[l];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GameConstants {
    /// `‖P‖`
    pub p_norm: f64,
    /// Cocoercivity constant `χ = 1/‖P‖`.
    pub coco: f64,
    /// Lipschitz constant of the extended pseudo-gradient in `(v, w)`.
    pub lip_epg: f64,
    /// `δ = min{1, χ}`
    pub delta: f64,
    /// `1/(2δ)`
    pub tau_min: f64,
    pub coupling_norms: Vec<f64>,
    pub coupling_norm_mean: f64,
    /// Smallest eigenvalue of `sym(P)`; positive means strongly monotone.
    pub monotonicity: f64,
}

impl GameConstants {
    /// Constants for games without an affine pseudo-gradient.
    pub fn user_supplied<G: AggregativeGame + ?Sized>(
        game: &G,
        coco: f64,
        lip_epg: f64,
        monotonicity: f64,
    ) -> Result<Self> {
        if !(coco > 0.0 && lip_epg > 0.0) {
            return Err(Error::InvalidParams("constants must be positive".into()));
        }
        let coupling_norms = coupling_norms(game);
        let coupling_norm_mean = coupling_norms.iter().sum::<f64>() / coupling_norms.len() as f64;
        let delta = coco.min(1.0);
        Ok(Self {
            p_norm: 1.0 / coco,
            coco,
            lip_epg,
            delta,
            tau_min: 0.5 / delta,
            coupling_norms,
            coupling_norm_mean,
            monotonicity,
        })
    }

    pub fn coupling_norm_max(&self) -> f64 {
        self.coupling_norms.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn coupling_norms<G: AggregativeGame + ?Sized>(game: &G) -> Vec<f64> {
    (0..game.n_agents())
        .map(|i| linalg::spectral_norm(game.coupling_block(i)))
        .collect()
}

/// Regularity constants of a quadratic game.
pub fn constants<G: AggregativeGame + ?Sized>(game: &G) -> Result<GameConstants> {
    let q = game.as_quadratic().ok_or(Error::NotSupported(
        "constants need an affine pseudo-gradient; use GameConstants::user_supplied",
    ))?;
    let dim = q.primal_len();
    let p_norm =
        linalg::power_iteration(dim, |v, out| q.apply_p(v, out), POWER_TOL, POWER_MAX_ITER);
    let shift = p_norm * (1.0 + 1e-6);
    let mut pv = vec![0.0; dim];
    let top = linalg::power_iteration(
        dim,
        |v, out| {
            q.apply_p(v, &mut pv);
            for j in 0..dim {
                out[j] = shift * v[j] - pv[j];
            }
        },
        1e-13,
        50 * POWER_MAX_ITER,
    );
    let monotonicity = shift - top;
    // The Jacobian of F_i(v_i, w_i) in (v_i, w_i) is [2A_i + Δ/N | Δ]; the
    // Lipschitz constant is the largest spectral norm of these blocks.
    let n = q.decision_dim;
    let nn = q.n_agents as f64;
    let mut lip_epg: f64 = 0.0;
    for a in &q.agents {
        let mut jac = DMatrix::zeros(n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                jac[(r, c)] = 2.0 * a.quad_matrix[(r, c)];
            }
            jac[(r, r)] += q.agg_coupling[r] / nn;
            jac[(r, n + r)] = q.agg_coupling[r];
        }
        lip_epg = lip_epg.max(linalg::spectral_norm(&jac));
    }
    let coupling_norms = coupling_norms(q);
    let coupling_norm_mean = coupling_norms.iter().sum::<f64>() / coupling_norms.len() as f64;
    let coco = 1.0 / p_norm;
    let delta = coco.min(1.0);
    Ok(GameConstants {
        p_norm,
        coco,
        lip_epg,
        delta,
        tau_min: 0.5 / delta,
        coupling_norms,
        coupling_norm_mean,
        monotonicity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }
    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Market capacity range, either absolute or as a multiple of the market's demand.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum CapacityRange {
    Absolute { lo: f64, hi: f64 },
    DemandMultiple { lo: f64, hi: f64 },
}

/// Parameter ranges of a network Nash–Cournot game with `N` firms and `m` markets.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CournotParams {
    pub n_firms: usize,
    pub n_markets: usize,
    /// Production cost curvature.
    pub a: Range,
    /// Production cost slope.
    pub b: Range,
    /// Production capacity per firm and market.
    pub u: Range,
    /// Market demand.
    pub d: Range,
    /// Market capacity.
    pub r: CapacityRange,
}

impl CournotParams {
    /// 20 firms, 10 markets; `a ~ U(2,3)`, `b ~ U(2,12)`, `u ~ U(50,100)`,
    /// `d ~ U(90,100)`, `r ~ U(d, 2d)`.
    pub fn benchmark() -> Self {
        Self {
            n_firms: 20,
            n_markets: 10,
            a: Range::new(2.0, 3.0),
            b: Range::new(2.0, 12.0),
            u: Range::new(50.0, 100.0),
            d: Range::new(90.0, 100.0),
            r: CapacityRange::DemandMultiple { lo: 1.0, hi: 2.0 },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_firms == 0 || self.n_markets == 0 {
            return Err(Error::InvalidParams(
                "need at least one firm and one market".into(),
            ));
        }
        for (name, r) in [("a", self.a), ("b", self.b), ("u", self.u), ("d", self.d)] {
            if !r.valid() {
                return Err(Error::InvalidParams(format!(
                    "range {name} is not a valid interval"
                )));
            }
        }
        if self.a.lo <= 0.0 {
            return Err(Error::InvalidParams(
                "range a must be strictly positive".into(),
            ));
        }
        if self.u.lo < 0.0 || self.d.lo < 0.0 {
            return Err(Error::InvalidParams(
                "capacities and demands must be nonnegative".into(),
            ));
        }
        let (lo, hi) = match self.r {
            CapacityRange::Absolute { lo, hi } | CapacityRange::DemandMultiple { lo, hi } => {
                (lo, hi)
            }
        };
        if !Range::new(lo, hi).valid() {
            return Err(Error::InvalidParams(
                "range r is not a valid interval".into(),
            ));
        }
        Ok(())
    }
}

const FAMILY_A: u32 = 1;
const FAMILY_B: u32 = 2;
const FAMILY_U: u32 = 3;
const FAMILY_D: u32 = 4;
const FAMILY_R: u32 = 5;

/// Builds a randomized Nash–Cournot instance.
///
/// Firm `i` decides production `g_i ∈ R^m` and sales `s_i ∈ R^m`
/// (`x_i = (g_i, s_i)`).  Prices depend on average sales, and total
/// production in every market must lie between demand `d_l` and capacity `r_l`.
pub fn build_cournot(params: &CournotParams, seed: u64) -> Result<GameInstance> {
    params.validate()?;
    let (nn, m) = (params.n_firms, params.n_markets);
    let n = 2 * m;
    let g = CounterRng::new(seed);
    let d: Vec<f64> = (0..m)
        .map(|l| g.uniform(FAMILY_D, l as u64, params.d.lo, params.d.hi))
        .collect();
    let r: Vec<f64> = (0..m)
        .map(|l| match params.r {
            CapacityRange::Absolute { lo, hi } => g.uniform(FAMILY_R, l as u64, lo, hi),
            CapacityRange::DemandMultiple { lo, hi } => {
                g.uniform(FAMILY_R, l as u64, lo * d[l], hi * d[l])
            }
        })
        .collect();
    let idx = |i: usize, l: usize| (i * m + l) as u64;
    let u: Vec<Vec<f64>> = (0..nn)
        .map(|i| {
            (0..m)
                .map(|l| g.uniform(FAMILY_U, idx(i, l), params.u.lo, params.u.hi))
                .collect()
        })
        .collect();
    let total_u: Vec<f64> = (0..m).map(|l| (0..nn).map(|i| u[i][l]).sum()).collect();
    for l in 0..m {
        let cap = r[l].min(total_u[l]);
        if d[l] >= cap {
            return Err(Error::InfeasibleInstance(format!(
                "market {l}: demand {} is not below min(capacity {}, total production capacity {})",
                d[l], r[l], total_u[l]
            )));
        }
    }

    let mut agents = Vec::with_capacity(nn);
    let mut slater = DVector::zeros(nn * n);
    for i in 0..nn {
        let mut a_mat = DMatrix::zeros(n, n);
        let mut b_vec = DVector::zeros(n);
        for l in 0..m {
            a_mat[(l, l)] = g.uniform(FAMILY_A, idx(i, l), params.a.lo, params.a.hi);
            b_vec[l] = g.uniform(FAMILY_B, idx(i, l), params.b.lo, params.b.hi);
            b_vec[m + l] = -d[l];
        }
        let mut c_mat = DMatrix::zeros(n, n);
        let mut c_off = DVector::zeros(n);
        for l in 0..m {
            c_mat[(l, l)] = 1.0;
            c_mat[(m + l, l)] = -1.0;
            c_off[l] = r[l] / nn as f64;
            c_off[m + l] = -d[l] / nn as f64;
        }
        let sum_u: f64 = u[i].iter().sum();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut normal = vec![0.0; n];
        for l in 0..m {
            upper[l] = u[i][l];
            upper[m + l] = sum_u;
            normal[l] = -1.0;
            normal[m + l] = 1.0;
            lower[l] = 0.0;
            lower[m + l] = 0.0;
        }
        // Proportional split of a total production strictly between demand and capacity.
        let mut point = vec![0.0; n];
        for l in 0..m {
            let target = 0.5 * (d[l] + r[l].min(total_u[l]));
            point[l] = target * u[i][l] / total_u[l];
            point[m + l] = 0.5 * point[l];
        }
        slater.rows_mut(i * n, n).copy_from_slice(&point);
        let shape = SetShape::BoxHalfspace {
            lower,
            upper,
            normal,
            offset: 0.0,
        };
        let local_set = LocalSetDesc::new(shape)?;
        agents.push(AgentSpec {
            quad_matrix: a_mat,
            lin_vector: b_vec,
            local_set,
            coupling_block: c_mat,
            coupling_offset: c_off,
        });
    }
    let mut delta = vec![0.0; n];
    delta[m..].iter_mut().for_each(|v| *v = 1.0);
    let mut game = GameInstance::new(agents, delta, slater)?;
    game.origin = Some(CournotOrigin {
        params: *params,
        seed,
    });
    Ok(game)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_params(n_firms: usize, a: f64, b: f64, u: f64, d: f64, r: f64) -> CournotParams {
        CournotParams {
            n_firms,
            n_markets: 1,
            a: Range::point(a),
            b: Range::point(b),
            u: Range::point(u),
            d: Range::point(d),
            r: CapacityRange::Absolute { lo: r, hi: r },
        }
    }

    fn single_firm() -> GameInstance {
        build_cournot(&point_params(1, 2.0, 5.0, 100.0, 90.0, 120.0), 0).unwrap()
    }

    fn random_feasible(game: &GameInstance, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = Vec::new();
        for i in 0..game.n_agents() {
            let set = game.local_set(i);
            let (lo, hi) = set.bounds();
            let y: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect();
            x.extend(set.project(&y).unwrap());
        }
        x
    }

    #[test]
    fn single_firm_data() {
        let g = single_firm();
        let a = &g.agents()[0];
        assert_eq!(
            a.quad_matrix,
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])
        );
        assert_eq!(a.lin_vector.as_slice(), &[5.0, -90.0]);
        assert_eq!(a.coupling_offset.as_slice(), &[120.0, -90.0]);
        assert_eq!(g.agg_coupling(), &[0.0, 1.0]);
    }

    #[test]
    fn single_firm_pseudo_gradient() {
        let g = single_firm();
        let f = pseudo_gradient(&g, &[1.0, 1.0]).unwrap();
        assert_eq!(f.as_slice(), &[9.0, -88.0]);
        let e = extended_pseudo_gradient(&g, &[1.0, 1.0], &[0.0, 3.0]).unwrap();
        assert_eq!(e.as_slice(), &[9.0, -86.0]);
        let at0 = pseudo_gradient(&g, &[0.0, 0.0]).unwrap();
        assert_eq!(at0, g.stacked_b());
    }

    #[test]
    fn single_firm_constants() {
        // P = 2A + 2Δ = diag(4, 2)
        let c = constants(&single_firm()).unwrap();
        assert!((c.p_norm - 4.0).abs() < 1e-9);
        assert!((c.coco - 0.25).abs() < 1e-10);
        assert!((c.delta - 0.25).abs() < 1e-10);
        assert!((c.tau_min - 2.0).abs() < 1e-9);
        assert!((c.monotonicity - 2.0).abs() < 1e-6);
        assert!((c.coupling_norms[0] - core::f64::consts::SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn infeasible_capacity_rejected() {
        let p = point_params(2, 2.0, 5.0, 40.0, 90.0, 200.0);
        assert!(matches!(
            build_cournot(&p, 0),
            Err(Error::InfeasibleInstance(_))
        ));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut p = CournotParams::benchmark();
        p.a = Range::new(0.0, 1.0);
        assert!(matches!(build_cournot(&p, 0), Err(Error::InvalidParams(_))));
        let mut p = CournotParams::benchmark();
        p.b = Range::new(3.0, 1.0);
        assert!(matches!(build_cournot(&p, 0), Err(Error::InvalidParams(_))));
        let mut p = CournotParams::benchmark();
        p.n_markets = 0;
        assert!(build_cournot(&p, 0).is_err());
    }

    #[test]
    fn benchmark_instance_is_valid_and_deterministic() {
        let p = CournotParams::benchmark();
        let g1 = build_cournot(&p, 42).unwrap();
        let g2 = build_cournot(&p, 42).unwrap();
        assert_eq!(g1, g2);
        assert_ne!(g1, build_cournot(&p, 43).unwrap());
        assert_eq!(g1.primal_len(), 400);
        assert_eq!(g1.coupling_dim(), 20);
        for a in g1.agents() {
            for l in 0..10 {
                let al = a.quad_matrix[(l, l)];
                assert!((2.0..=3.0).contains(&al));
                assert!((2.0..=12.0).contains(&a.lin_vector[l]));
                let d = -a.lin_vector[10 + l];
                assert!((90.0..=100.0).contains(&d));
                let r = a.coupling_offset[l] * 20.0;
                assert!(r >= d - 1e-9 && r <= 2.0 * d + 1e-9);
            }
        }
        let viol = coupling_violation(&g1, g1.slater_point().as_slice()).unwrap();
        assert!(viol.iter().all(|v| *v < 0.0));
    }

    #[test]
    fn coupling_violation_rows() {
        let p = CournotParams {
            n_firms: 3,
            n_markets: 2,
            ..CournotParams::benchmark()
        };
        let g = build_cournot(&p, 5).unwrap();
        let zero = vec![0.0; g.primal_len()];
        let v = coupling_violation(&g, &zero).unwrap();
        let (_, c) = g.assemble_coupling();
        for l in 0..2 {
            assert!((v[l] + c[l]).abs() < 1e-12);
            assert!(v[2 + l] > 0.0);
        }
        // total production equal to the market capacity saturates the upper row
        let r0 = c[0];
        let mut x = zero.clone();
        for i in 0..3 {
            x[i * 4] = r0 / 3.0;
        }
        let v = coupling_violation(&g, &x).unwrap();
        assert!(v[0].abs() < 1e-12);
    }

    #[test]
    fn finite_difference_gradient() {
        let g = build_cournot(&CournotParams::benchmark(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_feasible(&g, &mut rng);
        let f = pseudo_gradient(&g, &x).unwrap();
        let n = g.decision_dim();
        for i in [0usize, 7, 19] {
            for j in 0..n {
                let h = 1e-5;
                let cost_at = |delta: f64| {
                    let mut y = x.clone();
                    y[i * n + j] += delta;
                    let ybar = linalg::block_mean(&y, g.n_agents());
                    g.cost(i, g.block(&y, i), &ybar)
                };
                let fd = (cost_at(h) - cost_at(-h)) / (2.0 * h);
                let exact = f[i * n + j];
                assert!(
                    (fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()),
                    "{fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn dense_p_matches_matrix_free() {
        let p = CournotParams {
            n_firms: 4,
            n_markets: 3,
            ..CournotParams::benchmark()
        };
        let g = build_cournot(&p, 1).unwrap();
        let dense = g.assemble_p();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..g.primal_len())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let mut out = vec![0.0; v.len()];
        g.apply_p(&v, &mut out);
        let expect = &dense * DVector::from_vec(v.clone());
        assert!(linalg::dist2(&out, expect.as_slice()) < 1e-12);
        let f = pseudo_gradient(&g, &v).unwrap() - g.stacked_b();
        assert!((f - expect).norm() < 1e-12);
        let eig = dense.symmetric_eigenvalues();
        let c = constants(&g).unwrap();
        assert!((eig.max() - c.p_norm).abs() < 1e-8 * c.p_norm);
        assert!((eig.min() - c.monotonicity).abs() < 1e-7);
    }

    #[test]
    fn interior_points_are_strict() {
        let g = build_cournot(&CournotParams::benchmark(), 8).unwrap();
        for i in 0..g.n_agents() {
            let set = g.local_set(i);
            let p = set.interior_point();
            let (lo, hi) = set.bounds();
            assert!(p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| l < v && v < h));
            if let SetShape::BoxHalfspace { normal, offset, .. } = set.shape() {
                assert!(dot(normal, p) < *offset);
            }
        }
    }

    #[test]
    fn infeasible_halfspace_in_box() {
        let shape = SetShape::BoxHalfspace {
            lower: vec![1.0, 1.0],
            upper: vec![2.0, 2.0],
            normal: vec![1.0, 1.0],
            offset: 1.0,
        };
        assert_eq!(LocalSetDesc::new(shape), Err(Error::InfeasibleSet));
        let shape = SetShape::Box {
            lower: vec![1.0, 3.0],
            upper: vec![2.0, 2.0],
        };
        assert_eq!(
            LocalSetDesc::new(shape),
            Err(Error::InvalidBox { index: 1 })
        );
    }

    #[test]
    fn general_game_constants_need_overrides() {
        struct Wrap(GameInstance);
        impl AggregativeGame for Wrap {
            fn n_agents(&self) -> usize {
                self.0.n_agents()
            }
            fn decision_dim(&self) -> usize {
                self.0.decision_dim()
            }
            fn coupling_dim(&self) -> usize {
                self.0.coupling_dim()
            }
            fn local_set(&self, i: usize) -> &LocalSetDesc {
                self.0.local_set(i)
            }
            fn coupling_block(&self, i: usize) -> &DMatrix<f64> {
                self.0.coupling_block(i)
            }
            fn coupling_offset(&self, i: usize) -> &DVector<f64> {
                self.0.coupling_offset(i)
            }
            fn partial_gradient(&self, i: usize, v: &[f64], w: &[f64], out: &mut [f64]) {
                self.0.partial_gradient(i, v, w, out)
            }
            fn cost(&self, i: usize, own: &[f64], agg: &[f64]) -> f64 {
                self.0.cost(i, own, agg)
            }
        }
        let w = Wrap(single_firm());
        assert!(matches!(constants(&w), Err(Error::NotSupported(_))));
        let c = GameConstants::user_supplied(&w, 0.25, 4.0, 2.0).unwrap();
        assert_eq!(c.delta, 0.25);
        assert_eq!(
            pseudo_gradient(&w, &[1.0, 1.0]).unwrap().as_slice(),
            &[9.0, -88.0]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn epg_consistency(seed in 0u64..1000) {
            let p = CournotParams { n_firms: 5, n_markets: 2, ..CournotParams::benchmark() };
            let g = build_cournot(&p, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_feasible(&g, &mut rng);
            let xbar = linalg::block_mean(&x, 5);
            let w: Vec<f64> = (0..5).flat_map(|_| xbar.clone()).collect();
            let a = extended_pseudo_gradient(&g, &x, &w).unwrap();
            let b = pseudo_gradient(&g, &x).unwrap();
            prop_assert!((a - b).amax() <= 1e-12);
        }

        #[test]
        fn monotone_and_cocoercive(seed in 0u64..1000) {
            let p = CournotParams { n_firms: 4, n_markets: 3, ..CournotParams::benchmark() };
            let g = build_cournot(&p, seed % 7).unwrap();
            let c = constants(&g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_feasible(&g, &mut rng);
            let y = random_feasible(&g, &mut rng);
            let df = pseudo_gradient(&g, &x).unwrap() - pseudo_gradient(&g, &y).unwrap();
            let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let inner = dot(df.as_slice(), &dx);
            let nx = norm2(&dx);
            prop_assert!(inner >= c.monotonicity * nx * nx * (1.0 - 1e-9) - 1e-9);
            prop_assert!(inner >= c.coco * df.norm_squared() * (1.0 - 1e-9) - 1e-9);
        }

        #[test]
        fn epg_lipschitz(seed in 0u64..1000) {
            let p = CournotParams { n_firms: 4, n_markets: 3, ..CournotParams::benchmark() };
            let g = build_cournot(&p, seed % 5).unwrap();
            let c = constants(&g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = g.primal_len();
            let mut draw = || -> Vec<f64> { (0..len).map(|_| 100.0 * (rng.random::<f64>() - 0.5)).collect() };
            let (v, w, u, z) = (draw(), draw(), draw(), draw());
            let lhs = (extended_pseudo_gradient(&g, &v, &w).unwrap() - extended_pseudo_gradient(&g, &u, &z).unwrap()).norm();
            let d: f64 = v.iter().zip(&u).chain(w.iter().zip(&z)).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!(lhs <= c.lip_epg * libm::sqrt(d) * (1.0 + 1e-9));
        }
    }
}
