//! The three equilibrium-seeking iterations and their relaxation schedules.
//!
//! * [`run_algorithm1`]: semi-decentralized; a central node holds one
//!   multiplier and broadcasts it.
//! * [`run_algorithm2`]: distributed with full decision information; every
//!   agent keeps a multiplier copy and sees the exact averages.
//! * [`run_algorithm3`]: distributed with partial information; the averages
//!   `x̄`, `d̄`, `λ̄` are replaced by dynamic-tracking estimates `σ`, `y`, `z`
//!   mixed over a time-varying network.
//!
//! Traces hold one record per visited iterate `ω^0, …, ω^K`; the record of
//! `ω^k` also carries the diagnostics of the step taken from it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::diagnostics::{tracking_invariance, TrackingErrors};
use crate::error::{check_len, Error, Result};
use crate::game_model::{AggregativeGame, GameConstants};
use crate::linalg::{self, block_mean, matvec_into, matvec_t_add};
use crate::network::MixingSequence;
use crate::operators::{
    coupling_sum, full_information_candidate, kkt_residual, offset_mean, phi_norm, StackedPoint,
    StepSizes,
};

/// Relaxation sequence `γ^k`, `k = 0, 1, …`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum GammaSchedule {
    /// `γ^k = (k+1)^{−b}`, i.e. `1, 2^{−b}, 3^{−b}, …`
    PowerLaw {
        b: f64,
    },
    Constant {
        value: f64,
    },
    /// Explicit values; the last one repeats.
    Custom {
        values: Vec<f64>,
    },
}

impl GammaSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            GammaSchedule::PowerLaw { b } => libm::pow((k + 1) as f64, -b),
            GammaSchedule::Constant { value } => *value,
            GammaSchedule::Custom { values } => values[k.min(values.len() - 1)],
        }
    }

    /// Whether the schedule is non-increasing, non-summable and square-summable.
    pub fn is_diminishing(&self) -> bool {
        match self {
            GammaSchedule::PowerLaw { b } => *b > 0.5 && *b <= 1.0,
            GammaSchedule::Constant { .. } => false,
            // A finite list ending in a repeated positive value is not square-summable.
            GammaSchedule::Custom { values } => {
                values.last().is_some_and(|v| *v == 0.0) && values.windows(2).all(|w| w[1] <= w[0])
            }
        }
    }

    pub fn validate(&self, nu: f64) -> Result<()> {
        match self {
            GammaSchedule::PowerLaw { b } => {
                if !(*b > 0.5 && *b <= 1.0) {
                    return Err(Error::InvalidGamma(format!(
                        "power-law exponent {b} must lie in (1/2, 1] for a non-summable, square-summable schedule"
                    )));
                }
            }
            GammaSchedule::Constant { value } => {
                if !(*value >= 0.0 && *value <= 1.0 / nu) {
                    return Err(Error::InvalidGamma(format!(
                        "constant relaxation {value} must lie in [0, 1/ν] = [0, {}]",
                        1.0 / nu
                    )));
                }
            }
            GammaSchedule::Custom { values } => {
                if values.is_empty() || values.iter().any(|v| !(*v >= 0.0 && *v <= 1.0 / nu)) {
                    return Err(Error::InvalidGamma(format!(
                        "custom relaxation values must lie in [0, 1/ν] = [0, {}]",
                        1.0 / nu
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub steps: StepSizes,
    pub gamma: GammaSchedule,
}

pub fn make_step_plan(
    constants: &GameConstants,
    tau_margin: f64,
    gamma: GammaSchedule,
) -> Result<StepPlan> {
    let steps = StepSizes::from_constants(constants, tau_margin)?;
    gamma.validate(steps.nu)?;
    Ok(StepPlan { steps, gamma })
}

/// `current + γ(candidate − current)`
pub fn km_step(current: &[f64], candidate: &[f64], gamma: f64) -> Vec<f64> {
    current
        .iter()
        .zip(candidate)
        .map(|(c, t)| c + gamma * (t - c))
        .collect()
}

fn km_in_place(current: &mut DVector<f64>, candidate: &DVector<f64>, gamma: f64) {
    for (c, t) in current.iter_mut().zip(candidate.iter()) {
        *c += gamma * (t - *c);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub max_iter: usize,
    /// Stop once the convergence metric of the algorithm drops to this value
    /// (KKT residual for 1 and 3, `‖R(ω) − ω‖_Φ` for 2).
    pub tol: Option<f64>,
    /// Reference primal `x*` for the normalized residual.
    pub reference: Option<DVector<f64>>,
    /// Keep every `snapshot_every`-th iterate (0 keeps none).
    pub snapshot_every: usize,
    /// Upper bound on every multiplier entry (algorithm 3).
    pub dual_cap: Option<f64>,
    /// Permit non-diminishing relaxation in algorithm 3.
    pub unsafe_gamma: bool,
    /// Reuse the graph schedule cyclically past its horizon.
    pub cycle_schedule: bool,
    /// Compute the KKT residual in every record (otherwise only where needed).
    pub record_kkt: bool,
    /// Dual step of the central node in algorithm 1.
    pub central_step: CentralStep,
}

/// Dual step of the central multiplier update in algorithm 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CentralStep {
    /// `(Σ_j ‖C_j‖ + τ)⁻¹`, which keeps the centralized preconditioner
    /// positive definite.
    #[default]
    Gershgorin,
    /// `min_i β_i`, the smallest per-agent dual step.
    MinAgent,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: None,
            reference: None,
            snapshot_every: 0,
            dual_cap: None,
            unsafe_gamma: false,
            cycle_schedule: true,
            record_kkt: true,
            central_step: CentralStep::Gershgorin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AlgorithmId {
    SemiDecentralized,
    FullInformation,
    PartialInformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TerminalStatus {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceRecord {
    pub k: usize,
    /// Natural KKT residual at `(x^k, λ̄^k)` (NaN when not recorded).
    pub kkt_residual: f64,
    /// `‖x^k − x*‖ / ‖x^0 − x*‖`
    pub norm_residual: Option<f64>,
    /// `‖(L⊗I_m)λ^k‖`
    pub consensus_dual: f64,
    pub lambda_norm: f64,
    /// Relaxation used by the step from `ω^k`.
    pub gamma: Option<f64>,
    /// `‖x̃^k − x^k‖`
    pub primal_step: Option<f64>,
    /// `‖λ̃^k − λ^k‖`
    pub dual_step: Option<f64>,
    /// `‖R(ω^k) − ω^k‖_Φ` (algorithm 2)
    pub fixed_point_residual: Option<f64>,
    pub tracking: Option<TrackingErrors>,
    /// Distance between the tracking candidate and the full-information one.
    pub err_norm: Option<f64>,
    /// `Σ_{t≤k} γ^t ‖e^t‖`
    pub partial_sum_gamma_err: Option<f64>,
    /// Mean-tracking residuals of `σ^k`, `y^k`, `z^k`.
    pub invariance: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algorithm: AlgorithmId,
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<(usize, StackedPoint)>,
    pub status: TerminalStatus,
    /// Number of steps taken.
    pub iterations: usize,
    /// Final iterate; the dual is shared (`m`) for algorithm 1 and stacked otherwise.
    pub final_point: StackedPoint,
    pub final_state: Option<IterateState>,
    /// `‖y^0‖` (algorithm 3).
    pub y0_norm: Option<f64>,
}

impl RunTrace {
    /// Final primal iterate.
    pub fn x(&self) -> &DVector<f64> {
        &self.final_point.x
    }
}

struct Recorder<'a> {
    reference: Option<&'a DVector<f64>>,
    initial_dist: f64,
    snapshot_every: usize,
    records: Vec<TraceRecord>,
    snapshots: Vec<(usize, StackedPoint)>,
}

impl<'a> Recorder<'a> {
    fn new(reference: Option<&'a DVector<f64>>, x0: &DVector<f64>, snapshot_every: usize) -> Self {
        let initial_dist = reference.map_or(1.0, |r| (x0 - r).norm());
        Self {
            reference,
            initial_dist,
            snapshot_every,
            records: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    fn base(&mut self, k: usize, point: &StackedPoint, n_agents: usize) -> TraceRecord {
        if self.snapshot_every > 0 && k % self.snapshot_every == 0 {
            self.snapshots.push((k, point.clone()));
        }
        let norm_residual = self.reference.map(|r| {
            let d = (&point.x - r).norm();
            if self.initial_dist > 0.0 {
                d / self.initial_dist
            } else {
                d
            }
        });
        TraceRecord {
            k,
            kkt_residual: f64::NAN,
            norm_residual,
            consensus_dual: point.consensus_disagreement(n_agents),
            lambda_norm: point.lambda.norm(),
            ..Default::default()
        }
    }
}

fn check_init<G: AggregativeGame + ?Sized>(
    game: &G,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    dual_len: usize,
) -> Result<()> {
    let (nn, n) = (game.n_agents(), game.decision_dim());
    check_len(nn * n, x.len())?;
    check_len(dual_len, lambda.len())?;
    for i in 0..nn {
        if !game
            .local_set(i)
            .contains(&x.as_slice()[i * n..(i + 1) * n], 1e-9)
        {
            return Err(Error::InvalidParams(format!(
                "initial decision of agent {i} is outside its local set"
            )));
        }
    }
    if lambda.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParams(
            "initial multipliers must be nonnegative".into(),
        ));
    }
    Ok(())
}

/// The central dual step of algorithm 1 applied to the aggregate violation.
///
/// With a single multiplier the preconditioner couples `λ` to every agent
/// through `C = [C_1 … C_N]`, so the Gershgorin-safe dual step is
/// `(Σ_j ‖C_j‖ + τ)⁻¹`.
pub fn central_dual_step(steps: &StepSizes, coupling_norms: &[f64]) -> f64 {
    1.0 / (coupling_norms.iter().sum::<f64>() + steps.tau)
}

/// Semi-decentralized iteration with a shared multiplier `λ ∈ R^m`:
/// `x_i⁺ = P_{Ω_i}(x_i − α_i(F_i(x_i, x̄) + C_iᵀλ))`,
/// `λ⁺ = P_{≥0}(λ + β_c(C(2x⁺ − x) − c))`.
pub fn run_algorithm1<G: AggregativeGame + ?Sized>(
    game: &G,
    plan: &StepPlan,
    x0: &DVector<f64>,
    lambda0: &DVector<f64>,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    check_init(game, x0, lambda0, m)?;
    let norms = crate::game_model::coupling_norms(game);
    let beta_c = match opts.central_step {
        CentralStep::Gershgorin => central_dual_step(&plan.steps, &norms),
        CentralStep::MinAgent => plan
            .steps
            .beta
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
    };
    let cbar = offset_mean(game);
    let mut x = x0.clone();
    let mut lam = lambda0.clone();
    let mut rec = Recorder::new(opts.reference.as_ref(), x0, opts.snapshot_every);
    let mut xn = DVector::zeros(nn * n);
    let mut g = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut status = TerminalStatus::BudgetExhausted;
    let mut k = 0;
    loop {
        let point = StackedPoint::new(x.clone(), lam.clone());
        let mut r = rec.base(k, &point, 1);
        r.consensus_dual = 0.0;
        let need_kkt = opts.record_kkt || opts.tol.is_some();
        if need_kkt {
            r.kkt_residual = kkt_residual(game, x.as_slice(), lam.as_slice())?;
        }
        if opts.tol.is_some_and(|t| r.kkt_residual <= t) {
            status = TerminalStatus::Converged;
            rec.records.push(r);
            break;
        }
        if k == opts.max_iter {
            rec.records.push(r);
            break;
        }
        let xbar = block_mean(x.as_slice(), nn);
        for i in 0..nn {
            let xi = &x.as_slice()[i * n..(i + 1) * n];
            game.partial_gradient(i, xi, &xbar, &mut g);
            matvec_t_add(game.coupling_block(i), lam.as_slice(), &mut g);
            for j in 0..n {
                y[j] = xi[j] - plan.steps.alpha[i] * g[j];
            }
            game.local_set(i)
                .project_into(&y, &mut xn.as_mut_slice()[i * n..(i + 1) * n])?;
        }
        let refl: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| 2.0 * a - b).collect();
        let cs = coupling_sum(game, &refl);
        let mut lam_next = DVector::zeros(m);
        for l in 0..m {
            let d_total = cs[l] - nn as f64 * cbar[l];
            lam_next[l] = (lam[l] + beta_c * d_total).max(0.0);
        }
        r.gamma = Some(1.0);
        r.primal_step = Some((&xn - &x).norm());
        r.dual_step = Some((&lam_next - &lam).norm());
        rec.records.push(r);
        x.copy_from(&xn);
        lam = lam_next;
        k += 1;
        if !(x.iter().all(|v| v.is_finite()) && lam.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteIterate { iteration: k });
        }
    }
    Ok(RunTrace {
        algorithm: AlgorithmId::SemiDecentralized,
        records: rec.records,
        snapshots: rec.snapshots,
        status,
        iterations: k,
        final_point: StackedPoint::new(x, lam),
        final_state: None,
        y0_norm: None,
    })
}

/// Distributed full-information iteration: `ω⁺ = ω + γ^k(R(ω) − ω)`.
pub fn run_algorithm2<G: AggregativeGame + ?Sized>(
    game: &G,
    plan: &StepPlan,
    init: &StackedPoint,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let nn = game.n_agents();
    check_init(game, &init.x, &init.lambda, nn * game.coupling_dim())?;
    plan.gamma.validate(plan.steps.nu)?;
    let mut w = init.clone();
    let mut rec = Recorder::new(opts.reference.as_ref(), &init.x, opts.snapshot_every);
    let mut status = TerminalStatus::BudgetExhausted;
    let mut k = 0;
    loop {
        let mut r = rec.base(k, &w, nn);
        if opts.record_kkt {
            r.kkt_residual = kkt_residual(game, w.x.as_slice(), &w.dual_mean(nn))?;
        }
        let cand = full_information_candidate(game, &plan.steps, &w)?;
        let diff = cand.point.sub(&w);
        let fix = phi_norm(game, &plan.steps, &diff)?;
        r.fixed_point_residual = Some(fix);
        if opts.tol.is_some_and(|t| fix <= t) {
            status = TerminalStatus::Converged;
            rec.records.push(r);
            break;
        }
        if k == opts.max_iter {
            rec.records.push(r);
            break;
        }
        let gamma = plan.gamma.at(k);
        r.gamma = Some(gamma);
        r.primal_step = Some(diff.x.norm());
        r.dual_step = Some(diff.lambda.norm());
        r.err_norm = Some(0.0);
        rec.records.push(r);
        km_in_place(&mut w.x, &cand.point.x, gamma);
        km_in_place(&mut w.lambda, &cand.point.lambda, gamma);
        k += 1;
        if !w.is_finite() {
            return Err(Error::NonFiniteIterate { iteration: k });
        }
    }
    Ok(RunTrace {
        algorithm: AlgorithmId::FullInformation,
        records: rec.records,
        snapshots: rec.snapshots,
        status,
        iterations: k,
        final_point: w,
        final_state: None,
        y0_norm: None,
    })
}

/// Full state of the tracking iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub k: usize,
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Estimates of `x̄`, one per agent.
    pub sigma: DVector<f64>,
    /// Estimates of `d̄`.
    pub y: DVector<f64>,
    /// Estimates of `λ̄`.
    pub z: DVector<f64>,
    pub x_prev: DVector<f64>,
    pub x_tilde_prev: DVector<f64>,
}

impl IterateState {
    /// `σ⁰ = x⁰`, `z⁰ = λ⁰`, `x⁻¹ = x̃⁻¹ = x⁰` so `y_i⁰ = C_i x_i⁰ − c_i`.
    pub fn initial<G: AggregativeGame + ?Sized>(game: &G, init: &StackedPoint) -> Result<Self> {
        let nn = game.n_agents();
        check_init(game, &init.x, &init.lambda, nn * game.coupling_dim())?;
        let mut s = Self {
            k: 0,
            x: init.x.clone(),
            lambda: init.lambda.clone(),
            sigma: init.x.clone(),
            y: DVector::zeros(init.lambda.len()),
            z: init.lambda.clone(),
            x_prev: init.x.clone(),
            x_tilde_prev: init.x.clone(),
        };
        s.y = lagged_violation(game, &s.x_tilde_prev, &s.x_prev);
        Ok(s)
    }

    pub fn point(&self) -> StackedPoint {
        StackedPoint::new(self.x.clone(), self.lambda.clone())
    }
}

/// Stacked `C_i(2x̃_i − x_i) − c_i`.
pub(crate) fn lagged_violation<G: AggregativeGame + ?Sized>(
    game: &G,
    x_tilde: &DVector<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let mut out = DVector::zeros(nn * m);
    let mut refl = vec![0.0; n];
    for i in 0..nn {
        for j in 0..n {
            refl[j] = 2.0 * x_tilde[i * n + j] - x[i * n + j];
        }
        let o = &mut out.as_mut_slice()[i * m..(i + 1) * m];
        matvec_into(game.coupling_block(i), &refl, o);
        for l in 0..m {
            o[l] -= game.coupling_offset(i)[l];
        }
    }
    out
}

/// `(W ⊗ I_d) v`
pub(crate) fn mix(w: &DMatrix<f64>, v: &DVector<f64>, d: usize) -> DVector<f64> {
    let nn = w.nrows();
    let mut out = DVector::zeros(v.len());
    for i in 0..nn {
        for j in 0..nn {
            let wij = w[(i, j)];
            if wij != 0.0 {
                for t in 0..d {
                    out[i * d + t] += wij * v[j * d + t];
                }
            }
        }
    }
    out
}

/// Intermediate quantities of one tracking step from a given state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingCandidate {
    pub sigma_hat: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub x_tilde: DVector<f64>,
    /// `y^{k+1}`
    pub y_next: DVector<f64>,
    pub lambda_tilde: DVector<f64>,
}

fn dual_clip(v: f64, cap: Option<f64>) -> f64 {
    let v = v.max(0.0);
    cap.map_or(v, |c| v.min(c))
}

pub fn tracking_candidate<G: AggregativeGame + ?Sized>(
    game: &G,
    steps: &StepSizes,
    state: &IterateState,
    w: &DMatrix<f64>,
    dual_cap: Option<f64>,
) -> Result<TrackingCandidate> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    if w.shape() != (nn, nn) {
        return Err(Error::DimensionMismatch {
            expected: nn,
            found: w.nrows(),
        });
    }
    let sigma_hat = mix(w, &state.sigma, n);
    let y_hat = mix(w, &state.y, m);
    let z_hat = mix(w, &state.z, m);
    let mut x_tilde = DVector::zeros(nn * n);
    let mut g = vec![0.0; n];
    let mut yv = vec![0.0; n];
    for i in 0..nn {
        let xi = &state.x.as_slice()[i * n..(i + 1) * n];
        game.partial_gradient(i, xi, &sigma_hat.as_slice()[i * n..(i + 1) * n], &mut g);
        matvec_t_add(
            game.coupling_block(i),
            &z_hat.as_slice()[i * m..(i + 1) * m],
            &mut g,
        );
        for j in 0..n {
            yv[j] = xi[j] - steps.alpha[i] * g[j];
        }
        game.local_set(i)
            .project_into(&yv, &mut x_tilde.as_mut_slice()[i * n..(i + 1) * n])?;
    }
    // c_i cancels between the two reflected terms.
    let d_now = lagged_violation(game, &x_tilde, &state.x);
    let d_prev = lagged_violation(game, &state.x_tilde_prev, &state.x_prev);
    let y_next = DVector::from_fn(nn * m, |r, _| y_hat[r] + d_now[r] - d_prev[r]);
    let lambda_tilde = DVector::from_fn(nn * m, |r, _| {
        let i = r / m;
        let l = state.lambda[r];
        dual_clip(l + steps.beta[i] * (y_next[r] - l + z_hat[r]), dual_cap)
    });
    Ok(TrackingCandidate {
        sigma_hat,
        y_hat,
        z_hat,
        x_tilde,
        y_next,
        lambda_tilde,
    })
}

/// The full-information candidate from the same `(x, λ)`, with `d̄^k`
/// built from the tracking candidate's `x̃^k` (the quantity `y^{k+1}` tracks).
pub fn shadow_candidate<G: AggregativeGame + ?Sized>(
    game: &G,
    steps: &StepSizes,
    state: &IterateState,
    x_tilde_tracking: &DVector<f64>,
    dual_cap: Option<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (nn, m) = (game.n_agents(), game.coupling_dim());
    let full = full_information_candidate(game, steps, &state.point())?;
    let d_bar = block_mean(
        lagged_violation(game, x_tilde_tracking, &state.x).as_slice(),
        nn,
    );
    let lbar = block_mean(state.lambda.as_slice(), nn);
    let lambda = DVector::from_fn(nn * m, |r, _| {
        let (i, l) = (r / m, r % m);
        let li = state.lambda[r];
        dual_clip(li + steps.beta[i] * (d_bar[l] - li + lbar[l]), dual_cap)
    });
    Ok((full.point.x, lambda))
}

/// Everything one tracking step measured.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub tracking: TrackingErrors,
    pub err_norm: f64,
    pub gamma: f64,
    pub primal_step: f64,
    pub dual_step: f64,
}

/// Advances `state` by one tracking step with mixing matrix `w`.
pub fn algorithm3_step<G: AggregativeGame + ?Sized>(
    game: &G,
    plan: &StepPlan,
    state: &mut IterateState,
    w: &DMatrix<f64>,
    dual_cap: Option<f64>,
) -> Result<StepReport> {
    let nn = game.n_agents();
    let steps = &plan.steps;
    let cand = tracking_candidate(game, steps, state, w, dual_cap)?;
    let xbar = block_mean(state.x.as_slice(), nn);
    let lbar = block_mean(state.lambda.as_slice(), nn);
    let d_now = lagged_violation(game, &cand.x_tilde, &state.x);
    let d_bar = block_mean(d_now.as_slice(), nn);
    let tracking = TrackingErrors {
        sigma_err: linalg::dist_to_consensus(cand.sigma_hat.as_slice(), &xbar),
        z_err: linalg::dist_to_consensus(cand.z_hat.as_slice(), &lbar),
        y_err: linalg::dist_to_consensus(cand.y_next.as_slice(), &d_bar),
    };
    let (sx, sl) = shadow_candidate(game, steps, state, &cand.x_tilde, dual_cap)?;
    let err_norm =
        libm::sqrt((&cand.x_tilde - sx).norm_squared() + (&cand.lambda_tilde - sl).norm_squared());
    let gamma = plan.gamma.at(state.k);
    let primal_step = (&cand.x_tilde - &state.x).norm();
    let dual_step = (&cand.lambda_tilde - &state.lambda).norm();

    let x_old = state.x.clone();
    let l_old = state.lambda.clone();
    km_in_place(&mut state.x, &cand.x_tilde, gamma);
    km_in_place(&mut state.lambda, &cand.lambda_tilde, gamma);
    state.sigma = &cand.sigma_hat + &state.x - &x_old;
    state.z = &cand.z_hat + &state.lambda - &l_old;
    state.y = cand.y_next;
    state.x_prev = x_old;
    state.x_tilde_prev = cand.x_tilde;
    state.k += 1;
    Ok(StepReport {
        tracking,
        err_norm,
        gamma,
        primal_step,
        dual_step,
    })
}

/// Distributed partial-information iteration with dynamic tracking over
/// the mixing matrices `mixing.mixing_at(k)`.
pub fn run_algorithm3<G: AggregativeGame + ?Sized, M: MixingSequence + ?Sized>(
    game: &G,
    plan: &StepPlan,
    mixing: &M,
    init: &StackedPoint,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let nn = game.n_agents();
    plan.gamma.validate(plan.steps.nu)?;
    if !plan.gamma.is_diminishing() && !opts.unsafe_gamma {
        return Err(Error::InvalidGamma(
            "the tracking iteration needs a non-increasing, non-summable, square-summable relaxation; enable unsafe_gamma to override".into(),
        ));
    }
    if mixing.n_nodes() != nn {
        return Err(Error::DimensionMismatch {
            expected: nn,
            found: mixing.n_nodes(),
        });
    }
    if let Some(c) = opts.dual_cap {
        if !(c > 0.0) {
            return Err(Error::InvalidParams("dual cap must be positive".into()));
        }
    }
    let mut state = IterateState::initial(game, init)?;
    let y0_norm = state.y.norm();
    let mut rec = Recorder::new(opts.reference.as_ref(), &init.x, opts.snapshot_every);
    let mut status = TerminalStatus::BudgetExhausted;
    let mut partial = 0.0;
    let mut invariance = tracking_invariance(game, &state);
    loop {
        let k = state.k;
        let point = state.point();
        let mut r = rec.base(k, &point, nn);
        r.invariance = Some(invariance);
        if opts.record_kkt || opts.tol.is_some() {
            r.kkt_residual = kkt_residual(game, state.x.as_slice(), &point.dual_mean(nn))?;
        }
        if opts.tol.is_some_and(|t| r.kkt_residual <= t) {
            status = TerminalStatus::Converged;
            rec.records.push(r);
            break;
        }
        if k == opts.max_iter {
            rec.records.push(r);
            break;
        }
        let w = mixing.mixing_at(k)?;
        let rep = algorithm3_step(game, plan, &mut state, &w, opts.dual_cap)?;
        partial += rep.gamma * rep.err_norm;
        r.gamma = Some(rep.gamma);
        r.primal_step = Some(rep.primal_step);
        r.dual_step = Some(rep.dual_step);
        r.tracking = Some(rep.tracking);
        r.err_norm = Some(rep.err_norm);
        r.partial_sum_gamma_err = Some(partial);
        rec.records.push(r);
        if !(state
            .x
            .iter()
            .chain(state.lambda.iter())
            .chain(state.y.iter())
            .all(|v| v.is_finite()))
        {
            return Err(Error::NonFiniteIterate { iteration: state.k });
        }
        invariance = tracking_invariance(game, &state);
    }
    Ok(RunTrace {
        algorithm: AlgorithmId::PartialInformation,
        records: rec.records,
        snapshots: rec.snapshots,
        status,
        iterations: state.k,
        final_point: state.point(),
        final_state: Some(state),
        y0_norm: Some(y0_norm),
    })
}
