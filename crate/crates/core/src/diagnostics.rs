//! Runtime checks of the convergence machinery of the tracking iteration:
//! mean-tracking invariance, the shadow error against the full-information
//! iteration, the tracking-error bounds and the summability evidence.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::algorithms::{
    lagged_violation, shadow_candidate, tracking_candidate, GammaSchedule, IterateState, RunTrace,
    StepPlan,
};
use crate::error::{Error, Result};
use crate::game_model::{AggregativeGame, GameConstants};
use crate::linalg::{block_mean, dist2, dist_to_consensus};
use crate::network::DecayCertificate;
use crate::operators::StepSizes;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrackingErrors {
    /// `‖σ̂^k − 1⊗x̄^k‖`
    pub sigma_err: f64,
    /// `‖ẑ^k − 1⊗λ̄^k‖`
    pub z_err: f64,
    /// `‖y^{k+1} − 1⊗d̄^k‖`
    pub y_err: f64,
}

/// `(‖mean σ − x̄‖, ‖mean y − d̄^{k−1}‖, ‖mean z − λ̄‖)`; `y^k` tracks the
/// reflected violation of the previous step, rebuilt from the lagged iterates.
pub fn tracking_invariance<G: AggregativeGame + ?Sized>(
    game: &G,
    state: &IterateState,
) -> [f64; 3] {
    let nn = game.n_agents();
    let xbar = block_mean(state.x.as_slice(), nn);
    let lbar = block_mean(state.lambda.as_slice(), nn);
    let d_lag = block_mean(
        lagged_violation(game, &state.x_tilde_prev, &state.x_prev).as_slice(),
        nn,
    );
    [
        dist2(&block_mean(state.sigma.as_slice(), nn), &xbar),
        dist2(&block_mean(state.y.as_slice(), nn), &d_lag),
        dist2(&block_mean(state.z.as_slice(), nn), &lbar),
    ]
}

/// Tracking errors and shadow error of the step from `state` with mixing `w`,
/// without advancing the state.
pub fn step_errors<G: AggregativeGame + ?Sized>(
    game: &G,
    steps: &StepSizes,
    state: &IterateState,
    w: &DMatrix<f64>,
    dual_cap: Option<f64>,
) -> Result<(TrackingErrors, f64)> {
    let nn = game.n_agents();
    let cand = tracking_candidate(game, steps, state, w, dual_cap)?;
    let xbar = block_mean(state.x.as_slice(), nn);
    let lbar = block_mean(state.lambda.as_slice(), nn);
    let d_bar = block_mean(
        lagged_violation(game, &cand.x_tilde, &state.x).as_slice(),
        nn,
    );
    let errs = TrackingErrors {
        sigma_err: dist_to_consensus(cand.sigma_hat.as_slice(), &xbar),
        z_err: dist_to_consensus(cand.z_hat.as_slice(), &lbar),
        y_err: dist_to_consensus(cand.y_next.as_slice(), &d_bar),
    };
    let (sx, sl) = shadow_candidate(game, steps, state, &cand.x_tilde, dual_cap)?;
    let e =
        libm::sqrt((&cand.x_tilde - sx).norm_squared() + (&cand.lambda_tilde - sl).norm_squared());
    Ok((errs, e))
}

/// `‖e^k‖`: distance between the tracking candidate and the full-information
/// candidate computed from the same `(x^k, λ^k)`.
pub fn shadow_error<G: AggregativeGame + ?Sized>(
    game: &G,
    plan: &StepPlan,
    state: &IterateState,
    w: &DMatrix<f64>,
    dual_cap: Option<f64>,
) -> Result<f64> {
    step_errors(game, &plan.steps, state, w, dual_cap).map(|(_, e)| e)
}

/// `L_F‖α‖σ_err + ‖β‖y_err + (‖α‖‖C‖ + ‖β‖)z_err` with diagonal-operator norms.
pub fn candidate_error_bound(
    constants: &GameConstants,
    steps: &StepSizes,
    errs: &TrackingErrors,
) -> f64 {
    let a = steps.alpha_max();
    let b = steps.beta_max();
    constants.lip_epg * a * errs.sigma_err
        + b * errs.y_err
        + (a * constants.coupling_norm_max() + b) * errs.z_err
}

/// `sup ‖x‖` over the stacked local sets, also bounding `‖x − x'‖`.
pub fn omega_bound<G: AggregativeGame + ?Sized>(game: &G) -> f64 {
    let (mut sup, mut diam) = (0.0, 0.0);
    for i in 0..game.n_agents() {
        let (lo, hi) = game.local_set(i).bounds();
        for (l, h) in lo.iter().zip(hi) {
            let m = l.abs().max(h.abs());
            sup += m * m;
            diam += (h - l) * (h - l);
        }
    }
    libm::sqrt(sup).max(libm::sqrt(diam))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundInputs {
    pub theta: f64,
    pub rho: f64,
    pub b_omega: f64,
    pub b_d: f64,
    /// `b_d` was measured from the trajectory rather than enforced by a cap.
    pub b_d_empirical: bool,
    pub b_y: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub gamma: GammaSchedule,
}

/// Assembles the bound constants from the decay certificate, the step plan
/// and the trace; `b_d` is the cap-box norm when a cap is set, otherwise the
/// largest multiplier norm or dual step seen along the trace.
pub fn assemble_bound_inputs<G: AggregativeGame + ?Sized>(
    game: &G,
    constants: &GameConstants,
    plan: &StepPlan,
    cert: &DecayCertificate,
    trace: &RunTrace,
    dual_cap: Option<f64>,
) -> Result<BoundInputs> {
    let y0 = trace
        .y0_norm
        .ok_or(Error::NotSupported("bound inputs need a tracking trace"))?;
    let b_omega = omega_bound(game);
    let measured = trace
        .records
        .iter()
        .map(|r| r.lambda_norm.max(r.dual_step.unwrap_or(0.0)))
        .fold(0.0, f64::max);
    let (b_d, b_d_empirical) = match dual_cap {
        Some(c) => (
            c * libm::sqrt((game.n_agents() * game.coupling_dim()) as f64),
            false,
        ),
        None => (measured, true),
    };
    let (theta, rho) = (cert.theta, cert.rho);
    let a = plan.steps.alpha_max();
    let (lf, cn) = (constants.lip_epg, constants.coupling_norm_max());
    let e1 = a * 2.0 * theta * (lf * b_omega + cn * b_d);
    let e2 = 4.0 * theta / rho * a * (lf * b_omega + cn * b_d);
    let e3 = b_omega + a * lf * b_omega;
    Ok(BoundInputs {
        theta,
        rho,
        b_omega,
        b_d,
        b_d_empirical,
        b_y: y0,
        delta1: 2.0 * e1,
        delta2: 2.0 * e2 + 2.0 * e3 + b_omega,
        gamma: plan.gamma.clone(),
    })
}

/// `φ^k = δ1 ρ^{k−1} + δ2 Σ_{l=1}^{k} ρ^{k−l} γ^{l−1}` for `k = 0..=k_max`.
pub fn phi_sequence(inputs: &BoundInputs, k_max: usize) -> Vec<f64> {
    let rho = inputs.rho;
    let mut out = Vec::with_capacity(k_max + 1);
    let (mut geo, mut conv) = (inputs.delta1 / rho, 0.0);
    for k in 0..=k_max {
        if k > 0 {
            geo *= rho;
            conv = rho * conv + inputs.gamma.at(k - 1);
        }
        out.push(geo + inputs.delta2 * conv);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundViolation {
    pub k: usize,
    pub quantity: String,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrackingBoundReport {
    pub checked: usize,
    pub violations: Vec<BoundViolation>,
    /// Largest `measured / bound` for σ, z, y.
    pub max_ratio: [f64; 3],
    pub b_d_empirical: bool,
}

impl TrackingBoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares the measured tracking errors of every record with
/// `σ_err ≤ θB_Ω(ρ^k + S_k)`, `z_err ≤ θB_D(ρ^k + S_k)` and
/// `y_err ≤ θB_Yρ^k + Σ_{s=1}^{k} ρ^{k−s}φ^{s−1} + φ^k`, with
/// `S_k = Σ_{s=1}^{k} ρ^{k−s}γ^{s−1}`.
pub fn tracking_bound_check(trace: &RunTrace, inputs: &BoundInputs) -> TrackingBoundReport {
    let k_max = trace.records.last().map_or(0, |r| r.k);
    let phi = phi_sequence(inputs, k_max);
    let rho = inputs.rho;
    let (mut rk, mut s, mut t) = (1.0, 0.0, 0.0);
    let mut violations = Vec::new();
    let mut max_ratio = [0.0f64; 3];
    let mut checked = 0;
    let mut next = 0;
    for r in &trace.records {
        while next < r.k {
            next += 1;
            rk *= rho;
            s = rho * s + inputs.gamma.at(next - 1);
            t = rho * t + phi[next - 1];
        }
        let Some(te) = r.tracking else { continue };
        checked += 1;
        let bounds = [
            inputs.theta * inputs.b_omega * (rk + s),
            inputs.theta * inputs.b_d * (rk + s),
            inputs.theta * inputs.b_y * rk + t + phi[r.k],
        ];
        let measured = [te.sigma_err, te.z_err, te.y_err];
        for (q, name) in ["sigma", "z", "y"].iter().enumerate() {
            let ratio = if bounds[q] > 0.0 {
                measured[q] / bounds[q]
            } else if measured[q] > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            max_ratio[q] = max_ratio[q].max(ratio);
            if measured[q] > bounds[q] + 1e-9 {
                violations.push(BoundViolation {
                    k: r.k,
                    quantity: format!("{name}_err"),
                    measured: measured[q],
                    bound: bounds[q],
                });
            }
        }
    }
    TrackingBoundReport {
        checked,
        violations,
        max_ratio,
        b_d_empirical: inputs.b_d_empirical,
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SummabilityReport {
    /// `Σ_{t≤k} γ^t‖e^t‖`
    pub partial_sums: Vec<f64>,
    /// `Σ_{t≤k} γ^t(1 − γ^t)`
    pub relaxation_sums: Vec<f64>,
    /// The last quarter of the horizon added less than 1% to the error sum.
    pub cauchy_flag: bool,
    /// The relaxation sums increase strictly at every step.
    pub relaxation_strictly_increasing: bool,
    /// Share of the relaxation sum gained over the last quarter.
    pub relaxation_last_quarter_share: f64,
}

pub fn summability_report(trace: &RunTrace) -> SummabilityReport {
    let mut partial_sums = Vec::new();
    let mut relaxation_sums = Vec::new();
    let (mut s, mut c) = (0.0, 0.0);
    for r in &trace.records {
        let Some(g) = r.gamma else { continue };
        s += g * r.err_norm.unwrap_or(0.0);
        c += g * (1.0 - g);
        partial_sums.push(s);
        relaxation_sums.push(c);
    }
    let quarter = |v: &[f64]| -> (f64, f64) {
        let n = v.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let total = v[n - 1];
        let start = if n >= 4 { v[n - 1 - n / 4] } else { 0.0 };
        (total - start, total)
    };
    let (inc, total) = quarter(&partial_sums);
    let (cinc, ctotal) = quarter(&relaxation_sums);
    // Increments are γ(1−γ) ≥ 0; the first term is zero when γ^0 = 1.
    let relaxation_strictly_increasing = relaxation_sums.windows(2).skip(1).all(|w| w[1] > w[0]);
    SummabilityReport {
        cauchy_flag: inc <= 0.01 * total,
        relaxation_strictly_increasing,
        relaxation_last_quarter_share: if ctotal > 0.0 { cinc / ctotal } else { 0.0 },
        partial_sums,
        relaxation_sums,
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceSeries {
    pub k: Vec<usize>,
    pub norm_residual: Vec<f64>,
    pub consensus_dual: Vec<f64>,
    /// `σ_err + y_err + z_err` (zero where not tracked)
    pub tracking_total: Vec<f64>,
}

pub fn convergence_metrics(trace: &RunTrace) -> Result<ConvergenceSeries> {
    let mut out = ConvergenceSeries {
        k: Vec::new(),
        norm_residual: Vec::new(),
        consensus_dual: Vec::new(),
        tracking_total: Vec::new(),
    };
    for r in &trace.records {
        out.k.push(r.k);
        out.norm_residual
            .push(r.norm_residual.ok_or(Error::MissingReference)?);
        out.consensus_dual.push(r.consensus_dual);
        out.tracking_total
            .push(r.tracking.map_or(0.0, |t| t.sigma_err + t.y_err + t.z_err));
    }
    Ok(out)
}
