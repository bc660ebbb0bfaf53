//! Independent ground truth: a verified v-GNE computed two ways, a
//! Slater-type multiplier bound and a unilateral-deviation spot check.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DVector;
use rand::Rng;

use crate::algorithms::{
    make_step_plan, run_algorithm1, GammaSchedule, RunOptions, TerminalStatus,
};
use crate::error::{Error, Result};
use crate::game_model::{
    constants, coupling_violation, pseudo_gradient, AggregativeGame, GameInstance,
};
use crate::linalg::{block_mean, matvec_into, matvec_t_add, norm2};
use crate::operators::{coupling_sum, kkt_residual};
use crate::rng::CounterRng;

/// Step-size margin of the primary solve; larger than the run default so
/// the reference is computed with shorter steps.
pub const REFERENCE_TAU_MARGIN: f64 = 0.25;
/// Both solvers run to `tol · INNER_TOL_FACTOR`, floored at `INNER_TOL_FLOOR`.
pub const INNER_TOL_FACTOR: f64 = 1e-2;
pub const INNER_TOL_FLOOR: f64 = 1e-13;
/// Extragradient step as a fraction of `1/L`.
pub const EXTRAGRADIENT_STEP: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ReferenceMethod {
    SemiDecentralized,
    Extragradient,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    /// KKT residual at `(x_star, lambda_star)`.
    pub kkt_certificate: f64,
    pub method: ReferenceMethod,
    pub iterations: usize,
    /// Extragradient cross-check.
    pub cross_check_x: Vec<f64>,
    pub cross_check_kkt: f64,
    pub cross_check_iterations: usize,
    /// `‖x_star − cross_check_x‖`
    pub agreement: f64,
    /// `F` is strongly monotone, so the v-GNE is unique.
    pub unique: bool,
}

impl ReferenceSolution {
    pub fn x_star_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_star)
    }
}

/// Solves for the v-GNE with the semi-decentralized iteration at reduced
/// steps and cross-checks it with extragradient on the KKT operator
/// `(x, λ) ↦ (F(x) + Cᵀλ, c − Cx)` over `Ω × R≥0` from a different start.
pub fn solve_reference(
    game: &GameInstance,
    tol: f64,
    max_iter: usize,
) -> Result<ReferenceSolution> {
    let c = constants(game)?;
    let m = game.coupling_dim();
    let plan = make_step_plan(
        &c,
        REFERENCE_TAU_MARGIN,
        GammaSchedule::Constant { value: 1.0 },
    )?;
    // Over-solve: a KKT residual of `tol` only pins `x*` to about `tol/μ`.
    let inner = (tol * INNER_TOL_FACTOR).max(INNER_TOL_FLOOR);
    let opts = RunOptions {
        max_iter,
        tol: Some(inner),
        ..Default::default()
    };
    let t = run_algorithm1(game, &plan, game.slater_point(), &DVector::zeros(m), &opts)?;
    let kkt = t.records.last().map_or(f64::INFINITY, |r| r.kkt_residual);
    if t.status != TerminalStatus::Converged {
        return Err(Error::NoConvergence {
            best: t.final_point.x.as_slice().to_vec(),
            residual: kkt,
        });
    }
    let eg = extragradient(game, inner, max_iter)?;
    let x_star = t.final_point.x.as_slice().to_vec();
    let agreement = norm2(
        &x_star
            .iter()
            .zip(&eg.x)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    Ok(ReferenceSolution {
        x_star,
        lambda_star: t.final_point.lambda.as_slice().to_vec(),
        kkt_certificate: kkt,
        method: ReferenceMethod::SemiDecentralized,
        iterations: t.iterations,
        cross_check_x: eg.x,
        cross_check_kkt: eg.kkt,
        cross_check_iterations: eg.iterations,
        agreement,
        unique: c.monotonicity > 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtragradientResult {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub kkt: f64,
    pub iterations: usize,
}

/// Korpelevich extragradient started from the projection of the origin
/// with unit multipliers.
pub fn extragradient(
    game: &GameInstance,
    tol: f64,
    max_iter: usize,
) -> Result<ExtragradientResult> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let c = constants(game)?;
    let c_norm = libm::sqrt(c.coupling_norms.iter().map(|v| v * v).sum::<f64>());
    let step = EXTRAGRADIENT_STEP / (c.p_norm + c_norm);
    let mut x = vec![0.0; nn * n];
    for i in 0..nn {
        let p = game.local_set(i).project(&vec![0.0; n])?;
        x[i * n..(i + 1) * n].copy_from_slice(&p);
    }
    let mut lam = vec![1.0; m];
    let mut xh = vec![0.0; nn * n];
    let mut lh = vec![0.0; m];
    let mut buf = vec![0.0; n];
    let mut out = vec![0.0; n];
    let field = |x: &[f64], lam: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut gx = pseudo_gradient(game, x)?.as_slice().to_vec();
        for i in 0..nn {
            matvec_t_add(game.coupling_block(i), lam, &mut gx[i * n..(i + 1) * n]);
        }
        let gl = coupling_violation(game, x)?.iter().map(|v| -v).collect();
        Ok((gx, gl))
    };
    let mut k = 0;
    let mut kkt = kkt_residual(game, &x, &lam)?;
    while kkt > tol {
        if k == max_iter {
            return Err(Error::NoConvergence {
                best: x,
                residual: kkt,
            });
        }
        for half in 0..2 {
            let (gx, gl) = if half == 0 {
                field(&x, &lam)?
            } else {
                field(&xh, &lh)?
            };
            for i in 0..nn {
                for j in 0..n {
                    buf[j] = x[i * n + j] - step * gx[i * n + j];
                }
                game.local_set(i).project_into(&buf, &mut out)?;
                let dst = if half == 0 { &mut xh } else { &mut x };
                dst[i * n..(i + 1) * n].copy_from_slice(&out);
            }
            for l in 0..m {
                let v = (lam[l] - step * gl[l]).max(0.0);
                if half == 0 {
                    lh[l] = v;
                } else {
                    lam[l] = v;
                }
            }
        }
        k += 1;
        if k % 10 == 0 || k == max_iter {
            kkt = kkt_residual(game, &x, &lam)?;
        }
    }
    Ok(ExtragradientResult {
        x,
        lambda: lam,
        kkt,
        iterations: k,
    })
}

/// Smallest slack `c − Σ C_i x̂_i` over the coupling rows.
pub fn slater_margin<G: AggregativeGame + ?Sized>(game: &G, slater: &[f64]) -> Result<f64> {
    Ok(coupling_violation(game, slater)?
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(-v)))
}

/// Upper bound on `‖λ*‖_∞` from a strictly feasible point `x̂` with margin `s`:
/// combining the KKT inclusion at `x*` with complementarity gives
/// `s‖λ*‖₁ ≤ F(x*)ᵀ(x̂ − x*) ≤ sup_Ω‖F‖ · diam Ω`, so the bound is
/// `sup_Ω‖F‖ · diam Ω / s + r`. An over-estimate by construction.
pub fn dual_bound(game: &GameInstance, slater: &[f64], r: f64) -> Result<f64> {
    let s = slater_margin(game, slater)?;
    if !(s > 0.0) {
        return Err(Error::NotStrictlyFeasible { slack: s });
    }
    let c = constants(game)?;
    let (mut sup2, mut diam2) = (0.0, 0.0);
    for i in 0..game.n_agents() {
        let (lo, hi) = game.local_set(i).bounds();
        for (l, h) in lo.iter().zip(hi) {
            sup2 += l.abs().max(h.abs()).powi(2);
            diam2 += (h - l).powi(2);
        }
    }
    let f_sup = c.p_norm * libm::sqrt(sup2) + game.stacked_b().norm();
    Ok(f_sup * libm::sqrt(diam2) / s + r)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpotCheck {
    pub samples: usize,
    /// Largest `J_i(x*) − J_i(deviation)` seen (negative when no deviation helps).
    pub worst_improvement: f64,
    pub worst_agent: usize,
}

const FAMILY_SPOT: u32 = 300;

/// Draws `samples` unilateral deviations `z` of random agents with
/// `z ∈ Ω_i` and `(z, x*_{−i})` jointly feasible, half of them spread over
/// `Ω_i` and half close to `x*_i`, and reports the largest cost improvement.
pub fn gne_spot_check<G: AggregativeGame + ?Sized>(
    game: &G,
    x_star: &[f64],
    samples: usize,
    seed: u64,
) -> Result<SpotCheck> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let rng = CounterRng::new(seed);
    let total = coupling_sum(game, x_star);
    let c_total: Vec<f64> = (0..m)
        .map(|l| (0..nn).map(|i| game.coupling_offset(i)[l]).sum())
        .collect();
    let xbar = block_mean(x_star, nn);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_agent = 0;
    let mut ci = vec![0.0; m];
    for t in 0..samples {
        let mut r = rng.stream(FAMILY_SPOT, t as u64);
        let i = r.random_range(0..nn);
        let xi = &x_star[i * n..(i + 1) * n];
        let set = game.local_set(i);
        let (lo, hi) = set.bounds();
        let local = t % 2 == 1;
        let raw: Vec<f64> = (0..n)
            .map(|j| {
                if local {
                    let rad = 1e-3 * (hi[j] - lo[j]).max(1.0);
                    xi[j] + r.random_range(-rad..=rad)
                } else if hi[j] > lo[j] {
                    r.random_range(lo[j]..=hi[j])
                } else {
                    lo[j]
                }
            })
            .collect();
        let mut z = set.project(&raw)?;
        // others' share of the coupling budget
        matvec_into(game.coupling_block(i), xi, &mut ci);
        let others: Vec<f64> = (0..m).map(|l| total[l] - ci[l]).collect();
        let feasible = |z: &[f64], buf: &mut Vec<f64>| {
            matvec_into(game.coupling_block(i), z, buf);
            (0..m).all(|l| others[l] + buf[l] <= c_total[l] + 1e-12)
        };
        let mut buf = vec![0.0; m];
        let mut shrink = 0;
        while !feasible(&z, &mut buf) {
            // the segment towards x*_i stays in Ω_i and ends feasible
            for j in 0..n {
                z[j] = xi[j] + 0.5 * (z[j] - xi[j]);
            }
            shrink += 1;
            if shrink > 60 {
                z.copy_from_slice(xi);
                break;
            }
        }
        let agg: Vec<f64> = (0..n)
            .map(|j| xbar[j] + (z[j] - xi[j]) / nn as f64)
            .collect();
        let gain = game.cost(i, xi, &xbar) - game.cost(i, &z, &agg);
        if gain > worst {
            worst = gain;
            worst_agent = i;
        }
    }
    if samples == 0 {
        return Err(Error::InvalidParams(format!(
            "spot check needs at least one sample"
        )));
    }
    Ok(SpotCheck {
        samples,
        worst_improvement: worst,
        worst_agent,
    })
}
