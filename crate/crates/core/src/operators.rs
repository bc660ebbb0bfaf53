//! The operator layer on the stacked primal–dual variable `ω = (x, λ)`
//! with one dual copy per agent.
//!
//! `T = T₁ + T₂` with `T₁(ω) = (F(x), L_m λ + c̄)` (single-valued,
//! cocoercive) and `T₂ = N_{Ω×R≥0} + S`, where `S` is the skew coupling
//! `S(ω) = (1/N)(C_fᵀλ, −C_f x)`, `C_f = 1⊗C`, `L_m = (I − 11ᵀ/N)⊗I_m`
//! and `c̄ = (1/N)Σ c_i`.  Zeros of `T` with consensual duals are v-GNE.
//! The preconditioned forward–backward map `R` is evaluated in closed form.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::game_model::{pseudo_gradient, AggregativeGame, GameConstants};
use crate::linalg::{self, block_mean, matvec_into, matvec_t_add};

#[derive(Debug, Clone, PartialEq)]
pub struct StackedPoint {
    pub x: DVector<f64>,
    /// Either one shared multiplier (`m`) or one copy per agent (`mN`).
    pub lambda: DVector<f64>,
}

impl StackedPoint {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { x, lambda }
    }

    pub fn zeros<G: AggregativeGame + ?Sized>(game: &G) -> Self {
        let nn = game.n_agents();
        Self {
            x: DVector::zeros(nn * game.decision_dim()),
            lambda: DVector::zeros(nn * game.coupling_dim()),
        }
    }

    /// Replicates a shared multiplier into `n_agents` copies.
    pub fn with_shared_dual(x: DVector<f64>, lambda: &[f64], n_agents: usize) -> Self {
        let lambda = DVector::from_iterator(
            lambda.len() * n_agents,
            (0..n_agents).flat_map(|_| lambda.iter().copied()),
        );
        Self { x, lambda }
    }

    pub fn dual_mean(&self, n_agents: usize) -> Vec<f64> {
        block_mean(self.lambda.as_slice(), n_agents)
    }

    /// `‖L_m λ‖`, the distance of the dual copies from consensus.
    pub fn consensus_disagreement(&self, n_agents: usize) -> f64 {
        let mean = self.dual_mean(n_agents);
        linalg::dist_to_consensus(self.lambda.as_slice(), &mean)
    }

    pub fn is_consensual(&self, n_agents: usize, tol: f64) -> bool {
        let mean = self.dual_mean(n_agents);
        self.lambda
            .as_slice()
            .chunks(mean.len().max(1))
            .all(|c| c.iter().zip(&mean).all(|(a, b)| (a - b).abs() <= tol))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            x: &self.x - &other.x,
            lambda: &self.lambda - &other.lambda,
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x.dot(&other.x) + self.lambda.dot(&other.lambda)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(self.lambda.iter())
            .all(|v| v.is_finite())
    }
}

fn check_point<G: AggregativeGame + ?Sized>(game: &G, p: &StackedPoint) -> Result<()> {
    let nn = game.n_agents();
    check_len(nn * game.decision_dim(), p.x.len())?;
    check_len(nn * game.coupling_dim(), p.lambda.len())
}

/// `Σ_i C_i x_i`
pub(crate) fn coupling_sum<G: AggregativeGame + ?Sized>(game: &G, x: &[f64]) -> Vec<f64> {
    let (n, m) = (game.decision_dim(), game.coupling_dim());
    let mut out = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    for i in 0..game.n_agents() {
        matvec_into(game.coupling_block(i), &x[i * n..(i + 1) * n], &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
    }
    out
}

/// `c̄ = (1/N) Σ_i c_i`
pub(crate) fn offset_mean<G: AggregativeGame + ?Sized>(game: &G) -> Vec<f64> {
    let m = game.coupling_dim();
    let nn = game.n_agents();
    let mut out = vec![0.0; m];
    for i in 0..nn {
        out.iter_mut()
            .zip(game.coupling_offset(i).iter())
            .for_each(|(o, c)| *o += c);
    }
    out.iter_mut().for_each(|o| *o /= nn as f64);
    out
}

pub fn apply_t1<G: AggregativeGame + ?Sized>(
    game: &G,
    point: &StackedPoint,
) -> Result<StackedPoint> {
    check_point(game, point)?;
    let nn = game.n_agents();
    let x = pseudo_gradient(game, point.x.as_slice())?;
    let mean = point.dual_mean(nn);
    let cbar = offset_mean(game);
    let m = game.coupling_dim();
    let lambda = DVector::from_fn(nn * m, |r, _| point.lambda[r] - mean[r % m] + cbar[r % m]);
    Ok(StackedPoint { x, lambda })
}

pub fn apply_s<G: AggregativeGame + ?Sized>(
    game: &G,
    point: &StackedPoint,
) -> Result<StackedPoint> {
    check_point(game, point)?;
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let mean = point.dual_mean(nn);
    let mut x = DVector::zeros(nn * n);
    for i in 0..nn {
        matvec_t_add(
            game.coupling_block(i),
            &mean,
            &mut x.as_mut_slice()[i * n..(i + 1) * n],
        );
    }
    let cx = coupling_sum(game, point.x.as_slice());
    let lambda = DVector::from_fn(nn * m, |r, _| -cx[r % m] / nn as f64);
    Ok(StackedPoint { x, lambda })
}

/// Primal steps `α_i`, dual steps `β_i`, and the constants they derive from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepSizes {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: f64,
    pub delta: f64,
    /// Averagedness constant `ν = 2δτ/(4δτ − 1)` of the forward–backward map.
    pub nu: f64,
}

pub fn averagedness(delta: f64, tau: f64) -> f64 {
    2.0 * delta * tau / (4.0 * delta * tau - 1.0)
}

impl StepSizes {
    /// `τ = (1 + margin)/(2δ)`, `α_i = (‖C_i‖ + τ)⁻¹`, `β_i = (mean_j ‖C_j‖ + τ)⁻¹`.
    pub fn from_constants(constants: &GameConstants, tau_margin: f64) -> Result<Self> {
        if !(tau_margin > 0.0) || !tau_margin.is_finite() {
            return Err(Error::InvalidParams("tau margin must be positive".into()));
        }
        let tau = (1.0 + tau_margin) * constants.tau_min;
        let alpha = constants
            .coupling_norms
            .iter()
            .map(|c| 1.0 / (c + tau))
            .collect::<Vec<_>>();
        let beta = vec![1.0 / (constants.coupling_norm_mean + tau); alpha.len()];
        Ok(Self {
            alpha,
            beta,
            tau,
            delta: constants.delta,
            nu: averagedness(constants.delta, tau),
        })
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha.iter().cloned().fold(0.0, f64::max)
    }

    pub fn beta_max(&self) -> f64 {
        self.beta.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub steps: StepSizes,
    /// Estimated smallest eigenvalue of `Φ`.
    pub min_eigenvalue: f64,
}

/// Slack allowed when certifying `Φ ⪰ τI`.
pub const PD_SLACK: f64 = 1e-9;
const DENSE_CERT_LIMIT: usize = 4000;

pub fn build_preconditioner<G: AggregativeGame + ?Sized>(
    game: &G,
    tau_margin: f64,
) -> Result<Preconditioner> {
    let c = crate::game_model::constants(game)?;
    Preconditioner::from_steps(game, StepSizes::from_constants(&c, tau_margin)?)
}

impl Preconditioner {
    /// Validates `Φ ⪰ (τ − slack) I` for arbitrary step sizes.
    pub fn from_steps<G: AggregativeGame + ?Sized>(game: &G, steps: StepSizes) -> Result<Self> {
        let nn = game.n_agents();
        check_len(nn, steps.alpha.len())?;
        check_len(nn, steps.beta.len())?;
        if steps
            .alpha
            .iter()
            .chain(&steps.beta)
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidParams(
                "step sizes must be positive and finite".into(),
            ));
        }
        let dim = nn * (game.decision_dim() + game.coupling_dim());
        let shift = steps
            .alpha
            .iter()
            .chain(&steps.beta)
            .map(|v| 1.0 / v)
            .fold(0.0, f64::max)
            + (0..nn)
                .map(|i| linalg::spectral_norm(game.coupling_block(i)))
                .fold(0.0, f64::max)
                * 2.0;
        let mut tmp = vec![0.0; dim];
        let top = linalg::power_iteration(
            dim,
            |v, out| {
                apply_phi_raw(game, &steps, v, &mut tmp);
                for j in 0..dim {
                    out[j] = shift * v[j] - tmp[j];
                }
            },
            1e-13,
            200_000,
        );
        let min_eigenvalue = shift - top;
        let tau = steps.tau;
        let certified = if dim <= DENSE_CERT_LIMIT {
            linalg::is_pd_shifted(&assemble_phi(game, &steps), tau - PD_SLACK)
        } else {
            min_eigenvalue >= tau - PD_SLACK
        };
        if !certified {
            return Err(Error::PdCheckFailed {
                min_eigenvalue,
                tau,
            });
        }
        Ok(Self {
            steps,
            min_eigenvalue,
        })
    }
}

/// Matrix-free `Φv` on a flat `(x, λ)` vector.
fn apply_phi_raw<G: AggregativeGame + ?Sized>(
    game: &G,
    steps: &StepSizes,
    v: &[f64],
    out: &mut [f64],
) {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let (x, lam) = v.split_at(nn * n);
    let (ox, ol) = out.split_at_mut(nn * n);
    let mean = block_mean(lam, nn);
    for i in 0..nn {
        let r = i * n..(i + 1) * n;
        for j in r.clone() {
            ox[j] = x[j] / steps.alpha[i];
        }
        let mut ct = vec![0.0; n];
        matvec_t_add(game.coupling_block(i), &mean, &mut ct);
        ox[r].iter_mut().zip(&ct).for_each(|(o, c)| *o -= c);
    }
    let cx = coupling_sum(game, x);
    for i in 0..nn {
        for l in 0..m {
            ol[i * m + l] = lam[i * m + l] / steps.beta[i] - cx[l] / nn as f64;
        }
    }
}

/// Dense `Φ = [[α⁻¹, −(1/N)C_fᵀ], [−(1/N)C_f, β⁻¹]]`.
pub fn assemble_phi<G: AggregativeGame + ?Sized>(game: &G, steps: &StepSizes) -> DMatrix<f64> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let px = nn * n;
    let dim = px + nn * m;
    let mut phi = DMatrix::zeros(dim, dim);
    for i in 0..nn {
        for r in 0..n {
            phi[(i * n + r, i * n + r)] = 1.0 / steps.alpha[i];
        }
        for l in 0..m {
            phi[(px + i * m + l, px + i * m + l)] = 1.0 / steps.beta[i];
        }
        let c = game.coupling_block(i);
        for j in 0..nn {
            for l in 0..m {
                for r in 0..n {
                    let v = -c[(l, r)] / nn as f64;
                    phi[(px + j * m + l, i * n + r)] = v;
                    phi[(i * n + r, px + j * m + l)] = v;
                }
            }
        }
    }
    phi
}

/// `‖v‖_Φ = √(vᵀΦv)`, evaluated matrix-free as
/// `Σα_i⁻¹‖x_i‖² + Σβ_i⁻¹‖λ_i‖² − 2 λ̄ᵀ Σ_i C_i x_i`.
pub fn phi_norm<G: AggregativeGame + ?Sized>(
    game: &G,
    steps: &StepSizes,
    v: &StackedPoint,
) -> Result<f64> {
    check_point(game, v)?;
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let mut q = 0.0;
    for i in 0..nn {
        let xi = &v.x.as_slice()[i * n..(i + 1) * n];
        let li = &v.lambda.as_slice()[i * m..(i + 1) * m];
        q += linalg::dot(xi, xi) / steps.alpha[i] + linalg::dot(li, li) / steps.beta[i];
    }
    let mean = v.dual_mean(nn);
    q -= 2.0 * linalg::dot(&mean, &coupling_sum(game, v.x.as_slice()));
    let scale = v.norm();
    if q < -1e-12 * (1.0 + scale * scale) {
        return Err(Error::PdCheckFailed {
            min_eigenvalue: q / (scale * scale),
            tau: steps.tau,
        });
    }
    Ok(libm::sqrt(q.max(0.0)))
}

/// Components of one forward–backward candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: StackedPoint,
    /// `d̄ = (1/N) Σ_i (C_i(2x̃_i − x_i) − c_i)`
    pub d_bar: Vec<f64>,
}

/// Closed-form full-information candidate from `(x, λ)`:
/// `x̃_i = P_{Ω_i}(x_i − α_i(F_i(x_i, x̄) + C_iᵀλ̄))`,
/// `λ̃_i = P_{≥0}(λ_i + β_i(d̄ − λ_i + λ̄))`.
pub fn full_information_candidate<G: AggregativeGame + ?Sized>(
    game: &G,
    steps: &StepSizes,
    point: &StackedPoint,
) -> Result<Candidate> {
    check_point(game, point)?;
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let x = point.x.as_slice();
    let lam = point.lambda.as_slice();
    let xbar = block_mean(x, nn);
    let lbar = block_mean(lam, nn);
    let mut xt = DVector::zeros(nn * n);
    let mut g = vec![0.0; n];
    let mut y = vec![0.0; n];
    for i in 0..nn {
        let xi = &x[i * n..(i + 1) * n];
        game.partial_gradient(i, xi, &xbar, &mut g);
        matvec_t_add(game.coupling_block(i), &lbar, &mut g);
        for j in 0..n {
            y[j] = xi[j] - steps.alpha[i] * g[j];
        }
        game.local_set(i)
            .project_into(&y, &mut xt.as_mut_slice()[i * n..(i + 1) * n])?;
    }
    let refl: Vec<f64> = xt.iter().zip(x).map(|(a, b)| 2.0 * a - b).collect();
    let cbar = offset_mean(game);
    let d_bar: Vec<f64> = coupling_sum(game, &refl)
        .iter()
        .zip(&cbar)
        .map(|(s, c)| s / nn as f64 - c)
        .collect();
    let mut lt = DVector::zeros(nn * m);
    for i in 0..nn {
        for l in 0..m {
            let li = lam[i * m + l];
            lt[i * m + l] = (li + steps.beta[i] * (d_bar[l] - li + lbar[l])).max(0.0);
        }
    }
    Ok(Candidate {
        point: StackedPoint { x: xt, lambda: lt },
        d_bar,
    })
}

/// The preconditioned forward–backward map `R(ω)`.
pub fn pfb_map<G: AggregativeGame + ?Sized>(
    game: &G,
    precond: &Preconditioner,
    point: &StackedPoint,
) -> Result<StackedPoint> {
    Ok(full_information_candidate(game, &precond.steps, point)?.point)
}

/// Natural KKT residual with a shared multiplier:
/// `max(‖x − P_Ω(x − F(x) − Cᵀλ)‖∞, ‖λ − P_{≥0}(λ + Cx − c)‖∞)`.
pub fn kkt_residual<G: AggregativeGame + ?Sized>(
    game: &G,
    x: &[f64],
    lambda_shared: &[f64],
) -> Result<f64> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    check_len(nn * n, x.len())?;
    check_len(m, lambda_shared.len())?;
    let f = pseudo_gradient(game, x)?;
    let mut worst: f64 = 0.0;
    let mut g = vec![0.0; n];
    let mut p = vec![0.0; n];
    for i in 0..nn {
        let xi = &x[i * n..(i + 1) * n];
        g.copy_from_slice(&f.as_slice()[i * n..(i + 1) * n]);
        matvec_t_add(game.coupling_block(i), lambda_shared, &mut g);
        let y: Vec<f64> = xi.iter().zip(&g).map(|(a, b)| a - b).collect();
        game.local_set(i).project_into(&y, &mut p)?;
        worst = worst.max(
            xi.iter()
                .zip(&p)
                .fold(0.0f64, |w, (a, b)| w.max((a - b).abs())),
        );
    }
    let viol = crate::game_model::coupling_violation(game, x)?;
    for l in 0..m {
        let proj = (lambda_shared[l] + viol[l]).max(0.0);
        worst = worst.max((lambda_shared[l] - proj).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::{
        build_cournot, constants, CapacityRange, CournotParams, GameInstance, Range,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n_firms: usize, seed: u64) -> GameInstance {
        let p = CournotParams {
            n_firms,
            n_markets: 2,
            ..CournotParams::benchmark()
        };
        let p = CournotParams {
            d: Range::new(20.0, 30.0),
            r: CapacityRange::DemandMultiple { lo: 1.5, hi: 2.0 },
            ..p
        };
        build_cournot(&p, seed).unwrap()
    }

    fn random_point(game: &GameInstance, rng: &mut ChaCha8Rng, interior: bool) -> StackedPoint {
        let (nn, m) = (game.n_agents(), game.coupling_dim());
        let mut x = Vec::new();
        for i in 0..nn {
            let set = game.local_set(i);
            let (lo, hi) = set.bounds();
            let y: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect();
            let p = set.project(&y).unwrap();
            if interior {
                let c = set.interior_point();
                let t = 0.9 * rng.random::<f64>();
                x.extend(p.iter().zip(c).map(|(a, b)| t * a + (1.0 - t) * b));
            } else {
                x.extend(p);
            }
        }
        let lambda = DVector::from_fn(nn * m, |_, _| 5.0 * rng.random::<f64>());
        StackedPoint::new(DVector::from_vec(x), lambda)
    }

    fn flat(p: &StackedPoint) -> DVector<f64> {
        DVector::from_iterator(
            p.x.len() + p.lambda.len(),
            p.x.iter().chain(p.lambda.iter()).copied(),
        )
    }

    /// Dense `T₁` and `S` assembled from block definitions.
    fn dense_ops(game: &GameInstance) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
        let px = nn * n;
        let dim = px + nn * m;
        let (c_mat, c_vec) = game.assemble_coupling();
        let mut t1 = DMatrix::zeros(dim, dim);
        t1.view_mut((0, 0), (px, px)).copy_from(&game.assemble_p());
        let lap = DMatrix::<f64>::identity(nn, nn) - DMatrix::from_element(nn, nn, 1.0 / nn as f64);
        let lm = lap.kronecker(&DMatrix::<f64>::identity(m, m));
        t1.view_mut((px, px), (nn * m, nn * m)).copy_from(&lm);
        let mut off = DVector::zeros(dim);
        off.rows_mut(0, px).copy_from(&game.stacked_b());
        for j in 0..nn {
            off.rows_mut(px + j * m, m).copy_from(&(&c_vec / nn as f64));
        }
        let c_f = DMatrix::from_element(nn, 1, 1.0).kronecker(&c_mat);
        let mut s = DMatrix::zeros(dim, dim);
        s.view_mut((0, px), (px, nn * m))
            .copy_from(&(c_f.transpose() / nn as f64));
        s.view_mut((px, 0), (nn * m, px))
            .copy_from(&(-c_f / nn as f64));
        (t1, off, s)
    }

    #[test]
    fn t1_and_s_match_dense_assembly() {
        let g = toy(3, 1);
        let (t1, off, s) = dense_ops(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let p = random_point(&g, &mut rng, false);
            let v = flat(&p);
            let a = flat(&apply_t1(&g, &p).unwrap());
            assert!((a - (&t1 * &v + &off)).amax() < 1e-10);
            let b = flat(&apply_s(&g, &p).unwrap());
            assert!((b - &s * &v).amax() < 1e-12);
        }
        let z = StackedPoint::zeros(&g);
        assert_eq!(flat(&apply_s(&g, &z).unwrap()).amax(), 0.0);
        let t0 = apply_t1(&g, &z).unwrap();
        assert_eq!(t0.x, g.stacked_b());
        let cbar = offset_mean(&g);
        assert!(t0.lambda.iter().enumerate().all(|(r, v)| *v == cbar[r % 4]));
    }

    #[test]
    fn t1_dual_on_consensus_is_offset() {
        let g = toy(3, 2);
        let p = StackedPoint::with_shared_dual(g.slater_point().clone(), &[1.0, 2.0, 3.0, 4.0], 3);
        let t = apply_t1(&g, &p).unwrap();
        let cbar = offset_mean(&g);
        assert!(t
            .lambda
            .iter()
            .enumerate()
            .all(|(r, v)| (*v - cbar[r % 4]).abs() < 1e-14));
    }

    #[test]
    fn s_on_scalar_toy_matches_hand_assembly() {
        use crate::game_model::{AgentSpec, LocalSetDesc, SetShape};
        // N = 2, n = m = 1, C_1 = 2, C_2 = −3, so C_f = [[2, −3], [2, −3]].
        let agent = |c: f64| AgentSpec {
            quad_matrix: DMatrix::from_element(1, 1, 1.0),
            lin_vector: DVector::from_element(1, 0.0),
            local_set: LocalSetDesc::new(SetShape::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            })
            .unwrap(),
            coupling_block: DMatrix::from_element(1, 1, c),
            coupling_offset: DVector::from_element(1, 1.0),
        };
        let g = GameInstance::new(
            vec![agent(2.0), agent(-3.0)],
            vec![0.0],
            DVector::from_vec(vec![0.0, 0.0]),
        )
        .unwrap();
        let p = StackedPoint::new(
            DVector::from_vec(vec![0.5, -0.25]),
            DVector::from_vec(vec![1.0, 3.0]),
        );
        let s = apply_s(&g, &p).unwrap();
        // (1/2)·C_fᵀλ = (1/2)(2·4, −3·4); −(1/2)C_f x = −(1/2)(1.75, 1.75)
        assert_eq!(s.x.as_slice(), &[4.0, -6.0]);
        assert_eq!(s.lambda.as_slice(), &[-0.875, -0.875]);
        assert!(p.dot(&s).abs() < 1e-12);
    }

    #[test]
    fn skew_symmetry_and_phi_bound() {
        let g = toy(3, 3);
        let pre = build_preconditioner(&g, 0.05).unwrap();
        assert!(pre.min_eigenvalue >= pre.steps.tau - PD_SLACK);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = random_point(&g, &mut rng, false);
            let s = apply_s(&g, &p).unwrap();
            assert!(p.dot(&s).abs() <= 1e-12 * (1.0 + p.norm() * s.norm()));
            let nphi = phi_norm(&g, &pre.steps, &p).unwrap();
            assert!(nphi >= libm::sqrt(pre.steps.tau) * p.norm() * (1.0 - 1e-12));
        }
        assert_eq!(
            phi_norm(&g, &pre.steps, &StackedPoint::zeros(&g)).unwrap(),
            0.0
        );
    }

    #[test]
    fn phi_norm_matches_dense() {
        let g = toy(3, 4);
        let pre = build_preconditioner(&g, 0.05).unwrap();
        let phi = assemble_phi(&g, &pre.steps);
        let eig = phi.clone().symmetric_eigenvalues();
        assert!(eig.min() >= pre.steps.tau - PD_SLACK);
        assert!((eig.min() - pre.min_eigenvalue).abs() < 1e-7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_point(&g, &mut rng, false);
        let v = flat(&p);
        let dense = libm::sqrt(v.dot(&(&phi * &v)));
        assert!((dense - phi_norm(&g, &pre.steps, &p).unwrap()).abs() < 1e-9 * dense);
    }

    #[test]
    fn identity_preconditioner_gives_euclidean_norm() {
        use crate::game_model::{AgentSpec, LocalSetDesc, SetShape};
        let agent = AgentSpec {
            quad_matrix: DMatrix::from_element(1, 1, 1.0),
            lin_vector: DVector::from_element(1, 0.0),
            local_set: LocalSetDesc::new(SetShape::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            })
            .unwrap(),
            coupling_block: DMatrix::zeros(1, 1),
            coupling_offset: DVector::from_element(1, 1.0),
        };
        let g = GameInstance::new(vec![agent], vec![0.0], DVector::from_element(1, 0.0)).unwrap();
        let steps = StepSizes {
            alpha: vec![1.0],
            beta: vec![1.0],
            tau: 1.0,
            delta: 1.0,
            nu: averagedness(1.0, 1.0),
        };
        let p = StackedPoint::new(DVector::from_element(1, 3.0), DVector::from_element(1, 4.0));
        assert!((phi_norm(&g, &steps, &p).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn averagedness_values() {
        assert!((averagedness(1.0, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(averagedness(1.0, 1e9) - 0.5 < 1e-9);
        assert!(averagedness(1.0, 1e9) > 0.5);
    }

    #[test]
    fn cournot_steps_are_equal() {
        let g = toy(4, 0);
        let c = constants(&g).unwrap();
        let s = StepSizes::from_constants(&c, 0.05).unwrap();
        let expect = 1.0 / (core::f64::consts::SQRT_2 + s.tau);
        assert!(s
            .alpha
            .iter()
            .chain(&s.beta)
            .all(|v| (v - expect).abs() < 1e-10));
        assert!(s.nu > 0.5 && s.nu < 1.0);
    }

    #[test]
    fn oversized_primal_steps_fail_certificate() {
        let g = toy(3, 0);
        let c = constants(&g).unwrap();
        let mut s = StepSizes::from_constants(&c, 0.05).unwrap();
        s.alpha.iter_mut().for_each(|a| *a *= 3.0);
        assert!(matches!(
            Preconditioner::from_steps(&g, s),
            Err(Error::PdCheckFailed { .. })
        ));
    }

    #[test]
    fn restricted_monotonicity_at_interior_points() {
        let g = toy(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = g.coupling_dim();
        for _ in 0..300 {
            let w = random_point(&g, &mut rng, true);
            let mut par = random_point(&g, &mut rng, true);
            let shared: Vec<f64> = (0..m).map(|_| 3.0 * rng.random::<f64>()).collect();
            par = StackedPoint::with_shared_dual(par.x, &shared, 3);
            let t = |p: &StackedPoint| {
                let a = apply_t1(&g, p).unwrap();
                let b = apply_s(&g, p).unwrap();
                StackedPoint::new(a.x + b.x, a.lambda + b.lambda)
            };
            let lhs = t(&w).sub(&t(&par)).dot(&w.sub(&par));
            assert!(lhs > 0.0);
        }
    }

    /// Resolvent oracle: `ω̃` solves `0 ∈ (Φ + S)ω̃ − (Φω − T₁ω) + N(ω̃)`,
    /// a strongly monotone affine VI solved by projected fixed-point steps.
    fn dense_resolvent(
        game: &GameInstance,
        pre: &Preconditioner,
        p: &StackedPoint,
    ) -> StackedPoint {
        let (_, _, s) = dense_ops(game);
        let phi = assemble_phi(game, &pre.steps);
        let rhs = &phi * flat(p) - flat(&apply_t1(game, p).unwrap());
        let mmat = &phi + &s;
        let eta = 0.5 * pre.min_eigenvalue / mmat.norm_squared();
        let px = p.x.len();
        let (n, nn) = (game.decision_dim(), game.n_agents());
        let mut w = flat(p);
        for _ in 0..400_000 {
            let step = &w - (&mmat * &w - &rhs) * eta;
            let mut next = step.clone();
            for i in 0..nn {
                let y: Vec<f64> = step.rows(i * n, n).iter().copied().collect();
                let proj = game.local_set(i).project(&y).unwrap();
                next.rows_mut(i * n, n).copy_from_slice(&proj);
            }
            for r in px..next.len() {
                next[r] = next[r].max(0.0);
            }
            let moved = (&next - &w).amax();
            w = next;
            if moved < 1e-14 {
                break;
            }
        }
        StackedPoint::new(
            w.rows(0, px).into_owned(),
            w.rows(px, w.len() - px).into_owned(),
        )
    }

    #[test]
    fn pfb_matches_dense_resolvent() {
        let g = toy(2, 6);
        let pre = build_preconditioner(&g, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let p = random_point(&g, &mut rng, false);
            let r = pfb_map(&g, &pre, &p).unwrap();
            let o = dense_resolvent(&g, &pre, &p);
            assert!(
                r.sub(&o).norm() < 1e-8 * (1.0 + r.norm()),
                "{}",
                r.sub(&o).norm()
            );
        }
    }

    #[test]
    fn pfb_is_averaged_in_phi_norm() {
        let g = toy(3, 7);
        let pre = build_preconditioner(&g, 0.05).unwrap();
        let nu = pre.steps.nu;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = random_point(&g, &mut rng, false);
            let b = random_point(&g, &mut rng, false);
            let ra = pfb_map(&g, &pre, &a).unwrap();
            let rb = pfb_map(&g, &pre, &b).unwrap();
            let n2 = |p: &StackedPoint| phi_norm(&g, &pre.steps, p).unwrap().powi(2);
            let lhs = n2(&ra.sub(&rb));
            let res = a.sub(&ra).sub(&b.sub(&rb));
            let rhs = n2(&a.sub(&b)) - (1.0 - nu) / nu * n2(&res);
            assert!(lhs <= rhs + 1e-8 * (1.0 + n2(&a.sub(&b))), "{lhs} > {rhs}");
        }
    }

    #[test]
    fn kkt_residual_positive_off_equilibrium() {
        let g = toy(3, 1);
        let x = g.slater_point().clone();
        let r = kkt_residual(&g, x.as_slice(), &[0.0; 4]).unwrap();
        assert!(r > 0.0);
        assert!(kkt_residual(&g, x.as_slice(), &[0.0; 3]).is_err());
    }
}
