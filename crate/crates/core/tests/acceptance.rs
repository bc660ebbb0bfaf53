//! End-to-end acceptance criteria on the 20-firm, 10-market benchmark.
//!
//! Each test writes one `ACn PASS|FAIL ...` line straight to stdout (so it
//! shows without `--nocapture`) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use gne_core::algorithms::*;
use gne_core::diagnostics::{
    assemble_bound_inputs, candidate_error_bound, summability_report, tracking_bound_check,
};
use gne_core::game_model::*;
use gne_core::network::*;
use gne_core::operators::*;
use gne_core::oracle::{extragradient, gne_spot_check, solve_reference, ReferenceSolution};
use gne_core::rng::CounterRng;
use nalgebra::{DMatrix, DVector};

const K: usize = 20_000;
const MARGIN: f64 = 0.05;

fn report(id: u32, name: &str, pass: bool, detail: String) -> bool {
    let line = format!(
        "AC{id:<2} {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

struct Bench {
    game: GameInstance,
    constants: GameConstants,
    reference: ReferenceSolution,
    schedule: GraphSchedule,
    plan: StepPlan,
    run3: RunTrace,
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    d / b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn init(game: &GameInstance) -> StackedPoint {
    StackedPoint::with_shared_dual(
        game.slater_point().clone(),
        &vec![0.0; game.coupling_dim()],
        game.n_agents(),
    )
}

fn bench() -> &'static Bench {
    static B: OnceLock<Bench> = OnceLock::new();
    B.get_or_init(|| {
        let game = build_cournot(&CournotParams::benchmark(), 0).unwrap();
        let constants = constants(&game).unwrap();
        let reference = solve_reference(&game, 1e-10, 200_000).unwrap();
        let schedule = generate_schedule(GraphKind::small_world(4), game.n_agents(), K, 0).unwrap();
        let plan = make_step_plan(&constants, MARGIN, GammaSchedule::PowerLaw { b: 0.51 }).unwrap();
        let mix = ScheduleMixing {
            schedule: &schedule,
            variant: MixingVariant::SafeDiagonal,
            cycle: false,
        };
        let opts = RunOptions {
            max_iter: K,
            reference: Some(reference.x_star_vector()),
            record_kkt: false,
            ..Default::default()
        };
        let run3 = run_algorithm3(&game, &plan, &mix, &init(&game), &opts).unwrap();
        Bench {
            game,
            constants,
            reference,
            schedule,
            plan,
            run3,
        }
    })
}

fn decay_certificate(b: &Bench) -> DecayCertificate {
    let pairs = sample_pairs(b.schedule.horizon(), 100, 200, 0);
    certify_decay(
        &b.schedule,
        MixingVariant::SafeDiagonal,
        None,
        b.schedule.q_window(),
        &pairs,
    )
    .unwrap()
}

#[test]
fn ac01_oracle_agreement() {
    let b = bench();
    let plan =
        make_step_plan(&b.constants, MARGIN, GammaSchedule::Constant { value: 1.0 }).unwrap();
    let start = Instant::now();
    let x0 = b.game.slater_point().clone();
    let lam0 = DVector::zeros(b.game.coupling_dim());
    let opts = RunOptions {
        max_iter: 200_000,
        tol: Some(1e-8),
        ..Default::default()
    };
    let t = run_algorithm1(&b.game, &plan, &x0, &lam0, &opts).unwrap();
    let eg = extragradient(&b.game, 1e-10, 500_000).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let kkt = t.records.last().unwrap().kkt_residual;
    let agree = rel(t.x().as_slice(), &eg.x);
    let pass = t.status == TerminalStatus::Converged && kkt <= 1e-8 && agree <= 1e-6 && secs < 60.0;
    assert!(report(
        1,
        "oracle agreement",
        pass,
        format!(
            "kkt {kkt:.2e} after {} steps, relative gap to extragradient {agree:.2e}, {secs:.1}s",
            t.iterations
        )
    ));
}

#[test]
fn ac02_full_information_convergence() {
    let b = bench();
    let plan =
        make_step_plan(&b.constants, MARGIN, GammaSchedule::Constant { value: 1.0 }).unwrap();
    let opts = RunOptions {
        max_iter: 100_000,
        tol: Some(1e-11),
        snapshot_every: 1,
        record_kkt: false,
        ..Default::default()
    };
    let t = run_algorithm2(&b.game, &plan, &init(&b.game), &opts).unwrap();
    let gap = rel(t.x().as_slice(), &b.reference.x_star);
    let dist: Vec<f64> = t
        .snapshots
        .iter()
        .map(|(_, p)| phi_norm(&b.game, &plan.steps, &p.sub(&t.final_point)).unwrap())
        .collect();
    let worst_rise = dist
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = gap <= 1e-5 && worst_rise <= 1e-9;
    assert!(report(
        2,
        "full-information convergence",
        pass,
        format!("relative gap to x* {gap:.2e} after {} steps, largest Φ-distance increase {worst_rise:.2e}", t.iterations)
    ));
}

#[test]
fn ac03_partial_information_convergence() {
    let b = bench();
    let r = &b.run3.records;
    let res: Vec<f64> = r.iter().map(|r| r.norm_residual.unwrap()).collect();
    let last = *res.last().unwrap();
    let q = res.len() / 4;
    let min_prev = res[res.len() - 2 * q..res.len() - q]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let min_last = res[res.len() - q..]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let peak = r.iter().map(|r| r.consensus_dual).fold(0.0, f64::max);
    let cons = r.last().unwrap().consensus_dual;
    let pass = last < 1e-2 && min_last < min_prev && cons < 1e-3 * peak;
    assert!(report(
        3,
        "partial-information convergence",
        pass,
        format!("normalized residual {last:.2e} at k={K} (last-quarter min {min_last:.2e} < {min_prev:.2e}), consensus {:.2e} of peak", cons / peak)
    ));
}

#[test]
fn ac04_complete_graph_collapse() {
    let b = bench();
    let nn = b.game.n_agents();
    let steps = 200;
    let mix = FnMixing {
        n_nodes: nn,
        f: |_| DMatrix::from_element(nn, nn, 1.0 / nn as f64),
    };
    let opts = RunOptions {
        max_iter: steps,
        snapshot_every: 1,
        record_kkt: false,
        ..Default::default()
    };
    let t3 = run_algorithm3(&b.game, &b.plan, &mix, &init(&b.game), &opts).unwrap();
    let t2 = run_algorithm2(&b.game, &b.plan, &init(&b.game), &opts).unwrap();
    let (mut worst, mut at) = (0.0f64, 0);
    for ((k, p3), (_, p2)) in t3.snapshots.iter().zip(&t2.snapshots) {
        let d = p3.sub(p2).norm();
        if d > worst {
            (worst, at) = (d, *k);
        }
    }
    let last = t3
        .snapshots
        .last()
        .unwrap()
        .1
        .sub(&t2.snapshots.last().unwrap().1)
        .norm();
    let pass = worst <= 1e-10;
    assert!(report(
        4,
        "complete-graph collapse",
        pass,
        format!("max per-iterate distance {worst:.2e} at k={at}, {last:.2e} at k={steps}; the tracked constraint value lags the true average by (I−J)(D^k − D^(k−1))")
    ));
}

#[test]
fn ac05_mean_tracking_invariance() {
    let b = bench();
    let max_inv = |t: &RunTrace| {
        t.records
            .iter()
            .filter_map(|r| r.invariance)
            .flatten()
            .fold(0.0f64, f64::max)
    };
    let mut runs = vec![("benchmark small-world", max_inv(&b.run3))];
    let toy = build_cournot(
        &CournotParams {
            n_firms: 3,
            n_markets: 2,
            ..CournotParams::benchmark()
        },
        5,
    )
    .unwrap();
    let c = constants(&toy).unwrap();
    let variants: [(&str, GraphKind, MixingVariant, GammaSchedule, Option<f64>); 5] = [
        (
            "toy ring split",
            GraphKind::RingSplit { q: 2 },
            MixingVariant::SafeDiagonal,
            GammaSchedule::PowerLaw { b: 0.51 },
            None,
        ),
        (
            "toy complete",
            GraphKind::Complete,
            MixingVariant::SafeDiagonal,
            GammaSchedule::PowerLaw { b: 0.75 },
            None,
        ),
        (
            "toy unmodified metropolis",
            GraphKind::ErdosRenyiConnected { p: 0.5 },
            MixingVariant::PaperExact,
            GammaSchedule::PowerLaw { b: 0.6 },
            None,
        ),
        (
            "toy capped duals",
            GraphKind::RingSplit { q: 3 },
            MixingVariant::SafeDiagonal,
            GammaSchedule::PowerLaw { b: 0.51 },
            Some(40.0),
        ),
        (
            "toy constant relaxation",
            GraphKind::ErdosRenyiConnected { p: 0.7 },
            MixingVariant::SafeDiagonal,
            GammaSchedule::Constant { value: 0.8 },
            None,
        ),
    ];
    for (i, (name, kind, variant, gamma, cap)) in variants.into_iter().enumerate() {
        let schedule = generate_schedule(kind, 3, 3000, i as u64).unwrap();
        let plan = make_step_plan(&c, MARGIN, gamma).unwrap();
        let mix = ScheduleMixing {
            schedule: &schedule,
            variant,
            cycle: false,
        };
        let opts = RunOptions {
            max_iter: 3000,
            dual_cap: cap,
            unsafe_gamma: true,
            record_kkt: false,
            ..Default::default()
        };
        runs.push((
            name,
            max_inv(&run_algorithm3(&toy, &plan, &mix, &init(&toy), &opts).unwrap()),
        ));
    }
    let worst = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = runs
        .iter()
        .map(|(n, v)| format!("{n} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    assert!(report(
        5,
        "mean-tracking invariance",
        worst <= 1e-10,
        format!("max residual {worst:.2e} ({detail})")
    ));
}

#[test]
fn ac06_transition_decay() {
    let cert = decay_certificate(bench());
    let worst = cert
        .observed
        .iter()
        .map(|&(k, s, v)| v / (cert.theta * cert.rho.powi((k - s) as i32)))
        .fold(0.0, f64::max);
    assert!(report(
        6,
        "transition-matrix decay",
        cert.violations == 0,
        format!(
            "{} of {} pairs violate; θ={:.4}, ρ={:.7}, ε={:.3}, Q={}; worst ratio {worst:.2e}",
            cert.violations,
            cert.observed.len(),
            cert.theta,
            cert.rho,
            cert.epsilon,
            cert.q_window
        )
    ));
}

#[test]
fn ac07_tracking_error_bound() {
    let b = bench();
    let (mut checked, mut bad, mut excess) = (0, 0, f64::NEG_INFINITY);
    for r in &b.run3.records {
        if let (Some(t), Some(e)) = (r.tracking, r.err_norm) {
            let d = e - candidate_error_bound(&b.constants, &b.plan.steps, &t);
            checked += 1;
            excess = excess.max(d);
            if d > 1e-9 {
                bad += 1;
            }
        }
    }
    let pass = bad == 0 && checked == K;
    assert!(report(
        7,
        "error bound from tracking errors",
        pass,
        format!("{bad} of {checked} steps above the bound, max excess {excess:.2e}")
    ));
}

#[test]
fn ac08_tracking_error_decay_bounds() {
    let b = bench();
    let cert = decay_certificate(b);
    let inputs =
        assemble_bound_inputs(&b.game, &b.constants, &b.plan, &cert, &b.run3, None).unwrap();
    let rep = tracking_bound_check(&b.run3, &inputs);
    assert!(report(
        8,
        "tracking-error bounds",
        rep.passed(),
        format!(
            "{} violations over {} checks, max ratio σ/z/y {:.1e}/{:.1e}/{:.1e} (B_Ω={:.0}, B_D={:.0}{})",
            rep.violations.len(),
            rep.checked,
            rep.max_ratio[0],
            rep.max_ratio[1],
            rep.max_ratio[2],
            inputs.b_omega,
            inputs.b_d,
            if rep.b_d_empirical { " measured" } else { "" }
        )
    ));
}

#[test]
fn ac09_summability() {
    let sr = summability_report(&bench().run3);
    let pass = sr.relaxation_strictly_increasing
        && sr.relaxation_last_quarter_share > 0.01
        && sr.cauchy_flag;
    let total = sr.partial_sums.last().copied().unwrap_or(0.0);
    let q = sr.partial_sums.len() * 3 / 4;
    assert!(report(
        9,
        "relaxation and error summability",
        pass,
        format!(
            "Σγ(1−γ) strictly increasing {} with last-quarter share {:.3}; Σγ‖e‖ = {total:.4e}, last-quarter increment {:.2e}",
            sr.relaxation_strictly_increasing,
            sr.relaxation_last_quarter_share,
            (total - sr.partial_sums[q]) / total
        )
    ));
}

fn random_point(game: &GameInstance, rng: &CounterRng, t: u64) -> StackedPoint {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let mut x = Vec::with_capacity(nn * n);
    for i in 0..nn {
        let (lo, hi) = game.local_set(i).bounds();
        let raw: Vec<f64> = (0..n)
            .map(|j| rng.uniform(1, t * 1000 + (i * n + j) as u64, lo[j] - 10.0, hi[j] + 10.0))
            .collect();
        x.extend(game.local_set(i).project(&raw).unwrap());
    }
    let lam: Vec<f64> = (0..nn * m)
        .map(|j| rng.uniform(2, t * 1000 + j as u64, 0.0, 60.0))
        .collect();
    StackedPoint::new(DVector::from_vec(x), DVector::from_vec(lam))
}

struct OperatorStats {
    skew: f64,
    coco: f64,
    lip: f64,
    avg: f64,
    phi_gap: f64,
}

fn operator_stats(game: &GameInstance, samples: u64) -> OperatorStats {
    let c = constants(game).unwrap();
    let pre = build_preconditioner(game, MARGIN).unwrap();
    let steps = &pre.steps;
    let phi = assemble_phi(game, steps);
    let phi_min = phi.clone().symmetric_eigen().eigenvalues.min();
    let rng = CounterRng::new(99);
    let mut s = OperatorStats {
        skew: 0.0,
        coco: f64::NEG_INFINITY,
        lip: f64::NEG_INFINITY,
        avg: f64::NEG_INFINITY,
        phi_gap: phi_min - steps.tau,
    };
    for t in 0..samples {
        let (p, q) = (
            random_point(game, &rng, 3 * t),
            random_point(game, &rng, 3 * t + 1),
        );
        let (sp, sq) = (apply_s(game, &p).unwrap(), apply_s(game, &q).unwrap());
        let scale = 1.0 + p.norm() * q.norm();
        s.skew = s
            .skew
            .max((sp.dot(&q) + p.dot(&sq)).abs() / scale)
            .max(sp.dot(&p).abs() / (1.0 + p.norm() * p.norm()));
        let df = pseudo_gradient(game, p.x.as_slice()).unwrap()
            - pseudo_gradient(game, q.x.as_slice()).unwrap();
        let dx = &p.x - &q.x;
        s.coco = s
            .coco
            .max((c.delta * df.norm_squared() - df.dot(&dx)) / (1.0 + dx.norm_squared()));
        let w = random_point(game, &rng, 3 * t + 2);
        let (w1, w2) = (&w.x, &q.x);
        let e = extended_pseudo_gradient(game, p.x.as_slice(), w1.as_slice()).unwrap()
            - extended_pseudo_gradient(game, q.x.as_slice(), w2.as_slice()).unwrap();
        let din = (dx.norm_squared() + (w1 - w2).norm_squared()).sqrt();
        s.lip = s.lip.max((e.norm() - c.lip_epg * din) / (1.0 + din));
        let (rp, rq) = (
            pfb_map(game, &pre, &p).unwrap(),
            pfb_map(game, &pre, &q).unwrap(),
        );
        let nu = steps.nu;
        let lhs = phi_norm(game, steps, &rp.sub(&rq)).unwrap().powi(2);
        let base = phi_norm(game, steps, &p.sub(&q)).unwrap().powi(2);
        let resid = phi_norm(game, steps, &p.sub(&rp).sub(&q.sub(&rq)))
            .unwrap()
            .powi(2);
        s.avg = s
            .avg
            .max((lhs - base + (1.0 - nu) / nu * resid) / (1.0 + base));
    }
    s
}

#[test]
fn ac10_operator_properties() {
    let toy = build_cournot(
        &CournotParams {
            n_firms: 3,
            n_markets: 2,
            ..CournotParams::benchmark()
        },
        3,
    )
    .unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, g) in [("toy", &toy), ("benchmark", &bench().game)] {
        let s = operator_stats(g, 1000);
        pass &= s.skew <= 1e-12
            && s.coco <= 1e-9
            && s.lip <= 1e-9
            && s.avg <= 1e-8
            && s.phi_gap >= -1e-9;
        parts.push(format!(
            "{name}: skew {:.1e}, cocoercivity excess {:.1e}, Lipschitz excess {:.1e}, averaged excess {:.1e}, λmin(Φ)−τ {:.1e}",
            s.skew, s.coco, s.lip, s.avg, s.phi_gap
        ));
    }
    assert!(report(
        10,
        "operator properties (1000 samples each)",
        pass,
        parts.join("; ")
    ));
}

#[test]
fn ac11_semi_decentralized_is_faster() {
    let b = bench();
    let plan =
        make_step_plan(&b.constants, MARGIN, GammaSchedule::Constant { value: 1.0 }).unwrap();
    let opts = RunOptions {
        max_iter: K,
        reference: Some(b.reference.x_star_vector()),
        record_kkt: false,
        ..Default::default()
    };
    let t1 = run_algorithm1(
        &b.game,
        &plan,
        b.game.slater_point(),
        &DVector::zeros(b.game.coupling_dim()),
        &opts,
    )
    .unwrap();
    let mut bad = Vec::new();
    let mut checked = 0;
    for k in (600..=K).step_by(100) {
        let (r1, r3) = (
            t1.records[k].norm_residual.unwrap(),
            b.run3.records[k].norm_residual.unwrap(),
        );
        checked += 1;
        if r1 > r3 {
            bad.push(k);
        }
    }
    assert!(report(
        11,
        "semi-decentralized ordering",
        bad.is_empty(),
        format!(
            "{} of {checked} checkpoints out of order; at k=600: {:.2e} vs {:.2e}",
            bad.len(),
            t1.records[600].norm_residual.unwrap(),
            b.run3.records[600].norm_residual.unwrap()
        )
    ));
}

#[test]
fn ac12_equilibrium_spot_check() {
    let b = bench();
    let s = gne_spot_check(&b.game, &b.reference.x_star, 100, 0).unwrap();
    assert!(report(
        12,
        "equilibrium spot check",
        s.worst_improvement <= 1e-8,
        format!(
            "best unilateral improvement {:.2e} (agent {}) over {} deviations",
            s.worst_improvement, s.worst_agent, s.samples
        )
    ));
}
