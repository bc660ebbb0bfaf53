//! The four subcommands.  Each returns a JSON-serializable summary and
//! writes its artifacts under the configured output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gne_core::algorithms::{
    make_step_plan, run_algorithm1, run_algorithm2, run_algorithm3, GammaSchedule, RunOptions,
    RunTrace, StepPlan, TerminalStatus,
};
use gne_core::diagnostics::{
    assemble_bound_inputs, candidate_error_bound, summability_report, tracking_bound_check,
    BoundInputs, TrackingBoundReport,
};
use gne_core::game_model::{
    constants, extended_pseudo_gradient, pseudo_gradient, AggregativeGame, GameConstants,
    GameInstance,
};
use gne_core::network::{
    certify_decay, metropolis_weights, sample_pairs, verify_mixing, GraphSchedule, ScheduleMixing,
};
use gne_core::operators::{apply_s, pfb_map, phi_norm, Preconditioner, StackedPoint, StepSizes};
use gne_core::oracle::solve_reference;
use gne_core::rng::CounterRng;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{AlgorithmSpec, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{
    instance_hash, read_json, write_json, write_trace_csv, InstanceFile, ReferenceFile,
    SCHEMA_VERSION,
};

/// Tolerance for the mean-tracking residuals.
pub const INVARIANCE_TOL: f64 = 1e-10;
/// Additive slack for the error bound of the tracking step.
pub const ERROR_BOUND_SLACK: f64 = 1e-9;

/// A prepared experiment: the game, its constants and the step sizes.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub game: GameInstance,
    pub constants: GameConstants,
    pub hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> CliResult<Self> {
        config.validate()?;
        let game = config.build_game()?;
        let constants = constants(&game)?;
        let hash = instance_hash(&game);
        Ok(Self {
            config,
            game,
            constants,
            hash,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn plan(&self, gamma: &GammaSchedule) -> CliResult<StepPlan> {
        Ok(make_step_plan(
            &self.constants,
            self.config.tau_margin,
            gamma.clone(),
        )?)
    }

    pub fn schedule(&self) -> CliResult<GraphSchedule> {
        self.config.build_schedule(self.game.n_agents())
    }

    /// Loads the configured or cached reference if it matches the instance,
    /// otherwise solves for it.
    pub fn reference(&self) -> CliResult<ReferenceFile> {
        let cached = self
            .config
            .reference
            .path
            .clone()
            .unwrap_or_else(|| self.out_dir().join("reference.json"));
        if cached.exists() {
            let r: ReferenceFile = read_json(&cached)?;
            r.validate()?;
            if r.instance_hash == self.hash {
                return Ok(r);
            }
            if self.config.reference.path.is_some() {
                return Err(CliError::InstanceMismatch(format!(
                    "reference {} belongs to another instance",
                    cached.display()
                )));
            }
        }
        let sol = solve_reference(
            &self.game,
            self.config.reference.tol,
            self.config.reference.max_iter,
        )?;
        Ok(ReferenceFile::new(&self.game, sol))
    }

    /// The Slater point with zero multipliers.
    pub fn initial_point(&self) -> StackedPoint {
        let m = self.game.coupling_dim();
        StackedPoint::with_shared_dual(
            self.game.slater_point().clone(),
            &vec![0.0; m],
            self.game.n_agents(),
        )
    }

    pub fn options(&self, reference: Option<&[f64]>) -> RunOptions {
        RunOptions {
            max_iter: self.config.max_iter,
            tol: self.config.tol,
            reference: reference.map(DVector::from_column_slice),
            dual_cap: self.config.dual_cap,
            unsafe_gamma: self.config.unsafe_gamma,
            cycle_schedule: self.config.cycle_schedule,
            ..Default::default()
        }
    }

    pub fn run(
        &self,
        spec: &AlgorithmSpec,
        schedule: &GraphSchedule,
        reference: Option<&[f64]>,
    ) -> CliResult<RunTrace> {
        let plan = self.plan(&spec.gamma)?;
        let init = self.initial_point();
        let opts = self.options(reference);
        let nn = self.game.n_agents();
        let trace = match spec.algo {
            1 => {
                let lam = DVector::from_column_slice(&init.dual_mean(nn));
                run_algorithm1(&self.game, &plan, &init.x, &lam, &opts)?
            }
            2 => run_algorithm2(&self.game, &plan, &init, &opts)?,
            _ => {
                let mix = ScheduleMixing {
                    schedule,
                    variant: self.config.mixing,
                    cycle: self.config.cycle_schedule,
                };
                run_algorithm3(&self.game, &plan, &mix, &init, &opts)?
            }
        };
        Ok(trace)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackingSummary {
    /// Largest mean-tracking residuals of σ, y, z over the run.
    pub max_invariance: [f64; 3],
    pub invariance_ok: bool,
    /// Largest `‖e^k‖ − bound^k`; nonpositive when the bound holds.
    pub error_bound_max_excess: f64,
    pub error_bound_violations: usize,
    pub peak_errors: [f64; 3],
    pub final_errors: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct SummabilitySummary {
    pub error_sum: f64,
    pub relaxation_sum: f64,
    pub cauchy_flag: bool,
    pub relaxation_strictly_increasing: bool,
    pub relaxation_last_quarter_share: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecaySummary {
    pub theta: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub q_window: usize,
    pub pairs: usize,
    pub violations: usize,
    /// Largest observed `‖Ψ(k,s) − 11ᵀ/N‖ / (θρ^{k−s})`.
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub algo: u8,
    pub gamma: GammaSchedule,
    pub status: TerminalStatus,
    pub iterations: usize,
    pub final_kkt_residual: f64,
    pub final_norm_residual: Option<f64>,
    pub final_consensus_dual: f64,
    pub peak_consensus_dual: f64,
    pub tracking: Option<TrackingSummary>,
    pub bound_inputs: Option<BoundInputs>,
    pub tracking_bounds: Option<TrackingBoundReport>,
    pub summability: Option<SummabilitySummary>,
}

pub fn tracking_summary(
    constants: &GameConstants,
    steps: &StepSizes,
    trace: &RunTrace,
) -> TrackingSummary {
    let mut inv = [0.0f64; 3];
    let mut peak = [0.0f64; 3];
    let mut last = [0.0f64; 3];
    let mut excess = f64::NEG_INFINITY;
    let mut violations = 0;
    for r in &trace.records {
        if let Some(v) = r.invariance {
            for q in 0..3 {
                inv[q] = inv[q].max(v[q]);
            }
        }
        if let (Some(t), Some(e)) = (r.tracking, r.err_norm) {
            let d = e - candidate_error_bound(constants, steps, &t);
            excess = excess.max(d);
            if d > ERROR_BOUND_SLACK {
                violations += 1;
            }
            last = [t.sigma_err, t.y_err, t.z_err];
            for q in 0..3 {
                peak[q] = peak[q].max(last[q]);
            }
        }
    }
    TrackingSummary {
        max_invariance: inv,
        invariance_ok: inv.iter().all(|v| *v <= INVARIANCE_TOL),
        error_bound_max_excess: excess,
        error_bound_violations: violations,
        peak_errors: peak,
        final_errors: last,
    }
}

pub fn decay_summary(exp: &Experiment, schedule: &GraphSchedule) -> CliResult<DecaySummary> {
    let d = &exp.config.diagnostics;
    let horizon = schedule.horizon();
    let pairs = sample_pairs(horizon, d.decay_pairs, d.decay_max_gap, 0);
    let cert = certify_decay(
        schedule,
        exp.config.mixing,
        None,
        schedule.q_window(),
        &pairs,
    )?;
    let max_ratio = cert
        .observed
        .iter()
        .map(|&(k, s, v)| v / cert.bound(k - s))
        .fold(0.0, f64::max);
    Ok(DecaySummary {
        theta: cert.theta,
        rho: cert.rho,
        epsilon: cert.epsilon,
        q_window: cert.q_window,
        pairs: pairs.len(),
        violations: cert.violations,
        max_ratio,
    })
}

fn summarize(
    exp: &Experiment,
    spec: &AlgorithmSpec,
    trace: &RunTrace,
    schedule: &GraphSchedule,
) -> CliResult<RunSummary> {
    let last = trace.records.last().expect("at least one record");
    let mut s = RunSummary {
        label: spec.label(),
        algo: spec.algo,
        gamma: spec.gamma.clone(),
        status: trace.status,
        iterations: trace.iterations,
        final_kkt_residual: last.kkt_residual,
        final_norm_residual: last.norm_residual,
        final_consensus_dual: last.consensus_dual,
        peak_consensus_dual: trace
            .records
            .iter()
            .map(|r| r.consensus_dual)
            .fold(0.0, f64::max),
        tracking: None,
        bound_inputs: None,
        tracking_bounds: None,
        summability: None,
    };
    if spec.algo == 3 {
        let plan = exp.plan(&spec.gamma)?;
        s.tracking = Some(tracking_summary(&exp.constants, &plan.steps, trace));
        let sr = summability_report(trace);
        s.summability = Some(SummabilitySummary {
            error_sum: sr.partial_sums.last().copied().unwrap_or(0.0),
            relaxation_sum: sr.relaxation_sums.last().copied().unwrap_or(0.0),
            cauchy_flag: sr.cauchy_flag,
            relaxation_strictly_increasing: sr.relaxation_strictly_increasing,
            relaxation_last_quarter_share: sr.relaxation_last_quarter_share,
        });
        if exp.config.diagnostics.bounds {
            let d = &exp.config.diagnostics;
            let pairs = sample_pairs(schedule.horizon(), d.decay_pairs, d.decay_max_gap, 0);
            let cert = certify_decay(
                schedule,
                exp.config.mixing,
                None,
                schedule.q_window(),
                &pairs,
            )?;
            let inputs = assemble_bound_inputs(
                &exp.game,
                &exp.constants,
                &plan,
                &cert,
                trace,
                exp.config.dual_cap,
            )?;
            s.tracking_bounds = Some(tracking_bound_check(trace, &inputs));
            s.bound_inputs = Some(inputs);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceSummary {
    pub kkt_certificate: f64,
    pub cross_check_agreement: f64,
    pub unique: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub instance_hash: String,
    pub constants: GameConstants,
    pub tau: f64,
    pub delta: f64,
    pub nu: f64,
    pub reference: ReferenceSummary,
    pub decay: Option<DecaySummary>,
    pub runs: Vec<RunSummary>,
}

fn reference_summary(r: &ReferenceFile) -> ReferenceSummary {
    ReferenceSummary {
        kkt_certificate: r.solution.kkt_certificate,
        cross_check_agreement: r.solution.agreement,
        unique: r.solution.unique,
        iterations: r.solution.iterations,
    }
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_trace(dir: &Path, label: &str, trace: &RunTrace) -> CliResult<PathBuf> {
    let path = dir.join(format!("trace_{label}.csv"));
    write_trace_csv(fs::File::create(&path)?, trace)?;
    Ok(path)
}

/// Runs every configured algorithm and writes traces, diagnostics,
/// the reference solution, the instance and the echoed config.
pub fn cmd_run(config: ExperimentConfig) -> CliResult<RunReport> {
    let exp = Experiment::new(config)?;
    let out = exp.out_dir().to_path_buf();
    prepare_out(&out)?;
    write_json(&out.join("config.echo.json"), &exp.config)?;
    write_json(
        &out.join("instance.json"),
        &InstanceFile::from_game(&exp.game),
    )?;
    let reference = exp.reference()?;
    write_json(&out.join("reference.json"), &reference)?;
    let schedule = exp.schedule()?;
    let mut runs = Vec::new();
    for spec in &exp.config.algorithms {
        let trace = exp.run(spec, &schedule, Some(&reference.solution.x_star))?;
        write_trace(&out, &spec.label(), &trace)?;
        runs.push(summarize(&exp, spec, &trace, &schedule)?);
    }
    let steps = StepSizes::from_constants(&exp.constants, exp.config.tau_margin)?;
    let decay = if exp.config.algorithms.iter().any(|a| a.algo == 3) {
        Some(decay_summary(&exp, &schedule)?)
    } else {
        None
    };
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        instance_hash: exp.hash.clone(),
        constants: exp.constants.clone(),
        tau: steps.tau,
        delta: steps.delta,
        nu: steps.nu,
        reference: reference_summary(&reference),
        decay,
        runs,
    };
    write_json(&out.join("diagnostics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub instance_hash: String,
    pub reference: ReferenceSummary,
    pub columns: Vec<String>,
    pub runs: Vec<RunSummary>,
}

/// Runs all algorithms of all configs on their shared instance and writes
/// `compare.csv` with one normalized-residual column per run.
pub fn cmd_compare(configs: Vec<ExperimentConfig>, out: &Path) -> CliResult<CompareReport> {
    if configs.is_empty() {
        return Err(CliError::Config(
            "compare needs at least one configuration".into(),
        ));
    }
    let exps = configs
        .into_iter()
        .map(Experiment::new)
        .collect::<CliResult<Vec<_>>>()?;
    let hash = exps[0].hash.clone();
    for (i, e) in exps.iter().enumerate().skip(1) {
        if e.hash != hash {
            return Err(CliError::InstanceMismatch(format!(
                "configuration {i} has instance {} but configuration 0 has {hash}",
                &e.hash[..12]
            )));
        }
    }
    prepare_out(out)?;
    let reference = exps[0].reference()?;
    write_json(&out.join("reference.json"), &reference)?;
    let multi = exps.len() > 1;
    let mut columns = Vec::new();
    let mut series: Vec<BTreeMap<usize, f64>> = Vec::new();
    let mut runs = Vec::new();
    for (ci, exp) in exps.iter().enumerate() {
        let schedule = exp.schedule()?;
        for spec in &exp.config.algorithms {
            let label = if multi {
                format!("c{ci}_{}", spec.label())
            } else {
                spec.label()
            };
            if columns.contains(&label) {
                return Err(CliError::Config(format!("duplicate run label {label}")));
            }
            let trace = exp.run(spec, &schedule, Some(&reference.solution.x_star))?;
            write_trace(out, &label, &trace)?;
            series.push(
                trace
                    .records
                    .iter()
                    .filter_map(|r| r.norm_residual.map(|v| (r.k, v)))
                    .collect(),
            );
            let mut s = summarize(exp, spec, &trace, &schedule)?;
            s.label = label.clone();
            runs.push(s);
            columns.push(label);
        }
    }
    let k_max = series
        .iter()
        .filter_map(|s| s.keys().next_back().copied())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_path(out.join("compare.csv"))?;
    let mut header = vec!["k".to_string()];
    header.extend(columns.iter().map(|c| format!("{c}_norm_residual")));
    w.write_record(&header)?;
    for k in 0..=k_max {
        let mut row = vec![k.to_string()];
        row.extend(
            series
                .iter()
                .map(|s| s.get(&k).map_or(String::new(), |v| format!("{v:e}"))),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    let report = CompareReport {
        schema_version: SCHEMA_VERSION,
        instance_hash: hash,
        reference: reference_summary(&reference),
        columns,
        runs,
    };
    write_json(&out.join("diagnostics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Network,
    Operators,
    Tracking,
    Bounds,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Network => "network",
            Suite::Operators => "operators",
            Suite::Tracking => "tracking",
            Suite::Bounds => "bounds",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub suite: Suite,
    pub instance_hash: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub samples: usize,
    /// Multiplies every `α_i` (values above 1 break the step conditions).
    pub alpha_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            alpha_scale: 1.0,
        }
    }
}

fn check(name: &str, passed: bool, detail: serde_json::Value) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

/// Runs a property suite, writes `verify_<suite>.json` and fails with
/// [`CliError::Violations`] if any check fails.
pub fn cmd_verify(
    suite: Suite,
    config: ExperimentConfig,
    opts: VerifyOptions,
) -> CliResult<VerifyReport> {
    let exp = Experiment::new(config)?;
    let checks = match suite {
        Suite::Network => verify_network(&exp)?,
        Suite::Operators => verify_operators(&exp, opts)?,
        Suite::Tracking | Suite::Bounds => verify_tracking(&exp, suite == Suite::Bounds)?,
    };
    let report = VerifyReport {
        schema_version: SCHEMA_VERSION,
        suite,
        instance_hash: exp.hash.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    prepare_out(exp.out_dir())?;
    write_json(
        &exp.out_dir().join(format!("verify_{}.json", suite.name())),
        &report,
    )?;
    if !report.passed {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::Violations(format!(
            "{} suite: {}",
            suite.name(),
            failed.join(", ")
        )));
    }
    Ok(report)
}

fn verify_network(exp: &Experiment) -> CliResult<Vec<Check>> {
    let schedule = exp.schedule()?;
    let mut bad = Vec::new();
    let mut min_eps = f64::INFINITY;
    let mut max_stoch: f64 = 0.0;
    for k in 0..schedule.horizon() {
        let g = schedule.graph_at(k);
        let w = metropolis_weights(g, exp.config.mixing);
        let r = verify_mixing(&w.weights, g, 0.0);
        min_eps = min_eps.min(r.max_feasible_epsilon);
        max_stoch = max_stoch.max(r.max_stochasticity_error);
        if !(r.stochastic_ok && r.support_ok && r.max_feasible_epsilon > 0.0) {
            bad.push(k);
        }
    }
    let mut checks = vec![check(
        "mixing_matrices",
        bad.is_empty(),
        serde_json::json!({ "horizon": schedule.horizon(), "failing_iterations": bad.iter().take(20).collect::<Vec<_>>(),
            "min_feasible_epsilon": min_eps, "max_stochasticity_error": max_stoch }),
    )];
    let window = schedule.first_disconnected_window(schedule.q_window());
    checks.push(check(
        "window_connectivity",
        window.is_none(),
        serde_json::json!({ "q_window": schedule.q_window(), "first_disconnected": window }),
    ));
    if bad.is_empty() && window.is_none() {
        let d = decay_summary(exp, &schedule)?;
        checks.push(check(
            "transition_decay",
            d.violations == 0,
            serde_json::to_value(&d)?,
        ));
    }
    Ok(checks)
}

fn random_point(
    game: &GameInstance,
    rng: &CounterRng,
    t: u64,
    dual_scale: f64,
) -> CliResult<StackedPoint> {
    let (nn, n, m) = (game.n_agents(), game.decision_dim(), game.coupling_dim());
    let mut x = Vec::with_capacity(nn * n);
    for i in 0..nn {
        let (lo, hi) = game.local_set(i).bounds();
        let raw: Vec<f64> = (0..n)
            .map(|j| rng.uniform(1, t * (nn * n) as u64 + (i * n + j) as u64, lo[j], hi[j]))
            .collect();
        x.extend(game.local_set(i).project(&raw)?);
    }
    let lam = (0..nn * m)
        .map(|j| rng.uniform(2, t * (nn * m) as u64 + j as u64, 0.0, dual_scale))
        .collect::<Vec<_>>();
    Ok(StackedPoint::new(
        DVector::from_vec(x),
        DVector::from_vec(lam),
    ))
}

fn verify_operators(exp: &Experiment, opts: VerifyOptions) -> CliResult<Vec<Check>> {
    let game = &exp.game;
    let c = &exp.constants;
    let mut steps = StepSizes::from_constants(c, exp.config.tau_margin)?;
    steps.alpha.iter_mut().for_each(|a| *a *= opts.alpha_scale);
    let mut checks = Vec::new();
    let pre = match Preconditioner::from_steps(game, steps.clone()) {
        Ok(p) => {
            checks.push(check(
                "preconditioner_pd",
                true,
                serde_json::json!({ "min_eigenvalue": p.min_eigenvalue, "tau": steps.tau }),
            ));
            Some(p)
        }
        Err(gne_core::Error::PdCheckFailed {
            min_eigenvalue,
            tau,
        }) => {
            checks.push(check(
                "preconditioner_pd",
                false,
                serde_json::json!({ "min_eigenvalue": min_eigenvalue, "tau": tau }),
            ));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let rng = CounterRng::new(17);
    let (mut skew, mut coco, mut lip, mut avg) = (
        0.0f64,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for t in 0..opts.samples as u64 {
        let p = random_point(game, &rng, 2 * t, 50.0)?;
        let q = random_point(game, &rng, 2 * t + 1, 50.0)?;
        let sp = apply_s(game, &p)?;
        let sq = apply_s(game, &q)?;
        let scale = 1.0 + p.norm() * q.norm();
        skew = skew.max((sp.dot(&q) + p.dot(&sq)).abs() / scale);
        let fx = pseudo_gradient(game, p.x.as_slice())?;
        let fy = pseudo_gradient(game, q.x.as_slice())?;
        let df = &fx - &fy;
        let dx = &p.x - &q.x;
        coco = coco.max((c.delta * df.norm_squared() - df.dot(&dx)) / (1.0 + dx.norm_squared()));
        let w1: Vec<f64> = (0..p.x.len()).map(|j| p.x[(j + 7) % p.x.len()]).collect();
        let w2: Vec<f64> = (0..q.x.len()).map(|j| q.x[(j + 3) % q.x.len()]).collect();
        let e1 = extended_pseudo_gradient(game, p.x.as_slice(), &w1)?;
        let e2 = extended_pseudo_gradient(game, q.x.as_slice(), &w2)?;
        let din = (dx.norm_squared()
            + w1.iter()
                .zip(&w2)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
        .sqrt();
        lip = lip.max(((&e1 - &e2).norm() - c.lip_epg * din) / (1.0 + din));
        if let Some(pre) = &pre {
            let rp = pfb_map(game, pre, &p)?;
            let rq = pfb_map(game, pre, &q)?;
            let nu = pre.steps.nu;
            let lhs = phi_norm(game, &pre.steps, &rp.sub(&rq))?.powi(2);
            let base = phi_norm(game, &pre.steps, &p.sub(&q))?.powi(2);
            let resid = phi_norm(game, &pre.steps, &p.sub(&rp).sub(&q.sub(&rq)))?.powi(2);
            avg = avg.max((lhs - base + (1.0 - nu) / nu * resid) / (1.0 + base));
        }
    }
    checks.push(check(
        "skew_symmetry",
        skew <= 1e-12,
        serde_json::json!({ "max_relative": skew, "samples": opts.samples }),
    ));
    checks.push(check(
        "cocoercivity",
        coco <= 1e-9,
        serde_json::json!({ "max_excess": coco, "delta": c.delta }),
    ));
    checks.push(check(
        "epg_lipschitz",
        lip <= 1e-9,
        serde_json::json!({ "max_excess": lip, "lipschitz": c.lip_epg }),
    ));
    if pre.is_some() {
        checks.push(check(
            "fb_averaged",
            avg <= 1e-8,
            serde_json::json!({ "max_excess": avg }),
        ));
    }
    Ok(checks)
}

fn verify_tracking(exp: &Experiment, bounds: bool) -> CliResult<Vec<Check>> {
    let spec = exp
        .config
        .algorithms
        .iter()
        .find(|a| a.algo == 3)
        .cloned()
        .unwrap_or(AlgorithmSpec {
            algo: 3,
            gamma: GammaSchedule::PowerLaw { b: 0.51 },
            label: None,
        });
    let schedule = exp.schedule()?;
    let trace = exp.run(&spec, &schedule, None)?;
    let plan = exp.plan(&spec.gamma)?;
    let t = tracking_summary(&exp.constants, &plan.steps, &trace);
    let mut checks = vec![check(
        "mean_tracking_invariance",
        t.invariance_ok,
        serde_json::json!({ "max": t.max_invariance, "tol": INVARIANCE_TOL, "iterations": trace.iterations }),
    )];
    checks.push(check(
        "error_bound",
        t.error_bound_violations == 0,
        serde_json::json!({ "max_excess": t.error_bound_max_excess, "violations": t.error_bound_violations }),
    ));
    if bounds {
        let d = &exp.config.diagnostics;
        let pairs = sample_pairs(schedule.horizon(), d.decay_pairs, d.decay_max_gap, 0);
        let cert = certify_decay(
            &schedule,
            exp.config.mixing,
            None,
            schedule.q_window(),
            &pairs,
        )?;
        checks.push(check("transition_decay", cert.valid(), serde_json::json!({ "violations": cert.violations, "theta": cert.theta, "rho": cert.rho })));
        let inputs = assemble_bound_inputs(
            &exp.game,
            &exp.constants,
            &plan,
            &cert,
            &trace,
            exp.config.dual_cap,
        )?;
        let rep = tracking_bound_check(&trace, &inputs);
        checks.push(check(
            "tracking_error_bounds",
            rep.passed(),
            serde_json::json!({ "checked": rep.checked, "violations": rep.violations.len(), "max_ratio": rep.max_ratio,
                "first_violations": rep.violations.iter().take(5).collect::<Vec<_>>(), "b_d_empirical": rep.b_d_empirical }),
        ));
        let sr = summability_report(&trace);
        checks.push(check(
            "error_summability",
            sr.cauchy_flag && sr.relaxation_strictly_increasing,
            serde_json::json!({ "cauchy_flag": sr.cauchy_flag, "error_sum": sr.partial_sums.last(),
                "relaxation_strictly_increasing": sr.relaxation_strictly_increasing,
                "relaxation_last_quarter_share": sr.relaxation_last_quarter_share }),
        ));
    }
    Ok(checks)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub instance_hash: String,
    pub reference: ReferenceSummary,
    pub cross_check_kkt: f64,
    pub path: PathBuf,
}

/// Solves (or reuses) the reference solution and writes `reference.json`.
pub fn cmd_oracle(config: ExperimentConfig) -> CliResult<OracleReport> {
    let exp = Experiment::new(config)?;
    prepare_out(exp.out_dir())?;
    let r = exp.reference()?;
    let path = exp.out_dir().join("reference.json");
    write_json(&path, &r)?;
    Ok(OracleReport {
        instance_hash: exp.hash.clone(),
        reference: reference_summary(&r),
        cross_check_kkt: r.solution.cross_check_kkt,
        path,
    })
}
