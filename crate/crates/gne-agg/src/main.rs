use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gne_agg::commands::{cmd_compare, cmd_oracle, cmd_run, cmd_verify, Suite, VerifyOptions};
use gne_agg::config::{parse_gamma, parse_run_spec, AlgorithmSpec, ExperimentConfig};
use gne_agg::{CliError, CliResult};
use gne_core::algorithms::GammaSchedule;

#[derive(Parser)]
#[command(
    name = "gne-agg",
    version,
    about = "Equilibrium seeking in aggregative games over time-varying networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithms and write traces and diagnostics.
    Run(Common),
    /// Run several configurations or algorithm variants on one instance.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Additional configuration files (all must share the instance).
        #[arg(long = "with", value_name = "PATH")]
        with: Vec<PathBuf>,
        /// Run variants `ALGO[:pow:B|:const:V]`, e.g. `1`, `3:pow:0.51`.
        #[arg(long = "run", value_name = "SPEC")]
        runs: Vec<String>,
    },
    /// Run a property suite; exits with status 3 on any violation.
    Verify {
        suite: SuiteArg,
        #[command(flatten)]
        common: Common,
        /// Random samples for the operator suite.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Scale every primal step by this factor.
        #[arg(long, default_value_t = 1.0)]
        alpha_scale: f64,
    },
    /// Compute the reference equilibrium and write reference.json.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Network,
    Operators,
    Tracking,
    Bounds,
}

#[derive(Args)]
struct Common {
    /// Configuration file (JSON).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named configuration; `paper-v` is the default.
    #[arg(long)]
    preset: Option<String>,
    /// Shorthand for `--preset paper-v`.
    #[arg(long = "paper-v", conflicts_with_all = ["config", "preset"])]
    paper_v: bool,
    /// Run only this algorithm.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    algo: Option<u8>,
    /// Relaxation schedule `pow:B` or `const:V`.
    #[arg(long)]
    gamma: Option<String>,
    /// Seed for the instance and the network.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Upper bound on every multiplier.
    #[arg(long)]
    dual_cap: Option<f64>,
    /// Allow non-diminishing relaxation for the tracking algorithm.
    #[arg(long)]
    unsafe_gamma: bool,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut c = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::paper_v(),
        };
        let gamma = self.gamma.as_deref().map(parse_gamma).transpose()?;
        if let Some(algo) = self.algo {
            let gamma = gamma.clone().unwrap_or(if algo == 3 {
                GammaSchedule::PowerLaw { b: 0.51 }
            } else {
                GammaSchedule::Constant { value: 1.0 }
            });
            c.algorithms = vec![AlgorithmSpec {
                algo,
                gamma,
                label: None,
            }];
        } else if let Some(g) = &gamma {
            c.algorithms
                .iter_mut()
                .filter(|a| a.algo != 1)
                .for_each(|a| a.gamma = g.clone());
        }
        if let Some(s) = self.seed {
            c.set_seed(s);
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if self.dual_cap.is_some() {
            c.dual_cap = self.dual_cap;
        }
        if self.unsafe_gamma {
            c.unsafe_gamma = true;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(common) => print_json(&cmd_run(common.resolve()?)?),
        Command::Compare { common, with, runs } => {
            let mut base = common.resolve()?;
            if !runs.is_empty() {
                base.algorithms = runs
                    .iter()
                    .map(|r| parse_run_spec(r))
                    .collect::<CliResult<_>>()?;
                base.validate()?;
            }
            let out = base.output_dir.clone();
            let mut configs = vec![base];
            for p in &with {
                configs.push(ExperimentConfig::load(p)?);
            }
            print_json(&cmd_compare(configs, &out)?)
        }
        Command::Verify {
            suite,
            common,
            samples,
            alpha_scale,
        } => {
            let suite = match suite {
                SuiteArg::Network => Suite::Network,
                SuiteArg::Operators => Suite::Operators,
                SuiteArg::Tracking => Suite::Tracking,
                SuiteArg::Bounds => Suite::Bounds,
            };
            let report = cmd_verify(
                suite,
                common.resolve()?,
                VerifyOptions {
                    samples,
                    alpha_scale,
                },
            );
            if let Err(CliError::Violations(_)) = &report {
                let c = common.resolve()?;
                if let Ok(text) = std::fs::read_to_string(
                    c.output_dir.join(format!("verify_{}.json", suite.name())),
                ) {
                    println!("{text}");
                }
            }
            print_json(&report?)
        }
        Command::Oracle { common, tol } => {
            let mut c = common.resolve()?;
            if let Some(t) = tol {
                c.reference.tol = t;
            }
            print_json(&cmd_oracle(c)?)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gne-agg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
