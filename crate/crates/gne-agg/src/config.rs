//! Experiment configuration: a single schema-versioned JSON document, or a
//! named preset, with command-line overrides applied on top.

use std::path::{Path, PathBuf};

use gne_core::algorithms::GammaSchedule;
use gne_core::game_model::{build_cournot, CournotParams, GameInstance};
use gne_core::network::{generate_schedule, GraphKind, GraphSchedule, MixingVariant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{read_json, InstanceFile, ScheduleFile, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InstanceSpec {
    Cournot { params: CournotParams, seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum NetworkSpec {
    Generated {
        graph: GraphKind,
        seed: u64,
        /// Defaults to the iteration budget.
        #[serde(default)]
        horizon: Option<usize>,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    /// 1, 2 or 3.
    pub algo: u8,
    pub gamma: GammaSchedule,
    /// Column/file label; defaults to the algorithm number.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algo.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    /// Cached reference to load instead of solving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            path: None,
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSpec {
    /// Run the tracking-bound and summability checks for algorithm 3.
    pub bounds: bool,
    /// Number of `(k, s)` pairs for the transition-matrix decay check.
    pub decay_pairs: usize,
    pub decay_max_gap: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            bounds: true,
            decay_pairs: 100,
            decay_max_gap: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub instance: InstanceSpec,
    pub network: NetworkSpec,
    #[serde(default)]
    pub mixing: MixingVariant,
    pub algorithms: Vec<AlgorithmSpec>,
    pub tau_margin: f64,
    pub max_iter: usize,
    /// Optional early-stop tolerance.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub dual_cap: Option<f64>,
    #[serde(default)]
    pub unsafe_gamma: bool,
    #[serde(default = "default_true")]
    pub cycle_schedule: bool,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    pub output_dir: PathBuf,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// 20 firms, 10 markets, small-world graphs with 4 neighbours,
    /// a 5% step margin, algorithm 1 against algorithm 3 with `γ^k = (k+1)^{−0.51}`.
    pub fn paper_v() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            instance: InstanceSpec::Cournot {
                params: CournotParams::benchmark(),
                seed: 0,
            },
            network: NetworkSpec::Generated {
                graph: GraphKind::small_world(4),
                seed: 0,
                horizon: None,
            },
            mixing: MixingVariant::SafeDiagonal,
            algorithms: vec![
                AlgorithmSpec {
                    algo: 1,
                    gamma: GammaSchedule::Constant { value: 1.0 },
                    label: None,
                },
                AlgorithmSpec {
                    algo: 3,
                    gamma: GammaSchedule::PowerLaw { b: 0.51 },
                    label: None,
                },
            ],
            tau_margin: 0.05,
            max_iter: 20_000,
            tol: None,
            dual_cap: None,
            unsafe_gamma: false,
            cycle_schedule: true,
            reference: ReferenceSpec::default(),
            diagnostics: DiagnosticsSpec::default(),
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn preset(name: &str) -> CliResult<Self> {
        match name {
            "paper-v" => Ok(Self::paper_v()),
            other => Err(CliError::Config(format!(
                "unknown preset '{other}' (available: paper-v)"
            ))),
        }
    }

    /// Loads a config file; relative file paths inside it resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut c: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InstanceSpec::File { path } = &mut c.instance {
            fix(path);
        }
        if let NetworkSpec::File { path } = &mut c.network {
            fix(path);
        }
        if let Some(p) = &mut c.reference.path {
            fix(p);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "config schema version {} is not supported",
                self.schema_version
            )));
        }
        if self.algorithms.is_empty() {
            return Err(CliError::Config("no algorithms selected".into()));
        }
        for a in &self.algorithms {
            if !(1..=3).contains(&a.algo) {
                return Err(CliError::Config(format!("unknown algorithm {}", a.algo)));
            }
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(AlgorithmSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config(
                "algorithm labels must be unique; set 'label' to disambiguate".into(),
            ));
        }
        if !(self.tau_margin > 0.0) {
            return Err(CliError::Config("tau_margin must be positive".into()));
        }
        for (what, p) in [
            ("instance", self.instance_path()),
            ("network", self.network_path()),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::Config(format!(
                        "{what} file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    fn instance_path(&self) -> Option<&Path> {
        match &self.instance {
            InstanceSpec::File { path } => Some(path),
            _ => None,
        }
    }

    fn network_path(&self) -> Option<&Path> {
        match &self.network {
            NetworkSpec::File { path } => Some(path),
            _ => None,
        }
    }

    pub fn build_game(&self) -> CliResult<GameInstance> {
        match &self.instance {
            InstanceSpec::Cournot { params, seed } => Ok(build_cournot(params, *seed)?),
            InstanceSpec::File { path } => read_json::<InstanceFile>(path)?.to_game(),
        }
    }

    pub fn build_schedule(&self, n_agents: usize) -> CliResult<GraphSchedule> {
        let s = match &self.network {
            NetworkSpec::Generated {
                graph,
                seed,
                horizon,
            } => generate_schedule(
                *graph,
                n_agents,
                horizon.unwrap_or(self.max_iter).max(1),
                *seed,
            )?,
            NetworkSpec::File { path } => read_json::<ScheduleFile>(path)?.to_schedule()?,
        };
        if s.n_nodes() != n_agents {
            return Err(CliError::Config(format!(
                "schedule has {} nodes but the game has {n_agents} agents",
                s.n_nodes()
            )));
        }
        Ok(s)
    }

    /// Replaces the instance and network seeds.
    pub fn set_seed(&mut self, s: u64) {
        if let InstanceSpec::Cournot { seed, .. } = &mut self.instance {
            *seed = s;
        }
        if let NetworkSpec::Generated { seed, .. } = &mut self.network {
            *seed = s;
        }
    }
}

/// `pow:B` or `const:V`.
pub fn parse_gamma(s: &str) -> CliResult<GammaSchedule> {
    let (kind, val) = s
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("gamma '{s}' must look like pow:B or const:V")))?;
    let v: f64 = val
        .parse()
        .map_err(|_| CliError::Config(format!("gamma value '{val}' is not a number")))?;
    match kind {
        "pow" => Ok(GammaSchedule::PowerLaw { b: v }),
        "const" => Ok(GammaSchedule::Constant { value: v }),
        _ => Err(CliError::Config(format!(
            "gamma kind '{kind}' must be pow or const"
        ))),
    }
}

/// `ALGO[:GAMMA]`, e.g. `1`, `3:pow:0.51`, `3:const:1`.
pub fn parse_run_spec(s: &str) -> CliResult<AlgorithmSpec> {
    let (algo, gamma) = match s.split_once(':') {
        Some((a, g)) => (a, Some(g)),
        None => (s, None),
    };
    let algo: u8 = algo
        .parse()
        .map_err(|_| CliError::Config(format!("run spec '{s}': algorithm must be 1, 2 or 3")))?;
    let gamma = match gamma {
        Some(g) => parse_gamma(g)?,
        None if algo == 3 => GammaSchedule::PowerLaw { b: 0.51 },
        None => GammaSchedule::Constant { value: 1.0 },
    };
    let label = gamma_label(algo, &gamma);
    Ok(AlgorithmSpec {
        algo,
        gamma,
        label: Some(label),
    })
}

pub fn gamma_label(algo: u8, g: &GammaSchedule) -> String {
    match g {
        GammaSchedule::PowerLaw { b } => format!("{algo}_pow{b}"),
        GammaSchedule::Constant { value } => format!("{algo}_const{value}"),
        GammaSchedule::Custom { .. } => format!("{algo}_custom"),
    }
}
