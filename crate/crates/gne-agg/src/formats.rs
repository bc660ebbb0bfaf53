//! Versioned JSON formats for instances, schedules and reference solutions,
//! and the per-iteration trace CSV.

use std::io::Write;
use std::path::Path;

use gne_core::algorithms::RunTrace;
use gne_core::game_model::{AgentSpec, CournotOrigin, GameInstance, LocalSetDesc, SetShape};
use gne_core::network::{Graph, GraphSchedule};
use gne_core::oracle::ReferenceSolution;
use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

fn check_version(found: u32, what: &str) -> CliResult<()> {
    if found != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "{what}: schema version {found} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFile {
    /// Row-major `A_i`.
    pub quad_matrix: Vec<Vec<f64>>,
    pub lin_vector: Vec<f64>,
    pub local_set: SetShape,
    pub interior_point: Vec<f64>,
    pub coupling_block: Vec<Vec<f64>>,
    pub coupling_offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub schema_version: u32,
    pub agg_coupling: Vec<f64>,
    pub agents: Vec<AgentFile>,
    pub slater_point: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<CournotOrigin>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn from_rows(v: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let nr = v.len();
    let nc = v.first().map_or(0, Vec::len);
    if v.iter().any(|r| r.len() != nc) {
        return Err(CliError::Config(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |r, c| v[r][c]))
}

impl InstanceFile {
    pub fn from_game(game: &GameInstance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            agg_coupling: game.agg_coupling().to_vec(),
            agents: game
                .agents()
                .iter()
                .map(|a| AgentFile {
                    quad_matrix: rows(&a.quad_matrix),
                    lin_vector: a.lin_vector.as_slice().to_vec(),
                    local_set: a.local_set.shape().clone(),
                    interior_point: a.local_set.interior_point().to_vec(),
                    coupling_block: rows(&a.coupling_block),
                    coupling_offset: a.coupling_offset.as_slice().to_vec(),
                })
                .collect(),
            slater_point: game.slater_point().as_slice().to_vec(),
            origin: game.origin().cloned(),
        }
    }

    pub fn to_game(&self) -> CliResult<GameInstance> {
        check_version(self.schema_version, "instance")?;
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| -> CliResult<AgentSpec> {
                Ok(AgentSpec {
                    quad_matrix: from_rows(&a.quad_matrix, &format!("agent {i} quad_matrix"))?,
                    lin_vector: DVector::from_column_slice(&a.lin_vector),
                    local_set: LocalSetDesc::with_interior(
                        a.local_set.clone(),
                        a.interior_point.clone(),
                    )?,
                    coupling_block: from_rows(
                        &a.coupling_block,
                        &format!("agent {i} coupling_block"),
                    )?,
                    coupling_offset: DVector::from_column_slice(&a.coupling_offset),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let game = GameInstance::new(
            agents,
            self.agg_coupling.clone(),
            DVector::from_column_slice(&self.slater_point),
        )?;
        Ok(match &self.origin {
            Some(o) => game.with_origin(o.clone()),
            None => game,
        })
    }

    /// SHA-256 of the canonical JSON of the game data (the origin is excluded).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.origin = None;
        let bytes = serde_json::to_vec(&canon).expect("instance serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn instance_hash(game: &GameInstance) -> String {
    InstanceFile::from_game(game).hash()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub schema_version: u32,
    pub n_nodes: usize,
    pub q_window: usize,
    /// Edge lists, one per iteration.
    pub graphs: Vec<Vec<(usize, usize)>>,
}

impl ScheduleFile {
    pub fn from_schedule(s: &GraphSchedule) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n_nodes: s.n_nodes(),
            q_window: s.q_window(),
            graphs: s.graphs().iter().map(|g| g.edges().to_vec()).collect(),
        }
    }

    pub fn to_schedule(&self) -> CliResult<GraphSchedule> {
        check_version(self.schema_version, "schedule")?;
        let graphs = self
            .graphs
            .iter()
            .map(|e| Graph::new(self.n_nodes, e.iter().copied()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GraphSchedule::from_graphs(
            self.n_nodes,
            graphs,
            self.q_window,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFile {
    pub schema_version: u32,
    pub instance_hash: String,
    pub solution: ReferenceSolution,
}

impl ReferenceFile {
    pub fn new(game: &GameInstance, solution: ReferenceSolution) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            instance_hash: instance_hash(game),
            solution,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        check_version(self.schema_version, "reference")
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "k",
    "kkt_residual",
    "norm_residual",
    "consensus_dual",
    "track_sigma",
    "track_y",
    "track_z",
    "err_norm",
    "gamma",
    "partial_sum_gamma_err",
    "fixed_point_residual",
];

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:e}"),
        Some(x) if x.is_nan() => String::new(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

pub fn write_trace_csv<W: std::io::Write>(out: W, trace: &RunTrace) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in &trace.records {
        let t = r.tracking;
        w.write_record([
            r.k.to_string(),
            cell(Some(r.kkt_residual)),
            cell(r.norm_residual),
            cell(Some(r.consensus_dual)),
            cell(t.map(|t| t.sigma_err)),
            cell(t.map(|t| t.y_err)),
            cell(t.map(|t| t.z_err)),
            cell(r.err_norm),
            cell(r.gamma),
            cell(r.partial_sum_gamma_err),
            cell(r.fixed_point_residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}
