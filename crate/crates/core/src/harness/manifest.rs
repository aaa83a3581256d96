//! Append-only run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario};
use crate::continual::{EvalReport, Mode};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "csuda-manifest/1";

/// Pipeline phases in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    TrainSource,
    InferLabels,
    Refine,
    Synthesize,
    TrainFinal,
    Evaluate,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::TrainSource,
        Phase::InferLabels,
        Phase::Refine,
        Phase::Synthesize,
        Phase::TrainFinal,
        Phase::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::TrainSource => "train-source",
            Phase::InferLabels => "infer-labels",
            Phase::Refine => "refine",
            Phase::Synthesize => "synthesize",
            Phase::TrainFinal => "train-final",
            Phase::Evaluate => "evaluate",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseStatus {
    Completed,
    Failed,
    /// Not applicable in this mode (synthesis under SUDA).
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub status: PhaseStatus,
    pub started: String,
    pub wall_seconds: f64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub schema: String,
    pub run_id: String,
    pub created: String,
    pub scenario: Scenario,
    pub mode: Mode,
    /// Config as executed, with derived phase seeds filled in.
    pub config: ExperimentConfig,
    /// One entry per phase execution, in order; never rewritten.
    pub phases: Vec<PhaseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
}

impl ExperimentManifest {
    pub fn new(run_id: String, config: ExperimentConfig) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            run_id,
            created: chrono::Utc::now().to_rfc3339(),
            scenario: config.scenario,
            mode: config.mode,
            config,
            phases: Vec::new(),
            eval: None,
        }
    }

    /// Latest record of `phase`, if it ever ran.
    pub fn latest(&self, phase: Phase) -> Option<&PhaseRecord> {
        self.phases.iter().rev().find(|r| r.phase == phase)
    }

    /// Whether the latest record of `phase` completed (or was skipped) and
    /// all its artifacts still exist under `run_dir`.
    pub fn is_done(&self, phase: Phase, run_dir: &Path) -> bool {
        self.latest(phase).is_some_and(|r| {
            matches!(r.status, PhaseStatus::Completed | PhaseStatus::Skipped)
                && r.artifacts.iter().all(|a| run_dir.join(a).exists())
        })
    }

    /// Every phase completed or skipped.
    pub fn is_complete(&self, run_dir: &Path) -> bool {
        Phase::ALL.iter().all(|&p| self.is_done(p, run_dir))
    }

    pub fn push(&mut self, record: PhaseRecord) {
        self.phases.push(record);
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp, text).map_err(|e| Error::path(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::path(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(Error::Config(format!("unsupported manifest schema {:?}", manifest.schema)));
        }
        Ok(manifest)
    }
}
