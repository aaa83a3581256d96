//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmarks::DomainTransformSpec;
use crate::continual::{FinalTrainConfig, Mode};
use crate::error::{Error, Result};
use crate::model::TrainConfig;
use crate::pseudo_labels::DEFAULT_PRIORS_PER_CLASS;
use crate::stage1::RefineConfig;
use crate::stage2::SynthesisConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    SingleSource,
    MultiSource,
    MultiTarget,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "single_source" | "single" => Ok(Scenario::SingleSource),
            "multi_source" => Ok(Scenario::MultiSource),
            "multi_target" => Ok(Scenario::MultiTarget),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::SingleSource => "single_source",
            Scenario::MultiSource => "multi_source",
            Scenario::MultiTarget => "multi_target",
        })
    }
}

/// A domain: a built-in preset name, a custom transform table, or an
/// image folder with `train/` and `test/` subdirectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSource {
    Preset(String),
    Folder {
        folder: PathBuf,
        #[serde(default)]
        name: Option<String>,
    },
    Custom(DomainTransformSpec),
}

impl DomainSource {
    pub fn name(&self) -> String {
        match self {
            DomainSource::Preset(n) => n.clone(),
            DomainSource::Custom(spec) => spec.name.clone(),
            DomainSource::Folder { folder, name } => name.clone().unwrap_or_else(|| {
                folder
                    .file_name()
                    .map_or_else(|| folder.display().to_string(), |n| n.to_string_lossy().into_owned())
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DomainSource::Preset(n) => DomainTransformSpec::preset(n).map(|_| ()),
            DomainSource::Custom(spec) => spec.validate(),
            DomainSource::Folder { folder, .. } => {
                if folder.is_dir() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("dataset folder {} does not exist", folder.display())))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub sources: Vec<DomainSource>,
    pub targets: Vec<DomainSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_classes: 7,
            train_per_class: 200,
            test_per_class: 50,
            sources: vec![DomainSource::Preset("photo".into())],
            targets: vec![DomainSource::Preset("sketch".into())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Lowest-entropy target samples kept per class, `N_h`.
    pub priors_per_class: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            priors_per_class: DEFAULT_PRIORS_PER_CLASS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Also train the target + real-source oracle (generated domains only).
    pub oracle: bool,
}

/// Complete experiment description. `seed` is the master seed: the seeds
/// of the individual phases are derived from it and override any seed
/// given in the phase tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_source_training")]
    pub source_training: TrainConfig,
    #[serde(default)]
    pub pseudo_labels: PriorConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub final_training: FinalTrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_mode() -> Mode {
    Mode::Csuda
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_source_training() -> TrainConfig {
    TrainConfig {
        epochs: 12,
        ..TrainConfig::default()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            scenario: Scenario::default(),
            mode: default_mode(),
            runs_dir: default_runs_dir(),
            data: DataConfig::default(),
            source_training: default_source_training(),
            pseudo_labels: PriorConfig::default(),
            refine: RefineConfig::default(),
            synthesis: SynthesisConfig::default(),
            final_training: FinalTrainConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

/// Deterministic 64-bit seed for a named purpose.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// Checks every setting before any computation starts.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let d = &self.data;
        let (ns, nt) = (d.sources.len(), d.targets.len());
        let ok = match self.scenario {
            Scenario::SingleSource => ns == 1 && nt == 1,
            Scenario::MultiSource => ns >= 2 && nt == 1,
            Scenario::MultiTarget => ns == 1 && nt >= 2,
        };
        if !ok {
            return Err(Error::Config(format!(
                "scenario {} does not fit {ns} source and {nt} target domains",
                self.scenario
            )));
        }
        let mut names: Vec<String> = d.sources.iter().chain(&d.targets).map(DomainSource::name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("domain names must be distinct".into()));
        }
        for domain in d.sources.iter().chain(&d.targets) {
            domain.validate()?;
        }
        if self.pseudo_labels.priors_per_class < 1 {
            return Err(Error::Config("priors_per_class (N_h) must be at least 1".into()));
        }
        if self.refine.members < 2 {
            return Err(Error::Config(format!("refine.members (N_e) must be at least 2, got {}", self.refine.members)));
        }
        self.refine.validate(d.num_classes)?;
        let s = &self.synthesis;
        if s.lambda_tv < 0.0 || s.lambda_bn < 0.0 {
            return Err(Error::Config("synthesis weights (lambda) must be non-negative".into()));
        }
        s.validate()?;
        if self.mode == Mode::Csuda && !self.final_training.freeze_head {
            return Err(Error::Config("the head cannot be unfrozen in csuda mode".into()));
        }
        if self.final_training.batch_size < 2 {
            return Err(Error::Config("final_training.batch_size must be at least 2".into()));
        }
        if self.source_training.batch_size == 0 {
            return Err(Error::Config("source_training.batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Short content hash used in run ids.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest[..4].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with all phase seeds derived from the master seed.
    pub fn with_derived_seeds(&self) -> Self {
        let mut c = self.clone();
        c.source_training.seed = derive_seed(self.seed, "source-training");
        c.refine.seed = derive_seed(self.seed, "refine");
        c.synthesis.seed = derive_seed(self.seed, "synthesis");
        c.final_training.seed = derive_seed(self.seed, "final-training");
        c
    }

    /// Task label for tables, e.g. `photo→sketch`.
    pub fn task_name(&self, target: &DomainSource) -> String {
        let sources: Vec<String> = self.data.sources.iter().map(DomainSource::name).collect();
        format!("{}→{}", sources.join("+"), target.name())
    }
}
