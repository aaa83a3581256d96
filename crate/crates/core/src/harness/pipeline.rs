//! Phase sequencing with on-disk artifacts and resumption.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{derive_seed, DomainSource, ExperimentConfig};
use super::manifest::{ExperimentManifest, Phase, PhaseRecord, PhaseStatus};
use super::report::accuracy_table;
use crate::benchmarks::{generate_shiftshapes_split, load_image_folder, DomainTransformSpec};
use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::continual::{evaluate, train_final, EvalReport, MixedTrainingSet, Mode};
use crate::data::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::model::{accuracy, init_classifier, train_supervised};
use crate::nn::ToyNetConfig;
use crate::pseudo_labels::{infer_pseudo_labels, select_confident_priors, PseudoLabelSet};
use crate::stage1::{refine, write_trace_csv, EnsembleState};
use crate::stage2::{batch_fidelity, synthesize, write_loss_trace_csv, SyntheticSet};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const SOURCE_CHECKPOINT: &str = "checkpoints/source.ckpt";
pub const SYNTHETIC_SET: &str = "synth/synthetic.bin";
pub const PRIORS_FILE: &str = "synth/priors.json";
pub const SYNTHESIS_LOSS_CSV: &str = "reports/synthesis_loss.csv";
const SUBDIRS: [&str; 4] = ["checkpoints", "labels", "synth", "reports"];

pub fn inferred_labels_path(target: &str) -> String {
    format!("labels/{target}.inferred.jsonl")
}

pub fn refined_labels_path(target: &str) -> String {
    format!("labels/{target}.refined.jsonl")
}

pub fn final_checkpoint_path(variant: &str) -> String {
    format!("checkpoints/final_{variant}.ckpt")
}

pub fn eval_report_path(variant: &str) -> String {
    format!("reports/eval_{variant}.json")
}

/// Train and test splits of every configured domain.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub sources_train: Vec<DomainDataset>,
    pub sources_test: Vec<DomainDataset>,
    pub targets_train: Vec<DomainDataset>,
    pub targets_test: Vec<DomainDataset>,
}

impl Datasets {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let load_all = |domains: &[DomainSource], split| -> Result<Vec<DomainDataset>> {
            domains.iter().map(|d| load_domain(config, d, split)).collect()
        };
        let out = Self {
            sources_train: load_all(&config.data.sources, Split::Train)?,
            sources_test: load_all(&config.data.sources, Split::Test)?,
            targets_train: load_all(&config.data.targets, Split::Train)?,
            targets_test: load_all(&config.data.targets, Split::Test)?,
        };
        let names = &out.sources_train[0].class_names;
        let all = out.sources_train.iter().chain(&out.sources_test).chain(&out.targets_train).chain(&out.targets_test);
        for d in all {
            if &d.class_names != names {
                return Err(Error::Config(format!("domain {} has a different label set", d.domain)));
            }
        }
        Ok(out)
    }

    /// Union of the source training splits.
    pub fn source_union(&self) -> Result<DomainDataset> {
        let parts: Vec<&DomainDataset> = self.sources_train.iter().collect();
        DomainDataset::union("sources", &parts)
    }
}

/// Loads one split of a configured domain. Generated domains use a
/// per-domain seed so that no two domains share glyph instances.
pub fn load_domain(config: &ExperimentConfig, domain: &DomainSource, split: Split) -> Result<DomainDataset> {
    let name = domain.name();
    let spec = match domain {
        DomainSource::Folder { folder, .. } => {
            let mut ds = load_image_folder(folder, &split.to_string())?;
            if ds.num_classes != config.data.num_classes {
                return Err(Error::Config(format!(
                    "folder {} has {} classes, config expects {}",
                    folder.display(),
                    ds.num_classes,
                    config.data.num_classes
                )));
            }
            ds.domain = name;
            return Ok(ds);
        }
        DomainSource::Preset(n) => DomainTransformSpec::preset(n)?,
        DomainSource::Custom(spec) => spec.clone(),
    };
    let per_class = match split {
        Split::Train => config.data.train_per_class,
        Split::Test => config.data.test_per_class,
    };
    let seed = derive_seed(config.seed, &format!("data:{name}"));
    let mut ds = generate_shiftshapes_split(config.data.num_classes, per_class, &spec, seed, split)?;
    ds.domain = name;
    Ok(ds)
}

struct PhaseOutput {
    status: PhaseStatus,
    artifacts: Vec<String>,
    metrics: BTreeMap<String, f64>,
}

impl PhaseOutput {
    fn completed() -> Self {
        Self {
            status: PhaseStatus::Completed,
            artifacts: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }
}

/// One experiment run rooted at `runs_dir/<run-id>`.
pub struct Pipeline {
    config: ExperimentConfig,
    run_dir: PathBuf,
    manifest: ExperimentManifest,
    data: Option<Datasets>,
}

impl Pipeline {
    /// Validates `config` and creates a fresh run directory under
    /// `config.runs_dir`.
    pub fn create(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let config = config.with_derived_seeds();
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
        let base = format!("{stamp}-{}", config.hash());
        let mut run_id = base.clone();
        let mut k = 1;
        while config.runs_dir.join(&run_id).exists() {
            k += 1;
            run_id = format!("{base}-{k}");
        }
        let run_dir = config.runs_dir.join(&run_id);
        for sub in SUBDIRS {
            let dir = run_dir.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| Error::path(&dir, e))?;
        }
        let snapshot = run_dir.join(CONFIG_FILE);
        std::fs::write(&snapshot, config.to_toml_string()?).map_err(|e| Error::path(&snapshot, e))?;
        let manifest = ExperimentManifest::new(run_id, config.clone());
        manifest.write(run_dir.join(MANIFEST_FILE))?;
        log::info!("created run {}", run_dir.display());
        Ok(Self {
            config,
            run_dir,
            manifest,
            data: None,
        })
    }

    /// Reopens an existing run; its stored config is authoritative.
    pub fn resume(runs_dir: impl AsRef<Path>, run_id: &str) -> Result<Self> {
        let run_dir = runs_dir.as_ref().join(run_id);
        let manifest = ExperimentManifest::read(run_dir.join(MANIFEST_FILE))?;
        manifest.config.validate()?;
        Ok(Self {
            config: manifest.config.clone(),
            run_dir,
            manifest,
            data: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn manifest(&self) -> &ExperimentManifest {
        &self.manifest
    }

    pub fn data(&mut self) -> Result<&Datasets> {
        if self.data.is_none() {
            self.data = Some(Datasets::load(&self.config)?);
        }
        Ok(self.data.as_ref().expect("just loaded"))
    }

    /// Runs every phase.
    pub fn run(&mut self) -> Result<&ExperimentManifest> {
        self.run_until(Phase::Evaluate)?;
        Ok(&self.manifest)
    }

    /// Runs all phases up to and including `last`, skipping those already
    /// completed with intact artifacts. A failing phase is recorded in the
    /// manifest and stops the run.
    pub fn run_until(&mut self, last: Phase) -> Result<()> {
        for phase in Phase::ALL.into_iter().filter(|&p| p <= last) {
            if self.manifest.is_done(phase, &self.run_dir) {
                log::info!("phase {phase}: already done");
                continue;
            }
            log::info!("phase {phase}: start");
            let started = chrono::Utc::now().to_rfc3339();
            let clock = Instant::now();
            let result = self.execute(phase);
            let wall_seconds = clock.elapsed().as_secs_f64();
            match result {
                Ok(out) => {
                    self.manifest.push(PhaseRecord {
                        phase,
                        status: out.status,
                        started,
                        wall_seconds,
                        artifacts: out.artifacts,
                        metrics: out.metrics,
                        diagnostics: None,
                    });
                    self.manifest.write(self.run_dir.join(MANIFEST_FILE))?;
                    log::info!("phase {phase}: done in {wall_seconds:.1}s");
                }
                Err(e) => {
                    self.manifest.push(PhaseRecord {
                        phase,
                        status: PhaseStatus::Failed,
                        started,
                        wall_seconds,
                        artifacts: Vec::new(),
                        metrics: BTreeMap::new(),
                        diagnostics: Some(e.to_string()),
                    });
                    self.manifest.write(self.run_dir.join(MANIFEST_FILE))?;
                    log::error!("phase {phase} failed: {e}");
                    return Err(if e.is_config() {
                        e
                    } else {
                        Error::PhaseFailed {
                            phase: phase.to_string(),
                            message: e.to_string(),
                        }
                    });
                }
            }
        }
        Ok(())
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn execute(&mut self, phase: Phase) -> Result<PhaseOutput> {
        match phase {
            Phase::TrainSource => self.train_source(),
            Phase::InferLabels => self.infer_labels(),
            Phase::Refine => self.refine(),
            Phase::Synthesize => self.synthesize(),
            Phase::TrainFinal => self.train_final(),
            Phase::Evaluate => self.evaluate(),
        }
    }

    pub fn load_source(&self) -> Result<Checkpoint> {
        Checkpoint::load_expecting(self.path(SOURCE_CHECKPOINT), self.config.data.num_classes)
    }

    fn target_names(&self) -> Vec<String> {
        self.config.data.targets.iter().map(DomainSource::name).collect()
    }

    fn train_source(&mut self) -> Result<PhaseOutput> {
        let cfg = self.config.source_training.clone();
        let c = self.config.data.num_classes;
        let data = self.data()?;
        let train = data.source_union()?;
        let mut model = init_classifier(ToyNetConfig::standard(c), cfg.seed);
        let history = train_supervised(&mut model, &train, &cfg)?;
        let mut out = PhaseOutput::completed();
        out.metrics.insert("train_samples".into(), train.len() as f64);
        for d in data.sources_test.iter().chain(&data.targets_test) {
            out.metrics.insert(format!("test_accuracy.{}", d.domain), accuracy(&model, d)?);
        }
        if let Some(&loss) = history.epoch_loss.last() {
            out.metrics.insert("final_train_loss".into(), loss);
        }
        let meta = TrainingMetadata {
            epochs: cfg.epochs,
            seed: cfg.seed,
            note: Some(format!("source model on {}", train.domain)),
        };
        Checkpoint::new(model, meta).save(self.path(SOURCE_CHECKPOINT))?;
        out.artifacts.push(SOURCE_CHECKPOINT.into());
        Ok(out)
    }

    fn infer_labels(&mut self) -> Result<PhaseOutput> {
        let source = self.load_source()?;
        let names = self.target_names();
        let mut out = PhaseOutput::completed();
        for (name, target) in names.iter().zip(&self.data()?.targets_train.clone()) {
            let labels = infer_pseudo_labels(&source.model, target)?;
            let rel = inferred_labels_path(name);
            labels.write_jsonl(self.path(&rel))?;
            // ground truth is read only to report the noise rate
            out.metrics.insert(format!("noise_rate.{name}"), labels.noise_rate(target)?);
            out.artifacts.push(rel);
        }
        Ok(out)
    }

    fn refine(&mut self) -> Result<PhaseOutput> {
        let source = self.load_source()?;
        let names = self.target_names();
        let c = self.config.data.num_classes;
        let base = self.config.refine.clone();
        let targets = self.data()?.targets_train.clone();
        let mut out = PhaseOutput::completed();
        for (name, target) in names.iter().zip(&targets) {
            let labels = PseudoLabelSet::read_jsonl(self.path(&inferred_labels_path(name)), c)?;
            let mut cfg = base.clone();
            cfg.seed = derive_seed(base.seed, name);
            let ensemble = EnsembleState::from_source(&source.model, &cfg)?;
            let outcome = refine(ensemble, target, &labels, &cfg, Some(&target.labels()))?;
            let rel = refined_labels_path(name);
            outcome.labels.write_jsonl(self.path(&rel))?;
            let trace_rel = format!("reports/refine_{name}.csv");
            write_trace_csv(&outcome.trace, self.path(&trace_rel))?;
            out.metrics.insert(format!("noise_rate.{name}"), outcome.labels.noise_rate(target)?);
            if let Some(last) = outcome.trace.last() {
                out.metrics.insert(format!("ever_reassigned.{name}"), last.ever_reassigned as f64);
            }
            out.artifacts.push(rel);
            out.artifacts.push(trace_rel);
        }
        Ok(out)
    }

    /// One synthesis per source model, seeded with priors from the first
    /// target domain.
    fn synthesize(&mut self) -> Result<PhaseOutput> {
        if self.config.mode == Mode::Suda {
            return Ok(PhaseOutput {
                status: PhaseStatus::Skipped,
                ..PhaseOutput::completed()
            });
        }
        let source = self.load_source()?;
        let c = self.config.data.num_classes;
        let name = self.target_names()[0].clone();
        let target = self.data()?.targets_train[0].clone();
        let labels = PseudoLabelSet::read_jsonl(self.path(&refined_labels_path(&name)), c)?;
        let priors = select_confident_priors(&labels, &target, self.config.pseudo_labels.priors_per_class)?;
        let batches = synthesize(&source.model, &target, &priors, &self.config.synthesis)?;

        let mut out = PhaseOutput::completed();
        let mut fid_min = f64::INFINITY;
        let mut fid_sum = 0.0;
        let mut decreased = 0usize;
        for b in &batches {
            let f = batch_fidelity(&source.model, b)?;
            fid_min = fid_min.min(f);
            fid_sum += f;
            if b.initial_loss().is_some_and(|l0| b.final_loss.total < l0.total) {
                decreased += 1;
            }
            out.metrics.insert(format!("fidelity.class{}", b.label), f);
        }
        out.metrics.insert("fidelity.min".into(), fid_min);
        out.metrics.insert("fidelity.mean".into(), fid_sum / batches.len() as f64);
        out.metrics.insert("classes_with_lower_loss".into(), decreased as f64);

        SyntheticSet::from_batches(&batches).write(self.path(SYNTHETIC_SET))?;
        let priors_json = serde_json::to_string_pretty(&priors)?;
        std::fs::write(self.path(PRIORS_FILE), priors_json).map_err(|e| Error::path(self.path(PRIORS_FILE), e))?;
        write_loss_trace_csv(&batches, self.path(SYNTHESIS_LOSS_CSV))?;
        out.artifacts
            .extend([SYNTHETIC_SET, PRIORS_FILE, SYNTHESIS_LOSS_CSV].map(String::from));
        Ok(out)
    }

    /// Trains the target-only model and, in csuda mode, the model with
    /// synthetic replay (plus the real-source oracle when enabled). All
    /// share the same target data, labels and seed.
    fn train_final(&mut self) -> Result<PhaseOutput> {
        let source = self.load_source()?;
        let c = self.config.data.num_classes;
        let cfg = self.config.final_training.clone();
        let names = self.target_names();
        let data = self.data()?.clone();
        let parts: Vec<&DomainDataset> = data.targets_train.iter().collect();
        let target = DomainDataset::union("targets", &parts)?;
        let mut labels = Vec::with_capacity(target.len());
        for (name, t) in names.iter().zip(&data.targets_train) {
            let set = PseudoLabelSet::read_jsonl(self.path(&refined_labels_path(name)), c)?;
            labels.extend(set.labels_for(t)?);
        }

        let mut out = PhaseOutput::completed();
        let save = |variant: &str, model, out: &mut PhaseOutput| -> Result<()> {
            let rel = final_checkpoint_path(variant);
            let meta = TrainingMetadata {
                epochs: cfg.epochs,
                seed: cfg.seed,
                note: Some(format!("final model ({variant})")),
            };
            Checkpoint::new(model, meta).save(self.run_dir.join(&rel))?;
            out.artifacts.push(rel);
            Ok(())
        };

        let empty = SyntheticSet::empty();
        let plain = MixedTrainingSet::new(&target, labels.clone(), &empty)?;
        save("suda", train_final(&source.model, &plain, &cfg, Mode::Suda)?, &mut out)?;

        if self.config.mode == Mode::Csuda {
            let synthetic = SyntheticSet::read(self.run_dir.join(SYNTHETIC_SET))?;
            let mixed = MixedTrainingSet::new(&target, labels.clone(), &synthetic)?;
            save("csuda", train_final(&source.model, &mixed, &cfg, Mode::Csuda)?, &mut out)?;
        }
        if self.config.evaluation.oracle {
            let real = data.source_union()?;
            let real_set = SyntheticSet {
                images: real.samples.iter().map(|s| s.image.clone()).collect(),
                labels: real.labels(),
                prior_ids: real.samples.iter().map(|s| s.id.clone()).collect(),
            };
            let mixed = MixedTrainingSet::new(&target, labels, &real_set)?;
            save("oracle", train_final(&source.model, &mixed, &cfg, Mode::Csuda)?, &mut out)?;
        }
        Ok(out)
    }

    fn evaluate(&mut self) -> Result<PhaseOutput> {
        let source = self.load_source()?;
        let data = self.data()?.clone();
        let sources: Vec<&DomainDataset> = data.sources_test.iter().collect();
        let targets: Vec<&DomainDataset> = data.targets_test.iter().collect();
        let baseline = evaluate(&source.model, &sources, &targets, None)?.source_accuracy;

        let mut out = PhaseOutput::completed();
        let mut reports: BTreeMap<&str, EvalReport> = BTreeMap::new();
        for variant in ["source", "suda", "csuda", "oracle"] {
            let model = if variant == "source" {
                source.model.clone()
            } else {
                let path = self.path(&final_checkpoint_path(variant));
                if !path.exists() {
                    continue;
                }
                Checkpoint::load_expecting(path, self.config.data.num_classes)?.model
            };
            let report = evaluate(&model, &sources, &targets, Some(baseline))?;
            let rel = eval_report_path(variant);
            report.write_json(self.path(&rel))?;
            out.artifacts.push(rel);
            out.metrics.insert(format!("{variant}.target_accuracy"), report.target_accuracy);
            out.metrics.insert(format!("{variant}.source_accuracy"), report.source_accuracy);
            reports.insert(variant, report);
        }

        let table = accuracy_table(
            &self.config,
            reports.get("source"),
            reports.get("suda"),
            reports.get("csuda"),
            reports.get("oracle"),
        );
        let text_path = self.path("reports/table.txt");
        std::fs::write(&text_path, table.to_text()).map_err(|e| Error::path(&text_path, e))?;
        out.artifacts.push("reports/table.txt".into());
        table.write_csv(self.path("reports/table.csv"))?;
        out.artifacts.push("reports/table.csv".into());

        let primary = match self.config.mode {
            Mode::Suda => "suda",
            Mode::Csuda => "csuda",
        };
        let report = reports
            .remove(primary)
            .ok_or_else(|| Error::Checkpoint(format!("final {primary} model missing")))?;
        if let Some(f) = report.forgetting {
            out.metrics.insert("forgetting".into(), f);
        }
        self.manifest.eval = Some(report);
        Ok(out)
    }
}

/// Loads, validates and runs a config file end to end.
pub fn run_pipeline(config_path: impl AsRef<Path>) -> Result<ExperimentManifest> {
    let config = ExperimentConfig::load(config_path)?;
    let mut pipeline = Pipeline::create(&config)?;
    pipeline.run()?;
    Ok(pipeline.manifest().clone())
}
