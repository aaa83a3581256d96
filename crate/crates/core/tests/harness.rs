//! End-to-end runs of the experiment harness on a tiny configuration.

use std::path::Path;
use std::process::Command;

use csuda::continual::{EvalReport, Mode};
use csuda::harness::{
    emit_reports, read_loss_series, DomainSource, ExperimentConfig, ExperimentManifest, Phase, PhaseStatus, Pipeline,
    Scenario,
};

const STEPS: usize = 12;

fn tiny(runs: &Path, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        runs_dir: runs.to_path_buf(),
        ..ExperimentConfig::default()
    };
    c.data.train_per_class = 48;
    c.data.test_per_class = 10;
    c.source_training.epochs = 8;
    c.refine.epochs = 4;
    c.refine.reassign_every = 2;
    c.synthesis.steps = STEPS;
    c.final_training.epochs = 2;
    c
}

fn report(dir: &Path, variant: &str) -> EvalReport {
    EvalReport::read_json(dir.join(format!("reports/eval_{variant}.json"))).unwrap()
}

#[test]
fn single_source_run_completes_and_reports() {
    let runs = tempfile::tempdir().unwrap();
    let config = tiny(runs.path(), 1);
    let mut pipeline = Pipeline::create(&config).unwrap();
    pipeline.run().unwrap();
    let manifest = pipeline.manifest().clone();
    let dir = pipeline.run_dir().to_path_buf();

    assert!(manifest.is_complete(&dir));
    for phase in Phase::ALL {
        assert_eq!(manifest.latest(phase).unwrap().status, PhaseStatus::Completed, "{phase}");
    }
    let eval = manifest.eval.as_ref().unwrap();
    assert!(eval.forgetting.is_some());
    assert_eq!(ExperimentManifest::read(dir.join("manifest.json")).unwrap(), manifest);

    let written = emit_reports(&manifest, &dir).unwrap();
    let grid = image::open(dir.join("reports/synthesis_grid.png")).unwrap();
    // one column of width 32 plus a 2-pixel gap per prior, and a leading gap
    assert_eq!((grid.width() - 2) / 34, 32);
    assert!(written.iter().any(|p| p.ends_with("synthesis_loss.png")));
    let series = read_loss_series(dir.join("reports/synthesis_loss.csv")).unwrap();
    assert_eq!(series.len(), config.data.num_classes);
    assert!(series.values().all(|s| s.len() == STEPS));
    let table = std::fs::read_to_string(dir.join("reports/table.txt")).unwrap();
    assert!(table.contains("photo→sketch"));
}

#[test]
fn identical_config_and_seed_give_identical_reports() {
    let runs = tempfile::tempdir().unwrap();
    let config = tiny(runs.path(), 2);
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let mut p = Pipeline::create(&config).unwrap();
        p.run().unwrap();
        dirs.push(p.run_dir().to_path_buf());
    }
    assert_ne!(dirs[0], dirs[1]);
    for variant in ["source", "suda", "csuda"] {
        assert_eq!(report(&dirs[0], variant), report(&dirs[1], variant), "{variant}");
    }
}

#[test]
fn suda_mode_has_no_synthesis_but_still_tables() {
    let runs = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        mode: Mode::Suda,
        ..tiny(runs.path(), 3)
    };
    let mut p = Pipeline::create(&config).unwrap();
    p.run().unwrap();
    let dir = p.run_dir().to_path_buf();
    assert_eq!(p.manifest().latest(Phase::Synthesize).unwrap().status, PhaseStatus::Skipped);
    emit_reports(p.manifest(), &dir).unwrap();
    assert!(!dir.join("reports/synthesis_grid.png").exists());
    assert!(!dir.join("reports/eval_csuda.json").exists());
    assert!(dir.join("reports/table.txt").exists());
    assert!(dir.join("reports/table.csv").exists());
}

#[test]
fn resume_skips_completed_phases() {
    let runs = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        mode: Mode::Suda,
        ..tiny(runs.path(), 4)
    };
    let mut first = Pipeline::create(&config).unwrap();
    first.run_until(Phase::InferLabels).unwrap();
    let run_id = first.manifest().run_id.clone();
    drop(first);

    let mut resumed = Pipeline::resume(runs.path(), &run_id).unwrap();
    resumed.run().unwrap();
    let phases: Vec<Phase> = resumed.manifest().phases.iter().map(|r| r.phase).collect();
    assert_eq!(phases, Phase::ALL.to_vec());
}

#[test]
fn multi_source_trains_one_model_on_the_union() {
    let runs = tempfile::tempdir().unwrap();
    let mut config = tiny(runs.path(), 5);
    config.scenario = Scenario::MultiSource;
    config.data.sources = ["photo", "art", "cartoon"].map(|d| DomainSource::Preset(d.into())).to_vec();
    let mut p = Pipeline::create(&config).unwrap();
    p.run_until(Phase::TrainSource).unwrap();
    let record = p.manifest().latest(Phase::TrainSource).unwrap();
    let expected = 3 * config.data.num_classes * config.data.train_per_class;
    assert_eq!(record.metrics["train_samples"], expected as f64);
    for d in ["photo", "art", "cartoon", "sketch"] {
        assert!(record.metrics.contains_key(&format!("test_accuracy.{d}")), "{d}");
    }
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_csuda"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn cli_reports_config_errors_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\n[refine]\nmembers = 9\n").unwrap();
    let out = cli(&["run", "--config", bad.to_str().unwrap(), "--runs-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(&bad, "schema_version = 7\n").unwrap();
    let out = cli(&["train-source", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = cli(&["run", "--resume", "x", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_reports_phase_failures_with_exit_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = dir.path().join("shapes");
    for class in ["a", "b", "c", "d", "e", "f", "g"] {
        std::fs::create_dir_all(shapes.join(class)).unwrap();
        std::fs::write(shapes.join(class).join("x.png"), b"not a png").unwrap();
    }
    let cfg = dir.path().join("corrupt_folder.toml");
    let text = format!("schema_version = 1\n[data]\ntargets = [{{ folder = {:?} }}]\n", shapes.to_str().unwrap());
    std::fs::write(&cfg, text).unwrap();
    let out = cli(&["train-source", "--config", cfg.to_str().unwrap(), "--runs-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_runs_phases_and_resumes() {
    let runs = tempfile::tempdir().unwrap();
    let cfg = runs.path().join("tiny.toml");
    std::fs::write(&cfg, tiny(runs.path(), 6).to_toml_string().unwrap()).unwrap();
    let out = cli(&["infer-labels", "--config", cfg.to_str().unwrap(), "--mode", "suda"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_id = std::fs::read_dir(runs.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.path().is_dir())
        .unwrap()
        .file_name()
        .into_string()
        .unwrap();
    let out = cli(&["run", "--resume", &run_id, "--runs-dir", runs.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Tg"), "{stdout}");
    let manifest = ExperimentManifest::read(runs.path().join(&run_id).join("manifest.json")).unwrap();
    assert_eq!(manifest.phases.len(), Phase::ALL.len());
    assert_eq!(manifest.mode, Mode::Suda);
}
