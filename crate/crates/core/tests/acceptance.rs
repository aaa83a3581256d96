//! Acceptance checks. Prints one PASS/FAIL line per criterion and a summary.
//! The exit code is non-zero when a criterion errors out, or on any FAIL when
//! `ACCEPTANCE_STRICT=1` is set.
//!
//! Criteria 4 to 8 train real models; the whole run takes tens of minutes
//! on a single core. `ACCEPTANCE_ONLY=1,2,3` restricts the run.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use csuda::continual::{EvalReport, Mode};
use csuda::data::{DomainDataset, Split};
use csuda::harness::{load_domain, DomainSource, ExperimentConfig, Pipeline, Scenario};
use csuda::model::{
    fingerprint, init_classifier, train_supervised, BnLayerStats, BnStatProfile, Classifier,
};
use csuda::nn::loss::{cross_entropy, softmax};
use csuda::nn::{BnMode, FeatureMap, ToyNet, ToyNetConfig};
use csuda::pseudo_labels::{infer_pseudo_labels, select_confident_priors, self_entropy, PseudoLabelSet};
use csuda::stage1::{drl_loss, drl_loss_logits, refine, sample_drl, EnsembleState};
use csuda::stage2::{
    batch_fidelity, bn_match_from_stats, bn_match_loss, synthesis_objective, synthesize, tv_norm, SynthesisConfig,
    Weights,
};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------- 1

fn tiny_net(rng: &mut ChaCha8Rng) -> ToyNet<f64> {
    let config = ToyNetConfig {
        num_classes: 4,
        in_channels: 3,
        image_size: 4,
        widths: vec![3, 5],
    };
    let mut net = ToyNet::<f64>::new(config, rng);
    for i in 0..2 {
        for (field, lo, hi) in [
            ("running_mean", -0.3, 0.3),
            ("running_var", 0.5, 1.5),
            ("weight", 0.7, 1.3),
            ("bias", -0.2, 0.2),
        ] {
            for v in net.tensor_mut(&format!("blocks.{i}.bn.{field}")).unwrap() {
                *v = rng.random_range(lo..hi);
            }
        }
    }
    net
}

fn tiny_input(rng: &mut ChaCha8Rng, batch: usize) -> FeatureMap<f64> {
    let data = Array2::from_shape_fn((3, batch * 16), |_| rng.random_range(0.05..0.95));
    FeatureMap::new(data, batch, 4, 4)
}

fn rel_error(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs());
    if scale < 1e-8 {
        (analytic - fd).abs()
    } else {
        (analytic - fd).abs() / scale
    }
}

/// Worst relative error of the input gradient of one synthesis term.
fn input_gradient_error(weights: Weights, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = tiny_net(&mut rng);
    let profile = BnStatProfile {
        layers: [3usize, 5]
            .iter()
            .map(|&c| BnLayerStats {
                mean: (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
                var: (0..c).map(|_| rng.random_range(0.2..2.0)).collect(),
            })
            .collect(),
    };
    let x = tiny_input(&mut rng, 3);
    let labels = [1, 1, 1];
    let (_, grad) = synthesis_objective(&net, &x, &labels, &profile, weights)?;
    let f = |x: &FeatureMap<f64>| synthesis_objective(&net, x, &labels, &profile, weights).map(|(l, _)| l.total);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for j in 0..x.data.len() {
        let mut plus = x.clone();
        plus.data.as_slice_mut().unwrap()[j] += h;
        let mut minus = x.clone();
        minus.data.as_slice_mut().unwrap()[j] -= h;
        let fd = (f(&plus)? - f(&minus)?) / (2.0 * h);
        worst = worst.max(rel_error(grad.data.as_slice().unwrap()[j], fd));
    }
    Ok(worst)
}

/// Worst relative error of the residual loss w.r.t. logits and w.r.t.
/// every network parameter.
fn drl_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = tiny_net(&mut rng);
    let x = tiny_input(&mut rng, 4);
    let sets: [&[usize]; 4] = [&[1], &[0, 2], &[3], &[0]];
    let h = 1e-6;
    let mut worst = 0.0f64;

    let (logits, trace) = net.forward(&x, BnMode::Train, false);
    let (_, dlogits) = drl_loss_logits(&logits, &sets);
    for (idx, &g) in dlogits.indexed_iter() {
        let mut plus = logits.clone();
        plus[idx] += h;
        let mut minus = logits.clone();
        minus[idx] -= h;
        let fd = (drl_loss_logits(&plus, &sets).0 - drl_loss_logits(&minus, &sets).0) / (2.0 * h);
        worst = worst.max(rel_error(g, fd));
    }

    let (grads, _) = net.backward(&trace, &dlogits, None, false);
    let loss = |m: &ToyNet<f64>| drl_loss_logits(&m.forward(&x, BnMode::Train, false).0, &sets).0;
    let analytic: Vec<Vec<f64>> = grads.slices().into_iter().map(|(_, g)| g.to_vec()).collect();
    let names = param_names();
    let h = 1e-5;
    for (name, grad) in names.iter().zip(&analytic) {
        for (j, &g) in grad.iter().enumerate() {
            let mut plus = net.clone();
            plus.tensor_mut(name).unwrap()[j] += h;
            let mut minus = net.clone();
            minus.tensor_mut(name).unwrap()[j] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max(rel_error(g, fd));
        }
    }
    worst
}

fn param_names() -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..2 {
        names.push(format!("blocks.{i}.conv.weight"));
        names.push(format!("blocks.{i}.bn.weight"));
        names.push(format!("blocks.{i}.bn.bias"));
    }
    names.push("head.weight".into());
    names.push("head.bias".into());
    names
}

/// Cross-entropy on logits, a direct check of the loss primitive.
fn ce_logit_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let logits = Array2::from_shape_fn((5, 4), |_| rng.random_range(-2.0..2.0));
    let labels = [0, 3, 1, 1, 2];
    let (_, grad) = cross_entropy(&logits, &labels);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (idx, &g) in grad.indexed_iter() {
        let mut plus = logits.clone();
        plus[idx] += h;
        let mut minus = logits.clone();
        minus[idx] -= h;
        let fd = (cross_entropy(&plus, &labels).0 - cross_entropy(&minus, &labels).0) / (2.0 * h);
        worst = worst.max(rel_error(g, fd));
    }
    worst
}

fn criterion_1() -> Result<Outcome> {
    let ce = ce_logit_error().max(input_gradient_error(Weights { ce: 1.0, tv: 0.0, bn: 0.0 }, 31)?);
    let tv = input_gradient_error(Weights { ce: 0.0, tv: 1.0, bn: 0.0 }, 32)?;
    let bn = input_gradient_error(Weights { ce: 0.0, tv: 0.0, bn: 1.0 }, 33)?;
    let drl = drl_gradient_error();
    let pass = ce < 1e-4 && tv < 1e-4 && bn < 1e-4 && drl < 1e-5;
    Ok(Outcome::new(
        pass,
        format!("max rel err ce {ce:.1e}, tv {tv:.1e}, bn {bn:.1e} (< 1e-4), drl {drl:.1e} (< 1e-5)"),
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Result<Outcome> {
    let c = 7usize;
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();

    let mut one_hot = vec![0.0; c];
    one_hot[2] = 1.0;
    checks.push(("entropy one-hot", self_entropy(&one_hot)?, 0.0));
    let uniform = vec![1.0 / c as f64; c];
    checks.push(("entropy uniform", self_entropy(&uniform)?, (c as f64).ln()));

    let expected = -(1.0 - 1.0 / c as f64).ln();
    checks.push(("drl uniform", drl_loss(&uniform, &[0, 4])?, expected));
    let logits = Array2::<f64>::zeros((1, c));
    checks.push(("drl uniform logits", drl_loss_logits(&logits, &[&[1, 5, 6]]).0, expected));

    // fusion: identical member logits give their softmax, cancelling ones uniform
    let config = ToyNetConfig {
        num_classes: c,
        in_channels: 3,
        image_size: 8,
        widths: vec![2, 2, 2],
    };
    let member = init_classifier(config, 0);
    let z: Vec<f32> = vec![0.5, -1.0, 2.0, 0.0, 0.25, -0.5, 1.0];
    let expected_probs = softmax(ndarray::Array1::from_iter(z.iter().map(|&v| v as f64)).view());
    let mut same = EnsembleState::new(vec![member.clone(), member.clone(), member.clone()], 10)?;
    for k in 0..3 {
        for _ in 0..4 {
            same.record(k, "a", &z)?;
        }
    }
    let fused = same.fuse("a")?;
    let worst = fused.iter().zip(&expected_probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    checks.push(("fuse identical", worst, 0.0));
    let mut cancel = EnsembleState::new(vec![member.clone(), member], 10)?;
    let neg: Vec<f32> = z.iter().map(|v| -v).collect();
    cancel.record(0, "a", &z)?;
    cancel.record(1, "a", &neg)?;
    let fused = cancel.fuse("a")?;
    let worst = fused.iter().map(|p| (p - 1.0 / c as f64).abs()).fold(0.0, f64::max);
    checks.push(("fuse cancelling", worst, 0.0));

    checks.push(("tv constant", tv_norm(&[0.3f64; 12], 3, 2, 2), 0.0));
    checks.push(("tv vertical edge", tv_norm(&[0.0f64, 1.0, 0.0, 1.0], 1, 2, 2), 2.0));
    checks.push(("tv horizontal edge", tv_norm(&[0.0f64, 0.0, 1.0, 1.0], 1, 2, 2), 2.0));
    checks.push(("tv checker", tv_norm(&[0.0f64, 1.0, 1.0, 0.0], 1, 2, 2), 2.0 + 2f64.sqrt()));

    // planted zero: a profile equal to the batch's own statistics
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = tiny_net(&mut rng);
    let x = tiny_input(&mut rng, 4);
    let (_, trace) = net.forward(&x, BnMode::Eval, false);
    let planted = BnStatProfile {
        layers: trace
            .batch_stats
            .iter()
            .map(|(m, v)| BnLayerStats {
                mean: m.to_vec(),
                var: v.to_vec(),
            })
            .collect(),
    };
    checks.push(("bn planted zero", bn_match_loss(&net, &x, &planted)?, 0.0));
    checks.push(("bn planted zero (stats)", bn_match_from_stats(&trace.batch_stats, &planted)?.0, 0.0));

    let failed: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-6)
        .map(|(name, got, want)| format!("{name}: {got} vs {want}"))
        .collect();
    Ok(Outcome::new(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} closed forms within 1e-6", checks.len())
        } else {
            failed.join("; ")
        },
    ))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Result<Outcome> {
    let (c, members, draws) = (7usize, 3usize, 10_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hits = vec![vec![0usize; c]; members];
    let mut eligible = vec![0usize; c];
    let mut malformed = 0usize;
    for _ in 0..draws {
        let y = rng.random_range(0..c);
        let a = sample_drl(y, c, members, &mut rng)?;
        if !a.is_well_formed(c) || a.subsets.len() != members {
            malformed += 1;
        }
        for (k, s) in a.subsets.iter().enumerate() {
            for &l in s {
                hits[k][l] += 1;
            }
        }
        for (l, e) in eligible.iter_mut().enumerate() {
            if l != y {
                *e += 1;
            }
        }
    }
    let mut worst = 0.0f64;
    for row in &hits {
        for (l, &h) in row.iter().enumerate() {
            worst = worst.max((h as f64 / eligible[l] as f64 - 1.0 / members as f64).abs());
        }
    }
    Ok(Outcome::new(
        malformed == 0 && worst <= 0.02,
        format!("{draws} draws, {malformed} malformed, max |freq - 1/3| = {worst:.4}"),
    ))
}

// ---------------------------------------------------------------- 4, 5

struct SourceRun {
    model: Classifier,
    target: DomainDataset,
    labels: PseudoLabelSet,
}

/// Source model and initial pseudo-labels exactly as the pipeline builds
/// them for the default photo→sketch task.
fn source_run(seed: u64) -> Result<(ExperimentConfig, SourceRun)> {
    let config = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    }
    .with_derived_seeds();
    let source = load_domain(&config, &config.data.sources[0], Split::Train)?;
    let target = load_domain(&config, &config.data.targets[0], Split::Train)?;
    let mut model = init_classifier(ToyNetConfig::standard(config.data.num_classes), config.source_training.seed);
    train_supervised(&mut model, &source, &config.source_training)?;
    let labels = infer_pseudo_labels(&model, &target)?;
    Ok((config, SourceRun { model, target, labels }))
}

fn criterion_4(first: &mut Option<SourceRun>) -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3u64 {
        let (config, run) = source_run(seed)?;
        let rho0 = run.labels.noise_rate(&run.target)?;
        let ensemble = EnsembleState::from_source(&run.model, &config.refine)?;
        let out = refine(ensemble, &run.target, &run.labels, &config.refine, None)?;
        let rho = out.labels.noise_rate(&run.target)?;
        pass &= rho0 >= 0.25 && rho <= 0.6 * rho0;
        parts.push(format!("seed {seed}: {:.1}% -> {:.1}% ({:.2}x)", 100.0 * rho0, 100.0 * rho, rho / rho0));
        if seed == 1 {
            *first = Some(run);
        }
    }
    Ok(Outcome::new(pass, parts.join(", ")))
}

fn criterion_5(run: &SourceRun) -> Result<Outcome> {
    let config = SynthesisConfig {
        steps: 1000,
        ..SynthesisConfig::default()
    };
    let before = fingerprint(&run.model);
    let priors = select_confident_priors(&run.labels, &run.target, 32)?;
    let batches = synthesize(&run.model, &run.target, &priors, &config)?;
    let after = fingerprint(&run.model);
    let mut pass = before == after;
    let mut min_fid = 1.0f64;
    let mut decreased = 0;
    for b in &batches {
        let fid = batch_fidelity(&run.model, b)?;
        min_fid = min_fid.min(fid);
        let first = b.initial_loss().context("empty loss trace")?;
        if b.final_loss.total < first.total {
            decreased += 1;
        }
    }
    pass &= min_fid >= 0.9 && decreased == batches.len();
    Ok(Outcome::new(
        pass,
        format!(
            "{} steps: min fidelity {:.3}, loss decreased for {decreased}/{} classes, source model {}",
            config.steps,
            min_fid,
            batches.len(),
            if before == after { "unchanged" } else { "CHANGED" }
        ),
    ))
}

// ---------------------------------------------------------------- 6, 7, 8

struct RunResult {
    suda: EvalReport,
    csuda: EvalReport,
    source: EvalReport,
}

impl RunResult {
    fn margin(&self) -> f64 {
        100.0 * (self.csuda.source_accuracy - self.suda.source_accuracy)
    }

    fn target_gap(&self) -> f64 {
        100.0 * (self.csuda.target_accuracy - self.suda.target_accuracy).abs()
    }
}

fn run_pipeline(config: &ExperimentConfig) -> Result<RunResult> {
    let mut pipeline = Pipeline::create(config)?;
    pipeline.run()?;
    let dir = pipeline.run_dir().to_path_buf();
    let read = |variant: &str| EvalReport::read_json(dir.join(format!("reports/eval_{variant}.json")));
    Ok(RunResult {
        suda: read("suda")?,
        csuda: read("csuda")?,
        source: read("source")?,
    })
}

fn pipeline_config(runs: &Path, seed: u64) -> ExperimentConfig {
    let mut config = ExperimentConfig {
        seed,
        mode: Mode::Csuda,
        runs_dir: runs.to_path_buf(),
        ..ExperimentConfig::default()
    };
    config.synthesis.steps = 1000;
    config
}

fn criterion_6(runs: &Path, results: &mut HashMap<u64, RunResult>) -> Result<Outcome> {
    let mut parts = Vec::new();
    let (mut margin, mut gap) = (0.0, 0.0);
    for seed in 1..=3u64 {
        let r = run_pipeline(&pipeline_config(runs, seed))?;
        parts.push(format!(
            "seed {seed}: Sc {:.1}/{:.1} Tg {:.1}/{:.1}",
            100.0 * r.suda.source_accuracy,
            100.0 * r.csuda.source_accuracy,
            100.0 * r.suda.target_accuracy,
            100.0 * r.csuda.target_accuracy
        ));
        margin += r.margin() / 3.0;
        gap += (100.0 * (r.csuda.target_accuracy - r.suda.target_accuracy)) / 3.0;
        results.insert(seed, r);
    }
    let pass = margin >= 10.0 && gap.abs() <= 3.0;
    Ok(Outcome::new(
        pass,
        format!("mean source margin {margin:+.1} (>= 10), mean target diff {gap:+.1} (|.| <= 3); suda/csuda {}", parts.join(", ")),
    ))
}

fn preset(name: &str) -> DomainSource {
    DomainSource::Preset(name.into())
}

fn criterion_7(runs: &Path) -> Result<Outcome> {
    let mut multi_source = pipeline_config(runs, 1);
    multi_source.scenario = Scenario::MultiSource;
    multi_source.data.sources = vec![preset("photo"), preset("art"), preset("cartoon")];
    multi_source.data.targets = vec![preset("sketch")];
    let mut multi_target = pipeline_config(runs, 1);
    multi_target.scenario = Scenario::MultiTarget;
    multi_target.data.sources = vec![preset("photo")];
    multi_target.data.targets = vec![preset("art"), preset("cartoon"), preset("sketch")];

    let mut pass = true;
    let mut parts = Vec::new();
    for (name, config) in [("multi-source", multi_source), ("multi-target", multi_target)] {
        let r = run_pipeline(&config)?;
        pass &= r.margin() >= 5.0 && r.target_gap() <= 3.0;
        parts.push(format!("{name}: source margin {:+.1}, target diff {:.1}", r.margin(), r.target_gap()));
    }
    Ok(Outcome::new(pass, parts.join(", ")))
}

fn criterion_8(runs: &Path, first: Option<RunResult>) -> Result<Outcome> {
    let config = pipeline_config(runs, 1);
    let a = match first {
        Some(r) => r,
        None => run_pipeline(&config)?,
    };
    let b = run_pipeline(&config)?;
    let same = a.suda == b.suda && a.csuda == b.csuda && a.source == b.source;
    Ok(Outcome::new(
        same,
        if same {
            "two seed-1 runs produced identical reports".to_string()
        } else {
            "reports differ between identical runs".to_string()
        },
    ))
}

// ----------------------------------------------------------------

fn selected() -> Vec<usize> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=8).collect(),
    }
}

fn main() -> ExitCode {
    // `cargo test` forwards harness flags such as `--nocapture`; none apply here.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only = selected();
    let runs: PathBuf = tempfile::tempdir().expect("temp dir").keep();
    let mut source: Option<SourceRun> = None;
    let mut results: HashMap<u64, RunResult> = HashMap::new();
    let (mut failures, mut errors, mut ran) = (0, 0, 0);

    for id in 1..=8usize {
        if !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&mut source),
            5 => match &source {
                Some(run) => criterion_5(run),
                None => source_run(1).and_then(|(_, run)| criterion_5(&run)),
            },
            6 => criterion_6(&runs, &mut results),
            7 => criterion_7(&runs),
            8 => criterion_8(&runs, results.remove(&1)),
            _ => unreachable!(),
        }
        .unwrap_or_else(|e| {
            errors += 1;
            Outcome::new(false, format!("error: {e:#}"))
        });
        ran += 1;
        if !outcome.pass {
            failures += 1;
        }
        println!(
            "criterion {id}: {} ({:.0?}) {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed(),
            outcome.detail
        );
    }
    let _ = std::fs::remove_dir_all(&runs);
    println!("acceptance: {}/{ran} criteria passed", ran - failures);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if errors == 0 && (failures == 0 || !strict) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
