//! Adapt a photo model to sketch twice, once on pseudo-labelled target data
//! only and once with synthetic source-style replay, and compare how much
//! photo accuracy each keeps.
//!
//! ```text
//! cargo run --release --example continual_adaptation -- [synthesis_steps]
//! ```

use csuda::benchmarks::{generate_shiftshapes_split, DomainTransformSpec};
use csuda::continual::{evaluate, train_final, FinalTrainConfig, MixedTrainingSet, Mode};
use csuda::data::Split;
use csuda::model::{init_classifier, train_supervised, TrainConfig};
use csuda::nn::ToyNetConfig;
use csuda::pseudo_labels::{infer_pseudo_labels, select_confident_priors};
use csuda::stage1::{refine, EnsembleState, RefineConfig};
use csuda::stage2::{synthesize, SynthesisConfig, SyntheticSet};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let classes = 7;
    let photo = DomainTransformSpec::preset("photo")?;
    let sketch = DomainTransformSpec::preset("sketch")?;
    let photo_train = generate_shiftshapes_split(classes, 200, &photo, 1, Split::Train)?;
    let photo_test = generate_shiftshapes_split(classes, 50, &photo, 1, Split::Test)?;
    let sketch_train = generate_shiftshapes_split(classes, 200, &sketch, 2, Split::Train)?;
    let sketch_test = generate_shiftshapes_split(classes, 50, &sketch, 2, Split::Test)?;

    let mut source = init_classifier(ToyNetConfig::standard(classes), 1);
    train_supervised(&mut source, &photo_train, &TrainConfig { epochs: 12, seed: 1, ..TrainConfig::default() })?;
    let baseline = evaluate(&source, &[&photo_test], &[&sketch_test], None)?;
    println!(
        "source model: photo {:.1}%, sketch {:.1}%",
        100.0 * baseline.source_accuracy,
        100.0 * baseline.target_accuracy
    );

    let initial = infer_pseudo_labels(&source, &sketch_train)?;
    let refine_cfg = RefineConfig::default();
    let refined = refine(EnsembleState::from_source(&source, &refine_cfg)?, &sketch_train, &initial, &refine_cfg, None)?.labels;
    println!(
        "pseudo-label noise {:.1}% -> {:.1}%",
        100.0 * initial.noise_rate(&sketch_train)?,
        100.0 * refined.noise_rate(&sketch_train)?
    );

    let priors = select_confident_priors(&refined, &sketch_train, 32)?;
    let batches = synthesize(&source, &sketch_train, &priors, &SynthesisConfig { steps, ..SynthesisConfig::default() })?;
    let synthetic = SyntheticSet::from_batches(&batches);
    println!("{} synthetic images after {steps} steps", synthetic.len());

    let labels = refined.labels_for(&sketch_train)?;
    let cfg = FinalTrainConfig::default();
    let empty = SyntheticSet::empty();
    for (mode, replay) in [(Mode::Suda, &empty), (Mode::Csuda, &synthetic)] {
        let data = MixedTrainingSet::new(&sketch_train, labels.clone(), replay)?;
        let model = train_final(&source, &data, &cfg, mode)?;
        let r = evaluate(&model, &[&photo_test], &[&sketch_test], Some(baseline.source_accuracy))?;
        println!(
            "{mode:>5}: sketch {:.1}%, photo {:.1}%, forgetting {:+.1} points",
            100.0 * r.target_accuracy,
            100.0 * r.source_accuracy,
            100.0 * r.forgetting.unwrap_or(0.0)
        );
    }
    Ok(())
}
