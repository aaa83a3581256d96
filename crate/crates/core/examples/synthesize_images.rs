//! Synthesise source-style images from confident sketch samples with a
//! photo-trained model and save them next to their priors as a PNG grid.
//!
//! ```text
//! cargo run --release --example synthesize_images -- [steps] [out.png]
//! ```

use std::time::Instant;

use csuda::benchmarks::{generate_shiftshapes_split, DomainTransformSpec};
use csuda::data::{Image, Split};
use csuda::harness::synthesis_grid;
use csuda::model::{init_classifier, train_supervised, TrainConfig};
use csuda::nn::ToyNetConfig;
use csuda::pseudo_labels::{infer_pseudo_labels, select_confident_priors};
use csuda::stage2::{batch_fidelity, synthesize, SynthesisConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let out = args.next().unwrap_or_else(|| "synthesis_grid.png".into());
    let classes = 7;

    let photo = DomainTransformSpec::preset("photo")?;
    let sketch = DomainTransformSpec::preset("sketch")?;
    let train = generate_shiftshapes_split(classes, 200, &photo, 1, Split::Train)?;
    let target = generate_shiftshapes_split(classes, 200, &sketch, 2, Split::Train)?;
    let mut model = init_classifier(ToyNetConfig::standard(classes), 1);
    train_supervised(&mut model, &train, &TrainConfig { epochs: 12, seed: 1, ..TrainConfig::default() })?;

    let labels = infer_pseudo_labels(&model, &target)?;
    let priors = select_confident_priors(&labels, &target, 32)?;
    let config = SynthesisConfig { steps, ..SynthesisConfig::default() };
    let start = Instant::now();
    let batches = synthesize(&model, &target, &priors, &config)?;
    println!("{steps} steps x {classes} classes in {:.1?}", start.elapsed());

    for b in &batches {
        let first = b.initial_loss().expect("at least one step");
        println!(
            "class {}: fidelity {:.3}  total {:.4} -> {:.4}  (ce {:.4}, tv {:.2}, bn {:.3})",
            b.label,
            batch_fidelity(&model, b)?,
            first.total,
            b.final_loss.total,
            b.final_loss.ce,
            b.final_loss.tv,
            b.final_loss.bn,
        );
    }

    let by_id: std::collections::HashMap<&str, &Image> =
        target.samples.iter().map(|s| (s.id.as_str(), &s.image)).collect();
    let prior_rows: Vec<Vec<&Image>> = priors.iter().map(|ids| ids.iter().map(|id| by_id[id.as_str()]).collect()).collect();
    let synth_rows: Vec<Vec<&Image>> = batches.iter().map(|b| b.images.iter().collect()).collect();
    synthesis_grid(&prior_rows, &synth_rows)?.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
