//! Clean the sketch pseudo-labels with the residual-label ensemble and
//! print the noise rate after every epoch.
//!
//! ```text
//! cargo run --release --example refine_labels -- [epochs] [members]
//! ```

use csuda::benchmarks::{generate_shiftshapes_split, DomainTransformSpec};
use csuda::data::Split;
use csuda::model::{init_classifier, train_supervised, TrainConfig};
use csuda::nn::ToyNetConfig;
use csuda::pseudo_labels::{infer_pseudo_labels, LabelSource};
use csuda::stage1::{refine, EnsembleState, RefineConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let members: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let classes = 7;

    let photo = generate_shiftshapes_split(classes, 200, &DomainTransformSpec::preset("photo")?, 1, Split::Train)?;
    let sketch = generate_shiftshapes_split(classes, 200, &DomainTransformSpec::preset("sketch")?, 2, Split::Train)?;
    let mut model = init_classifier(ToyNetConfig::standard(classes), 1);
    train_supervised(&mut model, &photo, &TrainConfig { epochs: 12, seed: 1, ..TrainConfig::default() })?;
    let labels = infer_pseudo_labels(&model, &sketch)?;
    let rho0 = labels.noise_rate(&sketch)?;
    println!("initial noise {:.1}%", 100.0 * rho0);

    let config = RefineConfig {
        epochs,
        members,
        ..RefineConfig::default()
    };
    let ensemble = EnsembleState::from_source(&model, &config)?;
    // ground truth only feeds the per-epoch noise column
    let truth = sketch.labels();
    let out = refine(ensemble, &sketch, &labels, &config, Some(&truth))?;
    for e in &out.trace {
        println!(
            "epoch {:2}: loss {:.4}  reassigned {:4}  noise {:.1}%",
            e.epoch,
            e.mean_loss,
            e.reassigned,
            100.0 * e.noise_rate.unwrap_or(f64::NAN)
        );
    }
    let rho = out.labels.noise_rate(&sketch)?;
    println!(
        "final noise {:.1}% ({:.2} of initial), {} labels refined",
        100.0 * rho,
        rho / rho0,
        out.labels.count_by_source(LabelSource::Refined)
    );
    Ok(())
}
