//! Train a source model on the "photo" ShiftShapes domain and measure how
//! it degrades on the other domains.
//!
//! ```text
//! cargo run --release --example train_source -- [epochs] [per_class]
//! ```

use std::time::Instant;

use csuda::benchmarks::{generate_shiftshapes_split, DomainTransformSpec};
use csuda::data::Split;
use csuda::model::{accuracy, init_classifier, train_supervised, TrainConfig};
use csuda::nn::ToyNetConfig;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let per_class: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let classes = 7;

    let photo = DomainTransformSpec::preset("photo")?;
    let train = generate_shiftshapes_split(classes, per_class, &photo, 1, Split::Train)?;
    let mut model = init_classifier(ToyNetConfig::standard(classes), 7);
    let config = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let history = train_supervised(&mut model, &train, &config)?;
    println!("trained {} epochs in {:.1?}", epochs, start.elapsed());
    for (e, (l, a)) in history.epoch_loss.iter().zip(&history.epoch_accuracy).enumerate() {
        println!("  epoch {e:2}: loss {l:.4}  train acc {a:.3}");
    }

    for name in ["photo", "art", "cartoon", "sketch", "inverted"] {
        let spec = DomainTransformSpec::preset(name)?;
        let test = generate_shiftshapes_split(classes, 50, &spec, 2, Split::Test)?;
        println!("{name:>9} test accuracy: {:.3}", accuracy(&model, &test)?);
    }
    Ok(())
}
