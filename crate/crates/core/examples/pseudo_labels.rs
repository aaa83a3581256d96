//! Label sketch images with a photo-trained model, measure the noise of the
//! pseudo-labels and pick the most confident samples of each class.
//!
//! ```text
//! cargo run --release --example pseudo_labels -- [labels.jsonl]
//! ```

use csuda::benchmarks::{generate_shiftshapes_split, DomainTransformSpec, GLYPH_NAMES};
use csuda::data::Split;
use csuda::model::{init_classifier, train_supervised, TrainConfig};
use csuda::nn::ToyNetConfig;
use csuda::pseudo_labels::{infer_pseudo_labels, select_confident_priors};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "pseudo_labels.jsonl".into());
    let classes = 7;
    let photo = generate_shiftshapes_split(classes, 200, &DomainTransformSpec::preset("photo")?, 1, Split::Train)?;
    let sketch = generate_shiftshapes_split(classes, 200, &DomainTransformSpec::preset("sketch")?, 2, Split::Train)?;
    let mut model = init_classifier(ToyNetConfig::standard(classes), 1);
    train_supervised(&mut model, &photo, &TrainConfig { epochs: 12, seed: 1, ..TrainConfig::default() })?;

    let labels = infer_pseudo_labels(&model, &sketch)?;
    println!("pseudo-label noise on sketch: {:.1}%", 100.0 * labels.noise_rate(&sketch)?);

    let mut confusion = vec![vec![0usize; classes]; classes];
    for s in &sketch.samples {
        confusion[s.label][labels.label_of(&s.id)?] += 1;
    }
    println!("confusion (rows: true class, columns: pseudo-label)");
    for (c, row) in confusion.iter().enumerate() {
        println!("  {:>9} {row:?}", GLYPH_NAMES[c]);
    }

    let priors = select_confident_priors(&labels, &sketch, 32)?;
    for (c, ids) in priors.iter().enumerate() {
        let correct = ids.iter().filter(|id| sketch.samples.iter().any(|s| &s.id == *id && s.label == c)).count();
        let worst = ids.last().and_then(|id| labels.get(id)).map_or(f64::NAN, |r| r.self_entropy);
        println!("  {:>9}: {} priors, {correct} correct, entropy <= {worst:.3}", GLYPH_NAMES[c], ids.len());
    }
    labels.write_jsonl(&out)?;
    println!("wrote {out}");
    Ok(())
}
