//! Model, checkpoint, benchmark and pseudo-label behaviour on real data.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use csuda::benchmarks::{export_image_folder, generate_shiftshapes_split, load_image_folder, DomainTransformSpec};
use csuda::checkpoint::{Checkpoint, TrainingMetadata};
use csuda::data::{DomainDataset, Image, LabeledSample, Split};
use csuda::error::Error;
use csuda::model::{accuracy, extract_bn_profile, init_classifier, predict_logits, train_supervised, TrainConfig};
use csuda::nn::ToyNetConfig;
use csuda::pseudo_labels::{infer_pseudo_labels, select_confident_priors};

fn photo(per_class: usize, split: Split) -> DomainDataset {
    generate_shiftshapes_split(7, per_class, &DomainTransformSpec::preset("photo").unwrap(), 11, split).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let train = photo(16, Split::Train);
    let mut model = init_classifier(ToyNetConfig::standard(7), 3);
    train_supervised(&mut model, &train, &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::new(model.clone(), TrainingMetadata { epochs: 1, seed: 3, note: None }).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();

    let images = train.images();
    let before = predict_logits(&model, &images).unwrap();
    let after = predict_logits(&loaded.model, &images).unwrap();
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(extract_bn_profile(&model).unwrap(), loaded.bn_profile().unwrap());
    assert!(matches!(Checkpoint::load_expecting(&path, 5), Err(Error::Checkpoint(_))));
}

#[test]
fn evaluation_forward_is_per_sample() {
    let data = photo(8, Split::Test);
    let mut model = init_classifier(ToyNetConfig::standard(7), 4);
    train_supervised(&mut model, &photo(8, Split::Train), &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
    let images: Vec<&Image> = data.images().into_iter().take(9).collect();
    let batch = predict_logits(&model, &images).unwrap();
    for (i, img) in images.iter().enumerate() {
        let single = predict_logits(&model, &[img]).unwrap();
        for (a, b) in single.row(0).iter().zip(batch.row(i)) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    let twice = predict_logits(&model, &[images[0], images[0]]).unwrap();
    assert_eq!(twice.row(0), twice.row(1));
    assert_eq!(batch.ncols(), 7);
}

/// Dark vs bright noisy images: linearly separable by mean intensity.
fn brightness_task(rng: &mut ChaCha8Rng) -> DomainDataset {
    let mut samples = Vec::new();
    for i in 0..80 {
        let label = i % 2;
        let base = if label == 0 { 0.3 } else { 0.7 };
        let data = (0..3 * 32 * 32).map(|_| base + rng.random_range(-0.2f32..0.2)).collect();
        samples.push(LabeledSample {
            id: format!("s{i}"),
            image: Image::new(3, 32, 32, data).unwrap(),
            label,
        });
    }
    DomainDataset::new("brightness", Split::Train, vec!["dark".into(), "bright".into()], samples).unwrap()
}

/// Logistic regression on flattened pixels, plain gradient descent.
fn logistic_oracle_accuracy(data: &DomainDataset) -> f64 {
    let d = 3 * 32 * 32;
    let (mut w, mut b) = (vec![0.0f64; d], 0.0f64);
    for _ in 0..200 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for s in &data.samples {
            let z: f64 = s.image.data.iter().zip(&w).map(|(&x, w)| x as f64 * w).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - s.label as f64;
            for (g, &x) in gw.iter_mut().zip(&s.image.data) {
                *g += err * x as f64;
            }
            gb += err;
        }
        let n = data.len() as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 0.01 * g / n;
        }
        b -= 0.01 * gb / n;
    }
    let correct = data
        .samples
        .iter()
        .filter(|s| {
            let z: f64 = s.image.data.iter().zip(&w).map(|(&x, w)| x as f64 * w).sum::<f64>() + b;
            (z > 0.0) == (s.label == 1)
        })
        .count();
    correct as f64 / data.len() as f64
}

#[test]
fn separable_two_class_task_is_learned_in_five_epochs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = brightness_task(&mut rng);
    assert!(logistic_oracle_accuracy(&data) >= 0.99);
    let mut model = init_classifier(ToyNetConfig::standard(2), 1);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        ..TrainConfig::default()
    };
    train_supervised(&mut model, &data, &cfg).unwrap();
    assert!(accuracy(&model, &data).unwrap() >= 0.99);
}

/// One photo model, reused for the benchmark and pseudo-label baselines.
#[test]
fn photo_model_degrades_on_sketch_and_confident_labels_are_cleaner() {
    let classes = 7;
    let sketch_spec = DomainTransformSpec::preset("sketch").unwrap();
    let train = photo(200, Split::Train);
    let photo_test = photo(50, Split::Test);
    let sketch_train = generate_shiftshapes_split(classes, 200, &sketch_spec, 12, Split::Train).unwrap();
    let sketch_test = generate_shiftshapes_split(classes, 50, &sketch_spec, 12, Split::Test).unwrap();
    let mut model = init_classifier(ToyNetConfig::standard(classes), 5);
    train_supervised(&mut model, &train, &TrainConfig { epochs: 12, seed: 5, ..TrainConfig::default() }).unwrap();

    let photo_acc = accuracy(&model, &photo_test).unwrap();
    let sketch_acc = accuracy(&model, &sketch_test).unwrap();
    assert!(photo_acc - sketch_acc >= 0.10, "photo {photo_acc:.3}, sketch {sketch_acc:.3}");

    let labels = infer_pseudo_labels(&model, &sketch_train).unwrap();
    let label_acc = 1.0 - labels.noise_rate(&sketch_train).unwrap();
    assert!(label_acc < photo_acc);

    let truth: BTreeMap<&str, usize> = sketch_train.samples.iter().map(|s| (s.id.as_str(), s.label)).collect();
    let priors = select_confident_priors(&labels, &sketch_train, 32).unwrap();
    let (mut right, mut total) = (0, 0);
    for (class, ids) in priors.iter().enumerate() {
        total += ids.len();
        right += ids.iter().filter(|id| truth[id.as_str()] == class).count();
    }
    let prior_acc = right as f64 / total as f64;
    assert!(prior_acc >= label_acc, "priors {prior_acc:.3} vs all {label_acc:.3}");
}

#[test]
fn image_folders_round_trip_with_lexicographic_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = photo(8, Split::Test);
    export_image_folder(&data, dir.path().join("test")).unwrap();
    let back = load_image_folder(dir.path(), "test").unwrap();
    assert_eq!(back.num_classes, 7);
    assert_eq!(back.len(), data.len());
    let mut sorted = data.class_names.clone();
    sorted.sort();
    assert_eq!(back.class_names, sorted);
    assert!(back.class_counts().iter().all(|&n| n == 8));

    let ab = tempfile::tempdir().unwrap();
    for (name, sample) in [("b", &data.samples[0]), ("a", &data.samples[9])] {
        let sub = ab.path().join(name);
        std::fs::create_dir_all(&sub).unwrap();
        csuda::benchmarks::folder::image_to_rgb(&sample.image).save(sub.join("x.png")).unwrap();
    }
    let two = load_image_folder(ab.path(), "train").unwrap();
    assert_eq!(two.class_names, vec!["a", "b"]);
    assert_eq!(two.samples[0].label, 0);
    assert!(two.samples[0].id.contains("/a/"));

    assert!(matches!(load_image_folder(dir.path().join("missing"), "train"), Err(Error::Path { .. })));
}
