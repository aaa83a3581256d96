//! Analytic gradients against central finite differences, in f64.

use csuda::model::{BnLayerStats, BnStatProfile};
use csuda::nn::loss::cross_entropy;
use csuda::nn::{BnMode, FeatureMap, ToyNet, ToyNetConfig};
use csuda::stage1::drl_loss_logits;
use csuda::stage2::{synthesis_objective, Weights};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_net(rng: &mut ChaCha8Rng) -> ToyNet<f64> {
    let config = ToyNetConfig {
        num_classes: 4,
        in_channels: 3,
        image_size: 4,
        widths: vec![3, 5],
    };
    let mut net = ToyNet::<f64>::new(config, rng);
    // non-trivial running statistics and affine parameters
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

fn random_input(rng: &mut ChaCha8Rng, batch: usize) -> FeatureMap<f64> {
    let data = Array2::from_shape_fn((3, batch * 16), |_| rng.random_range(0.05..0.95));
    FeatureMap::new(data, batch, 4, 4)
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

/// Checks up to `probes` entries of each parameter tensor.
fn check_params(net: &ToyNet<f64>, analytic: Vec<&[f64]>, loss: impl Fn(&ToyNet<f64>) -> f64, probes: usize) {
    let h = 1e-5;
    for (name, grad) in param_names().iter().zip(analytic) {
        let len = grad.len();
        for j in (0..len).step_by((len / probes).max(1)) {
            let mut plus = net.clone();
            plus.tensor_mut(name).unwrap()[j] += h;
            let mut minus = net.clone();
            minus.tensor_mut(name).unwrap()[j] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let tol = 1e-6 + 1e-4 * fd.abs();
            assert!((fd - grad[j]).abs() < tol, "{name}[{j}]: fd {fd} vs analytic {}", grad[j]);
        }
    }
}

#[test]
fn train_mode_cross_entropy_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = small_net(&mut rng);
    let x = random_input(&mut rng, 5);
    let labels = [0, 3, 1, 1, 2];
    let loss = |m: &ToyNet<f64>| cross_entropy(&m.forward(&x, BnMode::Train, false).0, &labels).0;
    let (logits, trace) = net.forward(&x, BnMode::Train, false);
    let (_, dlogits) = cross_entropy(&logits, &labels);
    let (grads, _) = net.backward(&trace, &dlogits, None, false);
    check_params(&net, grads.slices().into_iter().map(|(_, g)| g).collect(), loss, 12);
}

#[test]
fn residual_loss_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = small_net(&mut rng);
    let x = random_input(&mut rng, 4);
    let sets: [&[usize]; 4] = [&[1], &[0, 2], &[3], &[0]];
    let loss = |m: &ToyNet<f64>| drl_loss_logits(&m.forward(&x, BnMode::Train, false).0, &sets).0;
    let (logits, trace) = net.forward(&x, BnMode::Train, false);
    let (_, dlogits) = drl_loss_logits(&logits, &sets);
    let (grads, _) = net.backward(&trace, &dlogits, None, false);
    check_params(&net, grads.slices().into_iter().map(|(_, g)| g).collect(), loss, 8);
}

fn profile(rng: &mut ChaCha8Rng) -> BnStatProfile {
    BnStatProfile {
        layers: [3usize, 5]
            .iter()
            .map(|&c| BnLayerStats {
                mean: (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
                var: (0..c).map(|_| rng.random_range(0.2..2.0)).collect(),
            })
            .collect(),
    }
}

fn check_input_gradient(weights: Weights, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = small_net(&mut rng);
    let profile = profile(&mut rng);
    let x = random_input(&mut rng, 3);
    let labels = [2, 2, 2];
    let (_, grad) = synthesis_objective(&net, &x, &labels, &profile, weights).unwrap();
    let objective = |x: &FeatureMap<f64>| synthesis_objective(&net, x, &labels, &profile, weights).unwrap().0.total;
    let h = 1e-6;
    let len = x.data.len();
    for j in (0..len).step_by(7) {
        let mut plus = x.clone();
        plus.data.as_slice_mut().unwrap()[j] += h;
        let mut minus = x.clone();
        minus.data.as_slice_mut().unwrap()[j] -= h;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
        let analytic = grad.data.as_slice().unwrap()[j];
        assert!(
            (fd - analytic).abs() < 1e-6 + 1e-4 * fd.abs(),
            "pixel {j}: fd {fd} vs analytic {analytic} ({weights:?})"
        );
    }
}

#[test]
fn synthesis_cross_entropy_input_gradient() {
    check_input_gradient(Weights { ce: 1.0, tv: 0.0, bn: 0.0 }, 11);
}

#[test]
fn synthesis_total_variation_input_gradient() {
    check_input_gradient(Weights { ce: 0.0, tv: 1.0, bn: 0.0 }, 12);
}

#[test]
fn synthesis_bn_matching_input_gradient() {
    check_input_gradient(Weights { ce: 0.0, tv: 0.0, bn: 1.0 }, 13);
}

#[test]
fn synthesis_full_objective_input_gradient() {
    check_input_gradient(Weights { ce: 1.0, tv: 1e-1, bn: 1e-1 }, 14);
}
