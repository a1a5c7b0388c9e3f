mod common;

use common::{away_from, loss_grad_errors, max_grad_error, uniform};
use photosketch::autograd::Graph;
use photosketch::nn::{Binding, MappingNetwork, PatchDiscriminator, StyleGenerator};
use photosketch::config::ModelConfig;
use photosketch::gradcheck::{numerical_gradient, relative_error};
use photosketch::Tensor64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

#[test]
fn every_loss_matches_finite_differences() {
    for seed in 0..100 {
        for (name, err) in loss_grad_errors(seed) {
            assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = uniform(&mut rng, &[3, 4], -2.0, 2.0);
        let b = away_from(&mut rng, &a, 1e-3);
        let err = max_grad_error(&[a.clone(), b.clone()], |g, v| {
            let m = g.mul(v[0], v[1])?;
            let d = g.sub(v[0], v[1])?;
            let t = g.tanh(m);
            let s = g.softplus(d);
            let x = g.add(t, s)?;
            Ok(g.sum(x))
        });
        prop_assert!(err < TOL, "mul/sub/tanh/softplus {err:e}");
        let den = uniform(&mut rng, &[3, 4], 0.5, 2.0);
        let err = max_grad_error(&[a.clone(), den], |g, v| {
            let q = g.div(v[0], v[1])?;
            Ok(g.mean(q))
        });
        prop_assert!(err < TOL, "div {err:e}");
        let err = max_grad_error(&[a.clone()], |g, v| {
            let l = g.leaky_relu(v[0], 0.2);
            let a = g.abs(l);
            Ok(g.sum(a))
        });
        prop_assert!(err < TOL, "leaky_relu/abs {err:e}");
    }

    #[test]
    fn linear_and_classifier_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[3, 5], -1.0, 1.0);
        let w = uniform(&mut rng, &[4, 5], -1.0, 1.0);
        let b = uniform(&mut rng, &[4], -1.0, 1.0);
        let err = max_grad_error(&[x, w, b], |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            let n = g.normalize_rows(y)?;
            g.cross_entropy(n, &[0, 3, 1])
        });
        prop_assert!(err < TOL, "linear/normalize/cross_entropy {err:e}");
    }

    #[test]
    fn convolution_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
        let w = uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b = uniform(&mut rng, &[3], -1.0, 1.0);
        let err = max_grad_error(&[x.clone(), w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            let y = g.tanh(y);
            Ok(g.sum(y))
        });
        prop_assert!(err < TOL, "conv2d {err:e}");
        let wt = uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
        let bt = uniform(&mut rng, &[3], -1.0, 1.0);
        let err = max_grad_error(&[x.clone(), wt, bt], |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
            let y = g.tanh(y);
            Ok(g.mean(y))
        });
        prop_assert!(err < TOL, "conv_transpose2d {err:e}");
        let err = max_grad_error(&[x.clone()], |g, v| {
            let p = g.maxpool2(v[0])?;
            let p = g.tanh(p);
            Ok(g.sum(p))
        });
        prop_assert!(err < TOL, "maxpool2 {err:e}");
        let k = [0.25, 0.5, 0.25];
        let err = max_grad_error(&[x], |g, v| {
            let s = g.mul(v[0], v[0])?;
            let y = g.blur_valid(s, &k)?;
            let y = g.tanh(y);
            Ok(g.sum(y))
        });
        prop_assert!(err < TOL, "blur_valid {err:e}");
    }

    #[test]
    fn normalization_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
        let gamma = uniform(&mut rng, &[3], 0.5, 1.5);
        let beta = uniform(&mut rng, &[3], -0.5, 0.5);
        let err = max_grad_error(&[x.clone(), gamma, beta], |g, v| {
            let n = g.instance_norm(v[0], 1e-5)?;
            let a = g.channel_affine(n, v[1], v[2])?;
            let a = g.tanh(a);
            Ok(g.sum(a))
        });
        prop_assert!(err < TOL, "instance_norm/channel_affine {err:e}");
        let s = uniform(&mut rng, &[2, 3], 0.5, 1.5);
        let b = uniform(&mut rng, &[2, 3], -0.5, 0.5);
        let other = uniform(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
        let err = max_grad_error(&[x, s, b, other], |g, v| {
            let m = g.modulate(v[0], v[1], v[2])?;
            let c = g.concat_channels(m, v[3])?;
            let c = g.tanh(c);
            Ok(g.sum(c))
        });
        prop_assert!(err < TOL, "modulate/concat_channels {err:e}");
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 32,
        latent_dim: 6,
        encoder_base_channels: 2,
        generator_base_channels: 4,
        generator_min_channels: 2,
        disc_base_channels: 2,
        ..ModelConfig::default()
    }
}

/// Checks gradients of a scalar network output with respect to every tensor
/// of `store`.
fn check_store<F>(store: &photosketch::nn::ParamStore<f64>, f: F)
where
    F: Fn(&mut Graph<f64>, &mut Binding<'_, f64>) -> photosketch::Result<photosketch::autograd::Var>,
{
    let mut g = Graph::new();
    let mut bind = Binding::new(store, true);
    let root = f(&mut g, &mut bind).unwrap();
    let mut grads = g.backward(root).unwrap();
    let analytic = bind.grads(&mut grads);
    for (name, t) in store.iter() {
        let numeric = numerical_gradient(t, 1e-6, |probe| {
            let mut s = store.clone();
            s.insert(name.clone(), probe.clone());
            let mut g = Graph::new();
            let mut bind = Binding::new(&s, false);
            let root = f(&mut g, &mut bind)?;
            Ok(g.value(root).item())
        })
        .unwrap();
        let a = analytic.get(name).cloned().unwrap_or_else(|| Tensor64::zeros(t.shape()));
        // Biases feeding instance norm have an exactly zero gradient.
        let scale = numeric.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = if scale < 1e-6 {
            a.data().iter().zip(numeric.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        } else {
            relative_error(&a, &numeric)
        };
        assert!(err < TOL, "{name}: gradient error {err:e}");
    }
}

#[test]
fn mapping_network_parameters() {
    let c = tiny_config();
    let net = MappingNetwork::from_config(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store = net.init::<f64, _>(&mut rng);
    let x = uniform(&mut rng, &[2, 3, 32, 32], -1.0, 1.0);
    check_store(&store, |g, b| {
        let xv = g.constant(x.clone());
        let w = net.forward(g, b, xv)?;
        let t = g.tanh(w);
        Ok(g.sum(t))
    });
}

#[test]
fn generator_parameters() {
    let c = tiny_config();
    let net = StyleGenerator::from_config(&c, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let store = net.init::<f64, _>(&mut rng);
    let w = uniform(&mut rng, &[2, c.latent_dim], -1.0, 1.0);
    let target = uniform(&mut rng, &[2, 1, 32, 32], -0.5, 0.5);
    check_store(&store, |g, b| {
        let wv = g.constant(w.clone());
        let y = net.forward(g, b, wv)?;
        let t = g.constant(target.clone());
        let d = g.sub(y, t)?;
        let sq = g.mul(d, d)?;
        Ok(g.mean(sq))
    });
}

#[test]
fn discriminator_parameters() {
    let c = tiny_config();
    let net = PatchDiscriminator::from_config(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let store = net.init::<f64, _>(&mut rng);
    let cond = uniform(&mut rng, &[1, 3, 32, 32], -1.0, 1.0);
    let cand = uniform(&mut rng, &[1, 1, 32, 32], -1.0, 1.0);
    check_store(&store, |g, b| {
        let a = g.constant(cond.clone());
        let s = g.constant(cand.clone());
        let logits = net.forward(g, b, a, s)?;
        Ok(photosketch::losses::gan_generator(g, logits))
    });
}
