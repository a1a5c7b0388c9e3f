#![allow(dead_code)]

use std::path::Path;

use photosketch::autograd::{Graph, Var};
use photosketch::eval::{match_code, rank_k_accuracy, GalleryIndex, MatchResult};
use photosketch::nn::{adain, Binding, LatentCode, PatchDiscriminator};
use photosketch::data::{generate_toy_dataset, ToyDataset, ToyDatasetSpec};
use photosketch::gradcheck::{numerical_gradient, relative_error};
use photosketch::losses::{
    adacos_loss, collaborative, gan_discriminator, gan_generator, similarity, AdaCosState,
    SimilarityMode,
};
use photosketch::{Config, Result, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

/// Largest relative error between tape and finite-difference gradients of
/// `f` over every input.
pub fn max_grad_error<F>(inputs: &[Tensor64], f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars).unwrap();
    let grads = g.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor64::zeros(x.shape()));
        let numeric = numerical_gradient(x, FD_STEP, |probe| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| g.constant(if j == i { probe.clone() } else { t.clone() }))
                .collect();
            let root = f(&mut g, &vars)?;
            Ok(g.value(root).item())
        })
        .unwrap();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor64::new(shape.to_vec(), data).unwrap()
}

/// `b` with every element at least `gap` away from `a`, so `|a - b|` stays
/// differentiable under finite-difference probing.
pub fn away_from(rng: &mut ChaCha8Rng, a: &Tensor64, gap: f64) -> Tensor64 {
    let data = a
        .data()
        .iter()
        .map(|&v| {
            let d: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v + d
            } else {
                v - d
            }
        })
        .collect();
    Tensor64::new(a.shape().to_vec(), data).unwrap()
}

/// Gradient-check errors of every loss for one seed, labelled.
pub fn loss_grad_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let x = uniform(&mut rng, &[2, 1, 5, 5], -1.0, 1.0);
    let y = away_from(&mut rng, &x, 1e-3);
    out.push((
        "l1",
        max_grad_error(&[x, y], |g, v| similarity(g, v[0], v[1], SimilarityMode::L1)),
    ));

    let x = uniform(&mut rng, &[1, 2, 13, 13], -1.0, 1.0);
    let y = uniform(&mut rng, &[1, 2, 13, 13], -1.0, 1.0);
    out.push((
        "ssim",
        max_grad_error(&[x, y], |g, v| similarity(g, v[0], v[1], SimilarityMode::Ssim)),
    ));

    let wp = uniform(&mut rng, &[3, 8], -2.0, 2.0);
    let ws = away_from(&mut rng, &wp, 1e-3);
    out.push(("collaborative", max_grad_error(&[wp, ws], |g, v| collaborative(g, v[0], v[1]))));

    let real = uniform(&mut rng, &[2, 1, 3, 3], -4.0, 4.0);
    let fake = uniform(&mut rng, &[2, 1, 3, 3], -4.0, 4.0);
    out.push((
        "adversarial_d",
        max_grad_error(&[real, fake.clone()], |g, v| gan_discriminator(g, v[0], v[1])),
    ));
    out.push(("adversarial_g", max_grad_error(&[fake], |g, v| Ok(gan_generator(g, v[0])))));

    let classes = rng.random_range(2..7);
    let codes = uniform(&mut rng, &[4, 6], -1.0, 1.0);
    let weights = uniform(&mut rng, &[classes, 6], -1.0, 1.0);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..classes)).collect();
    let scale = rng.random_range(1.0..8.0);
    let state = AdaCosState::with_scale(weights.clone(), scale).unwrap();
    let w_unit = state.class_weights.clone();
    out.push((
        "adacos",
        max_grad_error(&[codes, w_unit], |g, v| {
            let mut s = state.clone();
            adacos_loss(g, v[0], &labels, v[1], &mut s)
        }),
    ));
    out
}

/// Generates a toy dataset under `dir`.
pub fn toy(dir: &Path, identities: usize, per_id: usize, seed: u64) -> ToyDataset {
    let spec = ToyDatasetSpec {
        n_identities: identities,
        images_per_identity: per_id,
        image_size: 64,
        seed,
    };
    generate_toy_dataset(&spec, dir).unwrap()
}

/// Toy preset with short schedules for tests that only need a few iterations.
pub fn quick_config(step1: &Path, step2: &Path, target: &Path, epochs: usize) -> Config {
    let mut c = Config::toy();
    c.data.step1_manifest = step1.to_string_lossy().into_owned();
    c.data.step2_manifest = step2.to_string_lossy().into_owned();
    c.data.target_manifest = target.to_string_lossy().into_owned();
    for s in [&mut c.train.step1, &mut c.train.step2, &mut c.train.step3] {
        s.epochs = epochs;
    }
    c.train.step2.batch_size = 8;
    c
}

/// Receptive field measured as the support of d(center logit)/d(input) on a
/// normalization-free copy of the discriminator.
pub fn measured_receptive_field(input: usize) -> usize {
    let mut d = PatchDiscriminator::new(4, 1, 0.2);
    for l in &mut d.layers {
        l.instance_norm = false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = d.init::<f64, _>(&mut rng);
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v = v.abs() + 0.1;
        }
    }
    let mut g = Graph::new();
    let mut b = Binding::new(&store, false);
    let cond = g.param(Tensor64::zeros(&[1, 3, input, input]));
    let cand = g.constant(Tensor64::zeros(&[1, 1, input, input]));
    let logits = d.forward(&mut g, &mut b, cond, cand).unwrap();
    let out = g.shape(logits)[2];
    let flat = g.reshape(logits, &[out * out]).unwrap();
    let mut pick = vec![0.0; out * out];
    pick[(out / 2) * out + out / 2] = 1.0;
    let sel = g.constant(Tensor64::new(vec![out * out], pick).unwrap());
    let y = g.mul(flat, sel).unwrap();
    let y = g.sum(y);
    let grads = g.backward(y).unwrap();
    let gin = grads.get(cond).unwrap();
    let plane = &gin.data()[..input * input];
    let rows: Vec<usize> = (0..input)
        .filter(|&r| plane[r * input..(r + 1) * input].iter().any(|&v| v != 0.0))
        .collect();
    rows.last().unwrap() - rows.first().unwrap() + 1
}

/// Largest deviation of per-channel output mean/std from the style bias/scale
/// over one random AdaIN input.
pub fn adain_deviation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, 3, 8, 8], -3.0, 3.0);
    let scale = uniform(&mut rng, &[2, 3], 0.2, 2.0);
    let bias = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let sv = g.constant(scale.clone());
    let bv = g.constant(bias.clone());
    let y = adain(&mut g, xv, sv, bv, 1e-5).unwrap();
    let y = g.value(y);
    let mut worst: f64 = 0.0;
    for (i, plane) in y.data().chunks(64).enumerate() {
        let mean = plane.iter().sum::<f64>() / 64.0;
        let std = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
        worst = worst.max((mean - bias.data()[i]).abs()).max((std - scale.data()[i]).abs());
    }
    worst
}

pub fn random_code(rng: &mut ChaCha8Rng, dim: usize) -> LatentCode<f32> {
    LatentCode::new((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

/// Independent ranking: pairwise cosine distance in f64 then a stable sort.
pub fn brute_force(probe: &LatentCode<f32>, gallery: &[(String, LatentCode<f32>)]) -> Vec<String> {
    let dist = |a: &[f32], b: &[f32]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    let mut idx: Vec<(usize, f64)> = gallery
        .iter()
        .enumerate()
        .map(|(i, (_, c))| (i, dist(probe.values(), c.values())))
        .collect();
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && idx[j - 1].1 > idx[j].1 {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    idx.into_iter().map(|(i, _)| gallery[i].0.clone()).collect()
}

/// Result whose true mate sits at 1-based `rank` in a gallery of `n`.
pub fn result_at(rank: usize, n: usize) -> MatchResult {
    let ranked = (0..n)
        .map(|i| {
            let id = if i + 1 == rank { "probe".to_string() } else { format!("other{i}") };
            (id, i as f64)
        })
        .collect();
    MatchResult {
        probe_identity: "probe".into(),
        ranked,
    }
}

/// Trials (random galleries of 5 to 50 entries) whose ranking differs from
/// [`brute_force`].
pub fn ranking_disagreements(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..trials {
        let n = rng.random_range(5..=50);
        let dim = rng.random_range(2..=16);
        let mates: Vec<(String, LatentCode<f32>)> =
            (0..n).map(|i| (format!("id{i:03}"), random_code(&mut rng, dim))).collect();
        let gallery = GalleryIndex::from_codes(mates.clone()).unwrap();
        let probe = random_code(&mut rng, dim);
        let got = match_code("id000", &probe, &gallery).unwrap();
        let order: Vec<String> = got.ranked.iter().map(|(id, _)| id.clone()).collect();
        let sorted = got.ranked.windows(2).all(|w| w[0].1 <= w[1].1);
        if order != brute_force(&probe, &mates) || !sorted {
            bad += 1;
        }
    }
    bad
}

/// Rank-k accuracies of random codes against random galleries of `n`, with
/// the binomial expectation k/n and its 3-sigma band.
pub fn random_score_accuracy(n: usize, probes: usize, seed: u64, ks: &[usize]) -> Vec<(usize, f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let results: Vec<MatchResult> = (0..probes)
        .map(|p| {
            let mates: Vec<(String, LatentCode<f32>)> =
                (0..n).map(|i| (format!("g{i}"), random_code(&mut rng, 4))).collect();
            let gallery = GalleryIndex::from_codes(mates).unwrap();
            let probe_id = format!("g{}", p % n);
            match_code(&probe_id, &random_code(&mut rng, 4), &gallery).unwrap()
        })
        .collect();
    ks.iter()
        .map(|&k| {
            let p = k as f64 / n as f64;
            let band = 3.0 * (p * (1.0 - p) / probes as f64).sqrt();
            (k, rank_k_accuracy(&results, k).unwrap(), p, band)
        })
        .collect()
}
