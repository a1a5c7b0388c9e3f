mod common;

use std::path::Path;

use common::{quick_config, toy};
use photosketch::checkpoint::{inspect_checkpoint, load_checkpoint, save_checkpoint};
use photosketch::data::load_manifest;
use photosketch::losses::loss_collaborative;
use photosketch::nn::SynthesisMode;
use photosketch::train::{load_step_set, PreparedSet, TrainState};
use photosketch::{Config, Error, Trainer};
use tempfile::TempDir;

struct Fixture {
    _dir: TempDir,
    config: Config,
}

fn fixture(epochs: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy(&dir.path().join("pairs"), 8, 1, 101);
    let photos = toy(&dir.path().join("photos"), 6, 2, 102);
    let target = toy(&dir.path().join("target"), 5, 1, 103);
    let config = quick_config(&pairs.paired_path, &photos.photos_path, &target.paired_path, epochs);
    Fixture { _dir: dir, config }
}

fn run(state: &mut Trainer, step: u8, data: &PreparedSet) -> Vec<u8> {
    let mut log = Vec::new();
    state.run_step(step, data, &mut log, &mut |_, _| Ok(())).unwrap();
    log
}

fn stores(state: &Trainer) -> Vec<(&'static str, photosketch::Params)> {
    state.model.stores().iter().map(|(n, s)| (*n, (*s).clone())).collect()
}

#[test]
fn step2_only_moves_mapping_and_classifier() {
    let f = fixture(1);
    let mut state = TrainState::new(&f.config);
    let before = stores(&state);
    let data = load_step_set(&f.config, 2).unwrap();
    run(&mut state, 2, &data);
    for ((name, old), (_, new)) in before.iter().zip(stores(&state)) {
        if *name == "mapping" {
            assert_ne!(old, &new, "mapping did not move");
        } else {
            assert_eq!(old, &new, "{name} changed during step 2");
        }
    }
    let classifier = state.model.adacos.as_ref().unwrap();
    assert_eq!(classifier.classes(), 6);
}

#[test]
fn step3_updates_every_network_and_resizes_classifier() {
    let f = fixture(1);
    let mut state = TrainState::new(&f.config);
    run(&mut state, 2, &load_step_set(&f.config, 2).unwrap());
    let before = stores(&state);
    run(&mut state, 3, &load_step_set(&f.config, 3).unwrap());
    for ((name, old), (_, new)) in before.iter().zip(stores(&state)) {
        assert_ne!(old, &new, "{name} did not move in step 3");
    }
    assert_eq!(state.model.adacos.as_ref().unwrap().classes(), 5);
}

#[test]
fn discriminator_step_ignores_generator_objective() {
    let f = fixture(1);
    let data = load_step_set(&f.config, 1).unwrap();
    let mut a = TrainState::new(&f.config);
    a.begin_step(1, &data).unwrap();
    let mut b = a.clone();
    b.config.train.step1.weights.lambda_gan = 0.0;
    b.config.train.step1.weights.lambda_s = 0.0;
    b.config.train.step1.weights.lambda_w = 0.0;
    let batch: Vec<usize> = (0..4).collect();
    let la = a.train_batch(&data, &batch).unwrap();
    let lb = b.train_batch(&data, &batch).unwrap();
    assert_eq!(la.discriminator, lb.discriminator);
    assert_eq!(a.model.disc_sketch, b.model.disc_sketch);
    assert_eq!(a.model.disc_photo, b.model.disc_photo);
    assert_ne!(a.model.mapping, b.model.mapping);
    assert_ne!(a.model.gen_sketch, b.model.gen_sketch);
    let fresh: Trainer = TrainState::new(&f.config);
    assert_eq!(b.model.mapping, fresh.model.mapping, "zero weights must leave the mapping unchanged");
    assert_ne!(b.model.disc_sketch, fresh.model.disc_sketch);
}

#[test]
fn checkpoint_round_trip_then_one_batch() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let data = load_step_set(&f.config, 1).unwrap();
    let mut state = TrainState::new(&f.config);
    run(&mut state, 1, &data);
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let mut loaded: Trainer = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.model, state.model);
    assert_eq!(loaded.rng, state.rng);
    assert_eq!((loaded.step, loaded.epoch, loaded.iteration), (1, 1, state.iteration));
    let header = inspect_checkpoint(&path).unwrap();
    assert_eq!(header.dtype, "f32");
    let batch = [3, 1, 7];
    let x = state.train_batch(&data, &batch).unwrap();
    let y = loaded.train_batch(&data, &batch).unwrap();
    assert_eq!(x.total, y.total);
    assert_eq!(state.model, loaded.model);
    let again = dir.path().join("b.ckpt");
    save_checkpoint(&loaded, &again).unwrap();
    save_checkpoint(&state, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let f = fixture(3);
    let dir = tempfile::tempdir().unwrap();
    let data = load_step_set(&f.config, 1).unwrap();
    let mut full = TrainState::new(&f.config);
    let full_log = run(&mut full, 1, &data);

    let mut part: Trainer = TrainState::new(&f.config);
    part.begin_step(1, &data).unwrap();
    let mut log = Vec::new();
    part.train_epoch(&data, &mut log).unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&part, &path).unwrap();
    let mut resumed: Trainer = load_checkpoint(&path).unwrap();
    log.extend(run(&mut resumed, 1, &data));

    assert_eq!(full_log, log);
    let (a, b) = (dir.path().join("full.ckpt"), dir.path().join("resumed.ckpt"));
    save_checkpoint(&full, &a).unwrap();
    save_checkpoint(&resumed, &b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn wrong_dtype_and_missing_tensor_are_rejected() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let state: Trainer = TrainState::new(&f.config);
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let r = load_checkpoint::<f64>(&path);
    assert!(matches!(r, Err(Error::Checkpoint(_))));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn similarity_column(log: &[u8]) -> Vec<f64> {
    std::str::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn step1_learns_synthesis_and_pulls_pairs_together() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy(&dir.path().join("pairs"), 24, 1, 201);
    let held_out = toy(&dir.path().join("held"), 8, 1, 202);
    let mut config = quick_config(&pairs.paired_path, Path::new(""), Path::new(""), 20);
    config.train.steps = vec![1];
    let data = load_step_set(&config, 1).unwrap();
    let mut state = TrainState::new(&config);
    let log = run(&mut state, 1, &data);

    let per_epoch = data.len().div_ceil(config.train.step1.batch_size);
    let ls = similarity_column(&log);
    let tenth = (ls.len() / 10).max(per_epoch);
    let first = median(ls[..tenth].to_vec());
    let last = median(ls[ls.len() - tenth..].to_vec());
    assert!(last < first, "L_s median {first} -> {last}");

    let m = load_manifest(&held_out.paired_path).unwrap();
    let set = PreparedSet::paired(&m, &config).unwrap();
    let crop = |img: &photosketch::data::ImageBuffer| img.center_crop(64).unwrap();
    let codes: Vec<_> = (0..set.len())
        .map(|i| {
            let p = state.model.encode(&crop(&set.photos[i])).unwrap();
            let s = state.model.encode(&crop(&set.sketches[i])).unwrap();
            (p, s)
        })
        .collect();
    let (mut same, mut cross, mut n_cross) = (0.0, 0.0, 0);
    for (i, (p, _)) in codes.iter().enumerate() {
        for (j, (_, s)) in codes.iter().enumerate() {
            let d = loss_collaborative(p, s).unwrap() as f64;
            if i == j {
                same += d;
            } else {
                cross += d;
                n_cross += 1;
            }
        }
    }
    let same = same / codes.len() as f64;
    let cross = cross / n_cross as f64;
    assert!(same < cross, "same-identity L_w {same} vs cross-identity {cross}");
}

#[test]
fn mapping_only_variant_skips_step1() {
    let f = fixture(1);
    let mut config = f.config.clone();
    config.model.synthesis = SynthesisMode::MappingOnly;
    let state = photosketch::train::train_pipeline(&config, None, None).unwrap();
    assert_eq!(state.step, 3);
    let fresh: Trainer = TrainState::new(&config);
    assert_eq!(state.model.gen_sketch, fresh.model.gen_sketch);
    assert_eq!(state.model.disc_photo, fresh.model.disc_photo);

    let mut direct: Trainer = TrainState::new(&config);
    let data = load_step_set(&f.config, 1).unwrap();
    direct.begin_step(1, &data).unwrap();
    assert!(matches!(direct.train_batch(&data, &[0, 1]), Err(Error::Config(_))));
}

#[test]
fn step2_needs_two_identities_and_steps_need_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy(&dir.path().join("pairs"), 2, 1, 5);
    let m = load_manifest(&pairs.paired_path).unwrap();
    let one = m.photo_subset(&["s5-0000".to_string()]).unwrap();
    let config = quick_config(&pairs.paired_path, Path::new(""), Path::new(""), 1);
    let set = PreparedSet::photos(&one, &config).unwrap();
    let mut state: Trainer = TrainState::new(&config);
    assert!(matches!(state.begin_step(2, &set), Err(Error::Config(_))));
    let r = photosketch::train::train_pipeline(&config, None, None);
    assert!(matches!(r, Err(Error::Config(_))));
}
