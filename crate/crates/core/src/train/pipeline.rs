use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::save_checkpoint;
use crate::config::Config;
use crate::data::{load_manifest, Manifest};
use crate::error::{Error, Result};
use crate::eval::{cross_partition_eval, EvalReport};
use crate::train::{PreparedSet, TrainState, LOSS_HEADER};

/// Loads and aligns the training set of `step` named by the config.
pub fn load_step_set(config: &Config, step: u8) -> Result<PreparedSet> {
    let key = match step {
        1 => "data.step1_manifest",
        2 => "data.step2_manifest",
        _ => "data.target_manifest",
    };
    let path = config
        .manifest_for_step(step)
        .ok_or_else(|| Error::Config(format!("step {step} requested but {key} is empty")))?;
    let manifest = load_manifest(&path)?;
    match step {
        2 => PreparedSet::photos(&manifest, config),
        _ => PreparedSet::paired(&manifest, config),
    }
}

/// Whether `state` has already finished `step`.
pub fn step_done<T: crate::Scalar>(state: &TrainState<T>, step: u8) -> bool {
    state.step > step || (state.step == step && state.epoch >= state.config.step(step).epochs)
}

/// Runs `steps` in order on `state`, skipping finished ones. With `out_dir`,
/// writes `loss_step{n}.csv` and `step{n}.ckpt` per step; a resumed step
/// appends to its existing log.
pub fn run_steps(
    state: &mut TrainState<f32>,
    steps: &[u8],
    sets: &mut dyn FnMut(u8) -> Result<PreparedSet>,
    out_dir: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &step in steps {
        if step_done(state, step) {
            continue;
        }
        if step == 1 && !state.config.model.synthesis.synthesizes() {
            log::warn!("mapping-only model: skipping step 1");
            continue;
        }
        let data = sets(step)?;
        let resuming = state.step == step;
        let mut log: Box<dyn Write> = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("loss_step{step}.csv"));
                let mut w = if resuming && path.exists() {
                    BufWriter::new(OpenOptions::new().append(true).open(&path)?)
                } else {
                    let mut w = BufWriter::new(File::create(&path)?);
                    writeln!(w, "{LOSS_HEADER}")?;
                    w
                };
                w.flush()?;
                Box::new(w)
            }
            None => Box::new(std::io::sink()),
        };
        let mut report = |s: &TrainState<f32>, e: &crate::train::EpochStats| -> Result<()> {
            let c = &e.components;
            log::info!(
                "step {} epoch {}/{}: total {:.4} adacos {:.4} gan {:.4} s {:.4} w {:.4} d {:.4}{}",
                s.step,
                e.epoch,
                s.config.step(s.step).epochs,
                e.total,
                c.adacos,
                c.gan,
                c.similarity,
                c.collaborative,
                e.discriminator,
                e.accuracy.map(|a| format!(" acc {:.3}", a)).unwrap_or_default()
            );
            Ok(())
        };
        state.run_step(step, &data, &mut *log, &mut report)?;
        log.flush()?;
        if let Some(dir) = out_dir {
            let path = dir.join(format!("step{step}.ckpt"));
            save_checkpoint(state, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Runs every configured step from `resume` (or fresh parameters) using the
/// manifests named in the config.
pub fn train_pipeline(
    config: &Config,
    resume: Option<TrainState<f32>>,
    out_dir: Option<&Path>,
) -> Result<TrainState<f32>> {
    let mut state = match resume {
        Some(mut s) => {
            s.config = config.clone();
            s
        }
        None => TrainState::new(config),
    };
    for &step in &config.train.steps {
        if !step_done(&state, step) && config.manifest_for_step(step).is_none() {
            if step == 1 && !config.model.synthesis.synthesizes() {
                continue;
            }
            return Err(Error::Config(format!("step {step} requested but its manifest is not set")));
        }
    }
    let steps = config.train.steps.clone();
    run_steps(&mut state, &steps, &mut |s| load_step_set(config, s), out_dir)?;
    Ok(state)
}

/// Runs the configured pretraining steps (1 and/or 2) from fresh parameters.
pub fn pretrain(config: &Config) -> Result<TrainState<f32>> {
    let steps: Vec<u8> = config.train.steps.iter().copied().filter(|&s| s < 3).collect();
    let mut state = TrainState::new(config);
    run_steps(&mut state, &steps, &mut |s| load_step_set(config, s), None)?;
    Ok(state)
}

/// Step 3 on `target` starting from a copy of `pretrained`, under `config`
/// (which may differ from the pretraining config in step-3 settings only).
/// Returns the pretrained state unchanged when step 3 is not configured.
pub fn finetune(
    pretrained: &TrainState<f32>,
    config: &Config,
    target: &PreparedSet,
) -> Result<TrainState<f32>> {
    let mut state = pretrained.clone();
    state.config = config.clone();
    if config.train.steps.contains(&3) {
        run_steps(&mut state, &[3], &mut |_| Ok(target.clone()), None)?;
    }
    Ok(state)
}

/// Identifies the pretraining a config needs: two configs with equal keys
/// produce identical [`pretrain`] results.
pub fn pretrain_key(config: &Config) -> String {
    let mut c = config.clone();
    c.train.step3 = Config::toy().train.step3;
    c.train.steps.retain(|&s| s < 3);
    c.train.carry_discriminators = true;
    c.data.target_manifest.clear();
    c.data.distractor_manifest.clear();
    c.eval = Config::toy().eval;
    c.to_toml_string()
}

/// Pretrained states keyed by [`pretrain_key`].
pub type PretrainCache = HashMap<String, TrainState<f32>>;

/// The target manifest named by `data.target_manifest`.
pub fn target_manifest(config: &Config) -> Result<Manifest> {
    let path = config
        .manifest_for_step(3)
        .ok_or_else(|| Error::Config("data.target_manifest is not set".into()))?;
    load_manifest(&path)
}

/// The distractor manifest, when `data.distractor_manifest` is set.
pub fn distractor_manifest(config: &Config) -> Result<Option<Manifest>> {
    match config.data.distractor_manifest.as_str() {
        "" => Ok(None),
        p => load_manifest(Path::new(p)).map(Some),
    }
}

/// Cross-partition protocol: pretrain once (shared through `cache` by configs
/// with equal [`pretrain_key`]), then step 3 on each partition's training
/// identities and matching on its test identities.
pub fn evaluate_protocol(config: &Config, cache: &mut PretrainCache) -> Result<EvalReport> {
    let target = target_manifest(config)?;
    let distractors = distractor_manifest(config)?;
    let key = pretrain_key(config);
    if !cache.contains_key(&key) {
        let state = pretrain(config)?;
        cache.insert(key.clone(), state);
    }
    let pre = &cache[&key];
    let mut factory = |_p: usize, train: &Manifest| {
        let set = PreparedSet::paired(train, config)?;
        Ok(finetune(pre, config, &set)?.model)
    };
    cross_partition_eval(&target, &mut factory, distractors.as_ref(), config)
}
