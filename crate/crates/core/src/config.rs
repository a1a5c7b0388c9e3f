//! Run configuration: TOML file with sections `data`, `model`, `train`
//! (`train.step1`, `train.step2`, `train.step3`) and `eval`. Every leaf can be
//! overridden with a dotted `key=value` pair.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, SimilarityMode};
use crate::nn::SynthesisMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Paired manifest for step 1.
    pub step1_manifest: String,
    /// Photo-only manifest for step 2.
    pub step2_manifest: String,
    /// Paired target manifest for step 3 and evaluation.
    pub target_manifest: String,
    /// Optional photo-only distractor manifest; empty for none.
    pub distractor_manifest: String,
    /// Side of the eye-aligned crop before random cropping.
    pub initial_size: usize,
    /// Canonical eye height as a fraction of the aligned crop side.
    pub eye_height: f64,
    /// Canonical inter-ocular distance as a fraction of the crop side.
    pub eye_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Network input/output side; equals the random-crop size.
    pub image_size: usize,
    pub photo_channels: usize,
    pub sketch_channels: usize,
    pub latent_dim: usize,
    pub encoder_stages: usize,
    pub encoder_base_channels: usize,
    pub encoder_slope: f64,
    pub generator_const_size: usize,
    pub generator_base_channels: usize,
    pub generator_min_channels: usize,
    pub disc_base_channels: usize,
    pub disc_slope: f64,
    pub adain_eps: f64,
    pub synthesis: SynthesisMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub similarity: SimilarityMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Steps run by the pipeline, e.g. `[1, 2, 3]`, `[2, 3]` or `[3]`.
    pub steps: Vec<u8>,
    pub beta1: f64,
    pub beta2: f64,
    pub adacos_dynamic: bool,
    /// Classify both photo and sketch codes in step 3 (otherwise sketches only).
    pub adacos_both_modalities: bool,
    /// Keep step-1 discriminators for step 3 instead of re-initializing them.
    pub carry_discriminators: bool,
    pub step1: StepConfig,
    pub step2: StepConfig,
    pub step3: StepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub partitions: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub ranks: Vec<usize>,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            step1_manifest: String::new(),
            step2_manifest: String::new(),
            target_manifest: String::new(),
            distractor_manifest: String::new(),
            initial_size: 68,
            eye_height: 0.35,
            eye_distance: 0.46,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            photo_channels: 3,
            sketch_channels: 1,
            latent_dim: 128,
            encoder_stages: 5,
            encoder_base_channels: 8,
            encoder_slope: 0.2,
            generator_const_size: 4,
            generator_base_channels: 32,
            generator_min_channels: 8,
            disc_base_channels: 8,
            disc_slope: 0.2,
            adain_eps: 1e-5,
            synthesis: SynthesisMode::Bidirectional,
        }
    }
}

impl StepConfig {
    fn with(learning_rate: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            learning_rate,
            batch_size,
            epochs,
            weights: LossWeights::default(),
            similarity: SimilarityMode::L1,
        }
    }
}

impl Default for StepConfig {
    fn default() -> Self {
        Self::with(2e-4, 8, 1)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: vec![1, 2, 3],
            beta1: 0.5,
            beta2: 0.999,
            adacos_dynamic: true,
            adacos_both_modalities: true,
            carry_discriminators: true,
            step1: StepConfig::with(2e-4, 8, 50),
            step2: StepConfig::with(5e-4, 32, 20),
            step3: StepConfig::with(2e-4, 8, 100),
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            partitions: 5,
            train_count: 20,
            test_count: 12,
            ranks: vec![1, 10, 50],
            seed: 0,
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self::toy()
    }
}

impl Config {
    /// Desk-scale preset on 64-px toy data.
    pub fn toy() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Full-scale settings for real 272/256-px face data.
    pub fn full() -> Self {
        let mut c = Self::toy();
        c.data.initial_size = 272;
        c.model.image_size = 256;
        c.model.sketch_channels = 3;
        c.model.latent_dim = 512;
        c.model.encoder_base_channels = 32;
        c.model.generator_base_channels = 512;
        c.model.generator_min_channels = 32;
        c.model.disc_base_channels = 64;
        c.train.step1.epochs = 3000;
        c.train.step2.epochs = 50;
        c.train.step3.epochs = 3000;
        c.eval.train_count = 48;
        c.eval.test_count = 75;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected toy or full)"
            ))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Loads a config file; relative manifest paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            c.resolve_paths(dir);
        }
        Ok(c)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.step1_manifest,
            &mut self.data.step2_manifest,
            &mut self.data.target_manifest,
            &mut self.data.distractor_manifest,
        ] {
            if !p.is_empty() && Path::new(p.as_str()).is_relative() {
                *p = base.join(p.as_str()).to_string_lossy().into_owned();
            }
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Dotted paths of every overridable leaf.
    pub fn valid_paths() -> Vec<String> {
        let v = toml::Value::try_from(Self::toy()).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &v, &mut out);
        out
    }

    /// Applies `path=value`; the value is parsed as a TOML literal and
    /// falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(path.trim(), raw.trim())
    }

    pub fn set(&mut self, path: &str, raw: &str) -> Result<()> {
        let valid = Self::valid_paths();
        if !valid.iter().any(|p| p == path) {
            return Err(Error::Config(format!(
                "unknown parameter path '{path}'; valid paths: {}",
                valid.join(", ")
            )));
        }
        let value = parse_literal(raw);
        let mut root = toml::Value::try_from(&*self).expect("config serializes");
        let mut cur = &mut root;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = cur
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("'{path}' is not a table path")))?;
            if i + 1 == parts.len() {
                let old = table.get(*part).cloned();
                let value = coerce(value, old.as_ref());
                table.insert((*part).to_string(), value);
                break;
            }
            cur = table
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("missing section in '{path}'")))?;
        }
        let updated: Config = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{path}={raw}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let bad = |msg: String| Err(Error::Config(msg));
        if m.image_size == 0 || m.latent_dim == 0 {
            return bad("image_size and latent_dim must be positive".into());
        }
        if m.image_size % (1 << m.encoder_stages) != 0 {
            return bad(format!(
                "image_size {} not divisible by 2^{} encoder stages",
                m.image_size, m.encoder_stages
            ));
        }
        if m.generator_const_size == 0
            || m.image_size % m.generator_const_size != 0
            || !(m.image_size / m.generator_const_size).is_power_of_two()
        {
            return bad(format!(
                "image_size {} / generator_const_size {} must be a power of two",
                m.image_size, m.generator_const_size
            ));
        }
        if !matches!(m.sketch_channels, 1 | 3) || m.photo_channels != 3 {
            return bad("photo_channels must be 3 and sketch_channels 1 or 3".into());
        }
        if self.data.initial_size < m.image_size {
            return bad(format!(
                "data.initial_size {} smaller than model.image_size {}",
                self.data.initial_size, m.image_size
            ));
        }
        if self.train.steps.is_empty()
            || self.train.steps.iter().any(|s| !(1..=3).contains(s))
            || self.train.steps.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "train.steps {:?} must be an increasing subset of [1, 2, 3]",
                self.train.steps
            ));
        }
        for (name, s) in [
            ("step1", &self.train.step1),
            ("step2", &self.train.step2),
            ("step3", &self.train.step3),
        ] {
            if s.batch_size == 0 || !(s.learning_rate > 0.0) {
                return bad(format!("train.{name}: batch_size and learning_rate must be positive"));
            }
            s.weights.validate()?;
        }
        if self.eval.ranks.iter().any(|&k| k == 0) {
            return bad("eval.ranks must be >= 1".into());
        }
        Ok(())
    }

    pub fn step(&self, step: u8) -> &StepConfig {
        match step {
            1 => &self.train.step1,
            2 => &self.train.step2,
            _ => &self.train.step3,
        }
    }

    pub fn manifest_for_step(&self, step: u8) -> Option<PathBuf> {
        let p = match step {
            1 => &self.data.step1_manifest,
            2 => &self.data.step2_manifest,
            _ => &self.data.target_manifest,
        };
        (!p.is_empty()).then(|| PathBuf::from(p))
    }

    pub fn canonical_eyes(&self) -> ((f64, f64), (f64, f64)) {
        canonical_eyes(self.data.initial_size, self.data.eye_height, self.data.eye_distance)
    }
}

/// Horizontally symmetric eye positions for a square crop of side `size`.
pub fn canonical_eyes(size: usize, height: f64, distance: f64) -> ((f64, f64), (f64, f64)) {
    let s = size as f64;
    let cx = (s - 1.0) / 2.0;
    let y = height * s;
    let half = distance * s / 2.0;
    ((cx - half, y), (cx + half, y))
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&p, child, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Integers written where floats are expected (e.g. `lambda_w=1`) are widened.
fn coerce(v: toml::Value, old: Option<&toml::Value>) -> toml::Value {
    match (v, old) {
        (toml::Value::Integer(i), Some(toml::Value::Float(_))) => toml::Value::Float(i as f64),
        (toml::Value::Integer(i), Some(toml::Value::String(_))) => toml::Value::String(i.to_string()),
        (v, _) => v,
    }
}
