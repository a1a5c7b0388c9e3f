//! Single-file checkpoints: `PSKCKPT\0`, a little-endian `u32` format version,
//! a `u64` header length, a JSON header, then raw little-endian tensor data.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::losses::AdaCosState;
use crate::nn::{init_params, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{Adam, TrainState};

pub const MAGIC: &[u8; 8] = b"PSKCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key as hex.
    pub seed: String,
    pub stream: u64,
    /// Position in 32-bit words, as a decimal string (128-bit).
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

/// Checkpoint metadata, readable without loading tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub byte_order: String,
    pub step: u8,
    pub epoch: usize,
    pub iteration: u64,
    /// Effective configuration as TOML.
    pub config: String,
    pub rng: RngState,
    /// `Some(dynamic)` when a cosine classifier is present.
    pub adacos_dynamic: Option<bool>,
    pub optimizers: BTreeMap<String, OptimizerMeta>,
    pub tensors: Vec<TensorEntry>,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

fn collect_tensors<T: Scalar>(state: &TrainState<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out = Vec::new();
    for (store, params) in state.model.stores() {
        for (name, t) in params.iter() {
            out.push((format!("{store}/{name}"), t));
        }
    }
    if let Some(a) = &state.model.adacos {
        out.push(("adacos/weights".to_string(), &a.class_weights));
    }
    for (store, opt) in &state.optimizers {
        for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
            for (name, t) in moments.iter() {
                out.push((format!("opt/{store}/{kind}/{name}"), t));
            }
        }
    }
    out
}

/// Writes `state` to `path`. Identical states give identical bytes.
pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let mut scale_t = None;
    if let Some(a) = &state.model.adacos {
        scale_t = Some(Tensor::scalar(a.scale));
    }
    let mut tensors = collect_tensors(state);
    if let Some(s) = &scale_t {
        tensors.push(("adacos/scale".to_string(), s));
    }
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let offset = payload.len() as u64;
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            nbytes: payload.len() as u64 - offset,
        });
    }
    let header = CheckpointHeader {
        dtype: T::DTYPE.to_string(),
        byte_order: "little".to_string(),
        step: state.step,
        epoch: state.epoch,
        iteration: state.iteration,
        config: state.config.to_toml_string(),
        rng: RngState::capture(&state.rng),
        adacos_dynamic: state.model.adacos.as_ref().map(|a| a.dynamic),
        optimizers: state
            .optimizers
            .iter()
            .map(|(k, o)| {
                let meta = OptimizerMeta {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    t: o.t,
                };
                (k.clone(), meta)
            })
            .collect(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes())?;
    f.write_all(&(json.len() as u64).to_le_bytes())?;
    f.write_all(&json)?;
    f.write_all(&payload)?;
    f.flush()?;
    Ok(())
}

fn read_parts(path: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..end]).map_err(|e| bad(&format!("bad header: {e}")))?;
    Ok((header, bytes[end..].to_vec()))
}

/// Reads only the header.
pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointHeader> {
    Ok(read_parts(path)?.0)
}

fn take<T: Scalar>(
    tensors: &mut BTreeMap<String, Tensor<T>>,
    name: &str,
    shape: Option<&[usize]>,
) -> Result<Tensor<T>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
    if let Some(s) = shape {
        if t.shape() != s {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, expected {s:?}",
                t.shape()
            )));
        }
    }
    Ok(t)
}

/// Loads a checkpoint written by [`save_checkpoint`] with the same scalar type.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    let (header, payload) = read_parts(path)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, expected {}",
            header.dtype,
            T::DTYPE
        )));
    }
    if header.byte_order != "little" {
        return Err(Error::Checkpoint(format!("unsupported byte order {}", header.byte_order)));
    }
    let config = Config::from_toml_str(&header.config)?;
    let mut tensors: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let (start, len) = (e.offset as usize, e.nbytes as usize);
        if len != n * T::BYTES || start.checked_add(len).is_none_or(|end| end > payload.len()) {
            return Err(Error::Checkpoint(format!("tensor '{}' is truncated or mis-sized", e.name)));
        }
        let data = payload[start..start + len].chunks(T::BYTES).map(T::read_le).collect();
        tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }

    let mut model = init_params::<T>(&config.model, 0);
    let names: Vec<&str> = model.stores().iter().map(|(n, _)| *n).collect();
    for store in names {
        let params = model.store_mut(store).expect("known store");
        let expected: Vec<(String, Vec<usize>)> =
            params.iter().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect();
        for (name, shape) in expected {
            let t = take(&mut tensors, &format!("{store}/{name}"), Some(&shape))?;
            params.insert(name, t);
        }
    }
    if let Some(dynamic) = header.adacos_dynamic {
        let weights = take(&mut tensors, "adacos/weights", None)?;
        let scale = take(&mut tensors, "adacos/scale", Some(&[]))?.item();
        if weights.shape().len() != 2 || weights.shape()[1] != config.model.latent_dim {
            return Err(Error::Checkpoint("classifier weights do not match latent_dim".into()));
        }
        model.adacos = Some(AdaCosState {
            class_weights: weights,
            scale,
            dynamic,
        });
    }
    let mut optimizers = BTreeMap::new();
    for (store, meta) in &header.optimizers {
        let mut opt = Adam::new(meta.lr, meta.beta1, meta.beta2);
        opt.eps = meta.eps;
        opt.t = meta.t;
        for kind in ["m", "v"] {
            let prefix = format!("opt/{store}/{kind}/");
            let names: Vec<String> = tensors.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
            let mut moments = ParamStore::new();
            for full in names {
                let t = take(&mut tensors, &full, None)?;
                moments.insert(&full[prefix.len()..], t);
            }
            if kind == "m" {
                opt.m = moments;
            } else {
                opt.v = moments;
            }
        }
        optimizers.insert(store.clone(), opt);
    }
    Ok(TrainState {
        config,
        model,
        optimizers,
        rng: header.rng.restore()?,
        step: header.step,
        epoch: header.epoch,
        iteration: header.iteration,
    })
}
