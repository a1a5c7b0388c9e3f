use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, DataConfig};
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::eval::{build_gallery, cmc_curve, eval_image, match_probe, MatchResult};
use crate::nn::ModelState;

/// Train/test identities of one partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Outcome of evaluating one partition.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionResult {
    pub split: Split,
    pub cmc: Vec<f64>,
    pub excluded: usize,
}

/// Per-partition CMC curves plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ranks: Vec<usize>,
    pub partitions: Vec<PartitionResult>,
    /// Effective configuration (TOML).
    pub config: String,
}

impl EvalReport {
    pub fn gallery_size(&self) -> usize {
        self.partitions.first().map_or(0, |p| p.cmc.len())
    }

    /// Rank-k accuracy of partition `p`, with `k` clamped to the gallery size.
    pub fn rank_k(&self, p: usize, k: usize) -> f64 {
        let cmc = &self.partitions[p].cmc;
        cmc[k.clamp(1, cmc.len()) - 1]
    }

    pub fn mean(&self, k: usize) -> f64 {
        let n = self.partitions.len();
        (0..n).map(|p| self.rank_k(p, k)).sum::<f64>() / n as f64
    }

    /// Sample standard deviation across partitions (0 for a single one).
    pub fn std(&self, k: usize) -> f64 {
        let n = self.partitions.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean(k);
        let ss: f64 = (0..n).map(|p| (self.rank_k(p, k) - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }
}

/// Deterministic split of `identities` (sorted first) for `partition`.
pub fn partition_split(
    identities: &[String],
    train_count: usize,
    test_count: usize,
    seed: u64,
    partition: usize,
) -> Result<Split> {
    if train_count + test_count > identities.len() {
        return Err(Error::Config(format!(
            "split {train_count}+{test_count} needs more than the {} available identities",
            identities.len()
        )));
    }
    if test_count == 0 {
        return Err(Error::Config("test_count must be >= 1".into()));
    }
    let mut ids = identities.to_vec();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(partition as u64);
    ids.shuffle(&mut rng);
    Ok(Split {
        train: ids[..train_count].to_vec(),
        test: ids[train_count..train_count + test_count].to_vec(),
    })
}

/// Matches the paired sketches of `test` against a gallery of their paired
/// photos plus optional distractors.
pub fn evaluate_identities(
    model: &ModelState<f32>,
    dataset: &Manifest,
    test: &[String],
    distractors: Option<&Manifest>,
    data: &DataConfig,
) -> Result<Vec<MatchResult>> {
    let subset = dataset.paired_subset(test)?;
    let gallery = build_gallery(&subset, model, distractors, data)?;
    let size = model.config.image_size;
    subset
        .pairs()
        .map(|(id, _, sketch)| {
            let img = eval_image(sketch, data, size)?;
            match_probe(id, &img, &gallery, model)
        })
        .collect()
}

/// Trains one model per partition through `factory(partition, train_manifest)`
/// and evaluates it on that partition's held-out identities.
pub fn cross_partition_eval(
    dataset: &Manifest,
    factory: &mut dyn FnMut(usize, &Manifest) -> Result<ModelState<f32>>,
    distractors: Option<&Manifest>,
    config: &Config,
) -> Result<EvalReport> {
    let e = &config.eval;
    if e.partitions == 0 {
        return Err(Error::Config("eval.partitions must be >= 1".into()));
    }
    let ids: Vec<String> = dataset.pairing.keys().cloned().collect();
    let mut partitions = Vec::with_capacity(e.partitions);
    for p in 0..e.partitions {
        let split = partition_split(&ids, e.train_count, e.test_count, e.seed, p)?;
        let train = dataset.paired_subset(&split.train)?;
        let model = factory(p, &train)?;
        let results = evaluate_identities(&model, dataset, &split.test, distractors, &config.data)?;
        let cmc = cmc_curve(&results)?;
        log::info!(
            "partition {}: rank-1 {:.3} over {} probes, gallery {}",
            p + 1,
            cmc.values[0],
            results.len(),
            cmc.values.len()
        );
        partitions.push(PartitionResult {
            split,
            cmc: cmc.values,
            excluded: cmc.excluded,
        });
    }
    Ok(EvalReport {
        ranks: e.ranks.clone(),
        partitions,
        config: config.to_toml_string(),
    })
}
