use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::config::{Config, StepConfig};
use crate::error::{Error, Result};
use crate::losses::{
    adacos_loss, collaborative, gan_discriminator, gan_generator, joint_loss, similarity,
    AdaCosState, LossComponents,
};
use crate::nn::{init_params, Binding, ModelState, Networks, ParamStore, PatchDiscriminator};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{Adam, Batch, PreparedSet};

/// Header of the per-iteration loss log.
pub const LOSS_HEADER: &str = "step,L_total,L_adacos,L_gan,L_s,L_w,adacos_scale";

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState<T: Scalar> {
    pub config: Config,
    pub model: ModelState<T>,
    /// Optimizers keyed by store name (`mapping`, `gen_sketch`, ..., `adacos`).
    pub optimizers: BTreeMap<String, Adam<T>>,
    pub rng: ChaCha8Rng,
    /// Training step in progress or last finished (0 before any step).
    pub step: u8,
    /// Completed epochs of `step`.
    pub epoch: usize,
    /// Completed iterations of `step`.
    pub iteration: u64,
}

/// Per-epoch means of the logged quantities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub components: LossComponents,
    pub total: f64,
    pub discriminator: f64,
    /// Training classification accuracy of the cosine classifier, when active.
    pub accuracy: Option<f64>,
}

/// One logged iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLoss {
    pub components: LossComponents,
    pub total: f64,
    pub discriminator: f64,
    pub correct: usize,
    pub classified: usize,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh parameters and training stream from `config.train.seed`.
    pub fn new(config: &Config) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        rng.set_stream(1);
        Self {
            config: config.clone(),
            model: init_params(&config.model, config.train.seed),
            optimizers: BTreeMap::new(),
            rng,
            step: 0,
            epoch: 0,
            iteration: 0,
        }
    }

    /// Resets counters and optimizers for `step` and prepares the classifier:
    /// step 2 and step 3 get a fresh one sized to `data`.
    pub fn begin_step(&mut self, step: u8, data: &PreparedSet) -> Result<()> {
        check_step_data(step, data, &self.config)?;
        let sc = self.config.step(step).clone();
        let t = &self.config.train;
        self.optimizers.clear();
        for name in trained_stores(step, &self.config) {
            self.optimizers
                .insert(name.to_string(), Adam::new(sc.learning_rate, t.beta1, t.beta2));
        }
        if step >= 2 {
            self.model.adacos = Some(AdaCosState::new(
                data.num_classes(),
                self.config.model.latent_dim,
                t.adacos_dynamic,
                &mut self.rng,
            )?);
        }
        if step == 3 && !t.carry_discriminators {
            let disc = Networks::new(&self.config.model).disc;
            self.model.disc_sketch = disc.init(&mut self.rng);
            self.model.disc_photo = disc.init(&mut self.rng);
        }
        self.step = step;
        self.epoch = 0;
        self.iteration = 0;
        Ok(())
    }

    /// Runs epochs until `step` has `config.step(step).epochs` of them, writing
    /// one loss row per iteration to `log` and calling `on_epoch` after each
    /// epoch. Continues a partially finished step when resumed.
    pub fn run_step(
        &mut self,
        step: u8,
        data: &PreparedSet,
        log: &mut dyn Write,
        on_epoch: &mut dyn FnMut(&TrainState<T>, &EpochStats) -> Result<()>,
    ) -> Result<()> {
        if self.step != step {
            self.begin_step(step, data)?;
        } else {
            check_step_data(step, data, &self.config)?;
        }
        let epochs = self.config.step(step).epochs;
        while self.epoch < epochs {
            let stats = self.train_epoch(data, log)?;
            on_epoch(self, &stats)?;
        }
        Ok(())
    }

    /// One shuffled pass over `data`.
    pub fn train_epoch(&mut self, data: &PreparedSet, log: &mut dyn Write) -> Result<EpochStats> {
        let sc = self.config.step(self.step).clone();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = IterationLoss {
            components: LossComponents::default(),
            total: 0.0,
            discriminator: 0.0,
            correct: 0,
            classified: 0,
        };
        let mut n = 0usize;
        for chunk in order.chunks(sc.batch_size) {
            let it = self.train_batch(data, chunk)?;
            let scale = self.model.adacos.as_ref().map_or(0.0, |a| a.scale.as_f64());
            let c = &it.components;
            writeln!(
                log,
                "{},{},{},{},{},{},{}",
                self.iteration, it.total, c.adacos, c.gan, c.similarity, c.collaborative, scale
            )?;
            sum.components.adacos += c.adacos;
            sum.components.gan += c.gan;
            sum.components.similarity += c.similarity;
            sum.components.collaborative += c.collaborative;
            sum.total += it.total;
            sum.discriminator += it.discriminator;
            sum.correct += it.correct;
            sum.classified += it.classified;
            n += 1;
        }
        self.epoch += 1;
        let k = n.max(1) as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            components: LossComponents {
                adacos: sum.components.adacos / k,
                gan: sum.components.gan / k,
                similarity: sum.components.similarity / k,
                collaborative: sum.components.collaborative / k,
            },
            total: sum.total / k,
            discriminator: sum.discriminator / k,
            accuracy: (sum.classified > 0).then(|| sum.correct as f64 / sum.classified as f64),
        })
    }

    /// One optimizer iteration on the samples at `indices`.
    pub fn train_batch(&mut self, data: &PreparedSet, indices: &[usize]) -> Result<IterationLoss> {
        let m = &self.config.model;
        let batch: Batch<T> = data.batch(indices, m.image_size, m.photo_channels, &mut self.rng)?;
        let sc = self.config.step(self.step).clone();
        let out = match self.step {
            2 => self.classifier_iteration(&batch),
            1 | 3 if !self.config.model.synthesis.synthesizes() => {
                if self.step == 1 {
                    return Err(Error::Config("step 1 needs a synthesis network".into()));
                }
                self.classifier_iteration(&batch)
            }
            1 | 3 => self.synthesis_iteration(&batch, &sc),
            s => Err(Error::Config(format!("unknown training step {s}"))),
        }?;
        self.iteration += 1;
        if !out.total.is_finite() || !out.discriminator.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {} epoch {} iteration {}",
                self.step, self.epoch, self.iteration
            )));
        }
        Ok(out)
    }

    /// Mapping network and classifier only: step 2 and the mapping-only variant.
    fn classifier_iteration(&mut self, batch: &Batch<T>) -> Result<IterationLoss> {
        let nets = Networks::new(&self.config.model);
        let state = self.model.adacos.as_mut().ok_or_else(|| {
            Error::Config("cosine classifier missing; step must start with begin_step".into())
        })?;
        let mut g = Graph::new();
        let mut bm = Binding::new(&self.model.mapping, true);
        let xp = g.constant(batch.photos.clone());
        let mut w = nets.mapping.forward(&mut g, &mut bm, xp)?;
        let mut labels = batch.labels.clone();
        if let Some(sk) = &batch.sketches_rgb {
            let xs = g.constant(sk.clone());
            let ws = nets.mapping.forward(&mut g, &mut bm, xs)?;
            w = if self.config.train.adacos_both_modalities {
                labels.extend_from_slice(&batch.labels);
                g.concat_rows(w, ws)?
            } else {
                ws
            };
        }
        let cw = g.param(state.class_weights.clone());
        let loss = adacos_loss(&mut g, w, &labels, cw, state)?;
        let value = g.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite classifier loss {value}")));
        }
        let (correct, classified) = count_correct(g.value(w), &state.class_weights, &labels);
        let mut grads = g.backward(loss)?;
        let gm = bm.grads(&mut grads);
        let gw = grads.take(cw);
        let opt = self.optimizers.get_mut("mapping").expect("mapping optimizer");
        opt.step(&mut self.model.mapping, &gm)?;
        if let Some(gw) = gw {
            let opt = self.optimizers.get_mut("adacos").expect("classifier optimizer");
            opt.tick();
            opt.update("weights", &mut state.class_weights, &gw)?;
            state.renormalize();
        }
        Ok(IterationLoss {
            components: LossComponents {
                adacos: value,
                ..LossComponents::default()
            },
            total: value,
            discriminator: 0.0,
            correct,
            classified,
        })
    }

    /// Step 1 / step 3 with generators: discriminator update on detached
    /// outputs, then mapping/generator (and classifier) update against the
    /// updated, frozen discriminators.
    fn synthesis_iteration(&mut self, batch: &Batch<T>, sc: &StepConfig) -> Result<IterationLoss> {
        let nets = Networks::new(&self.config.model);
        let mode = self.config.model.synthesis;
        let sketches = batch
            .sketches
            .as_ref()
            .ok_or_else(|| Error::Data("synthesis training needs paired data".into()))?;
        let sketches_rgb = batch.sketches_rgb.as_ref().expect("paired batch");
        let model = &mut self.model;
        let mut g = Graph::new();
        let mut bm = Binding::new(&model.mapping, true);
        let mut bgs = Binding::new(&model.gen_sketch, true);
        let mut bgp = Binding::new(&model.gen_photo, true);
        let xp = g.constant(batch.photos.clone());
        let xs = g.constant(sketches.clone());
        let xs_rgb = g.constant(sketches_rgb.clone());
        let wp = nets.mapping.forward(&mut g, &mut bm, xp)?;
        let ws = nets.mapping.forward(&mut g, &mut bm, xs_rgb)?;
        let fake_s = if mode.photo_to_sketch() {
            Some(nets.gen_sketch.forward(&mut g, &mut bgs, wp)?)
        } else {
            None
        };
        let fake_p = if mode.sketch_to_photo() {
            Some(nets.gen_photo.forward(&mut g, &mut bgp, ws)?)
        } else {
            None
        };

        let mut d_loss = 0.0;
        if let Some(f) = fake_s {
            let opt = self.optimizers.get_mut("disc_sketch").expect("optimizer");
            d_loss += discriminator_update(
                &nets.disc,
                &mut model.disc_sketch,
                opt,
                &batch.photos,
                sketches,
                g.value(f),
            )?;
        }
        if let Some(f) = fake_p {
            let opt = self.optimizers.get_mut("disc_photo").expect("optimizer");
            d_loss += discriminator_update(
                &nets.disc,
                &mut model.disc_photo,
                opt,
                sketches,
                &batch.photos,
                g.value(f),
            )?;
        }

        let mut bds = Binding::new(&model.disc_sketch, false);
        let mut bdp = Binding::new(&model.disc_photo, false);
        let mut gan_terms = Vec::new();
        let mut sim_terms = Vec::new();
        if let Some(f) = fake_s {
            let logits = nets.disc.forward(&mut g, &mut bds, xp, f)?;
            gan_terms.push(gan_generator(&mut g, logits));
            sim_terms.push(similarity(&mut g, f, xs, sc.similarity)?);
        }
        if let Some(f) = fake_p {
            let logits = nets.disc.forward(&mut g, &mut bdp, xs, f)?;
            gan_terms.push(gan_generator(&mut g, logits));
            sim_terms.push(similarity(&mut g, f, xp, sc.similarity)?);
        }
        let gan = sum_vars(&mut g, &gan_terms)?;
        let sim = sum_vars(&mut g, &sim_terms)?;
        let lw = collaborative(&mut g, wp, ws)?;

        let mut classifier = None;
        let mut correct = (0, 0);
        if self.step == 3 {
            let state = model.adacos.as_mut().ok_or_else(|| {
                Error::Config("cosine classifier missing; step must start with begin_step".into())
            })?;
            let (w, labels) = if self.config.train.adacos_both_modalities {
                let mut l = batch.labels.clone();
                l.extend_from_slice(&batch.labels);
                (g.concat_rows(wp, ws)?, l)
            } else {
                (ws, batch.labels.clone())
            };
            let cw = g.param(state.class_weights.clone());
            let loss = adacos_loss(&mut g, w, &labels, cw, state)?;
            correct = count_correct(g.value(w), &state.class_weights, &labels);
            classifier = Some((loss, cw));
        }

        let weights = sc.weights;
        let mut total = weighted(
            &mut g,
            &[(gan, weights.lambda_gan), (sim, weights.lambda_s), (Some(lw), weights.lambda_w)],
        )?;
        if let Some((l, _)) = classifier {
            total = g.add(total, l)?;
        }
        let value = |g: &Graph<T>, v: Option<Var>| v.map_or(0.0, |v| g.value(v).item().as_f64());
        let components = LossComponents {
            adacos: value(&g, classifier.map(|c| c.0)),
            gan: value(&g, gan),
            similarity: value(&g, sim),
            collaborative: g.value(lw).item().as_f64(),
        };
        let joint = joint_loss(&components, &weights)?;

        let mut grads = g.backward(total)?;
        let gm = bm.grads(&mut grads);
        let ggs = bgs.grads(&mut grads);
        let ggp = bgp.grads(&mut grads);
        let gcw = classifier.and_then(|(_, cw)| grads.take(cw));
        drop(bds);
        drop(bdp);
        for (name, store, gr) in [
            ("mapping", &mut model.mapping, gm),
            ("gen_sketch", &mut model.gen_sketch, ggs),
            ("gen_photo", &mut model.gen_photo, ggp),
        ] {
            if let Some(opt) = self.optimizers.get_mut(name) {
                if !gr.is_empty() {
                    opt.step(store, &gr)?;
                }
            }
        }
        if let (Some(gw), Some(state)) = (gcw, model.adacos.as_mut()) {
            let opt = self.optimizers.get_mut("adacos").expect("classifier optimizer");
            opt.tick();
            opt.update("weights", &mut state.class_weights, &gw)?;
            state.renormalize();
        }
        Ok(IterationLoss {
            components,
            total: joint,
            discriminator: d_loss,
            correct: correct.0,
            classified: correct.1,
        })
    }
}

/// Stores updated by `step` under the configured synthesis mode.
pub fn trained_stores(step: u8, config: &Config) -> Vec<&'static str> {
    let mode = config.model.synthesis;
    let mut v = vec!["mapping"];
    if step != 2 && mode.photo_to_sketch() {
        v.extend(["gen_sketch", "disc_sketch"]);
    }
    if step != 2 && mode.sketch_to_photo() {
        v.extend(["gen_photo", "disc_photo"]);
    }
    if step >= 2 {
        v.push("adacos");
    }
    v
}

fn check_step_data(step: u8, data: &PreparedSet, config: &Config) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("step {step}: empty training set")));
    }
    match step {
        1 if !data.is_paired() => Err(Error::Data("step 1 needs a paired manifest".into())),
        2 if data.num_classes() < 2 => Err(Error::Config(format!(
            "step 2 needs at least 2 identities, got {}",
            data.num_classes()
        ))),
        3 if config.model.synthesis.synthesizes() && !data.is_paired() => {
            Err(Error::Data("step 3 needs a paired manifest".into()))
        }
        3 if data.num_classes() < 2 => Err(Error::Config(format!(
            "step 3 needs at least 2 identities, got {}",
            data.num_classes()
        ))),
        1..=3 => Ok(()),
        s => Err(Error::Config(format!("unknown training step {s}"))),
    }
}

/// Discriminator step on `(condition, real)` vs `(condition, fake)`; returns the loss.
fn discriminator_update<T: Scalar>(
    disc: &PatchDiscriminator,
    params: &mut ParamStore<T>,
    opt: &mut Adam<T>,
    condition: &Tensor<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut bind = Binding::new(params, true);
    let c = g.constant(condition.clone());
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let lr = disc.forward(&mut g, &mut bind, c, r)?;
    let lf = disc.forward(&mut g, &mut bind, c, f)?;
    let loss = gan_discriminator(&mut g, lr, lf)?;
    let value = g.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite discriminator loss".into()));
    }
    let mut grads = g.backward(loss)?;
    let gr = bind.grads(&mut grads);
    drop(bind);
    opt.step(params, &gr)?;
    Ok(value)
}

fn sum_vars<T: Scalar>(g: &mut Graph<T>, vars: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &v in vars {
        acc = Some(match acc {
            Some(a) => g.add(a, v)?,
            None => v,
        });
    }
    Ok(acc)
}

fn weighted<T: Scalar>(g: &mut Graph<T>, terms: &[(Option<Var>, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        if let Some(v) = v {
            let s = g.scale(v, T::lit(w));
            acc = Some(match acc {
                Some(a) => g.add(a, s)?,
                None => s,
            });
        }
    }
    acc.ok_or_else(|| Error::Config("empty objective".into()))
}

/// Argmax-cosine hits of codes `w [N, d]` against unit class rows.
fn count_correct<T: Scalar>(w: &Tensor<T>, classes: &Tensor<T>, labels: &[usize]) -> (usize, usize) {
    let d = classes.shape()[1];
    let mut hits = 0;
    for (row, &y) in w.data().chunks(d).zip(labels) {
        let best = classes
            .data()
            .chunks(d)
            .map(|c| c.iter().zip(row).map(|(&a, &b)| (a * b).as_f64()).sum::<f64>())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        hits += usize::from(best.0 == y);
    }
    (hits, labels.len())
}
