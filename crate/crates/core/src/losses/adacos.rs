use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::LatentCode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower bound of the logit scale; also the ceiling when `sqrt(2) ln(C - 1)`
/// falls below it (C = 2, 3).
pub const MIN_SCALE: f64 = 1.0;

/// Cosine classifier with an adaptive logit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaCosState<T> {
    /// `C x d`, unit rows.
    pub class_weights: Tensor<T>,
    pub scale: T,
    pub dynamic: bool,
}

impl<T: Scalar> AdaCosState<T> {
    pub fn new<R: Rng + ?Sized>(
        classes: usize,
        dim: usize,
        dynamic: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "cosine classifier needs at least 2 classes, got {classes}"
            )));
        }
        let mut s = Self {
            class_weights: Tensor::randn(&[classes, dim], 1.0, rng),
            scale: T::lit(Self::fixed_scale(classes)),
            dynamic,
        };
        s.renormalize();
        Ok(s)
    }

    /// Fixed scale with an explicit value and class weights (rows are normalized).
    pub fn with_scale(class_weights: Tensor<T>, scale: T) -> Result<Self> {
        if class_weights.shape().len() != 2 || class_weights.shape()[0] < 2 {
            return Err(Error::Config("class weights must be C x d with C >= 2".into()));
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::Config("scale must be positive and finite".into()));
        }
        let mut s = Self {
            class_weights,
            scale,
            dynamic: false,
        };
        s.renormalize();
        Ok(s)
    }

    pub fn classes(&self) -> usize {
        self.class_weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.class_weights.shape()[1]
    }

    /// `sqrt(2) * ln(C - 1)`, floored at [`MIN_SCALE`].
    pub fn fixed_scale(classes: usize) -> f64 {
        (std::f64::consts::SQRT_2 * ((classes as f64) - 1.0).ln()).max(MIN_SCALE)
    }

    pub fn max_scale(&self) -> f64 {
        Self::fixed_scale(self.classes())
    }

    pub fn renormalize(&mut self) {
        let d = self.dim();
        for row in self.class_weights.data_mut().chunks_mut(d) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n > T::zero() {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    /// Re-estimates the scale from a batch of cosines `[N, C]`: the median
    /// true-class angle (capped at pi/4) and the mean summed non-target
    /// exponential under the current scale.
    pub fn update_scale(&mut self, cos: &Tensor<T>, labels: &[usize]) {
        let c = self.classes();
        if labels.is_empty() {
            return;
        }
        let s = self.scale.as_f64();
        let mut b_sum = 0.0;
        let mut angles = Vec::with_capacity(labels.len());
        for (row, &y) in cos.data().chunks(c).zip(labels) {
            for (j, &v) in row.iter().enumerate() {
                if j != y {
                    b_sum += (s * v.as_f64()).exp();
                }
            }
            angles.push(row[y].as_f64().clamp(-1.0, 1.0).acos());
        }
        let b_avg = b_sum / labels.len() as f64;
        angles.sort_by(|a, b| a.total_cmp(b));
        let median = angles[(angles.len() - 1) / 2];
        let new = b_avg.ln() / median.min(std::f64::consts::FRAC_PI_4).cos();
        let new = if new.is_finite() { new } else { MIN_SCALE };
        self.scale = T::lit(new.clamp(MIN_SCALE, self.max_scale()));
    }
}

/// Mean cosine-softmax cross-entropy of codes `w [N, d]`; `weights` is the
/// graph node holding the class weights. Updates the scale first when dynamic.
pub fn adacos_loss<T: Scalar>(
    g: &mut Graph<T>,
    w: Var,
    labels: &[usize],
    weights: Var,
    state: &mut AdaCosState<T>,
) -> Result<Var> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= state.classes()) {
        return Err(Error::Config(format!(
            "identity index {bad} out of range for {} classes",
            state.classes()
        )));
    }
    let u = g.normalize_rows(w)?;
    let cos = g.linear(u, weights, None)?;
    if state.dynamic {
        let c = g.value(cos).clone();
        state.update_scale(&c, labels);
    }
    let logits = g.scale(cos, state.scale);
    g.cross_entropy(logits, labels)
}

/// Loss for a single code against `identity`, returning the updated state.
pub fn loss_adacos<T: Scalar>(
    w: &LatentCode<T>,
    identity: usize,
    state: &AdaCosState<T>,
) -> Result<(T, AdaCosState<T>)> {
    if w.dim() != state.dim() {
        return Err(Error::Shape(format!(
            "code dimension {} vs classifier dimension {}",
            w.dim(),
            state.dim()
        )));
    }
    let mut next = state.clone();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, w.dim()], w.values().to_vec())?);
    let wt = g.constant(state.class_weights.clone());
    let l = adacos_loss(&mut g, x, &[identity], wt, &mut next)?;
    Ok((g.value(l).item(), next))
}
