use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative weights of the adversarial, similarity and collaborative terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub lambda_s: f64,
    pub lambda_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gan: 1.0,
            lambda_s: 10.0,
            lambda_w: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_gan", self.lambda_gan),
            ("lambda_s", self.lambda_s),
            ("lambda_w", self.lambda_w),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-term values of one evaluation of the joint objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub adacos: f64,
    pub gan: f64,
    pub similarity: f64,
    pub collaborative: f64,
}

/// `L = L_adacos + lambda_gan * L_gan + lambda_s * L_s + lambda_w * L_w`.
pub fn joint_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    for v in [c.adacos, c.gan, c.similarity, c.collaborative] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss component {v}")));
        }
    }
    Ok(c.adacos + w.lambda_gan * c.gan + w.lambda_s * c.similarity + w.lambda_w * c.collaborative)
}
