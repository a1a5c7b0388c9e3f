//! Mapping network, style generators and patch discriminators.

mod discriminator;
mod generator;
mod mapping;
mod model;
pub mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use discriminator::{PatchDiscriminator, PatchLayer};
pub use generator::{adain, StyleGenerator};
pub use mapping::MappingNetwork;
pub use model::{init_params, ModelState, Networks};
pub use params::{Binding, ParamStore};

/// Which synthesis directions take part in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    /// Both `G_s` (photo to sketch) and `G_p` (sketch to photo).
    Bidirectional,
    /// `G_s` only.
    PhotoToSketch,
    /// `G_p` only.
    SketchToPhoto,
    /// No generators; the mapping network is trained by the classifier alone.
    MappingOnly,
}

impl SynthesisMode {
    pub fn photo_to_sketch(self) -> bool {
        matches!(self, Self::Bidirectional | Self::PhotoToSketch)
    }

    pub fn sketch_to_photo(self) -> bool {
        matches!(self, Self::Bidirectional | Self::SketchToPhoto)
    }

    pub fn synthesizes(self) -> bool {
        self != Self::MappingOnly
    }
}

/// A point of the intermediate latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode<T>(Vec<T>);

impl<T: Scalar> LatentCode<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, k: T) -> Self {
        Self(self.0.iter().map(|&v| v * k).collect())
    }
}

/// `N(0, gain / fan_in)` initialization.
pub(crate) fn he_normal<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<T> {
    Tensor::randn(shape, (gain / fan_in as f64).sqrt(), rng)
}
