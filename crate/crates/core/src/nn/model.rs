use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::ImageBuffer;
use crate::error::Result;
use crate::losses::AdaCosState;
use crate::nn::{LatentCode, MappingNetwork, ParamStore, PatchDiscriminator, StyleGenerator};
use crate::scalar::Scalar;

/// Architecture objects derived from a [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct Networks {
    pub mapping: MappingNetwork,
    /// `G_s`: latent code to sketch.
    pub gen_sketch: StyleGenerator,
    /// `G_p`: latent code to photo.
    pub gen_photo: StyleGenerator,
    /// Shared architecture of `D_s` and `D_p`.
    pub disc: PatchDiscriminator,
}

impl Networks {
    pub fn new(c: &ModelConfig) -> Self {
        Self {
            mapping: MappingNetwork::from_config(c),
            gen_sketch: StyleGenerator::from_config(c, c.sketch_channels),
            gen_photo: StyleGenerator::from_config(c, c.photo_channels),
            disc: PatchDiscriminator::from_config(c),
        }
    }
}

/// All trainable state: one mapping network shared by both modalities, two
/// generators, two discriminators and the optional cosine classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub mapping: ParamStore<T>,
    pub gen_sketch: ParamStore<T>,
    pub gen_photo: ParamStore<T>,
    pub disc_sketch: ParamStore<T>,
    pub disc_photo: ParamStore<T>,
    pub adacos: Option<AdaCosState<T>>,
}

/// Deterministic initialization from `seed`.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> ModelState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nets = Networks::new(config);
    ModelState {
        config: config.clone(),
        mapping: nets.mapping.init(&mut rng),
        gen_sketch: nets.gen_sketch.init(&mut rng),
        gen_photo: nets.gen_photo.init(&mut rng),
        disc_sketch: nets.disc.init(&mut rng),
        disc_photo: nets.disc.init(&mut rng),
        adacos: None,
    }
}

impl<T: Scalar> ModelState<T> {
    pub fn networks(&self) -> Networks {
        Networks::new(&self.config)
    }

    pub fn stores(&self) -> [(&'static str, &ParamStore<T>); 5] {
        [
            ("mapping", &self.mapping),
            ("gen_sketch", &self.gen_sketch),
            ("gen_photo", &self.gen_photo),
            ("disc_sketch", &self.disc_sketch),
            ("disc_photo", &self.disc_photo),
        ]
    }

    pub fn store_mut(&mut self, name: &str) -> Option<&mut ParamStore<T>> {
        match name {
            "mapping" => Some(&mut self.mapping),
            "gen_sketch" => Some(&mut self.gen_sketch),
            "gen_photo" => Some(&mut self.gen_photo),
            "disc_sketch" => Some(&mut self.disc_sketch),
            "disc_photo" => Some(&mut self.disc_photo),
            _ => None,
        }
    }

    pub fn encode(&self, image: &ImageBuffer) -> Result<LatentCode<T>> {
        self.networks().mapping.encode(image, &self.mapping)
    }

    pub fn encode_batch(&self, images: &[&ImageBuffer]) -> Result<Vec<LatentCode<T>>> {
        self.networks().mapping.encode_batch(images, &self.mapping)
    }

    pub fn photo_to_sketch(&self, photo: &ImageBuffer) -> Result<ImageBuffer> {
        let w = self.encode(photo)?;
        self.networks().gen_sketch.synthesize(&w, &self.gen_sketch)
    }

    pub fn sketch_to_photo(&self, sketch: &ImageBuffer) -> Result<ImageBuffer> {
        let w = self.encode(sketch)?;
        self.networks().gen_photo.synthesize(&w, &self.gen_photo)
    }
}
