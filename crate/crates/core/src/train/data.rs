use rand::Rng;

use crate::config::Config;
use crate::data::{align_and_crop, batch_tensor, ImageBuffer, Manifest};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Eye-aligned images of one training set, held in memory.
///
/// Paired sets hold one photo and one sketch per identity (same index);
/// photo-only sets hold any number of photos and no sketches.
#[derive(Clone, Debug)]
pub struct PreparedSet {
    pub identities: Vec<String>,
    pub photos: Vec<ImageBuffer>,
    pub sketches: Vec<ImageBuffer>,
    pub labels: Vec<usize>,
}

/// One minibatch as network-ready tensors.
pub struct Batch<T> {
    pub photos: Tensor<T>,
    /// Sketches at the configured sketch channel count.
    pub sketches: Option<Tensor<T>>,
    /// Sketches replicated to the encoder's input channels.
    pub sketches_rgb: Option<Tensor<T>>,
    pub labels: Vec<usize>,
}

impl PreparedSet {
    /// Paired manifests give paired sets; photo-only manifests give photo sets.
    pub fn from_manifest(manifest: &Manifest, config: &Config) -> Result<Self> {
        if manifest.is_photo_only() {
            Self::photos(manifest, config)
        } else {
            Self::paired(manifest, config)
        }
    }

    pub fn paired(manifest: &Manifest, config: &Config) -> Result<Self> {
        if manifest.pairing.is_empty() {
            return Err(Error::Data("paired training set is empty".into()));
        }
        let canon = config.canonical_eyes();
        let size = config.data.initial_size;
        let m = &config.model;
        let mut set = Self::empty();
        for (i, (id, p, s)) in manifest.pairs().enumerate() {
            set.identities.push(id.to_string());
            set.photos.push(align_and_crop(p, canon, size)?.with_channels(m.photo_channels)?);
            set.sketches.push(align_and_crop(s, canon, size)?.with_channels(m.sketch_channels)?);
            set.labels.push(i);
        }
        Ok(set)
    }

    pub fn photos(manifest: &Manifest, config: &Config) -> Result<Self> {
        let canon = config.canonical_eyes();
        let size = config.data.initial_size;
        let identities = manifest.identities();
        let mut set = Self::empty();
        for r in manifest.photos() {
            let label = identities.binary_search(&r.identity).expect("identity listed");
            set.photos.push(align_and_crop(r, canon, size)?.with_channels(config.model.photo_channels)?);
            set.labels.push(label);
        }
        if set.photos.is_empty() {
            return Err(Error::Data("photo training set is empty".into()));
        }
        set.identities = identities;
        Ok(set)
    }

    fn empty() -> Self {
        Self {
            identities: Vec::new(),
            photos: Vec::new(),
            sketches: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.photos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photos.is_empty()
    }

    pub fn is_paired(&self) -> bool {
        !self.sketches.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.identities.len()
    }

    /// Random crops of the samples at `indices`; a photo and its sketch share
    /// one crop offset.
    pub fn batch<T: Scalar, R: Rng + ?Sized>(
        &self,
        indices: &[usize],
        crop: usize,
        photo_channels: usize,
        rng: &mut R,
    ) -> Result<Batch<T>> {
        let mut photos = Vec::with_capacity(indices.len());
        let mut sketches = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = &self.photos[i];
            if crop > p.height() || crop > p.width() {
                return Err(Error::Shape(format!("crop {crop} larger than {}px", p.height())));
            }
            let top = rng.random_range(0..=p.height() - crop);
            let left = rng.random_range(0..=p.width() - crop);
            photos.push(p.window(top, left, crop)?);
            if self.is_paired() {
                sketches.push(self.sketches[i].window(top, left, crop)?);
            }
        }
        fn refs(v: &[ImageBuffer]) -> Vec<&ImageBuffer> {
            v.iter().collect()
        }
        let photos_t = batch_tensor(&refs(&photos), photo_channels)?;
        let (sk, sk_rgb) = if self.is_paired() {
            let r = refs(&sketches);
            let c = sketches[0].channels();
            (Some(batch_tensor(&r, c)?), Some(batch_tensor(&r, photo_channels)?))
        } else {
            (None, None)
        };
        Ok(Batch {
            photos: photos_t,
            sketches: sk,
            sketches_rgb: sk_rgb,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}
