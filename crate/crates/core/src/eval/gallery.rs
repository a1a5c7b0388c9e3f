use std::collections::BTreeSet;

use crate::config::{canonical_eyes, DataConfig};
use crate::data::{align_and_crop, ImageBuffer, Manifest, SampleRecord};
use crate::error::{Error, Result};
use crate::nn::{LatentCode, ModelState};

/// One enrolled gallery photo.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryEntry {
    pub identity: String,
    pub code: LatentCode<f32>,
    pub distractor: bool,
}

/// Encoded gallery in enrollment order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GalleryIndex {
    pub entries: Vec<GalleryEntry>,
}

/// Ranked gallery for one probe, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub probe_identity: String,
    /// `(gallery identity, cosine distance)`, distances nondecreasing.
    pub ranked: Vec<(String, f64)>,
}

impl MatchResult {
    /// 1-based position of the probe's mate, if enrolled.
    pub fn mate_rank(&self) -> Option<usize> {
        self.ranked
            .iter()
            .position(|(id, _)| *id == self.probe_identity)
            .map(|p| p + 1)
    }
}

impl GalleryIndex {
    /// Mates from `(identity, code)` pairs; identities must be unique.
    pub fn from_codes(mates: Vec<(String, LatentCode<f32>)>) -> Result<Self> {
        let mut g = Self::default();
        let mut seen = BTreeSet::new();
        for (identity, code) in mates {
            if !seen.insert(identity.clone()) {
                return Err(Error::Gallery(format!("duplicate mate identity '{identity}'")));
            }
            g.push(identity, code, false)?;
        }
        Ok(g)
    }

    /// Appends distractor codes under generated labels `distractor-00000`, ...
    pub fn add_distractors(&mut self, codes: Vec<LatentCode<f32>>) -> Result<()> {
        let start = self.entries.iter().filter(|e| e.distractor).count();
        for (i, code) in codes.into_iter().enumerate() {
            let label = format!("distractor-{:05}", start + i);
            if self.entries.iter().any(|e| e.identity == label) {
                return Err(Error::Gallery(format!("distractor label '{label}' already enrolled")));
            }
            self.push(label, code, true)?;
        }
        Ok(())
    }

    fn push(&mut self, identity: String, code: LatentCode<f32>, distractor: bool) -> Result<()> {
        if !code.is_finite() || code.norm() == 0.0 {
            return Err(Error::Numeric(format!("gallery code for '{identity}' is zero or non-finite")));
        }
        self.entries.push(GalleryEntry {
            identity,
            code,
            distractor,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `1 - cos(a, b)` in double precision.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    1.0 - ab / (aa.sqrt() * bb.sqrt())
}

/// Ranks the gallery for an already encoded probe; ties keep gallery order.
pub fn match_code(
    probe_identity: &str,
    code: &LatentCode<f32>,
    gallery: &GalleryIndex,
) -> Result<MatchResult> {
    if gallery.is_empty() {
        return Err(Error::Gallery("empty gallery".into()));
    }
    if !code.is_finite() || code.norm() == 0.0 {
        return Err(Error::Numeric(format!("probe code for '{probe_identity}' is zero or non-finite")));
    }
    if code.dim() != gallery.entries[0].code.dim() {
        return Err(Error::Shape(format!(
            "probe dimension {} vs gallery dimension {}",
            code.dim(),
            gallery.entries[0].code.dim()
        )));
    }
    let mut ranked: Vec<(String, f64)> = gallery
        .entries
        .iter()
        .map(|e| (e.identity.clone(), cosine_distance(code.values(), e.code.values())))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(MatchResult {
        probe_identity: probe_identity.to_string(),
        ranked,
    })
}

/// Encodes a probe sketch and ranks the gallery against it.
pub fn match_probe(
    probe_identity: &str,
    sketch: &ImageBuffer,
    gallery: &GalleryIndex,
    model: &ModelState<f32>,
) -> Result<MatchResult> {
    let code = model.encode(sketch)?;
    match_code(probe_identity, &code, gallery)
}

/// Eye-aligned, center-cropped network input for `record`.
pub fn eval_image(record: &SampleRecord, data: &DataConfig, image_size: usize) -> Result<ImageBuffer> {
    let canon = canonical_eyes(data.initial_size, data.eye_height, data.eye_distance);
    align_and_crop(record, canon, data.initial_size)?.center_crop(image_size)
}

/// Enrolls the paired photo of every identity in `photos` (or every photo of a
/// photo-only manifest, which must then have one photo per identity), then
/// the photos of `distractors` under generated labels.
pub fn build_gallery(
    photos: &Manifest,
    model: &ModelState<f32>,
    distractors: Option<&Manifest>,
    data: &DataConfig,
) -> Result<GalleryIndex> {
    let records: Vec<&SampleRecord> = if photos.pairing.is_empty() {
        photos.photos().collect()
    } else {
        photos.pairs().map(|(_, p, _)| p).collect()
    };
    let size = model.config.image_size;
    let mut mates = Vec::with_capacity(records.len());
    for r in &records {
        let img = eval_image(r, data, size)?;
        mates.push((r.identity.clone(), model.encode(&img)?));
    }
    let mut gallery = GalleryIndex::from_codes(mates)?;
    if let Some(d) = distractors {
        let mate_ids: BTreeSet<&str> = records.iter().map(|r| r.identity.as_str()).collect();
        let mut codes = Vec::new();
        for r in d.photos() {
            if mate_ids.contains(r.identity.as_str()) {
                return Err(Error::Gallery(format!(
                    "distractor identity '{}' is also a mate",
                    r.identity
                )));
            }
            codes.push(model.encode(&eval_image(r, data, size)?)?);
        }
        gallery.add_distractors(codes)?;
    }
    Ok(gallery)
}
