use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{write_manifest, ImageBuffer, Manifest, Modality, SampleRecord};
use crate::error::{Error, Result};

/// Size and seed of a procedural face-like dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDatasetSpec {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            n_identities: 32,
            images_per_identity: 4,
            image_size: 72,
            seed: 0,
        }
    }
}

/// A generated dataset on disk.
#[derive(Clone, Debug)]
pub struct ToyDataset {
    pub dir: PathBuf,
    /// Every record; pairs use instance 0 of each identity.
    pub catalog: Manifest,
    /// Strict photo/sketch pairs.
    pub paired_path: PathBuf,
    /// All photos.
    pub photos_path: PathBuf,
    pub catalog_path: PathBuf,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disc,
    Box,
    Ring,
    Bar,
}

#[derive(Clone, Debug)]
struct Primitive {
    shape: Shape,
    center: (f64, f64),
    size: (f64, f64),
    angle: f64,
    color: [f32; 3],
}

/// Per-identity appearance in normalized [0, 1] coordinates.
#[derive(Clone, Debug)]
struct Identity {
    background: [f32; 3],
    hair: [f32; 3],
    skin: [f32; 3],
    face_center: (f64, f64),
    face_radii: (f64, f64),
    hair_lift: f64,
    eye_y: f64,
    eye_half_gap: f64,
    eye_radius: f64,
    primitives: Vec<Primitive>,
}

fn color<R: Rng>(rng: &mut R, lo: f32, hi: f32) -> [f32; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn sample_identity<R: Rng>(rng: &mut R) -> Identity {
    let shapes = [Shape::Disc, Shape::Box, Shape::Ring, Shape::Bar];
    let mut primitives = Vec::new();
    for k in 0..4 {
        let (xr, yr) = if k < 3 { ((0.3, 0.7), (0.5, 0.85)) } else { ((0.08, 0.92), (0.05, 0.3)) };
        primitives.push(Primitive {
            shape: shapes[rng.random_range(0..shapes.len())],
            center: (rng.random_range(xr.0..xr.1), rng.random_range(yr.0..yr.1)),
            size: (rng.random_range(0.06..0.13), rng.random_range(0.03..0.09)),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            // Dark marks on the face, light ones above it, so every part
            // differs in luminance from what it covers.
            color: if k < 3 { color(rng, -1.0, -0.2) } else { color(rng, 0.4, 1.0) },
        });
    }
    Identity {
        background: color(rng, -0.4, 0.2),
        hair: color(rng, -1.0, -0.6),
        skin: color(rng, 0.3, 1.0),
        face_center: (rng.random_range(0.45..0.55), rng.random_range(0.5..0.58)),
        face_radii: (rng.random_range(0.26..0.38), rng.random_range(0.34..0.44)),
        hair_lift: rng.random_range(0.03..0.12),
        eye_y: rng.random_range(0.33..0.4),
        eye_half_gap: rng.random_range(0.19..0.25),
        eye_radius: rng.random_range(0.025..0.045),
        primitives,
    }
}

fn sd_ellipse(p: (f64, f64), r: (f64, f64)) -> f64 {
    let k = ((p.0 / r.0).powi(2) + (p.1 / r.1).powi(2)).sqrt();
    (k - 1.0) * r.0.min(r.1)
}

fn sd_box(p: (f64, f64), half: (f64, f64)) -> f64 {
    let d = (p.0.abs() - half.0, p.1.abs() - half.1);
    let outside = d.0.max(0.0).hypot(d.1.max(0.0));
    outside + d.0.max(d.1).min(0.0)
}

impl Primitive {
    fn distance(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (p.0 - self.center.0, p.1 - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let q = (c * dx + s * dy, -s * dx + c * dy);
        match self.shape {
            Shape::Disc => sd_ellipse(q, (self.size.0, self.size.0)),
            Shape::Box => sd_box(q, (self.size.0, self.size.1)),
            Shape::Ring => (q.0.hypot(q.1) - self.size.0).abs() - 0.25 * self.size.1,
            Shape::Bar => sd_box(q, (self.size.0 * 1.5, 0.2 * self.size.1 + 0.01)),
        }
    }
}

const TINT: f32 = 0.1;

/// Pose, lighting and color variation of one rendered instance.
#[derive(Clone, Debug)]
struct Jitter {
    scale: f64,
    angle: f64,
    shift: (f64, f64),
    brightness: f32,
    offsets: Vec<(f64, f64)>,
    /// Color shifts for background, hair, skin, then each primitive.
    tints: Vec<[f32; 3]>,
}

impl Jitter {
    fn sample<R: Rng>(rng: &mut R, n_primitives: usize) -> Self {
        Self {
            scale: rng.random_range(0.92..1.06),
            angle: rng.random_range(-0.12..0.12),
            shift: (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)),
            brightness: rng.random_range(-0.08..0.08),
            offsets: (0..n_primitives)
                .map(|_| (rng.random_range(-0.012..0.012), rng.random_range(-0.012..0.012)))
                .collect(),
            tints: (0..n_primitives + 3)
                .map(|_| std::array::from_fn(|_| rng.random_range(-TINT..TINT)))
                .collect(),
        }
    }

    fn none(n_primitives: usize) -> Self {
        Self {
            scale: 1.0,
            angle: 0.0,
            shift: (0.0, 0.0),
            brightness: 0.0,
            offsets: vec![(0.0, 0.0); n_primitives],
            tints: vec![[0.0; 3]; n_primitives + 3],
        }
    }

    /// Normalized face coordinates to normalized image coordinates.
    fn forward(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p.0 - 0.5, p.1 - 0.5);
        (
            0.5 + self.scale * (c * dx - s * dy) + self.shift.0,
            0.5 + self.scale * (s * dx + c * dy) + self.shift.1,
        )
    }

    fn inverse(&self, q: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (
            (q.0 - 0.5 - self.shift.0) / self.scale,
            (q.1 - 0.5 - self.shift.1) / self.scale,
        );
        (0.5 + c * dx + s * dy, 0.5 - s * dx + c * dy)
    }
}

fn blend(dst: &mut [f32; 3], src: [f32; 3], alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    let a = alpha.min(1.0) as f32;
    for k in 0..3 {
        dst[k] = dst[k] * (1.0 - a) + src[k] * a;
    }
}

fn coverage(distance: f64, size: usize) -> f64 {
    (0.5 - distance * size as f64).clamp(0.0, 1.0)
}

/// Renders one photo and its eye positions in pixel coordinates.
fn render(id: &Identity, jitter: &Jitter, size: usize) -> (ImageBuffer, (f64, f64), (f64, f64)) {
    let mut img = ImageBuffer::filled(size, size, 3, 0.0);
    let left = (0.5 - id.eye_half_gap, id.eye_y);
    let right = (0.5 + id.eye_half_gap, id.eye_y);
    let hair_center = (id.face_center.0, id.face_center.1 - id.hair_lift);
    let hair_radii = (id.face_radii.0 * 1.08, id.face_radii.1 * 0.95);
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let q = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let p = jitter.inverse(q);
            let shade = (0.15 * (q.1 - 0.5)) as f32;
            let tinted = |c: [f32; 3], k: usize| std::array::from_fn(|i| c[i] + jitter.tints[k][i]);
            let mut px: [f32; 3] = tinted(id.background, 0).map(|v| v - shade);
            let rel = |c: (f64, f64)| (p.0 - c.0, p.1 - c.1);
            blend(&mut px, tinted(id.hair, 1), coverage(sd_ellipse(rel(hair_center), hair_radii), size));
            blend(&mut px, tinted(id.skin, 2), coverage(sd_ellipse(rel(id.face_center), id.face_radii), size));
            for eye in [left, right] {
                let d = sd_ellipse(rel(eye), (id.eye_radius, id.eye_radius));
                blend(&mut px, [-0.9, -0.9, -0.8], coverage(d, size));
            }
            for (k, (prim, off)) in id.primitives.iter().zip(&jitter.offsets).enumerate() {
                let d = prim.distance((p.0 - off.0, p.1 - off.1));
                blend(&mut px, tinted(prim.color, k + 3), coverage(d, size));
            }
            for (c, v) in px.iter().enumerate() {
                img.set(c, y, x, (v + jitter.brightness).clamp(-1.0, 1.0));
            }
        }
    }
    let to_px = |p: (f64, f64)| {
        let q = jitter.forward(p);
        (q.0 * s - 0.5, q.1 * s - 0.5)
    };
    (img, to_px(left), to_px(right))
}

/// Renders the canonical (unjittered) photo of identity `index` under `seed`.
pub fn render_identity(seed: u64, index: usize, size: usize) -> ImageBuffer {
    let id = sample_identity(&mut identity_rng(seed, index));
    render(&id, &Jitter::none(id.primitives.len()), size).0
}

fn identity_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

const EDGE_SCALE: f32 = 1.0;

/// Line-drawing rendition of a photo: Sobel edge magnitude of the gray image,
/// softly thresholded to dark strokes on white. Edge-free regions map to 1.
pub fn sketch_transform(photo: &ImageBuffer) -> ImageBuffer {
    let gray = photo.to_gray();
    let (h, w) = (gray.height(), gray.width());
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        gray.get(0, yy, xx)
    };
    let mut out = ImageBuffer::filled(h, w, 1, 1.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y - 1, x)
                - at(y - 1, x + 1);
            let m = gx.hypot(gy) / EDGE_SCALE;
            out.set(0, y as usize, x as usize, 2.0 * (-m * m).exp() - 1.0);
        }
    }
    out
}

/// Writes photos, sketches and the catalog, paired and photo-only manifests
/// under `out_dir`. Output bytes depend only on `spec`.
pub fn generate_toy_dataset(spec: &ToyDatasetSpec, out_dir: &Path) -> Result<ToyDataset> {
    if spec.n_identities < 2 {
        return Err(Error::Data(format!(
            "toy dataset needs at least 2 identities, got {}",
            spec.n_identities
        )));
    }
    if spec.images_per_identity == 0 || spec.image_size < 16 {
        return Err(Error::Data("toy dataset needs >= 1 image per identity of size >= 16".into()));
    }
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut records = Vec::new();
    for i in 0..spec.n_identities {
        let mut rng = identity_rng(spec.seed, i);
        let id = sample_identity(&mut rng);
        let name = format!("s{}-{:04}", spec.seed, i);
        for k in 0..spec.images_per_identity {
            let jitter = Jitter::sample(&mut rng, id.primitives.len());
            let (photo, left_eye, right_eye) = render(&id, &jitter, spec.image_size);
            let sketch = sketch_transform(&photo);
            for (modality, img) in [(Modality::Photo, &photo), (Modality::Sketch, &sketch)] {
                let path = images.join(format!("{name}_{modality}_{k}.png"));
                img.save_png(&path)?;
                records.push(SampleRecord {
                    identity: name.clone(),
                    modality,
                    image_path: path,
                    left_eye,
                    right_eye,
                });
            }
        }
    }
    let catalog = Manifest::catalog(records);
    let paired: Vec<SampleRecord> = catalog
        .pairs()
        .flat_map(|(_, p, s)| [p.clone(), s.clone()])
        .collect();
    let photos: Vec<SampleRecord> = catalog.photos().cloned().collect();
    let catalog_path = out_dir.join("catalog.tsv");
    let paired_path = out_dir.join("paired.tsv");
    let photos_path = out_dir.join("photos.tsv");
    write_manifest(&catalog.records, &catalog_path)?;
    write_manifest(&paired, &paired_path)?;
    write_manifest(&photos, &photos_path)?;
    Ok(ToyDataset {
        dir: out_dir.to_path_buf(),
        catalog,
        paired_path,
        photos_path,
        catalog_path,
    })
}
