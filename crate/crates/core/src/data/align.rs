use rand::Rng;

use crate::data::{ImageBuffer, SampleRecord};
use crate::error::{Error, Result};

/// `dst = a * src + t` in complex notation: rotation and uniform scale `a`,
/// translation `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub a: (f64, f64),
    pub t: (f64, f64),
}

impl SimilarityTransform {
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (ar, ai) = self.a;
        (ar * p.0 - ai * p.1 + self.t.0, ai * p.0 + ar * p.1 + self.t.1)
    }

    pub fn invert(&self, q: (f64, f64)) -> (f64, f64) {
        let (ar, ai) = self.a;
        let (x, y) = (q.0 - self.t.0, q.1 - self.t.1);
        let d = ar * ar + ai * ai;
        ((ar * x + ai * y) / d, (ar * y - ai * x) / d)
    }

    pub fn scale(&self) -> f64 {
        self.a.0.hypot(self.a.1)
    }
}

/// Transform taking the source eye pair onto the canonical pair.
pub fn eye_transform(
    eyes: ((f64, f64), (f64, f64)),
    canonical: ((f64, f64), (f64, f64)),
) -> Result<SimilarityTransform> {
    let ((lx, ly), (rx, ry)) = eyes;
    let ((cl_x, cl_y), (cr_x, cr_y)) = canonical;
    let (vx, vy) = (rx - lx, ry - ly);
    let (ux, uy) = (cr_x - cl_x, cr_y - cl_y);
    let den = vx * vx + vy * vy;
    if !(den > 1e-12) {
        return Err(Error::Alignment("zero inter-ocular distance".into()));
    }
    if !(ux * ux + uy * uy > 1e-12) {
        return Err(Error::Alignment("degenerate canonical eye positions".into()));
    }
    // a = u / v
    let a = ((ux * vx + uy * vy) / den, (uy * vx - ux * vy) / den);
    let t = (cl_x - (a.0 * lx - a.1 * ly), cl_y - (a.1 * lx + a.0 * ly));
    Ok(SimilarityTransform { a, t })
}

fn sample_bilinear(img: &ImageBuffer, c: usize, x: f64, y: f64) -> f32 {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let p = |yy: usize, xx: usize| img.get(c, yy, xx) as f64;
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Warps `img` so that `eyes` land on `canonical` in a `size x size` output.
/// Samples outside the source clamp to the border.
pub fn align_image(
    img: &ImageBuffer,
    eyes: ((f64, f64), (f64, f64)),
    canonical: ((f64, f64), (f64, f64)),
    size: usize,
) -> Result<ImageBuffer> {
    let inside = |(x, y): (f64, f64)| {
        x >= 0.0 && y >= 0.0 && x <= (img.width() - 1) as f64 && y <= (img.height() - 1) as f64
    };
    if !inside(eyes.0) || !inside(eyes.1) {
        return Err(Error::Alignment(format!(
            "eye coordinates {eyes:?} outside {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let tf = eye_transform(eyes, canonical)?;
    let mut out = ImageBuffer::filled(size, size, img.channels(), 0.0);
    for y in 0..size {
        for x in 0..size {
            let (sx, sy) = tf.invert((x as f64, y as f64));
            for c in 0..img.channels() {
                out.set(c, y, x, sample_bilinear(img, c, sx, sy));
            }
        }
    }
    Ok(out)
}

/// Loads the record's image and eye-aligns it into an `initial_size` square.
pub fn align_and_crop(
    record: &SampleRecord,
    canonical: ((f64, f64), (f64, f64)),
    initial_size: usize,
) -> Result<ImageBuffer> {
    let img = ImageBuffer::load_png(&record.image_path)?;
    align_image(&img, (record.left_eye, record.right_eye), canonical, initial_size)
}

/// A `crop_size` window at an offset drawn from `rng`.
pub fn random_crop<R: Rng + ?Sized>(
    image: &ImageBuffer,
    crop_size: usize,
    rng: &mut R,
) -> Result<ImageBuffer> {
    if crop_size == 0 || crop_size > image.height() || crop_size > image.width() {
        return Err(Error::Shape(format!(
            "crop {crop_size} does not fit {}x{}",
            image.height(),
            image.width()
        )));
    }
    let top = rng.random_range(0..=image.height() - crop_size);
    let left = rng.random_range(0..=image.width() - crop_size);
    image.window(top, left, crop_size)
}
