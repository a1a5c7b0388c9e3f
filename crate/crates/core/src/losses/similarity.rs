use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Width of the `[-1, 1]` pixel range.
const DYNAMIC_RANGE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    L1,
    Ssim,
    L1PlusSsim,
}

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// `(C1, C2) = ((0.01 L)^2, (0.03 L)^2)` for dynamic range `L`.
pub fn ssim_constants() -> (f64, f64) {
    ((0.01 * DYNAMIC_RANGE).powi(2), (0.03 * DYNAMIC_RANGE).powi(2))
}

/// Per-position SSIM over valid 11x11 Gaussian windows, per channel.
pub fn ssim_map<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    let k: Vec<T> = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
        .into_iter()
        .map(T::lit)
        .collect();
    let (c1, c2) = ssim_constants();
    let (c1, c2) = (T::lit(c1), T::lit(c2));
    let two = T::lit(2.0);

    let mu_x = g.blur_valid(x, &k)?;
    let mu_y = g.blur_valid(y, &k)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let e_xx = g.blur_valid(xx, &k)?;
    let e_yy = g.blur_valid(yy, &k)?;
    let e_xy = g.blur_valid(xy, &k)?;
    let mu_xx = g.mul(mu_x, mu_x)?;
    let mu_yy = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(e_xx, mu_xx)?;
    let var_y = g.sub(e_yy, mu_yy)?;
    let cov = g.sub(e_xy, mu_xy)?;

    let a = g.scale(mu_xy, two);
    let a = g.add_scalar(a, c1);
    let b = g.scale(cov, two);
    let b = g.add_scalar(b, c2);
    let num = g.mul(a, b)?;
    let c = g.add(mu_xx, mu_yy)?;
    let c = g.add_scalar(c, c1);
    let d = g.add(var_x, var_y)?;
    let d = g.add_scalar(d, c2);
    let den = g.mul(c, d)?;
    g.div(num, den)
}

/// Similarity loss between generated and real images.
pub fn similarity<T: Scalar>(
    g: &mut Graph<T>,
    generated: Var,
    target: Var,
    mode: SimilarityMode,
) -> Result<Var> {
    if g.shape(generated) != g.shape(target) {
        return Err(Error::Shape(format!(
            "similarity: {:?} vs {:?}",
            g.shape(generated),
            g.shape(target)
        )));
    }
    let l1 = |g: &mut Graph<T>| -> Result<Var> {
        let d = g.sub(generated, target)?;
        let a = g.abs(d);
        Ok(g.mean(a))
    };
    let ssim = |g: &mut Graph<T>| -> Result<Var> {
        let m = ssim_map(g, generated, target)?;
        let mean = g.mean(m);
        let neg = g.scale(mean, -T::one());
        Ok(g.add_scalar(neg, T::one()))
    };
    match mode {
        SimilarityMode::L1 => l1(g),
        SimilarityMode::Ssim => ssim(g),
        SimilarityMode::L1PlusSsim => {
            let a = l1(g)?;
            let b = ssim(g)?;
            g.add(a, b)
        }
    }
}

/// Similarity loss on `[N, C, H, W]` (or `[C, H, W]`) tensors.
pub fn loss_similarity<T: Scalar>(
    generated: &Tensor<T>,
    target: &Tensor<T>,
    mode: SimilarityMode,
) -> Result<T> {
    let as4 = |t: &Tensor<T>| -> Result<Tensor<T>> {
        match t.shape().len() {
            4 => Ok(t.clone()),
            3 => {
                let s = t.shape();
                t.clone().reshaped(&[1, s[0], s[1], s[2]])
            }
            _ => Err(Error::Shape(format!("expected an image tensor, got {:?}", t.shape()))),
        }
    };
    let mut g = Graph::new();
    let a = g.constant(as4(generated)?);
    let b = g.constant(as4(target)?);
    let l = similarity(&mut g, a, b, mode)?;
    Ok(g.value(l).item())
}
