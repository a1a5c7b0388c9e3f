//! Central finite-difference gradients, used as an independent oracle for
//! the analytic gradients produced by the tape.

use crate::error::Result;
use crate::tensor::Tensor;

/// Central differences of a scalar function at `x`.
pub fn numerical_gradient<F>(x: &Tensor<f64>, step: f64, mut f: F) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        *o = (up - down) / (2.0 * step);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
