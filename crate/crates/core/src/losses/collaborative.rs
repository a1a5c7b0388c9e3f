use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::LatentCode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean absolute difference between photo and sketch codes.
pub fn collaborative<T: Scalar>(g: &mut Graph<T>, w_photo: Var, w_sketch: Var) -> Result<Var> {
    let d = g.sub(w_photo, w_sketch)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

pub fn loss_collaborative<T: Scalar>(w_p: &LatentCode<T>, w_s: &LatentCode<T>) -> Result<T> {
    if w_p.dim() != w_s.dim() {
        return Err(Error::Shape(format!(
            "latent dimensions differ: {} vs {}",
            w_p.dim(),
            w_s.dim()
        )));
    }
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![w_p.dim()], w_p.values().to_vec())?);
    let b = g.constant(Tensor::new(vec![w_s.dim()], w_s.values().to_vec())?);
    let l = collaborative(&mut g, a, b)?;
    Ok(g.value(l).item())
}
