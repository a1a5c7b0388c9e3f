use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Discriminator objective: mean of the real (target 1) and fake (target 0)
/// binary cross-entropies over all patches.
pub fn gan_discriminator<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let r = g.bce_with_logits(real, T::one());
    let f = g.bce_with_logits(fake, T::zero());
    let s = g.add(r, f)?;
    Ok(g.scale(s, T::lit(0.5)))
}

/// Non-saturating generator objective: fake patches against target 1.
pub fn gan_generator<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Var {
    g.bce_with_logits(fake, T::one())
}

fn check_finite<T: Scalar>(t: &Tensor<T>) -> Result<()> {
    if !t.all_finite() {
        return Err(Error::Numeric("non-finite discriminator logits".into()));
    }
    Ok(())
}

pub fn loss_gan_discriminator<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<T> {
    check_finite(real)?;
    check_finite(fake)?;
    let mut g = Graph::new();
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let l = gan_discriminator(&mut g, r, f)?;
    Ok(g.value(l).item())
}

pub fn loss_gan_generator<T: Scalar>(fake: &Tensor<T>) -> Result<T> {
    check_finite(fake)?;
    let mut g = Graph::new();
    let f = g.constant(fake.clone());
    let l = gan_generator(&mut g, f);
    Ok(g.value(l).item())
}
