use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::params::{Binding, ParamStore};
use crate::nn::{he_normal, LatentCode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Style generator: a learned constant feature map grown by
/// `log2(image_size / const_size)` style blocks, each
/// [deconv x2 -> conv 3x3 -> AdaIN(w) -> softplus], then a 3x3 projection
/// with `tanh`. No noise inputs, no progressive growing.
#[derive(Clone, Debug)]
pub struct StyleGenerator {
    pub latent_dim: usize,
    pub const_size: usize,
    pub image_size: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub min_channels: usize,
    pub eps: f64,
}

impl StyleGenerator {
    pub fn from_config(c: &ModelConfig, out_channels: usize) -> Self {
        Self {
            latent_dim: c.latent_dim,
            const_size: c.generator_const_size,
            image_size: c.image_size,
            out_channels,
            base_channels: c.generator_base_channels,
            min_channels: c.generator_min_channels,
            eps: c.adain_eps,
        }
    }

    pub fn num_blocks(&self) -> usize {
        (self.image_size / self.const_size).trailing_zeros() as usize
    }

    fn block_channels(&self, i: usize) -> usize {
        (self.base_channels >> (i + 1)).max(self.min_channels)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = ParamStore::new();
        let c0 = self.base_channels;
        p.insert(
            "const",
            Tensor::randn(&[c0, self.const_size, self.const_size], 1.0, rng),
        );
        let mut cin = c0;
        let d = self.latent_dim;
        for i in 0..self.num_blocks() {
            let c = self.block_channels(i);
            p.insert(format!("block{i}.up.w"), he_normal(&[cin, c, 4, 4], cin * 4, 2.0, rng));
            p.insert(format!("block{i}.up.b"), Tensor::zeros(&[c]));
            p.insert(format!("block{i}.conv.w"), he_normal(&[c, c, 3, 3], c * 9, 2.0, rng));
            p.insert(format!("block{i}.conv.b"), Tensor::zeros(&[c]));
            p.insert(format!("block{i}.style_scale.w"), he_normal(&[c, d], d, 0.25, rng));
            p.insert(format!("block{i}.style_scale.b"), Tensor::full(&[c], T::one()));
            p.insert(format!("block{i}.style_bias.w"), he_normal(&[c, d], d, 0.25, rng));
            p.insert(format!("block{i}.style_bias.b"), Tensor::zeros(&[c]));
            cin = c;
        }
        p.insert("out.w", he_normal(&[self.out_channels, cin, 3, 3], cin * 9, 1.0, rng));
        p.insert("out.b", Tensor::zeros(&[self.out_channels]));
        p
    }

    /// `w [N, d] -> image [N, C, S, S]` in `[-1, 1]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &mut Binding<'_, T>,
        w: Var,
    ) -> Result<Var> {
        let s = g.shape(w).to_vec();
        if s.len() != 2 || s[1] != self.latent_dim {
            return Err(Error::Shape(format!(
                "generator expects codes [N, {}], got {s:?}",
                self.latent_dim
            )));
        }
        let n = s[0];
        let c = params.var(g, "const")?;
        let mut h = g.expand_batch(c, n);
        let eps = T::lit(self.eps);
        for i in 0..self.num_blocks() {
            let uw = params.var(g, &format!("block{i}.up.w"))?;
            let ub = params.var(g, &format!("block{i}.up.b"))?;
            h = g.conv_transpose2d(h, uw, Some(ub), 2, 1)?;
            let cw = params.var(g, &format!("block{i}.conv.w"))?;
            let cb = params.var(g, &format!("block{i}.conv.b"))?;
            h = g.conv2d(h, cw, Some(cb), 1, 1)?;
            let sw = params.var(g, &format!("block{i}.style_scale.w"))?;
            let sb = params.var(g, &format!("block{i}.style_scale.b"))?;
            let bw = params.var(g, &format!("block{i}.style_bias.w"))?;
            let bb = params.var(g, &format!("block{i}.style_bias.b"))?;
            let scale = g.linear(w, sw, Some(sb))?;
            let bias = g.linear(w, bw, Some(bb))?;
            h = adain(g, h, scale, bias, eps)?;
            h = g.softplus(h);
        }
        let ow = params.var(g, "out.w")?;
        let ob = params.var(g, "out.b")?;
        let h = g.conv2d(h, ow, Some(ob), 1, 1)?;
        Ok(g.tanh(h))
    }

    /// Synthesizes one image without recording gradients.
    pub fn synthesize<T: Scalar>(
        &self,
        w: &LatentCode<T>,
        params: &ParamStore<T>,
    ) -> Result<crate::data::ImageBuffer> {
        let mut g = Graph::new();
        let mut bind = Binding::new(params, false);
        let x = g.constant(Tensor::new(vec![1, w.dim()], w.values().to_vec())?);
        let y = self.forward(&mut g, &mut bind, x)?;
        crate::data::ImageBuffer::from_tensor(g.value(y), 0)
    }
}

/// Adaptive instance normalization: per sample and channel,
/// `scale * (x - mean) / sqrt(var + eps) + bias`.
pub fn adain<T: Scalar>(
    g: &mut Graph<T>,
    features: Var,
    scale: Var,
    bias: Var,
    eps: T,
) -> Result<Var> {
    let normed = g.instance_norm(features, eps)?;
    g.modulate(normed, scale, bias)
}
