use rand::Rng;

use crate::autograd::kernels::conv_out;
use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::he_normal;
use crate::nn::params::{Binding, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One convolution of the patch classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub instance_norm: bool,
    pub activation: bool,
}

/// 70x70 patch discriminator over a channel-concatenated (condition,
/// candidate) pair: C64-C128-C256-C512 with strides 2,2,2,1, then a
/// 1-channel stride-1 head. Instance normalization after layers 2-4.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    pub in_channels: usize,
    pub layers: Vec<PatchLayer>,
    pub slope: f64,
    pub eps: f64,
}

impl PatchDiscriminator {
    pub fn new(in_channels: usize, base: usize, slope: f64) -> Self {
        let layer = |out_channels, stride, instance_norm, activation| PatchLayer {
            out_channels,
            kernel: 4,
            stride,
            pad: 1,
            instance_norm,
            activation,
        };
        Self {
            in_channels,
            layers: vec![
                layer(base, 2, false, true),
                layer(base * 2, 2, true, true),
                layer(base * 4, 2, true, true),
                layer(base * 8, 1, true, true),
                layer(1, 1, false, false),
            ],
            slope,
            eps: 1e-5,
        }
    }

    pub fn from_config(c: &ModelConfig) -> Self {
        Self::new(c.photo_channels + c.sketch_channels, c.disc_base_channels, c.disc_slope)
    }

    /// Input pixels seen by one output unit, from the layer schedule.
    pub fn receptive_field(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .fold(1, |rf, l| (rf - 1) * l.stride + l.kernel)
    }

    pub fn output_size(&self, input: usize) -> Option<usize> {
        self.layers
            .iter()
            .try_fold(input, |s, l| conv_out(s, l.kernel, l.stride, l.pad).filter(|&v| v > 0))
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = ParamStore::new();
        let mut cin = self.in_channels;
        for (i, l) in self.layers.iter().enumerate() {
            let fan_in = cin * l.kernel * l.kernel;
            let gain = if l.activation { 2.0 } else { 1.0 };
            p.insert(
                format!("conv{i}.w"),
                he_normal(&[l.out_channels, cin, l.kernel, l.kernel], fan_in, gain, rng),
            );
            p.insert(format!("conv{i}.b"), Tensor::zeros(&[l.out_channels]));
            if l.instance_norm {
                p.insert(format!("norm{i}.gamma"), Tensor::full(&[l.out_channels], T::one()));
                p.insert(format!("norm{i}.beta"), Tensor::zeros(&[l.out_channels]));
            }
            cin = l.out_channels;
        }
        p
    }

    /// Patch logits for `(condition, candidate)` pairs, both `[N, *, S, S]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &mut Binding<'_, T>,
        condition: Var,
        candidate: Var,
    ) -> Result<Var> {
        let (a, b) = (g.shape(condition).to_vec(), g.shape(candidate).to_vec());
        if a.len() != 4 || b.len() != 4 || a[0] != b[0] || a[2..] != b[2..] {
            return Err(Error::Shape(format!(
                "discriminator pair mismatch: {a:?} vs {b:?}"
            )));
        }
        if a[1] + b[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} stacked channels, got {}",
                self.in_channels,
                a[1] + b[1]
            )));
        }
        let mut h = g.concat_channels(condition, candidate)?;
        let slope = T::lit(self.slope);
        for (i, l) in self.layers.iter().enumerate() {
            let w = params.var(g, &format!("conv{i}.w"))?;
            let bias = params.var(g, &format!("conv{i}.b"))?;
            h = g.conv2d(h, w, Some(bias), l.stride, l.pad)?;
            if l.instance_norm {
                let gamma = params.var(g, &format!("norm{i}.gamma"))?;
                let beta = params.var(g, &format!("norm{i}.beta"))?;
                h = g.instance_norm(h, T::lit(self.eps))?;
                h = g.channel_affine(h, gamma, beta)?;
            }
            if l.activation {
                h = g.leaky_relu(h, slope);
            }
        }
        Ok(h)
    }

    /// Logit map for a single pair without recording gradients.
    pub fn discriminate<T: Scalar>(
        &self,
        condition: &crate::data::ImageBuffer,
        candidate: &crate::data::ImageBuffer,
        params: &ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut bind = Binding::new(params, false);
        let c = g.constant(crate::data::batch_tensor(&[condition], condition.channels())?);
        let x = g.constant(crate::data::batch_tensor(&[candidate], candidate.channels())?);
        let y = self.forward(&mut g, &mut bind, c, x)?;
        Ok(g.value(y).clone())
    }
}
