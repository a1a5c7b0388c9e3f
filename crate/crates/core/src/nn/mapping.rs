use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::params::{Binding, ParamStore};
use crate::nn::{he_normal, LatentCode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Image encoder into the intermediate latent space: `stages` x
/// [conv 3x3 -> leaky rectifier -> 2x2 max-pool], then one fully-connected layer.
///
/// One instance encodes both modalities; sketches with fewer channels are
/// replicated to the photo channel count before encoding.
#[derive(Clone, Debug)]
pub struct MappingNetwork {
    pub input_channels: usize,
    pub image_size: usize,
    pub stages: usize,
    pub base_channels: usize,
    pub latent_dim: usize,
    pub slope: f64,
}

impl MappingNetwork {
    pub fn from_config(c: &ModelConfig) -> Self {
        Self {
            input_channels: c.photo_channels,
            image_size: c.image_size,
            stages: c.encoder_stages,
            base_channels: c.encoder_base_channels,
            latent_dim: c.latent_dim,
            slope: c.encoder_slope,
        }
    }

    fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    fn flat_dim(&self) -> usize {
        let side = self.image_size >> self.stages;
        side * side * self.stage_channels(self.stages - 1)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = ParamStore::new();
        let mut cin = self.input_channels;
        for i in 0..self.stages {
            let cout = self.stage_channels(i);
            p.insert(format!("conv{i}.w"), he_normal(&[cout, cin, 3, 3], cin * 9, 2.0, rng));
            p.insert(format!("conv{i}.b"), Tensor::zeros(&[cout]));
            cin = cout;
        }
        let flat = self.flat_dim();
        p.insert("fc.w", he_normal(&[self.latent_dim, flat], flat, 1.0, rng));
        p.insert("fc.b", Tensor::zeros(&[self.latent_dim]));
        p
    }

    /// `x [N, C, S, S] -> [N, d]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &mut Binding<'_, T>,
        x: Var,
    ) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.input_channels || s[2] != self.image_size || s[3] != self.image_size {
            return Err(Error::Shape(format!(
                "encoder expects [N, {}, {}, {}], got {s:?}",
                self.input_channels, self.image_size, self.image_size
            )));
        }
        let slope = T::lit(self.slope);
        let mut h = x;
        for i in 0..self.stages {
            let w = params.var(g, &format!("conv{i}.w"))?;
            let b = params.var(g, &format!("conv{i}.b"))?;
            h = g.conv2d(h, w, Some(b), 1, 1)?;
            h = g.leaky_relu(h, slope);
            h = g.maxpool2(h)?;
        }
        let h = g.reshape(h, &[s[0], self.flat_dim()])?;
        let w = params.var(g, "fc.w")?;
        let b = params.var(g, "fc.b")?;
        g.linear(h, w, Some(b))
    }

    /// Encodes one image without recording gradients.
    pub fn encode<T: Scalar>(
        &self,
        image: &crate::data::ImageBuffer,
        params: &ParamStore<T>,
    ) -> Result<LatentCode<T>> {
        let codes = self.encode_batch(&[image], params)?;
        Ok(codes.into_iter().next().expect("one code"))
    }

    pub fn encode_batch<T: Scalar>(
        &self,
        images: &[&crate::data::ImageBuffer],
        params: &ParamStore<T>,
    ) -> Result<Vec<LatentCode<T>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let mut bind = Binding::new(params, false);
        let x = g.constant(crate::data::batch_tensor(images, self.input_channels)?);
        let w = self.forward(&mut g, &mut bind, x)?;
        let v = g.value(w);
        Ok((0..images.len())
            .map(|i| LatentCode::new(v.outer(i).to_vec()))
            .collect())
    }
}
