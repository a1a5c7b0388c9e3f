use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction; moments are kept per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    /// Applies one update to every parameter of `params` that has a gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        self.t += 1;
        for (name, grad) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("gradient for unknown tensor '{name}'")))?;
            self.update(name, p, grad)?;
        }
        Ok(())
    }

    /// Single-tensor update under the current timestep; call [`Adam::tick`] once
    /// per optimizer step before using this directly.
    pub fn update(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} vs parameter {:?} for '{name}'",
                grad.shape(),
                param.shape()
            )));
        }
        if self.m.get(name).is_err() {
            self.m.insert(name, Tensor::zeros(param.shape()));
            self.v.insert(name, Tensor::zeros(param.shape()));
        }
        let t = self.t.max(1) as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let step = T::lit(self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t)));
        let eps = T::lit(self.eps);
        let m = self.m.get_mut(name).expect("moment").data_mut();
        let v = self.v.get_mut(name).expect("moment").data_mut();
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
        Ok(())
    }

    pub fn tick(&mut self) {
        self.t += 1;
    }
}
