//! Adaptive-moment optimizer over a named variable registry. Hand-rolled so
//! the first/second moment buffers can be checkpointed and restored exactly.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::network::VarRegistry;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.0, beta2: 0.9, eps: 1e-8 }
    }
}

pub struct Adam {
    pub params: AdamParams,
    t: usize,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Self { params, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    /// One update over every registry variable that received a gradient.
    pub fn step(&mut self, reg: &VarRegistry, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let t = self.t as f64;
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        for (name, var) in reg.named_vars() {
            let Some(grad) = grads.get(var) else { continue };
            if !grad
                .to_dtype(candle_core::DType::F64)?
                .sum_all()?
                .to_scalar::<f64>()?
                .is_finite()
            {
                return Err(Error::NonFinite(format!("gradient of '{name}'")));
            }
            let m_prev = match self.m.get(name) {
                Some(m) => m.clone(),
                None => grad.zeros_like()?,
            };
            let v_prev = match self.v.get(name) {
                Some(v) => v.clone(),
                None => grad.zeros_like()?,
            };
            let m = m_prev.affine(b1, 0.0)?.add(&grad.affine(1.0 - b1, 0.0)?)?;
            let v = v_prev.affine(b2, 0.0)?.add(&grad.sqr()?.affine(1.0 - b2, 0.0)?)?;
            let m_hat = m.affine(1.0 / bias1, 0.0)?;
            let v_hat = v.affine(1.0 / bias2, 0.0)?;
            let update = m_hat.div(&v_hat.sqrt()?.affine(1.0, self.params.eps)?)?;
            var.set(&var.as_tensor().sub(&update.affine(self.params.lr, 0.0)?)?)?;
            self.m.insert(name.to_string(), m);
            self.v.insert(name.to_string(), v);
        }
        Ok(())
    }

    /// Moment buffers in name order, for checkpointing.
    pub fn state(&self) -> (usize, &BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: usize, m: BTreeMap<String, Tensor>, v: BTreeMap<String, Tensor>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
