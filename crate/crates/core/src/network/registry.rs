//! Named variable store backing the networks.
//!
//! Weights are created from an explicit ChaCha stream (small-scale Kaiming
//! fan-in normals), so model construction is bit-reproducible from a seed and
//! checkpoints can address every parameter by name.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{Conv2d, Conv2dConfig, Linear};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub struct VarRegistry {
    vars: BTreeMap<String, Var>,
    device: Device,
    dtype: DType,
    rng: ChaCha12Rng,
}

impl VarRegistry {
    pub fn new(device: &Device, dtype: DType, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            device: device.clone(),
            dtype,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn register(&mut self, name: &str, t: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name '{name}'")));
        }
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Result<Tensor> {
        let count: usize = shape.iter().product();
        let t = match self.dtype {
            DType::F32 => {
                let data: Vec<f32> = (0..count)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        (z * std) as f32
                    })
                    .collect();
                Tensor::from_vec(data, shape, &self.device)?
            }
            DType::F64 => {
                let data: Vec<f64> = (0..count)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        z * std
                    })
                    .collect();
                Tensor::from_vec(data, shape, &self.device)?
            }
            other => return Err(Error::invalid(format!("unsupported dtype {other:?}"))),
        };
        Ok(t)
    }

    /// 3x3-style conv layer with Kaiming fan-in init scaled by `init_scale`
    /// and zero bias.
    pub fn conv2d(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init_scale: f64,
    ) -> Result<Conv2d> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let std = init_scale * (2.0 / fan_in).sqrt();
        let w = self.normal(&[out_ch, in_ch, kernel, kernel], std)?;
        let w = self.register(&format!("{name}.weight"), w)?;
        let b = Tensor::zeros((out_ch,), self.dtype, &self.device)?;
        let b = self.register(&format!("{name}.bias"), b)?;
        let cfg = Conv2dConfig { padding, stride, ..Default::default() };
        Ok(Conv2d::new(w, Some(b), cfg))
    }

    pub fn linear(&mut self, name: &str, in_dim: usize, out_dim: usize, init_scale: f64) -> Result<Linear> {
        let std = init_scale * (2.0 / in_dim as f64).sqrt();
        let w = self.normal(&[out_dim, in_dim], std)?;
        let w = self.register(&format!("{name}.weight"), w)?;
        let b = Tensor::zeros((out_dim,), self.dtype, &self.device)?;
        let b = self.register(&format!("{name}.bias"), b)?;
        Ok(Linear::new(w, Some(b)))
    }

    /// Sorted (name, var) pairs — the canonical parameter order.
    pub fn named_vars(&self) -> Vec<(&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v)).collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::MissingData(format!("no parameter named '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.as_tensor().elem_count()).sum()
    }

    /// Overwrites one parameter from raw f32 data (checkpoint restore).
    pub fn set_from_f32(&self, name: &str, data: &[f32]) -> Result<()> {
        let var = self.get(name)?;
        let shape = var.as_tensor().dims().to_vec();
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "parameter '{name}' expects {expected} values, got {}",
                data.len()
            )));
        }
        let t = Tensor::from_vec(data.to_vec(), shape, &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    /// Sum of all parameter values — a cheap fingerprint for no-cross-update
    /// assertions in tests.
    pub fn checksum(&self) -> Result<f64> {
        let mut acc = 0.0;
        for v in self.vars.values() {
            acc += v.as_tensor().to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
        }
        Ok(acc)
    }
}
