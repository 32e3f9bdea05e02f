//! Seeded Gaussian noise planes for injection sites and noise covariates.
//!
//! Every plane is drawn from an explicit ChaCha stream so a forward pass is a
//! pure function of (inputs, weights, noise seed); the zero source replaces
//! every plane with zeros while keeping channel counts identical.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

enum Source {
    Zero,
    Rng(Box<ChaCha12Rng>),
}

/// Supplies mean-zero unit-variance noise planes in a deterministic order.
pub struct NoiseSource {
    source: Source,
    device: Device,
    dtype: DType,
    drawn: usize,
}

impl NoiseSource {
    /// All planes zero: the noise-off configuration.
    pub fn zero(device: &Device, dtype: DType) -> Self {
        Self { source: Source::Zero, device: device.clone(), dtype, drawn: 0 }
    }

    pub fn seeded(seed: u64, device: &Device, dtype: DType) -> Self {
        Self {
            source: Source::Rng(Box::new(ChaCha12Rng::seed_from_u64(seed))),
            device: device.clone(),
            dtype,
            drawn: 0,
        }
    }

    /// Stream indexed by (seed, stream): used for step-indexed noise so
    /// training can resume reproducibly.
    pub fn for_stream(seed: u64, stream: u64, device: &Device, dtype: DType) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { source: Source::Rng(Box::new(rng)), device: device.clone(), dtype, drawn: 0 }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.source, Source::Zero)
    }

    /// Number of planes handed out so far.
    pub fn planes_drawn(&self) -> usize {
        self.drawn
    }

    /// One (batch, 1, h, w) noise plane.
    pub fn plane(&mut self, batch: usize, h: usize, w: usize) -> Result<Tensor> {
        self.drawn += 1;
        let count = batch * h * w;
        let t = match &mut self.source {
            Source::Zero => Tensor::zeros((batch, 1, h, w), self.dtype, &self.device)?,
            Source::Rng(rng) => match self.dtype {
                DType::F32 => {
                    let data: Vec<f32> =
                        (0..count).map(|_| StandardNormal.sample(rng.as_mut())).collect();
                    Tensor::from_vec(data, (batch, 1, h, w), &self.device)?
                }
                DType::F64 => {
                    let data: Vec<f64> =
                        (0..count).map(|_| StandardNormal.sample(rng.as_mut())).collect();
                    Tensor::from_vec(data, (batch, 1, h, w), &self.device)?
                }
                other => {
                    return Err(Error::invalid(format!("unsupported noise dtype {other:?}")));
                }
            },
        };
        Ok(t)
    }

    /// A plane matching the batch and spatial dims of an activation.
    pub fn plane_like(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = x.dims4()?;
        self.plane(b, h, w)
    }
}
