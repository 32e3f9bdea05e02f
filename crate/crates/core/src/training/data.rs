//! Standardization and tensor-side dataset preparation for training.

use candle_core::{DType, Device, Tensor};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::container::DataContainer;
use crate::error::{Error, Result};
use crate::field::{FieldGrid, PairedSample};
use crate::synthetic::Dataset;

const SIGMA_FLOOR: f64 = 1e-8;

/// Scalar mean/standard deviation for one covariate channel, computed across
/// time and space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    fn from_moments(sum: f64, sumsq: f64, count: usize) -> Self {
        let n = count as f64;
        let mean = sum / n;
        let var = (sumsq / n - mean * mean).max(0.0);
        let mut std = var.sqrt();
        if std < SIGMA_FLOOR {
            log::warn!("degenerate covariate: std {std:.3e} floored to {SIGMA_FLOOR:.0e}");
            std = SIGMA_FLOOR;
        }
        Self { mean, std }
    }

    pub fn transform(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Per-covariate standardization statistics for LR covariates, HR covariates,
/// and HR targets. Fit on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub lr: Vec<ChannelStats>,
    pub hr_cov: Vec<ChannelStats>,
    pub target: Vec<ChannelStats>,
}

struct Moments {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: Vec<usize>,
}

impl Moments {
    fn new(channels: usize) -> Self {
        Self { sum: vec![0.0; channels], sumsq: vec![0.0; channels], count: vec![0; channels] }
    }

    fn add_field(&mut self, c: usize, f: &FieldGrid) {
        for &v in f.as_slice() {
            self.sum[c] += v;
            self.sumsq[c] += v * v;
        }
        self.count[c] += f.as_slice().len();
    }

    fn finish(self) -> Vec<ChannelStats> {
        (0..self.sum.len())
            .map(|c| ChannelStats::from_moments(self.sum[c], self.sumsq[c], self.count[c]))
            .collect()
    }
}

/// Fits per-channel scalar statistics over all samples and pixels.
pub fn fit_standardizer(samples: &[PairedSample]) -> Result<Standardizer> {
    let first = samples.first().ok_or_else(|| Error::invalid("cannot fit a standardizer on an empty dataset"))?;
    let (n_lr, n_hc, n_tg) = (first.lr.len(), first.hr_covariates.len(), first.hr_target.len());
    let mut lr = Moments::new(n_lr);
    let mut hc = Moments::new(n_hc);
    let mut tg = Moments::new(n_tg);
    for s in samples {
        if s.lr.len() != n_lr || s.hr_covariates.len() != n_hc || s.hr_target.len() != n_tg {
            return Err(Error::shape("samples disagree on channel counts"));
        }
        for (c, f) in s.lr.iter().enumerate() {
            lr.add_field(c, f);
        }
        for (c, f) in s.hr_covariates.iter().enumerate() {
            hc.add_field(c, f);
        }
        for (c, f) in s.hr_target.iter().enumerate() {
            tg.add_field(c, f);
        }
    }
    Ok(Standardizer { lr: lr.finish(), hr_cov: hc.finish(), target: tg.finish() })
}

fn stats_for_array(arr: &ArrayD<f32>) -> Result<Vec<ChannelStats>> {
    let shape = arr.shape();
    if shape.len() != 4 {
        return Err(Error::shape(format!("expected (n, c, h, w) array, got {shape:?}")));
    }
    let channels = shape[1];
    let mut m = Moments::new(channels);
    for c in 0..channels {
        let view = arr.index_axis(ndarray::Axis(1), c);
        for &v in view.iter() {
            m.sum[c] += v as f64;
            m.sumsq[c] += (v as f64) * (v as f64);
        }
        m.count[c] += view.len();
    }
    Ok(m.finish())
}

impl Standardizer {
    /// Fit directly from (n, c, h, w) arrays; empty HR covariates allowed.
    pub fn fit_arrays(
        lr: &ArrayD<f32>,
        hr_cov: Option<&ArrayD<f32>>,
        target: &ArrayD<f32>,
    ) -> Result<Self> {
        Ok(Self {
            lr: stats_for_array(lr)?,
            hr_cov: hr_cov.map(stats_for_array).transpose()?.unwrap_or_default(),
            target: stats_for_array(target)?,
        })
    }

    pub fn transform_sample(&self, s: &PairedSample) -> Result<PairedSample> {
        let apply = |fields: &[FieldGrid], stats: &[ChannelStats]| -> Result<Vec<FieldGrid>> {
            if fields.len() != stats.len() {
                return Err(Error::shape(format!(
                    "sample has {} channels, standardizer has {}",
                    fields.len(),
                    stats.len()
                )));
            }
            fields
                .iter()
                .zip(stats)
                .map(|(f, st)| FieldGrid::new(f.values().mapv(|v| st.transform(v))))
                .collect()
        };
        Ok(PairedSample {
            lr: apply(&s.lr, &self.lr)?,
            hr_covariates: apply(&s.hr_covariates, &self.hr_cov)?,
            hr_target: apply(&s.hr_target, &self.target)?,
        })
    }

    pub fn invert_target_field(&self, channel: usize, f: &FieldGrid) -> Result<FieldGrid> {
        let st = self
            .target
            .get(channel)
            .ok_or_else(|| Error::invalid(format!("no target channel {channel}")))?;
        FieldGrid::new(f.values().mapv(|v| st.invert(v)))
    }

    fn transform_tensor(t: &Tensor, stats: &[ChannelStats]) -> Result<Tensor> {
        let (_, c, _, _) = t.dims4()?;
        if c != stats.len() {
            return Err(Error::shape(format!(
                "tensor has {c} channels, standardizer has {}",
                stats.len()
            )));
        }
        let means: Vec<f32> = stats.iter().map(|s| s.mean as f32).collect();
        let stds: Vec<f32> = stats.iter().map(|s| s.std as f32).collect();
        let mean = Tensor::from_vec(means, (1, c, 1, 1), t.device())?;
        let std = Tensor::from_vec(stds, (1, c, 1, 1), t.device())?;
        Ok(t.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    fn invert_tensor(t: &Tensor, stats: &[ChannelStats]) -> Result<Tensor> {
        let (_, c, _, _) = t.dims4()?;
        if c != stats.len() {
            return Err(Error::shape(format!(
                "tensor has {c} channels, standardizer has {}",
                stats.len()
            )));
        }
        let means: Vec<f32> = stats.iter().map(|s| s.mean as f32).collect();
        let stds: Vec<f32> = stats.iter().map(|s| s.std as f32).collect();
        let mean = Tensor::from_vec(means, (1, c, 1, 1), t.device())?;
        let std = Tensor::from_vec(stds, (1, c, 1, 1), t.device())?;
        Ok(t.broadcast_mul(&std)?.broadcast_add(&mean)?)
    }

    pub fn transform_lr(&self, t: &Tensor) -> Result<Tensor> {
        Self::transform_tensor(t, &self.lr)
    }

    pub fn transform_hr_cov(&self, t: &Tensor) -> Result<Tensor> {
        Self::transform_tensor(t, &self.hr_cov)
    }

    pub fn transform_target(&self, t: &Tensor) -> Result<Tensor> {
        Self::transform_tensor(t, &self.target)
    }

    pub fn invert_target(&self, t: &Tensor) -> Result<Tensor> {
        Self::invert_tensor(t, &self.target)
    }
}

/// Dataset held as device tensors in standardized units.
pub struct TrainData {
    pub lr: Tensor,
    pub hr_cov: Option<Tensor>,
    pub target: Tensor,
    pub n: usize,
}

fn tensor_from_arrayd(arr: &ArrayD<f32>, device: &Device) -> Result<Tensor> {
    let shape = arr.shape().to_vec();
    let data: Vec<f32> = arr.as_standard_layout().iter().copied().collect();
    Ok(Tensor::from_vec(data, shape, device)?)
}

impl TrainData {
    /// Builds tensors from an in-memory synthetic dataset, standardizing with
    /// the given statistics.
    pub fn from_dataset(ds: &Dataset, std: &Standardizer, device: &Device) -> Result<Self> {
        let n = ds.samples.len();
        let first = ds.samples.first().ok_or_else(|| Error::invalid("empty dataset"))?;
        let pack = |get: &dyn Fn(&PairedSample) -> &Vec<FieldGrid>, stats: &[ChannelStats]| -> Result<Option<Tensor>> {
            let channels = get(first).len();
            if channels == 0 {
                return Ok(None);
            }
            let (h, w) = get(first)[0].shape();
            let mut data = Vec::with_capacity(n * channels * h * w);
            for s in &ds.samples {
                let fields = get(s);
                if fields.len() != channels {
                    return Err(Error::shape("inconsistent channel counts"));
                }
                for (c, f) in fields.iter().enumerate() {
                    if f.shape() != (h, w) {
                        return Err(Error::shape("inconsistent field shapes"));
                    }
                    data.extend(f.as_slice().iter().map(|&v| stats[c].transform(v) as f32));
                }
            }
            Ok(Some(Tensor::from_vec(data, (n, channels, h, w), device)?))
        };
        let lr = pack(&|s| &s.lr, &std.lr)?.ok_or_else(|| Error::invalid("dataset has no LR covariates"))?;
        let hr_cov = pack(&|s| &s.hr_covariates, &std.hr_cov)?;
        let target =
            pack(&|s| &s.hr_target, &std.target)?.ok_or_else(|| Error::invalid("dataset has no HR targets"))?;
        Ok(Self { lr, hr_cov, target, n })
    }

    /// Builds tensors from a container. Raw containers get a freshly fitted
    /// standardizer; containers written by `ingest` carry their statistics in
    /// the header and are already in standardized units.
    pub fn from_container(c: &DataContainer, device: &Device) -> Result<(Self, Standardizer)> {
        let lr_arr = c.array("lr")?;
        let target_arr = c.array("hr_target")?;
        let hr_cov_arr = c.arrays.get("hr_covariates");

        let recorded: Option<Standardizer> = match c.header.attrs.get("standardizer") {
            Some(v) => Some(serde_json::from_value(v.clone())?),
            None => None,
        };
        let already_standardized = c
            .header
            .attrs
            .get("standardized")
            .and_then(|v| v.as_bool())
            .unwrap_or(false);

        let std = match recorded {
            Some(s) => s,
            None => Standardizer::fit_arrays(lr_arr, hr_cov_arr, target_arr)?,
        };

        let mut lr = tensor_from_arrayd(lr_arr, device)?;
        let mut target = tensor_from_arrayd(target_arr, device)?;
        let mut hr_cov = hr_cov_arr.map(|a| tensor_from_arrayd(a, device)).transpose()?;
        if !already_standardized {
            lr = std.transform_lr(&lr)?;
            target = std.transform_target(&target)?;
            hr_cov = hr_cov.map(|t| std.transform_hr_cov(&t)).transpose()?;
        }
        let n = lr.dims4()?.0;
        if target.dims4()?.0 != n {
            return Err(Error::shape("lr and hr_target sample counts differ"));
        }
        Ok((Self { lr, hr_cov, target, n }, std))
    }

    pub fn channels(&self) -> Result<(usize, usize, usize)> {
        let (_, cl, _, _) = self.lr.dims4()?;
        let ch = match &self.hr_cov {
            Some(t) => t.dims4()?.1,
            None => 0,
        };
        let (_, ct, _, _) = self.target.dims4()?;
        Ok((cl, ch, ct))
    }

    pub fn hr_shape(&self) -> Result<(usize, usize)> {
        let (_, _, h, w) = self.target.dims4()?;
        Ok((h, w))
    }

    pub fn lr_shape(&self) -> Result<(usize, usize)> {
        let (_, _, h, w) = self.lr.dims4()?;
        Ok((h, w))
    }

    /// Gathers one batch by sample index.
    pub fn batch(&self, indices: &[u32]) -> Result<(Tensor, Option<Tensor>, Tensor)> {
        let idx = Tensor::from_vec(indices.to_vec(), (indices.len(),), self.lr.device())?;
        let lr = self.lr.index_select(&idx, 0)?;
        let hr_cov = self.hr_cov.as_ref().map(|t| t.index_select(&idx, 0)).transpose()?;
        let target = self.target.index_select(&idx, 0)?;
        Ok((lr, hr_cov, target))
    }
}

pub fn tensor_to_fields(t: &Tensor) -> Result<Vec<Vec<FieldGrid>>> {
    let (b, c, h, w) = t.dims4()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut stack = Vec::with_capacity(c);
        for ci in 0..c {
            let start = (bi * c + ci) * h * w;
            stack.push(FieldGrid::from_f32_slice(h, w, &flat[start..start + h * w])?);
        }
        out.push(stack);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{make_dataset, SynthConfig, SynthKind};
    use approx::assert_abs_diff_eq;

    #[test]
    fn standardizer_known_moments() {
        // covariate with mean 2, sd 3
        let n = 4000;
        let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(2);
        let samples: Vec<PairedSample> = (0..n)
            .map(|_| {
                let f = FieldGrid::from_fn(4, 4, |_, _| {
                    use rand_distr::Distribution;
                    let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                    2.0 + 3.0 * z
                })
                .unwrap();
                PairedSample { lr: vec![f.coarsen(2).unwrap()], hr_covariates: vec![], hr_target: vec![f] }
            })
            .collect();
        let std = fit_standardizer(&samples).unwrap();
        assert!((std.target[0].mean - 2.0).abs() < 0.05);
        assert!((std.target[0].std - 3.0).abs() < 0.05);

        // transformed data has mean ~0, var ~1
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for s in &samples {
            let t = std.transform_sample(s).unwrap();
            for &v in t.hr_target[0].as_slice() {
                sum += v;
                sumsq += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sumsq / count as f64 - mean * mean;
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "var {var}");
    }

    #[test]
    fn standardizer_round_trip_identity() {
        let f = FieldGrid::from_fn(6, 6, |i, j| (i * 7 + j) as f64 * 0.3 - 4.0).unwrap();
        let samples = vec![PairedSample {
            lr: vec![f.coarsen(3).unwrap()],
            hr_covariates: vec![],
            hr_target: vec![f.clone()],
        }];
        let std = fit_standardizer(&samples).unwrap();
        let t = std.transform_sample(&samples[0]).unwrap();
        let back = std.invert_target_field(0, &t.hr_target[0]).unwrap();
        for (a, b) in back.as_slice().iter().zip(f.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn standardizer_floors_constant_covariate() {
        let f = FieldGrid::constant(4, 4, 3.0).unwrap();
        let samples = vec![PairedSample {
            lr: vec![f.coarsen(2).unwrap()],
            hr_covariates: vec![],
            hr_target: vec![f],
        }];
        let std = fit_standardizer(&samples).unwrap();
        assert_eq!(std.target[0].std, SIGMA_FLOOR);
        let t = std.transform_sample(&samples[0]).unwrap();
        assert!(t.hr_target[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_data_batching() {
        let mut cfg = SynthConfig::new(SynthKind::Unimodal);
        cfg.hr_shape = (16, 16);
        cfg.factor = 4;
        let ds = make_dataset(&cfg, 6, 3).unwrap();
        let std = fit_standardizer(&ds.samples).unwrap();
        let td = TrainData::from_dataset(&ds, &std, &Device::Cpu).unwrap();
        assert_eq!(td.n, 6);
        let (lr, hc, tg) = td.batch(&[0, 3, 3]).unwrap();
        assert_eq!(lr.dims(), &[3, 1, 4, 4]);
        assert!(hc.is_none());
        assert_eq!(tg.dims(), &[3, 1, 16, 16]);
        // row 1 and 2 are the same sample
        let a: Vec<f32> = tg.narrow(0, 1, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = tg.narrow(0, 2, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }
}
