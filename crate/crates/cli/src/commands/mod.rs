pub mod evaluate;
pub mod generate;
pub mod ingest;
pub mod plot;
pub mod synth;
pub mod train;

use anyhow::Result;
use candle_core::Tensor;
use finescale::container::DataContainer;
use finescale::training::{Standardizer, TrainData};
use finescale::Error;
use ndarray::ArrayD;

/// Tensor from a container array, on the CPU device.
pub fn tensor_from(arr: &ArrayD<f32>) -> Result<Tensor> {
    let shape = arr.shape().to_vec();
    let data: Vec<f32> = arr.as_standard_layout().iter().copied().collect();
    Ok(Tensor::from_vec(data, shape, &candle_core::Device::Cpu)?)
}

/// Conditioning tensors for selected samples, in the standardized units the
/// checkpoint's networks expect. Raw containers are transformed with the
/// checkpoint's standardizer; ingest outputs are already standardized.
pub struct ConditioningBatch {
    pub lr: Tensor,
    pub hr_cov: Option<Tensor>,
    pub truth_std: Option<Tensor>,
}

pub fn conditioning_batch(
    container: &DataContainer,
    indices: &[usize],
    std: &Standardizer,
    lr_entry: &str,
    truth_entry: Option<&str>,
) -> Result<ConditioningBatch> {
    let pick = |arr: &ArrayD<f32>| -> Result<Tensor> {
        let t = tensor_from(arr)?;
        let idx: Vec<u32> = indices.iter().map(|&i| i as u32).collect();
        let idx = Tensor::from_vec(idx, (indices.len(),), t.device())?;
        Ok(t.index_select(&idx, 0)?)
    };
    let already = container
        .header
        .attrs
        .get("standardized")
        .and_then(|v| v.as_bool())
        .unwrap_or(false);
    let mut lr = pick(container.array(lr_entry)?)?;
    let mut hr_cov = match container.arrays.get(finescale::container::ENTRY_HR_COV) {
        Some(arr) => {
            // a single shared covariate stack is broadcast across samples
            if arr.shape()[0] == 1 && indices.iter().any(|&i| i > 0) {
                let one = tensor_from(arr)?;
                Some(Tensor::cat(&vec![&one; indices.len()], 0)?)
            } else {
                Some(pick(arr)?)
            }
        }
        None => None,
    };
    let mut truth_std = match truth_entry {
        Some(name) => Some(pick(container.array(name)?)?),
        None => None,
    };
    if !already {
        lr = std.transform_lr(&lr)?;
        hr_cov = hr_cov.map(|t| std.transform_hr_cov(&t)).transpose()?;
        truth_std = truth_std.map(|t| std.transform_target(&t)).transpose()?;
    }
    Ok(ConditioningBatch { lr, hr_cov, truth_std })
}

/// Refuses checkpoint/data pairs whose channel or shape contracts differ.
pub fn check_data_compat(
    run_data: &finescale::training::DataSpec,
    td: &TrainData,
    factor: usize,
) -> Result<()> {
    let found = finescale::training::DataSpec::from_train_data(td, factor)?;
    if &found != run_data {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint expects data {run_data:?} but the container provides {found:?}"
        ))
        .into());
    }
    Ok(())
}

/// Deterministic K-subset of 0..n.
pub fn choose_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut all: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(k.min(n));
    all.sort_unstable();
    all
}
