//! Tensor versions of the loss functions for the training graph. Each mirrors
//! a reference implementation in the parent module and is tested against it.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};
use ndarray::Array2;

use super::{ContentKind, LossConfig, TrainRegime};
use crate::error::{Error, Result};
use crate::spectral;

/// Mean absolute error over every element.
pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape(format!(
            "MAE shapes differ: {:?} vs {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    Ok(pred.sub(truth)?.abs()?.mean_all()?)
}

/// -mean(fake_scores).
pub fn adversarial(fake_scores: &Tensor) -> Result<Tensor> {
    Ok(fake_scores.mean_all()?.neg()?)
}

/// mean(fake) - mean(real) + gp_weight * gp. The `gp` argument is whatever
/// differentiable stand-in the caller uses for the penalty's gradient path.
pub fn critic_loss(real_scores: &Tensor, fake_scores: &Tensor, gp: Option<&Tensor>, gp_weight: f64) -> Result<Tensor> {
    let mut loss = fake_scores.mean_all()?.sub(&real_scores.mean_all()?)?;
    if let Some(gp) = gp {
        loss = loss.add(&gp.affine(gp_weight, 0.0)?)?;
    }
    Ok(loss)
}

/// Pixel mean over members: (B, E, C, H, W) -> (B, C, H, W).
pub fn ensemble_mean(members: &Tensor) -> Result<Tensor> {
    if members.dims().len() != 5 {
        return Err(Error::shape(format!(
            "ensemble tensor must be (B,E,C,H,W), got {:?}",
            members.dims()
        )));
    }
    Ok(members.mean(1)?)
}

/// Empirical CRPS per pixel, averaged over batch/channels/pixels.
/// members: (B, E, C, H, W); truth: (B, C, H, W).
pub fn crps(members: &Tensor, truth: &Tensor, fair: bool) -> Result<Tensor> {
    let dims = members.dims();
    if dims.len() != 5 {
        return Err(Error::shape(format!("ensemble tensor must be (B,E,C,H,W), got {dims:?}")));
    }
    let e = dims[1];
    if e < 1 {
        return Err(Error::invalid("CRPS needs at least one member"));
    }
    let truth_b = truth.unsqueeze(1)?; // (B,1,C,H,W)
    let term1 = members.broadcast_sub(&truth_b)?.abs()?.mean(1)?; // (B,C,H,W)
    let gi = members.unsqueeze(2)?; // (B,E,1,C,H,W)
    let gj = members.unsqueeze(1)?; // (B,1,E,C,H,W)
    let pair_mean = gi.broadcast_sub(&gj)?.abs()?.mean(2)?.mean(1)?; // (B,C,H,W)
    let spread_scale = if fair {
        if e < 2 {
            return Err(Error::invalid("fair CRPS needs at least 2 members"));
        }
        0.5 * e as f64 / (e as f64 - 1.0)
    } else {
        0.5
    };
    Ok(term1.sub(&pair_mean.affine(spread_scale, 0.0)?)?.mean_all()?)
}

/// Radial low-pass as a custom op. The filter is a self-adjoint projection,
/// so its backward pass applies the same filter to the output gradient.
#[derive(Debug, Clone)]
struct LowPassOp {
    k_c: f64,
    taper: Option<f64>,
}

impl LowPassOp {
    fn filter_slab(&self, data: &[f32], h: usize, w: usize, out: &mut Vec<f32>) {
        let field = Array2::from_shape_fn((h, w), |(i, j)| data[i * w + j] as f64);
        let filtered = spectral::lowpass_2d(&field, self.k_c, self.taper);
        out.extend(filtered.iter().map(|&v| v as f32));
    }
}

impl CustomOp1 for LowPassOp {
    fn name(&self) -> &'static str {
        "radial-low-pass"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims();
        if dims.len() < 2 {
            candle_core::bail!("low-pass input needs at least 2 dims, got {dims:?}");
        }
        let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
        let data = storage.as_slice::<f32>()?;
        let data = match layout.contiguous_offsets() {
            Some((o1, o2)) => &data[o1..o2],
            None => candle_core::bail!("low-pass input must be contiguous"),
        };
        let mut out = Vec::with_capacity(data.len());
        for slab in data.chunks_exact(h * w) {
            self.filter_slab(slab, h, w, &mut out);
        }
        Ok((CpuStorage::F32(out), layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1(self.clone())?))
    }
}

/// Differentiable low-pass over the trailing (H, W) axes.
pub fn low_pass(x: &Tensor, k_c: f64, taper: Option<f64>) -> Result<Tensor> {
    if !(k_c > 0.0) {
        return Err(Error::invalid("cutoff wavenumber must be positive"));
    }
    Ok(x.contiguous()?.apply_op1(LowPassOp { k_c, taper })?)
}

/// Regime dispatch mirroring `losses::content_loss`; members: (B, E, C, H, W).
pub fn content_loss(members: &Tensor, truth: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    cfg.validate()?;
    let dims = members.dims();
    if dims.len() != 5 {
        return Err(Error::shape(format!("ensemble tensor must be (B,E,C,H,W), got {dims:?}")));
    }
    match (cfg.regime, cfg.content_kind) {
        (TrainRegime::FrequencySeparation, ContentKind::Mae) => {
            if dims[1] != 1 {
                return Err(Error::invalid("frequency separation takes exactly one realisation"));
            }
            let (h, w) = (dims[3], dims[4]);
            let k_c = cfg
                .cutoff_wavenumber
                .unwrap_or_else(|| spectral::max_radial_wavenumber(h, w));
            let pred = members.squeeze(1)?;
            mae(&low_pass(&pred, k_c, cfg.cutoff_taper)?, &low_pass(truth, k_c, cfg.cutoff_taper)?)
        }
        (TrainRegime::FrequencySeparation, ContentKind::Crps) => {
            Err(Error::invalid("CRPS cannot be applied to frequency separation"))
        }
        (TrainRegime::StochasticSampling, ContentKind::Mae) => mae(&ensemble_mean(members)?, truth),
        (TrainRegime::StochasticSampling, ContentKind::Crps) => crps(members, truth, cfg.fair_crps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldGrid;
    use crate::losses;
    use approx::assert_abs_diff_eq;
    use candle_core::{DType, Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn dev() -> Device {
        Device::Cpu
    }

    #[test]
    fn tensor_mae_matches_reference() {
        let p = Tensor::new(&[[0.0f32, 2.0], [1.0, 1.0]], &dev()).unwrap();
        let t = Tensor::new(&[[1.0f32, 1.0], [1.0, 0.0]], &dev()).unwrap();
        let v = mae(&p, &t).unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(v, 0.75);
    }

    #[test]
    fn tensor_crps_matches_scalar_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let (b, e, h, w) = (2usize, 5usize, 3usize, 4usize);
        let members_v: Vec<f32> = (0..b * e * h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
        let truth_v: Vec<f32> = (0..b * h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
        let members = Tensor::from_vec(members_v.clone(), (b, e, 1, h, w), &dev()).unwrap();
        let truth = Tensor::from_vec(truth_v.clone(), (b, 1, h, w), &dev()).unwrap();
        for fair in [false, true] {
            let t = crps(&members, &truth, fair).unwrap().to_scalar::<f32>().unwrap();
            // reference: average the scalar closed form over every pixel
            let mut acc = 0.0;
            for bi in 0..b {
                for p in 0..h * w {
                    let ens: Vec<f64> = (0..e)
                        .map(|k| members_v[bi * e * h * w + k * h * w + p] as f64)
                        .collect();
                    let tv = truth_v[bi * h * w + p] as f64;
                    acc += if fair {
                        losses::crps_empirical_fair(&ens, tv).unwrap()
                    } else {
                        losses::crps_empirical(&ens, tv).unwrap()
                    };
                }
            }
            let reference = acc / (b * h * w) as f64;
            assert_abs_diff_eq!(t as f64, reference, epsilon = 1e-5);
        }
    }

    #[test]
    fn tensor_low_pass_matches_field_version() {
        let f = FieldGrid::from_fn(16, 16, |i, j| ((i * 3 + j) % 7) as f64 - 3.0).unwrap();
        let t = Tensor::from_vec(f.to_f32_vec(), (1, 1, 16, 16), &dev()).unwrap();
        let lp_t = low_pass(&t, 4.0, None).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let lp_f = losses::low_pass(&f, 4.0).unwrap();
        for (a, b) in lp_t.iter().zip(lp_f.as_slice()) {
            assert_abs_diff_eq!(*a as f64, *b, epsilon = 1e-5);
        }
    }

    #[test]
    fn low_pass_gradient_is_self_adjoint_filter() {
        // d/dx mean(low_pass(x)) == low_pass(ones)/len elementwise
        let x = Var::from_tensor(&Tensor::randn(0f32, 1f32, (1, 1, 8, 8), &dev()).unwrap()).unwrap();
        let y = low_pass(x.as_tensor(), 2.0, None).unwrap().mean_all().unwrap();
        let grads = y.backward().unwrap();
        let g = grads.get(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let ones = Tensor::ones((1, 1, 8, 8), DType::F32, &dev()).unwrap();
        let expected = low_pass(&ones, 2.0, None)
            .unwrap()
            .affine(1.0 / 64.0, 0.0)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        for (a, b) in g.iter().zip(&expected) {
            assert_abs_diff_eq!(*a as f64, *b as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn content_loss_tensor_matches_reference_paths() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let (b, e, h, w) = (2usize, 4usize, 8usize, 8usize);
        let members_v: Vec<f32> = (0..b * e * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let truth_v: Vec<f32> = (0..b * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let members = Tensor::from_vec(members_v.clone(), (b, e, 1, h, w), &dev()).unwrap();
        let truth = Tensor::from_vec(truth_v.clone(), (b, 1, h, w), &dev()).unwrap();

        let cfg = LossConfig {
            regime: TrainRegime::StochasticSampling,
            content_kind: ContentKind::Mae,
            ..Default::default()
        };
        let got = content_loss(&members, &truth, &cfg).unwrap().to_scalar::<f32>().unwrap();
        // reference via field stacks per batch element
        let mut acc = 0.0;
        for bi in 0..b {
            let stacks: Vec<Vec<FieldGrid>> = (0..e)
                .map(|k| {
                    vec![FieldGrid::from_f32_slice(
                        h,
                        w,
                        &members_v[bi * e * h * w + k * h * w..bi * e * h * w + (k + 1) * h * w],
                    )
                    .unwrap()]
                })
                .collect();
            let t = vec![FieldGrid::from_f32_slice(h, w, &truth_v[bi * h * w..(bi + 1) * h * w]).unwrap()];
            acc += losses::content_loss(&stacks, &t, &cfg).unwrap();
        }
        assert_abs_diff_eq!(got as f64, acc / b as f64, epsilon = 1e-5);
    }

    #[test]
    fn critic_loss_tensor_arithmetic() {
        let real = Tensor::new(&[1.0f32, 1.0], &dev()).unwrap();
        let fake = Tensor::new(&[0.0f32, 0.0], &dev()).unwrap();
        let v = critic_loss(&real, &fake, None, 10.0).unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(v, -1.0);
        let gp = Tensor::new(0.5f32, &dev()).unwrap();
        let v2 = critic_loss(&real, &fake, Some(&gp), 10.0).unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(v2, 4.0);
        let adv = adversarial(&Tensor::new(&[2.0f32, 4.0], &dev()).unwrap())
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert_eq!(adv, -3.0);
    }
}
