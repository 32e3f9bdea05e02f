//! Covariate-conditioned Wasserstein critic.
//!
//! Two input streams: HR fields (plus HR covariates) pass through strided
//! downsampling convolutions to LR spatial size, the LR covariates pass
//! through their own convolutions, and only then are the streams concatenated
//! and reduced to one unbounded score per sample (no final sigmoid).
//!
//! The critic is piecewise linear (convs, leaky ReLU, mean-pool, linear), so
//! the gradient penalty's weight gradient can be computed exactly with first-
//! order autodiff: run a tangent-linear pass through the network with the
//! activation masks frozen at the interpolates and the input tangent set to
//! v = 2(||g||-1) g/||g||, then differentiate the resulting scalar. This is
//! the same value double-backward yields for ReLU-family networks, where the
//! masks carry zero second derivative almost everywhere.

use candle_core::{Tensor, Var};
use candle_nn::{Conv2d, Linear, Module};
use rand::Rng;

use super::registry::VarRegistry;
use super::CriticConfig;
use crate::error::{Error, Result};

struct MaskedActivations {
    hr: Vec<Tensor>,
    joint: Vec<Tensor>,
}

pub struct Critic {
    cfg: CriticConfig,
    hr_channels: usize,
    lr_channels: usize,
    hr_cov_channels: usize,
    stem_hr: Conv2d,
    downs: Vec<Conv2d>,
    stem_lr: Conv2d,
    lr_extra: Vec<Conv2d>,
    joints: Vec<Conv2d>,
    head: Linear,
}

impl Critic {
    pub fn new(
        cfg: &CriticConfig,
        hr_channels: usize,
        lr_channels: usize,
        hr_cov_channels: usize,
        reg: &mut VarRegistry,
    ) -> Result<Self> {
        cfg.validate()?;
        if hr_channels == 0 || lr_channels == 0 {
            return Err(Error::invalid("critic needs HR fields and LR covariates"));
        }
        let ch = &cfg.channels;
        let scale = cfg.init_scale;
        let stem_hr = reg.conv2d("critic.hr.stem", hr_channels + hr_cov_channels, ch[0], 3, 1, 1, scale)?;
        let downs = (0..cfg.hr_downsample_blocks)
            .map(|i| reg.conv2d(&format!("critic.hr.down{i}"), ch[i], ch[i + 1], 3, 2, 1, scale))
            .collect::<Result<Vec<_>>>()?;
        let wide = *ch.last().expect("validated nonempty");
        let stem_lr = reg.conv2d("critic.lr.stem", lr_channels, wide, 3, 1, 1, scale)?;
        let lr_extra = (1..cfg.lr_blocks)
            .map(|i| reg.conv2d(&format!("critic.lr.conv{i}"), wide, wide, 3, 1, 1, scale))
            .collect::<Result<Vec<_>>>()?;
        let joints = (0..cfg.joint_blocks)
            .map(|i| {
                let in_ch = if i == 0 { 2 * wide } else { wide };
                reg.conv2d(&format!("critic.joint.conv{i}"), in_ch, wide, 3, 1, 1, scale)
            })
            .collect::<Result<Vec<_>>>()?;
        let head = reg.linear("critic.head", wide, 1, scale)?;
        Ok(Self {
            cfg: cfg.clone(),
            hr_channels,
            lr_channels,
            hr_cov_channels,
            stem_hr,
            downs,
            stem_lr,
            lr_extra,
            joints,
            head,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.cfg
    }

    fn leaky(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::leaky_relu(x, self.cfg.leaky_slope)?)
    }

    /// 1 where the pre-activation is nonnegative, `slope` elsewhere.
    fn mask_of(&self, pre: &Tensor) -> Result<Tensor> {
        let ones = pre.ge(&pre.zeros_like()?)?.to_dtype(pre.dtype())?;
        Ok(ones.affine(1.0 - self.cfg.leaky_slope, self.cfg.leaky_slope)?.detach())
    }

    fn check_shapes(&self, hr_fields: &Tensor, lr_cov: &Tensor, hr_cov: Option<&Tensor>) -> Result<()> {
        let (bh, ch, hh, wh) = hr_fields.dims4()?;
        let (bl, cl, hl, wl) = lr_cov.dims4()?;
        if ch != self.hr_channels {
            return Err(Error::shape(format!(
                "critic expects {} HR field channels, got {ch}",
                self.hr_channels
            )));
        }
        if cl != self.lr_channels {
            return Err(Error::shape(format!(
                "critic expects {} LR covariate channels, got {cl}",
                self.lr_channels
            )));
        }
        if bh != bl {
            return Err(Error::shape(format!("batch sizes differ: HR {bh} vs LR {bl}")));
        }
        let factor = 1usize << self.cfg.hr_downsample_blocks;
        if hh != hl * factor || wh != wl * factor {
            return Err(Error::shape(format!(
                "HR {hh}x{wh} must be LR {hl}x{wl} times 2^{}",
                self.cfg.hr_downsample_blocks
            )));
        }
        match (self.hr_cov_channels, hr_cov) {
            (0, None) => {}
            (0, Some(_)) => {
                return Err(Error::shape("critic has no HR covariate channels"));
            }
            (n, Some(hc)) => {
                let (bc, cc, hc_h, hc_w) = hc.dims4()?;
                if cc != n || bc != bh || hc_h != hh || hc_w != wh {
                    return Err(Error::shape(format!(
                        "HR covariates must be ({bh}, {n}, {hh}, {wh}), got ({bc}, {cc}, {hc_h}, {hc_w})"
                    )));
                }
            }
            (n, None) => {
                return Err(Error::shape(format!("critic expects {n} HR covariate channels")));
            }
        }
        Ok(())
    }

    /// Unbounded Wasserstein score per sample: (B,).
    pub fn forward(&self, hr_fields: &Tensor, lr_cov: &Tensor, hr_cov: Option<&Tensor>) -> Result<Tensor> {
        self.forward_inner(hr_fields, lr_cov, hr_cov, None)
    }

    fn forward_inner(
        &self,
        hr_fields: &Tensor,
        lr_cov: &Tensor,
        hr_cov: Option<&Tensor>,
        mut tape: Option<&mut MaskedActivations>,
    ) -> Result<Tensor> {
        self.check_shapes(hr_fields, lr_cov, hr_cov)?;
        let mut x = match hr_cov {
            Some(hc) => Tensor::cat(&[hr_fields, hc], 1)?,
            None => hr_fields.clone(),
        };
        x = self.stem_hr.forward(&x)?;
        if let Some(t) = tape.as_deref_mut() {
            t.hr.push(self.mask_of(&x)?);
        }
        x = self.leaky(&x)?;
        for d in &self.downs {
            x = d.forward(&x)?;
            if let Some(t) = tape.as_deref_mut() {
                t.hr.push(self.mask_of(&x)?);
            }
            x = self.leaky(&x)?;
        }

        let mut y = self.leaky(&self.stem_lr.forward(lr_cov)?)?;
        for l in &self.lr_extra {
            y = self.leaky(&l.forward(&y)?)?;
        }

        let mut z = Tensor::cat(&[&x, &y], 1)?;
        for j in &self.joints {
            z = j.forward(&z)?;
            if let Some(t) = tape.as_deref_mut() {
                t.joint.push(self.mask_of(&z)?);
            }
            z = self.leaky(&z)?;
        }
        let pooled = z.mean(3)?.mean(2)?;
        Ok(self.head.forward(&pooled)?.squeeze(1)?)
    }

    /// Gradient of the summed score with respect to the HR fields.
    pub fn input_gradient(&self, hr_fields: &Tensor, lr_cov: &Tensor, hr_cov: Option<&Tensor>) -> Result<Tensor> {
        let xvar = Var::from_tensor(&hr_fields.detach())?;
        let scores = self.forward(xvar.as_tensor(), lr_cov, hr_cov)?;
        let grads = scores.sum_all()?.backward()?;
        let g = grads
            .get(&xvar)
            .ok_or_else(|| Error::invalid("input gradient missing from backward pass"))?;
        Ok(g.detach())
    }

    /// Directional derivative of the score along `v_hr` (tangent of the HR
    /// field input only; covariates are held fixed), with activation masks
    /// frozen at `hr_fields`. Weight-differentiable.
    fn tangent(&self, masks: &MaskedActivations, v_hr: &Tensor, hr_cov: Option<&Tensor>) -> Result<Tensor> {
        let mut u = match hr_cov {
            Some(hc) => Tensor::cat(&[v_hr, &hc.zeros_like()?], 1)?,
            None => v_hr.clone(),
        };
        let mut mask_idx = 0;
        u = u.conv2d(self.stem_hr.weight(), 1, 1, 1, 1)?;
        u = u.mul(&masks.hr[mask_idx])?;
        mask_idx += 1;
        for d in &self.downs {
            u = u.conv2d(d.weight(), 1, 2, 1, 1)?;
            u = u.mul(&masks.hr[mask_idx])?;
            mask_idx += 1;
        }
        // LR covariates carry zero tangent through their whole stream.
        let (b, _, hl, wl) = u.dims4()?;
        let wide = *self.cfg.channels.last().expect("validated");
        let zeros_lr = Tensor::zeros((b, wide, hl, wl), u.dtype(), u.device())?;
        let mut uz = Tensor::cat(&[&u, &zeros_lr], 1)?;
        for (j, conv) in self.joints.iter().enumerate() {
            uz = uz.conv2d(conv.weight(), 1, 1, 1, 1)?;
            uz = uz.mul(&masks.joint[j])?;
        }
        let pooled = uz.mean(3)?.mean(2)?;
        Ok(pooled.matmul(&self.head.weight().t()?)?.squeeze(1)?)
    }
}

/// Output of the gradient-penalty computation for one interpolated batch.
pub struct GradientPenalty {
    /// mean((||g|| - 1)^2) — the penalty value to log and to report as gp_term.
    pub value: f64,
    /// Per-sample input-gradient norms.
    pub norms: Vec<f64>,
    /// Differentiable scalar whose weight gradient equals the penalty's.
    pub surrogate: Tensor,
}

impl Critic {
    /// Gradient penalty on per-sample random interpolates between real and
    /// fake HR fields, conditioning covariates held fixed.
    pub fn gradient_penalty(
        &self,
        real_hr: &Tensor,
        fake_hr: &Tensor,
        lr_cov: &Tensor,
        hr_cov: Option<&Tensor>,
        rng: &mut impl Rng,
    ) -> Result<GradientPenalty> {
        let (b, _, _, _) = real_hr.dims4()?;
        if real_hr.dims() != fake_hr.dims() {
            return Err(Error::shape(format!(
                "real {:?} and fake {:?} shapes differ",
                real_hr.dims(),
                fake_hr.dims()
            )));
        }
        let eps_host: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
        let eps = Tensor::from_vec(eps_host, (b, 1, 1, 1), real_hr.device())?
            .to_dtype(real_hr.dtype())?;
        let one_minus = eps.affine(-1.0, 1.0)?;
        let xhat = real_hr
            .detach()
            .broadcast_mul(&eps)?
            .add(&fake_hr.detach().broadcast_mul(&one_minus)?)?
            .detach();

        let g = self.input_gradient(&xhat, lr_cov, hr_cov)?;
        let norms = g
            .sqr()?
            .sum((1, 2, 3))?
            .to_dtype(candle_core::DType::F64)?
            .to_vec1::<f64>()?
            .iter()
            .map(|&s| (s + 1e-12).sqrt())
            .collect::<Vec<f64>>();
        let value = norms.iter().map(|&n| (n - 1.0) * (n - 1.0)).sum::<f64>() / b as f64;

        // v = 2(||g|| - 1)/||g|| * g, held constant in the tangent pass
        let coeff: Vec<f64> = norms.iter().map(|&n| 2.0 * (n - 1.0) / n).collect();
        let coeff = Tensor::from_vec(coeff, (b, 1, 1, 1), g.device())?.to_dtype(g.dtype())?;
        let v = g.broadcast_mul(&coeff)?.detach();

        let mut masks = MaskedActivations { hr: Vec::new(), joint: Vec::new() };
        let _ = self.forward_inner(&xhat, lr_cov, hr_cov, Some(&mut masks))?;
        let t = self.tangent(&masks, &v, hr_cov)?;
        let surrogate = t.mean_all()?;
        Ok(GradientPenalty { value, norms, surrogate })
    }

    /// Clamps every parameter into [-c, c] (the weight-clipping alternative
    /// to the gradient penalty).
    pub fn clip_weights(reg: &VarRegistry, c: f64) -> Result<()> {
        for (_, var) in reg.named_vars() {
            let clamped = var.as_tensor().clamp(-c, c)?;
            var.set(&clamped)?;
        }
        Ok(())
    }
}
