//! Dual-stream generator: an LR covariate stream of RRDBs followed by
//! upsampling stages, an optional parallel HR covariate stream, and fusion
//! RRDBs after concatenation. Stochastic blocks concatenate a fresh Gaussian
//! noise plane at six sites per dense block (the block input and before each
//! of the five convolutions).

use candle_core::Tensor;
use candle_nn::{Conv2d, Module};

use super::noise::NoiseSource;
use super::registry::VarRegistry;
use super::{GeneratorConfig, NoiseKind};
use crate::error::{Error, Result};

const RESIDUAL_SCALE: f64 = 0.2;
const DENSE_CONVS: usize = 5;

struct DenseBlock {
    convs: Vec<Conv2d>,
    stochastic: bool,
    sites: usize,
}

impl DenseBlock {
    fn new(
        reg: &mut VarRegistry,
        name: &str,
        base: usize,
        growth: usize,
        stochastic: bool,
        sites: usize,
        init_scale: f64,
    ) -> Result<Self> {
        let s0 = usize::from(stochastic && sites >= 1);
        let mut convs = Vec::with_capacity(DENSE_CONVS);
        for k in 0..DENSE_CONVS {
            let sk = usize::from(stochastic && k + 2 <= sites);
            let in_ch = base + s0 + k * growth + sk;
            let out_ch = if k + 1 == DENSE_CONVS { base } else { growth };
            convs.push(reg.conv2d(&format!("{name}.conv{k}"), in_ch, out_ch, 3, 1, 1, init_scale)?);
        }
        Ok(Self { convs, stochastic, sites })
    }

    fn forward(&self, x: &Tensor, noise: &mut NoiseSource) -> Result<Tensor> {
        let mut feats: Vec<Tensor> = vec![x.clone()];
        if self.stochastic && self.sites >= 1 {
            feats.push(noise.plane_like(x)?);
        }
        let mut out = None;
        for (k, conv) in self.convs.iter().enumerate() {
            let mut inputs = feats.clone();
            if self.stochastic && k + 2 <= self.sites {
                inputs.push(noise.plane_like(x)?);
            }
            let refs: Vec<&Tensor> = inputs.iter().collect();
            let y = conv.forward(&Tensor::cat(&refs, 1)?)?;
            if k + 1 == DENSE_CONVS {
                out = Some(y);
            } else {
                feats.push(y.relu()?);
            }
        }
        let y = out.expect("dense block has convolutions");
        Ok(x.add(&y.affine(RESIDUAL_SCALE, 0.0)?)?)
    }
}

/// Residual-in-residual dense block: three dense blocks under an outer
/// residual with 0.2 scaling.
struct Rrdb {
    blocks: Vec<DenseBlock>,
}

impl Rrdb {
    fn new(
        reg: &mut VarRegistry,
        name: &str,
        cfg: &GeneratorConfig,
        stochastic: bool,
    ) -> Result<Self> {
        let blocks = (0..cfg.dense_blocks_per_rrdb)
            .map(|d| {
                DenseBlock::new(
                    reg,
                    &format!("{name}.dense{d}"),
                    cfg.base_channels,
                    cfg.growth_channels,
                    stochastic,
                    cfg.injections_per_dense_block,
                    cfg.init_scale,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    fn forward(&self, x: &Tensor, noise: &mut NoiseSource) -> Result<Tensor> {
        let mut y = x.clone();
        for b in &self.blocks {
            y = b.forward(&y, noise)?;
        }
        Ok(y.affine(RESIDUAL_SCALE, 0.0)?.add(x)?)
    }
}

/// log2(total_factor) stages of nearest-neighbor 2x upsampling followed by a
/// convolution (avoids the checkerboard artifacts of strided deconvolution).
pub struct UpsamplePath {
    convs: Vec<Conv2d>,
}

impl UpsamplePath {
    pub fn new(
        reg: &mut VarRegistry,
        name: &str,
        channels: usize,
        total_factor: usize,
        init_scale: f64,
    ) -> Result<Self> {
        let stages = upsample_stages(total_factor)?;
        let convs = (0..stages)
            .map(|s| reg.conv2d(&format!("{name}.up{s}"), channels, channels, 3, 1, 1, init_scale))
            .collect::<Result<_>>()?;
        Ok(Self { convs })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for conv in &self.convs {
            let (_, _, h, w) = y.dims4()?;
            y = conv.forward(&y.upsample_nearest2d(2 * h, 2 * w)?)?.relu()?;
        }
        Ok(y)
    }

    pub fn stages(&self) -> usize {
        self.convs.len()
    }
}

/// Number of 2x stages for a power-of-two factor.
pub fn upsample_stages(total_factor: usize) -> Result<usize> {
    if total_factor == 0 || !total_factor.is_power_of_two() {
        return Err(Error::invalid(format!(
            "upscale factor {total_factor} must be a power of 2"
        )));
    }
    Ok(total_factor.trailing_zeros() as usize)
}

struct HrStream {
    conv_first: Conv2d,
    blocks: Vec<Rrdb>,
    trunk: Conv2d,
}

/// The generator network. Built once per (config, channel layout); forward
/// passes are reentrant given immutable weights.
pub struct Generator {
    cfg: GeneratorConfig,
    in_lr: usize,
    in_hr: usize,
    out_channels: usize,
    conv_first_lr: Conv2d,
    lr_blocks: Vec<Rrdb>,
    trunk_lr: Conv2d,
    upsample: UpsamplePath,
    hr_stream: Option<HrStream>,
    conv_fuse: Conv2d,
    fusion_blocks: Vec<Rrdb>,
    conv_pre_out: Conv2d,
    conv_out: Conv2d,
}

impl Generator {
    /// `in_hr = 0` drops the HR stream entirely (datasets without HR covariates).
    pub fn new(
        cfg: &GeneratorConfig,
        in_lr: usize,
        in_hr: usize,
        out_channels: usize,
        reg: &mut VarRegistry,
    ) -> Result<Self> {
        cfg.validate()?;
        if in_lr == 0 || out_channels == 0 {
            return Err(Error::invalid("generator needs LR inputs and outputs"));
        }
        let noise_cov = usize::from(cfg.noise.kind == NoiseKind::NoiseCovariate);
        let base = cfg.base_channels;
        let scale = cfg.init_scale;

        let conv_first_lr = reg.conv2d("generator.lr.first", in_lr + noise_cov, base, 3, 1, 1, scale)?;
        let lr_blocks = (0..cfg.rrdb_lr)
            .map(|i| {
                let stochastic = cfg.injection_enabled() && i < cfg.noise.stochastic_rrdb_lr;
                Rrdb::new(reg, &format!("generator.lr.rrdb{i}"), cfg, stochastic)
            })
            .collect::<Result<Vec<_>>>()?;
        let trunk_lr = reg.conv2d("generator.lr.trunk", base, base, 3, 1, 1, scale)?;
        let upsample = UpsamplePath::new(reg, "generator.upsample", base, cfg.upscale_factor, scale)?;

        let hr_stream = if in_hr > 0 {
            let conv_first = reg.conv2d("generator.hr.first", in_hr, base, 3, 1, 1, scale)?;
            let blocks = (0..cfg.rrdb_hr)
                .map(|i| {
                    let stochastic = cfg.injection_enabled() && i < cfg.noise.stochastic_rrdb_hr;
                    Rrdb::new(reg, &format!("generator.hr.rrdb{i}"), cfg, stochastic)
                })
                .collect::<Result<Vec<_>>>()?;
            let trunk = reg.conv2d("generator.hr.trunk", base, base, 3, 1, 1, scale)?;
            Some(HrStream { conv_first, blocks, trunk })
        } else {
            None
        };

        let fuse_in = if in_hr > 0 { 2 * base } else { base };
        let conv_fuse = reg.conv2d("generator.fusion.fuse", fuse_in, base, 3, 1, 1, scale)?;
        let fusion_blocks = (0..cfg.rrdb_fusion)
            .map(|i| {
                let stochastic = cfg.injection_enabled() && i < cfg.noise.stochastic_rrdb_fusion;
                Rrdb::new(reg, &format!("generator.fusion.rrdb{i}"), cfg, stochastic)
            })
            .collect::<Result<Vec<_>>>()?;
        let conv_pre_out = reg.conv2d("generator.fusion.pre_out", base, base, 3, 1, 1, scale)?;
        let conv_out = reg.conv2d("generator.fusion.out", base, out_channels, 3, 1, 1, scale)?;

        Ok(Self {
            cfg: cfg.clone(),
            in_lr,
            in_hr,
            out_channels,
            conv_first_lr,
            lr_blocks,
            trunk_lr,
            upsample,
            hr_stream,
            conv_fuse,
            fusion_blocks,
            conv_pre_out,
            conv_out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> (usize, usize) {
        (self.in_lr, self.in_hr)
    }

    /// lr: (B, in_lr, h, w); hr_cov: (B, in_hr, h*f, w*f) when the HR stream
    /// exists. Output: (B, out_channels, h*f, w*f).
    pub fn forward(
        &self,
        lr: &Tensor,
        hr_cov: Option<&Tensor>,
        noise: &mut NoiseSource,
    ) -> Result<Tensor> {
        let (_, c, h, w) = lr.dims4()?;
        if c != self.in_lr {
            return Err(Error::shape(format!(
                "generator expects {} LR channels, got {c}",
                self.in_lr
            )));
        }
        let f = self.cfg.upscale_factor;
        match (&self.hr_stream, hr_cov) {
            (Some(_), Some(hc)) => {
                let (_, hc_c, hc_h, hc_w) = hc.dims4()?;
                if hc_c != self.in_hr || hc_h != h * f || hc_w != w * f {
                    return Err(Error::shape(format!(
                        "HR covariates must be (B, {}, {}, {}), got (B, {hc_c}, {hc_h}, {hc_w})",
                        self.in_hr,
                        h * f,
                        w * f
                    )));
                }
            }
            (Some(_), None) => {
                return Err(Error::shape("generator was built with an HR stream; HR covariates required"))
            }
            (None, Some(_)) => {
                return Err(Error::shape("generator has no HR stream; unexpected HR covariates"))
            }
            (None, None) => {}
        }

        let lr_in = if self.cfg.noise.kind == NoiseKind::NoiseCovariate {
            let plane = noise.plane_like(lr)?;
            Tensor::cat(&[lr, &plane], 1)?
        } else {
            lr.clone()
        };
        let feat = self.conv_first_lr.forward(&lr_in)?;
        let mut body = feat.clone();
        for block in &self.lr_blocks {
            body = block.forward(&body, noise)?;
        }
        let feat = feat.add(&self.trunk_lr.forward(&body)?)?;
        let up = self.upsample.forward(&feat)?;

        let fused_in = match (&self.hr_stream, hr_cov) {
            (Some(stream), Some(hc)) => {
                let hfeat = stream.conv_first.forward(hc)?;
                let mut hbody = hfeat.clone();
                for block in &stream.blocks {
                    hbody = block.forward(&hbody, noise)?;
                }
                let hfeat = hfeat.add(&stream.trunk.forward(&hbody)?)?;
                Tensor::cat(&[&up, &hfeat], 1)?
            }
            _ => up,
        };

        let mut x = self.conv_fuse.forward(&fused_in)?;
        for block in &self.fusion_blocks {
            x = block.forward(&x, noise)?;
        }
        Ok(self.conv_out.forward(&self.conv_pre_out.forward(&x)?.relu()?)?)
    }
}
