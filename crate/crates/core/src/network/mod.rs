//! Generator and critic architectures with configurable-depth noise injection.

mod critic;
mod generator;
mod noise;
mod registry;

pub use critic::{Critic, GradientPenalty};
pub use generator::{upsample_stages, Generator, UpsamplePath};
pub use noise::NoiseSource;
pub use registry::VarRegistry;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How stochasticity enters the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Fully deterministic.
    None,
    /// One Gaussian plane concatenated with the LR input covariates.
    NoiseCovariate,
    /// Noise planes concatenated inside dense blocks.
    Injection,
}

/// Stochastic-block counts per stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub kind: NoiseKind,
    pub stochastic_rrdb_lr: usize,
    pub stochastic_rrdb_hr: usize,
    pub stochastic_rrdb_fusion: usize,
}

impl NoiseLevel {
    pub fn none() -> Self {
        Self { kind: NoiseKind::None, stochastic_rrdb_lr: 0, stochastic_rrdb_hr: 0, stochastic_rrdb_fusion: 0 }
    }

    pub fn noise_covariate() -> Self {
        Self { kind: NoiseKind::NoiseCovariate, ..Self::none() }
    }

    pub fn injection(lr: usize, hr: usize, fusion: usize) -> Self {
        Self {
            kind: NoiseKind::Injection,
            stochastic_rrdb_lr: lr,
            stochastic_rrdb_hr: hr,
            stochastic_rrdb_fusion: fusion,
        }
    }
}

/// The named noise levels studied in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    None,
    NoiseCovariate,
    Low,
    Medium,
    Full,
    /// The (14 LR, 1 HR-stream) reading of the full configuration.
    FullAlt,
}

impl NoisePreset {
    /// Resolves against a block geometry. `low`/`medium` pin 2 and 7
    /// stochastic LR blocks (clamped to the available depth); `full` makes
    /// every block stochastic.
    pub fn resolve(&self, rrdb_lr: usize, rrdb_hr: usize, rrdb_fusion: usize) -> NoiseLevel {
        match self {
            NoisePreset::None => NoiseLevel::none(),
            NoisePreset::NoiseCovariate => NoiseLevel::noise_covariate(),
            NoisePreset::Low => NoiseLevel::injection(2.min(rrdb_lr), 0, 0),
            NoisePreset::Medium => NoiseLevel::injection(7.min(rrdb_lr), 0, 0),
            NoisePreset::Full => NoiseLevel::injection(rrdb_lr, rrdb_hr, rrdb_fusion),
            NoisePreset::FullAlt => NoiseLevel::injection(rrdb_lr, 1.min(rrdb_hr), 0),
        }
    }

    /// Short tag used in model names.
    pub fn tag(&self) -> &'static str {
        match self {
            NoisePreset::None => "det",
            NoisePreset::NoiseCovariate => "nc",
            NoisePreset::Low => "low",
            NoisePreset::Medium => "med",
            NoisePreset::Full => "full",
            NoisePreset::FullAlt => "full-alt",
        }
    }
}

impl std::str::FromStr for NoisePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" | "none" => Ok(NoisePreset::None),
            "nc" | "noise_covariate" => Ok(NoisePreset::NoiseCovariate),
            "low" => Ok(NoisePreset::Low),
            "med" | "medium" => Ok(NoisePreset::Medium),
            "full" => Ok(NoisePreset::Full),
            "full-alt" | "full_alt" => Ok(NoisePreset::FullAlt),
            other => Err(Error::invalid(format!("unknown noise preset '{other}'"))),
        }
    }
}

/// Generator architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub rrdb_lr: usize,
    pub rrdb_hr: usize,
    pub rrdb_fusion: usize,
    pub dense_blocks_per_rrdb: usize,
    pub injections_per_dense_block: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    /// Power of 2.
    pub upscale_factor: usize,
    pub noise: NoiseLevel,
    /// Kaiming fan-in init is multiplied by this (RRDB stability).
    pub init_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            rrdb_lr: 14,
            rrdb_hr: 2,
            rrdb_fusion: 1,
            dense_blocks_per_rrdb: 3,
            injections_per_dense_block: 6,
            base_channels: 64,
            growth_channels: 32,
            upscale_factor: 8,
            noise: NoiseLevel::injection(14, 2, 1),
            init_scale: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upscale_factor == 0 || !self.upscale_factor.is_power_of_two() {
            return Err(Error::invalid(format!(
                "upscale factor {} must be a power of 2",
                self.upscale_factor
            )));
        }
        if self.base_channels == 0 || self.growth_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.dense_blocks_per_rrdb == 0 {
            return Err(Error::invalid("need at least one dense block per RRDB"));
        }
        if !(1..=6).contains(&self.injections_per_dense_block) {
            return Err(Error::invalid(
                "injections_per_dense_block must be in 1..=6 (block input plus five convolutions)",
            ));
        }
        if self.noise.stochastic_rrdb_lr > self.rrdb_lr
            || self.noise.stochastic_rrdb_hr > self.rrdb_hr
            || self.noise.stochastic_rrdb_fusion > self.rrdb_fusion
        {
            return Err(Error::invalid(
                "stochastic block counts exceed the available blocks per stream",
            ));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::invalid("init_scale must be positive"));
        }
        Ok(())
    }

    pub fn injection_enabled(&self) -> bool {
        self.noise.kind == NoiseKind::Injection
    }

    pub fn with_preset(mut self, preset: NoisePreset) -> Self {
        self.noise = preset.resolve(self.rrdb_lr, self.rrdb_hr, self.rrdb_fusion);
        self
    }

    /// Noise injections per RRDB under this geometry.
    pub fn injections_per_rrdb(&self) -> usize {
        self.dense_blocks_per_rrdb * self.injections_per_dense_block
    }
}

/// (LR-stream, HR-side) noise layer counts: stochastic blocks times
/// injections per RRDB; the HR side covers the HR stream plus fusion blocks.
pub fn count_noise_layers(cfg: &GeneratorConfig) -> (usize, usize) {
    if !cfg.injection_enabled() {
        return (0, 0);
    }
    let per = cfg.injections_per_rrdb();
    (
        cfg.noise.stochastic_rrdb_lr * per,
        (cfg.noise.stochastic_rrdb_hr + cfg.noise.stochastic_rrdb_fusion) * per,
    )
}

/// Critic architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    /// Strided 2x blocks bringing HR down to LR size (log2 of the factor).
    pub hr_downsample_blocks: usize,
    /// Convolutions in the LR covariate stream.
    pub lr_blocks: usize,
    /// Convolutions after concatenation.
    pub joint_blocks: usize,
    /// Channel schedule: stem width, then width after each downsample block
    /// (length = hr_downsample_blocks + 1).
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
    pub init_scale: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hr_downsample_blocks: 3,
            lr_blocks: 2,
            joint_blocks: 2,
            channels: vec![64, 128, 256, 256],
            leaky_slope: 0.2,
            init_scale: 1.0,
        }
    }
}

impl CriticConfig {
    /// A schedule sized for the given downscaling factor.
    pub fn for_factor(factor: usize, base: usize) -> Result<Self> {
        let downs = upsample_stages(factor)?;
        let mut channels = vec![base];
        for i in 0..downs {
            channels.push((base << (i + 1)).min(base * 4));
        }
        Ok(Self {
            hr_downsample_blocks: downs,
            channels,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.hr_downsample_blocks + 1 {
            return Err(Error::invalid(format!(
                "channel schedule length {} must be hr_downsample_blocks + 1 = {}",
                self.channels.len(),
                self.hr_downsample_blocks + 1
            )));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::invalid("channel widths must be positive"));
        }
        if self.lr_blocks == 0 || self.joint_blocks == 0 {
            return Err(Error::invalid("lr_blocks and joint_blocks must be positive"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::invalid("leaky slope must be in [0, 1)"));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::invalid("init_scale must be positive"));
        }
        Ok(())
    }
}
