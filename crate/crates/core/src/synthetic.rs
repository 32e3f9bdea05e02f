//! Paired LR/HR datasets with analytically known conditional distributions.
//!
//! Three kinds are provided: unimodal fields with noncentral chi-square
//! marginals, bimodal Gaussian-mixture fields, and heterogeneity-weighted
//! topography fields. All share the same recipe: a deterministic surface plus
//! a stationary Gaussian field with per-axis linear correlation taper, squared.
//! Because the pre-squaring marginals are known in closed form, generated
//! ensembles can be verified against exact CDFs downstream.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FieldGrid, PairedSample};
use crate::spectral;

/// Per-axis scale/reflection of the coordinate grid: x_n = a1 + n(a2-a1)/H.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct AxisWarp {
    pub a1: i8,
    pub a2: i8,
    pub b1: i8,
    pub b2: i8,
}

impl AxisWarp {
    pub fn new(a1: i8, a2: i8, b1: i8, b2: i8) -> Result<Self> {
        for v in [a1, a2, b1, b2] {
            if !(-1..=1).contains(&v) {
                return Err(Error::invalid(format!("warp parameter {v} outside {{-1,0,1}}")));
            }
        }
        if a1 == a2 || b1 == b2 {
            return Err(Error::invalid("warp requires a1 != a2 and b1 != b2"));
        }
        Ok(Self { a1, a2, b1, b2 })
    }

    /// x coordinates along the row axis: a1 + n(a2-a1)/n_points, n in 0..n_points.
    pub fn x_coords(&self, n_points: usize) -> Vec<f64> {
        let (a1, a2) = (self.a1 as f64, self.a2 as f64);
        (0..n_points).map(|n| a1 + n as f64 * (a2 - a1) / n_points as f64).collect()
    }

    /// y coordinates along the column axis.
    pub fn y_coords(&self, n_points: usize) -> Vec<f64> {
        let (b1, b2) = (self.b1 as f64, self.b2 as f64);
        (0..n_points).map(|n| b1 + n as f64 * (b2 - b1) / n_points as f64).collect()
    }

    pub fn as_array(&self) -> [i8; 4] {
        [self.a1, self.a2, self.b1, self.b2]
    }
}

/// Draws a warp uniformly over the 36 valid (a1,a2,b1,b2) tuples.
pub fn draw_axis_warp(rng: &mut impl Rng) -> AxisWarp {
    let pair = |rng: &mut dyn rand::RngCore| loop {
        let p = rng.random_range(-1i8..=1);
        let q = rng.random_range(-1i8..=1);
        if p != q {
            return (p, q);
        }
    };
    let (a1, a2) = pair(rng);
    let (b1, b2) = pair(rng);
    AxisWarp { a1, a2, b1, b2 }
}

/// Stationary Gaussian-field spec: correlation decreasing linearly to zero
/// over `taper_length` pixels along each axis, pointwise variance `variance`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CovarianceSpec {
    pub taper_length: f64,
    pub variance: f64,
}

impl CovarianceSpec {
    pub fn new(taper_length: f64, variance: f64) -> Result<Self> {
        if !(taper_length > 0.0) {
            return Err(Error::invalid("taper_length must be positive"));
        }
        // The boxcar kernel reproduces the linear taper exactly only for
        // integer lengths; fractional tapers have no such kernel.
        if (taper_length - taper_length.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "taper_length {taper_length} must be a whole number of pixels"
            )));
        }
        if !(variance > 0.0) {
            return Err(Error::invalid("variance must be positive"));
        }
        Ok(Self { taper_length, variance })
    }

    fn taper_pixels(&self) -> usize {
        self.taper_length.round() as usize
    }
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        Self { taper_length: 4.0, variance: 1.0 }
    }
}

/// Bernoulli mixture between a mean-`mean_hi` and a mean-`mean_lo` Gaussian
/// component, one draw per field.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MixtureSpec {
    pub p: f64,
    pub mean_hi: f64,
    pub mean_lo: f64,
}

impl MixtureSpec {
    pub fn new(p: f64, mean_hi: f64, mean_lo: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("mixture probability {p} outside [0,1]")));
        }
        Ok(Self { p, mean_hi, mean_lo })
    }
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self { p: 0.35, mean_hi: 5.0, mean_lo: 1.0 }
    }
}

/// Topography-weighted spec: r = (w·Z + Y)² with Z standardized.
#[derive(Debug, Clone)]
pub struct HeterogeneitySpec {
    weight: f64,
    topography: FieldGrid,
}

pub const HETERO_WEIGHTS: [f64; 3] = [0.1, 1.0, 10.0];

impl HeterogeneitySpec {
    /// Accepts only the studied weights {0.1, 1, 10}; other values need
    /// `with_override`. The topography must already be standardized.
    pub fn new(weight: f64, topography: FieldGrid) -> Result<Self> {
        if !HETERO_WEIGHTS.iter().any(|&w| (w - weight).abs() < 1e-12) {
            return Err(Error::invalid(format!(
                "heterogeneity weight {weight} not in {{0.1, 1, 10}}; use with_override to force"
            )));
        }
        Self::with_override(weight, topography)
    }

    /// Accepts any finite weight; still requires standardized topography.
    pub fn with_override(weight: f64, topography: FieldGrid) -> Result<Self> {
        if !weight.is_finite() {
            return Err(Error::NonFinite("heterogeneity weight".into()));
        }
        if !topography.is_standardized(1e-6) {
            return Err(Error::invalid(
                "topography must be standardized to mean 0 +/- 1e-6, variance 1 +/- 1e-6",
            ));
        }
        Ok(Self { weight, topography })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn topography(&self) -> &FieldGrid {
        &self.topography
    }
}

/// Samples a zero-mean Gaussian field whose correlation tapers linearly to
/// zero over `taper_length` pixels per axis (separable), with the requested
/// pointwise variance. Realized by convolving white noise with a boxcar of
/// length L per axis — the kernel whose autocorrelation is the linear taper —
/// then rescaling.
pub fn sample_gaussian_field(
    cov: &CovarianceSpec,
    shape: (usize, usize),
    rng: &mut impl Rng,
) -> Result<FieldGrid> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("field shape must be positive"));
    }
    let taper = cov.taper_pixels();
    if taper >= h.min(w) {
        return Err(Error::invalid(format!(
            "taper_length {taper} must be smaller than min(H, W) = {}",
            h.min(w)
        )));
    }

    let (ph, pw) = (h + taper - 1, w + taper - 1);
    let mut white = Array2::<f64>::zeros((ph, pw));
    for v in white.iter_mut() {
        *v = StandardNormal.sample(rng);
    }

    // Valid boxcar sums along rows then columns, normalized so the pointwise
    // variance is exact: each axis contributes a factor L to the variance.
    let mut rowsum = Array2::<f64>::zeros((ph, w));
    for i in 0..ph {
        let mut acc = 0.0;
        for j in 0..taper {
            acc += white[(i, j)];
        }
        rowsum[(i, 0)] = acc;
        for j in 1..w {
            acc += white[(i, j + taper - 1)] - white[(i, j - 1)];
            rowsum[(i, j)] = acc;
        }
    }
    let scale = cov.variance.sqrt() / taper as f64;
    let mut out = Array2::<f64>::zeros((h, w));
    for j in 0..w {
        let mut acc = 0.0;
        for i in 0..taper {
            acc += rowsum[(i, j)];
        }
        out[(0, j)] = acc * scale;
        for i in 1..h {
            acc += rowsum[(i + taper - 1, j)] - rowsum[(i - 1, j)];
            out[(i, j)] = acc * scale;
        }
    }
    FieldGrid::new(out)
}

/// Deterministic warped surface m_ij = 5·exp(x_i) / (1 + exp(-8·y_j)).
pub fn mean_surface(warp: &AxisWarp, shape: (usize, usize)) -> Result<FieldGrid> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("surface shape must be positive"));
    }
    let xs = warp.x_coords(h);
    let ys = warp.y_coords(w);
    FieldGrid::from_fn(h, w, |i, j| 5.0 * xs[i].exp() / (1.0 + (-8.0 * ys[j]).exp()))
}

/// r = (m + Y)², Y a zero-mean unit-variance tapered Gaussian field. Pointwise
/// marginals are noncentral chi-square(1, m²).
pub fn synth_unimodal(
    warp: &AxisWarp,
    cov: &CovarianceSpec,
    shape: (usize, usize),
    rng: &mut impl Rng,
) -> Result<FieldGrid> {
    let m = mean_surface(warp, shape)?;
    let y = sample_gaussian_field(cov, shape, rng)?;
    let r = m.values() + y.values();
    FieldGrid::new(r.mapv(|s| s * s))
}

/// Bimodal variant: s = m + (G + mean_hi) with probability p, else
/// s = m + (G + mean_lo); one mode draw per field; r = s². Returns the field
/// together with the drawn mode (true = mean_hi component).
pub fn synth_bimodal_with_mode(
    warp: &AxisWarp,
    cov: &CovarianceSpec,
    mix: &MixtureSpec,
    shape: (usize, usize),
    rng: &mut impl Rng,
) -> Result<(FieldGrid, bool)> {
    let m = mean_surface(warp, shape)?;
    // Gaussian field first so the delta = 0 branch consumes the stream exactly
    // like the unimodal generator.
    let g = sample_gaussian_field(cov, shape, rng)?;
    let hi = rng.random_bool(mix.p);
    let shift = if hi { mix.mean_hi } else { mix.mean_lo };
    let s = m.values() + g.values() + shift;
    Ok((FieldGrid::new(s.mapv(|v| v * v))?, hi))
}

pub fn synth_bimodal(
    warp: &AxisWarp,
    cov: &CovarianceSpec,
    mix: &MixtureSpec,
    shape: (usize, usize),
    rng: &mut impl Rng,
) -> Result<FieldGrid> {
    synth_bimodal_with_mode(warp, cov, mix, shape, rng).map(|(f, _)| f)
}

/// Heterogeneity variant: r = (w·Z + Y)².
pub fn synth_hetero(
    het: &HeterogeneitySpec,
    cov: &CovarianceSpec,
    rng: &mut impl Rng,
) -> Result<FieldGrid> {
    let shape = het.topography().shape();
    let y = sample_gaussian_field(cov, shape, rng)?;
    let w = het.weight();
    let s = het.topography().values().mapv(|z| w * z) + y.values();
    FieldGrid::new(s.mapv(|v| v * v))
}

/// Synthetic fractal terrain via spectral synthesis: white noise filtered to a
/// power-law |k|^(-beta/2) amplitude spectrum, standardized. The default stand-in
/// for real topography in the heterogeneity experiment.
pub fn fractal_terrain(shape: (usize, usize), beta: f64, rng: &mut impl Rng) -> Result<FieldGrid> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("terrain shape must be positive"));
    }
    let mut white = Array2::<f64>::zeros((h, w));
    for v in white.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let mut spec = spectral::fft2d(&white);
    for i in 0..h {
        for j in 0..w {
            let kx = spectral::signed_freq(i, h) as f64;
            let ky = spectral::signed_freq(j, w) as f64;
            let k = (kx * kx + ky * ky).sqrt();
            let amp = if k == 0.0 { 0.0 } else { k.powf(-beta / 2.0) };
            spec[(i, j)] *= amp;
        }
    }
    let real = spectral::ifft2d_real(&spec);
    FieldGrid::new(real)?.standardize()
}

/// Which synthetic family a dataset draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Unimodal,
    Bimodal,
    Hetero,
}

impl SynthKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthKind::Unimodal => "unimodal",
            SynthKind::Bimodal => "bimodal",
            SynthKind::Hetero => "hetero",
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unimodal" => Ok(SynthKind::Unimodal),
            "bimodal" => Ok(SynthKind::Bimodal),
            "hetero" => Ok(SynthKind::Hetero),
            other => Err(Error::invalid(format!("unknown synthetic kind '{other}'"))),
        }
    }
}

/// Full recipe for a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub hr_shape: (usize, usize),
    pub factor: usize,
    pub cov: CovarianceSpec,
    pub mix: MixtureSpec,
    /// Required for `SynthKind::Hetero`.
    pub hetero: Option<HeterogeneitySpec>,
    /// Attach the topography as an HR covariate on hetero datasets.
    pub topo_covariate: bool,
}

impl SynthConfig {
    pub fn new(kind: SynthKind) -> Self {
        Self {
            kind,
            hr_shape: (128, 128),
            factor: 8,
            cov: CovarianceSpec::default(),
            mix: MixtureSpec::default(),
            hetero: None,
            topo_covariate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.hr_shape;
        if h == 0 || w == 0 || h % self.factor != 0 || w % self.factor != 0 {
            return Err(Error::invalid(format!(
                "HR shape {h}x{w} must be positive and divisible by factor {}",
                self.factor
            )));
        }
        if self.kind == SynthKind::Hetero {
            match &self.hetero {
                Some(het) => {
                    if het.topography().shape() != self.hr_shape {
                        return Err(Error::shape(format!(
                            "topography shape {:?} differs from HR shape {:?}",
                            het.topography().shape(),
                            self.hr_shape
                        )));
                    }
                }
                None => return Err(Error::invalid("hetero dataset requires a HeterogeneitySpec")),
            }
        }
        Ok(())
    }

    fn draw_field(&self, warp: &AxisWarp, rng: &mut impl Rng) -> Result<FieldGrid> {
        match self.kind {
            SynthKind::Unimodal => synth_unimodal(warp, &self.cov, self.hr_shape, rng),
            SynthKind::Bimodal => synth_bimodal(warp, &self.cov, &self.mix, self.hr_shape, rng),
            SynthKind::Hetero => synth_hetero(self.hetero.as_ref().expect("validated"), &self.cov, rng),
        }
    }
}

/// A generated dataset split: samples plus the provenance needed to reproduce it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: SynthKind,
    pub seed: u64,
    pub factor: usize,
    pub samples: Vec<PairedSample>,
    /// One warp per sample for unimodal/bimodal; empty for hetero.
    pub warps: Vec<AxisWarp>,
}

fn sample_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates n independent (warp, field) pairs; LR is the block mean of HR.
/// Deterministic for a fixed seed regardless of thread count.
pub fn make_dataset(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    cfg.validate()?;
    let drawn: Vec<(Option<AxisWarp>, PairedSample)> = (0..n as u64)
        .into_par_iter()
        .map(|i| -> Result<(Option<AxisWarp>, PairedSample)> {
            let mut rng = sample_rng(seed, i);
            let warp = match cfg.kind {
                SynthKind::Hetero => None,
                _ => Some(draw_axis_warp(&mut rng)),
            };
            let default_warp = AxisWarp { a1: -1, a2: 1, b1: -1, b2: 1 };
            let hr = cfg.draw_field(warp.as_ref().unwrap_or(&default_warp), &mut rng)?;
            let lr = hr.coarsen(cfg.factor)?;
            let hr_covariates = match (&cfg.kind, cfg.topo_covariate) {
                (SynthKind::Hetero, true) => {
                    vec![cfg.hetero.as_ref().expect("validated").topography().clone()]
                }
                _ => vec![],
            };
            Ok((warp, PairedSample { lr: vec![lr], hr_covariates, hr_target: vec![hr] }))
        })
        .collect::<Result<_>>()?;

    let mut warps = Vec::new();
    let mut samples = Vec::with_capacity(n);
    for (warp, sample) in drawn {
        if let Some(w) = warp {
            warps.push(w);
        }
        samples.push(sample);
    }
    Ok(Dataset { kind: cfg.kind, seed, factor: cfg.factor, samples, warps })
}

/// How the shared LR conditioning field of a fixed-warp ensemble is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConditioningSource {
    /// Coarsen the square of the noise-free mean surface (the default).
    MeanSurfaceSquare,
    /// Coarsen one designated member.
    Member(usize),
}

/// A truth ensemble: n HR fields sharing one warp, differing only in the
/// stochastic field, plus the single LR conditioning stack they share.
#[derive(Debug, Clone)]
pub struct ConditionalEnsemble {
    pub kind: SynthKind,
    pub warp: AxisWarp,
    pub seed: u64,
    pub lr: Vec<FieldGrid>,
    pub hr_covariates: Vec<FieldGrid>,
    pub members: Vec<FieldGrid>,
}

/// Exposes the per-sample stream derivation for callers that generate truth
/// fields outside `make_dataset` (e.g. tests replaying a single sample).
pub fn dataset_sample_rng(seed: u64, index: u64) -> ChaCha12Rng {
    sample_rng(seed, index)
}

/// Draws `n` truth realisations for one fixed conditioning pattern.
pub fn make_conditional_ensemble(
    warp: &AxisWarp,
    cfg: &SynthConfig,
    n: usize,
    seed: u64,
    source: ConditioningSource,
) -> Result<ConditionalEnsemble> {
    if n == 0 {
        return Err(Error::invalid("ensemble size must be positive"));
    }
    cfg.validate()?;
    let members: Vec<FieldGrid> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            cfg.draw_field(warp, &mut rng)
        })
        .collect::<Result<_>>()?;

    let noise_free = match cfg.kind {
        SynthKind::Hetero => {
            let het = cfg.hetero.as_ref().expect("validated");
            let w = het.weight();
            FieldGrid::new(het.topography().values().mapv(|z| (w * z) * (w * z)))?
        }
        _ => {
            let m = mean_surface(warp, cfg.hr_shape)?;
            FieldGrid::new(m.values().mapv(|v| v * v))?
        }
    };
    let lr_field = match source {
        ConditioningSource::MeanSurfaceSquare => noise_free.coarsen(cfg.factor)?,
        ConditioningSource::Member(idx) => members
            .get(idx)
            .ok_or_else(|| Error::invalid(format!("designated member {idx} out of range")))?
            .coarsen(cfg.factor)?,
    };
    let hr_covariates = match (&cfg.kind, cfg.topo_covariate) {
        (SynthKind::Hetero, true) => vec![cfg.hetero.as_ref().expect("validated").topography().clone()],
        _ => vec![],
    };
    Ok(ConditionalEnsemble {
        kind: cfg.kind,
        warp: *warp,
        seed,
        lr: vec![lr_field],
        hr_covariates,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ContinuousCDF, Normal};
    use std::collections::HashMap;

    use crate::evaluation::ks_one_sample;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn warp_validation() {
        assert!(AxisWarp::new(-1, 1, 0, 1).is_ok());
        assert!(AxisWarp::new(1, 1, 0, 1).is_err());
        assert!(AxisWarp::new(0, 1, -1, -1).is_err());
        assert!(AxisWarp::new(2, 1, 0, 1).is_err());
    }

    #[test]
    fn warp_draws_are_uniform_over_36_tuples() {
        let mut r = rng(7);
        let n = 20_000;
        let mut counts: HashMap<[i8; 4], usize> = HashMap::new();
        for _ in 0..n {
            let w = draw_axis_warp(&mut r);
            assert_ne!(w.a1, w.a2);
            assert_ne!(w.b1, w.b2);
            *counts.entry(w.as_array()).or_default() += 1;
        }
        // independent oracle: enumerate the valid tuples directly
        let mut valid = 0;
        for a1 in -1i8..=1 {
            for a2 in -1i8..=1 {
                for b1 in -1i8..=1 {
                    for b2 in -1i8..=1 {
                        if a1 != a2 && b1 != b2 {
                            valid += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(valid, 36);
        assert_eq!(counts.len(), 36);
        for (_, c) in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 1.0 / 36.0).abs() < 0.01, "tuple frequency {freq}");
        }
    }

    #[test]
    fn warp_coordinates_span() {
        // warp (-1, 1, -1, 1): x covers [-1, 1) in 128 equal steps
        let w = AxisWarp::new(-1, 1, -1, 1).unwrap();
        let xs = w.x_coords(128);
        assert_eq!(xs.len(), 128);
        assert_eq!(xs[0], -1.0);
        assert_abs_diff_eq!(xs[127], 1.0 - 2.0 / 128.0, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[1] - xs[0], 2.0 / 128.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_surface_scalar_oracle() {
        // direct evaluation of 5 e^x / (1 + e^(-8y))
        let surface = |x: f64, y: f64| 5.0 * x.exp() / (1.0 + (-8.0 * y).exp());

        // x = 1, y = 1 via warp starting at 1
        let w = AxisWarp::new(1, 0, 1, 0).unwrap();
        let m = mean_surface(&w, (4, 4)).unwrap();
        assert_abs_diff_eq!(m.values()[(0, 0)], surface(1.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m.values()[(0, 0)], 13.5869, epsilon = 1e-3);

        // x = 0, y = 0 gives the sigmoid midpoint 2.5
        let w0 = AxisWarp::new(0, 1, 0, 1).unwrap();
        let m0 = mean_surface(&w0, (8, 8)).unwrap();
        assert_eq!(m0.values()[(0, 0)], 2.5);

        // y = 1 vs y = -1 at x = 0: ratio (1 + e^8) / (1 + e^-8)
        let wp = AxisWarp::new(0, 1, 1, 0).unwrap();
        let wn = AxisWarp::new(0, 1, -1, 0).unwrap();
        let ratio = mean_surface(&wp, (4, 4)).unwrap().values()[(0, 0)]
            / mean_surface(&wn, (4, 4)).unwrap().values()[(0, 0)];
        let expected = (1.0 + 8f64.exp()) / (1.0 + (-8f64).exp());
        assert_abs_diff_eq!(ratio, expected, epsilon = 1e-10);
    }

    #[test]
    fn covariance_spec_validation() {
        assert!(CovarianceSpec::new(4.0, 1.0).is_ok());
        assert!(CovarianceSpec::new(0.0, 1.0).is_err());
        assert!(CovarianceSpec::new(4.5, 1.0).is_err());
        assert!(CovarianceSpec::new(4.0, 0.0).is_err());
        let cov = CovarianceSpec::new(40.0, 1.0).unwrap();
        assert!(sample_gaussian_field(&cov, (32, 32), &mut rng(1)).is_err());
    }

    #[test]
    fn gaussian_field_variance_and_taper() {
        // Monte Carlo oracle at the paper scale: 10000 fields of 128x128,
        // taper 4, pixel (64,64).
        let cov = CovarianceSpec::new(4.0, 1.0).unwrap();
        let n = 10_000u64;
        let fields: Vec<FieldGrid> = (0..n)
            .into_par_iter()
            .map(|i| sample_gaussian_field(&cov, (128, 128), &mut sample_rng(99, i)).unwrap())
            .collect();

        let at = |f: &FieldGrid, i: usize, j: usize| f.values()[(i, j)];
        let mean = fields.iter().map(|f| at(f, 64, 64)).sum::<f64>() / n as f64;
        let var = fields.iter().map(|f| (at(f, 64, 64) - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "pixel mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "pixel variance {var}");

        // correlation at lag 5 along both axes decays fully (rho(d>=4) = 0)
        for (di, dj) in [(5usize, 0usize), (0, 5)] {
            let corr = fields
                .iter()
                .map(|f| at(f, 64, 64) * at(f, 64 + di, 64 + dj))
                .sum::<f64>()
                / n as f64;
            assert!(corr.abs() < 0.05, "lag-5 correlation {corr}");
        }
        // positive control: lag 2 should sit near 1 - 2/4 = 0.5
        let corr2 = fields.iter().map(|f| at(f, 64, 64) * at(f, 66, 64)).sum::<f64>() / n as f64;
        assert!((corr2 - 0.5).abs() < 0.05, "lag-2 correlation {corr2}");
    }

    #[test]
    fn gaussian_field_taper_one_is_white() {
        let cov = CovarianceSpec::new(1.0, 1.0).unwrap();
        let n = 6000u64;
        let corr = (0..n)
            .into_par_iter()
            .map(|i| {
                let f = sample_gaussian_field(&cov, (16, 16), &mut sample_rng(5, i)).unwrap();
                f.values()[(8, 8)] * f.values()[(9, 8)]
            })
            .sum::<f64>()
            / n as f64;
        assert!(corr.abs() < 0.05, "neighbor correlation {corr}");
    }

    #[test]
    fn gaussian_field_respects_variance_parameter() {
        let cov = CovarianceSpec::new(2.0, 4.0).unwrap();
        let n = 6000u64;
        let var = (0..n)
            .into_par_iter()
            .map(|i| {
                let f = sample_gaussian_field(&cov, (16, 16), &mut sample_rng(6, i)).unwrap();
                f.values()[(8, 8)].powi(2)
            })
            .sum::<f64>()
            / n as f64;
        assert!((var - 4.0).abs() < 0.3, "pixel variance {var}");
    }

    /// CDF of r = (m + Y)^2 with Y standard normal: the scaled noncentral
    /// chi-square(1, m^2) law, expressed through the normal CDF.
    fn unimodal_cdf(m: f64) -> impl Fn(f64) -> f64 {
        let normal = Normal::new(0.0, 1.0).unwrap();
        move |x: f64| {
            if x <= 0.0 {
                0.0
            } else {
                let s = x.sqrt();
                normal.cdf(s - m) - normal.cdf(-s - m)
            }
        }
    }

    #[test]
    fn unimodal_nonnegative_and_mean_oracle() {
        let cov = CovarianceSpec::default();
        let warp = AxisWarp::new(0, 1, 0, 1).unwrap();
        let shape = (32, 32);
        let n = 10_000u64;
        let fields: Vec<FieldGrid> = (0..n)
            .into_par_iter()
            .map(|i| synth_unimodal(&warp, &cov, shape, &mut sample_rng(42, i)).unwrap())
            .collect();
        assert!(fields.iter().all(|f| f.as_slice().iter().all(|&v| v >= 0.0)));

        let m = mean_surface(&warp, shape).unwrap();
        for (i, j) in [(16usize, 16usize), (4, 27)] {
            let expected = m.values()[(i, j)].powi(2) + 1.0;
            let got = fields.iter().map(|f| f.values()[(i, j)]).sum::<f64>() / n as f64;
            assert!(
                (got - expected).abs() < 0.03 * expected,
                "pixel ({i},{j}): mean {got} vs m^2+1 = {expected}"
            );
        }

        // marginal matches the noncentral chi-square CDF
        for (i, j) in [(16usize, 16usize), (25, 9)] {
            let sample: Vec<f64> = fields.iter().map(|f| f.values()[(i, j)]).collect();
            let d = ks_one_sample(&sample, unimodal_cdf(m.values()[(i, j)])).unwrap();
            assert!(d < 0.03, "pixel ({i},{j}): KS D = {d}");
        }
    }

    #[test]
    fn bimodal_mixing_fraction_and_marginal() {
        let cov = CovarianceSpec::default();
        let mix = MixtureSpec::default();
        let warp = AxisWarp::new(0, 1, 0, 1).unwrap();
        let shape = (16, 16);
        let n = 10_000u64;
        let results: Vec<(FieldGrid, bool)> = (0..n)
            .into_par_iter()
            .map(|i| synth_bimodal_with_mode(&warp, &cov, &mix, shape, &mut sample_rng(30, i)).unwrap())
            .collect();
        let frac = results.iter().filter(|(_, hi)| *hi).count() as f64 / n as f64;
        assert!((frac - 0.35).abs() < 0.01, "mixing fraction {frac}");

        // marginal of r against the two-component mixture law
        let m = mean_surface(&warp, shape).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (i, j) = (8usize, 8usize);
        let mu_hi = m.values()[(i, j)] + mix.mean_hi;
        let mu_lo = m.values()[(i, j)] + mix.mean_lo;
        let cdf = |x: f64| {
            if x <= 0.0 {
                0.0
            } else {
                let s = x.sqrt();
                mix.p * (normal.cdf(s - mu_hi) - normal.cdf(-s - mu_hi))
                    + (1.0 - mix.p) * (normal.cdf(s - mu_lo) - normal.cdf(-s - mu_lo))
            }
        };
        let sample: Vec<f64> = results.iter().map(|(f, _)| f.values()[(i, j)]).collect();
        let d = ks_one_sample(&sample, cdf).unwrap();
        assert!(d < 0.03, "mixture KS D = {d}");
    }

    #[test]
    fn bimodal_low_branch_matches_unimodal_stream() {
        // With mean_lo forced to 0 and p = 0 the delta = 0 branch reduces to
        // X^0 Y^1 = Y: bit-identical to the unimodal generator under a shared
        // seed. (With the default mean_lo = 1 the branch is offset by the
        // constant 1 in s.)
        let cov = CovarianceSpec::default();
        let warp = AxisWarp::new(-1, 0, 0, 1).unwrap();
        let mix = MixtureSpec::new(0.0, 5.0, 0.0).unwrap();
        let a = synth_unimodal(&warp, &cov, (16, 16), &mut rng(77)).unwrap();
        let (b, hi) = synth_bimodal_with_mode(&warp, &cov, &mix, (16, 16), &mut rng(77)).unwrap();
        assert!(!hi);
        assert_eq!(a, b);
    }

    #[test]
    fn hetero_weights_and_means() {
        let z = fractal_terrain((16, 16), 2.0, &mut rng(3)).unwrap();
        assert!(HeterogeneitySpec::new(0.5, z.clone()).is_err());
        for w in HETERO_WEIGHTS {
            assert!(HeterogeneitySpec::new(w, z.clone()).is_ok());
        }
        // unstandardized topography is rejected
        let raw = FieldGrid::from_fn(16, 16, |i, j| (i + j) as f64).unwrap();
        assert!(HeterogeneitySpec::new(1.0, raw).is_err());

        // w = 10: pixel mean approaches 100 Z^2 + 1
        let cov = CovarianceSpec::default();
        let het = HeterogeneitySpec::new(10.0, z.clone()).unwrap();
        let n = 10_000u64;
        let het_ref = &het;
        let cov_ref = &cov;
        let fields: Vec<FieldGrid> = (0..n)
            .into_par_iter()
            .map(move |i| synth_hetero(het_ref, cov_ref, &mut sample_rng(8, i)).unwrap())
            .collect();
        for (i, j) in [(0usize, 0usize), (7, 11), (15, 3)] {
            let expected = 100.0 * z.values()[(i, j)].powi(2) + 1.0;
            let got = fields.iter().map(|f| f.values()[(i, j)]).sum::<f64>() / n as f64;
            assert!(
                (got - expected).abs() < 0.03 * expected,
                "pixel ({i},{j}): mean {got} vs {expected}"
            );
        }
    }

    #[test]
    fn hetero_weight_zero_is_central_chisquare() {
        let z = fractal_terrain((8, 8), 2.0, &mut rng(4)).unwrap();
        let het = HeterogeneitySpec::with_override(0.0, z).unwrap();
        let cov = CovarianceSpec::default();
        let het_ref = &het;
        let cov_ref = &cov;
        let sample: Vec<f64> = (0..6000u64)
            .into_par_iter()
            .map(move |i| synth_hetero(het_ref, cov_ref, &mut sample_rng(9, i)).unwrap().values()[(4, 4)])
            .collect();
        let d = ks_one_sample(&sample, unimodal_cdf(0.0)).unwrap();
        assert!(d < 0.03, "chi-square(1) KS D = {d}");
    }

    #[test]
    fn dataset_determinism_and_shapes() {
        let mut cfg = SynthConfig::new(SynthKind::Unimodal);
        cfg.hr_shape = (32, 32);
        cfg.factor = 8;
        let a = make_dataset(&cfg, 8, 123).unwrap();
        let b = make_dataset(&cfg, 8, 123).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.hr_target[0], sb.hr_target[0]);
            assert_eq!(sa.lr[0], sb.lr[0]);
        }
        assert_eq!(a.warps, b.warps);

        let c = make_dataset(&cfg, 8, 124).unwrap();
        assert_ne!(a.samples[0].hr_target[0], c.samples[0].hr_target[0]);

        // LR is the exact block mean of HR
        let s = &a.samples[0];
        assert_eq!(s.lr[0], s.hr_target[0].coarsen(8).unwrap());
        s.validate(8).unwrap();
        assert!(s.hr_covariates.is_empty());
        assert_eq!(a.warps.len(), 8);

        assert!(make_dataset(&cfg, 0, 1).is_err());
    }

    #[test]
    fn dataset_paper_split_sizes() {
        let mut cfg = SynthConfig::new(SynthKind::Unimodal);
        cfg.hr_shape = (16, 16);
        cfg.factor = 8;
        let train = make_dataset(&cfg, 5000, 1).unwrap();
        let test = make_dataset(&cfg, 2000, 2).unwrap();
        assert_eq!(train.samples.len(), 5000);
        assert_eq!(test.samples.len(), 2000);
    }

    #[test]
    fn hetero_dataset_carries_topography() {
        let z = fractal_terrain((16, 16), 2.0, &mut rng(6)).unwrap();
        let mut cfg = SynthConfig::new(SynthKind::Hetero);
        cfg.hr_shape = (16, 16);
        cfg.factor = 4;
        cfg.hetero = Some(HeterogeneitySpec::new(1.0, z.clone()).unwrap());
        let d = make_dataset(&cfg, 3, 5).unwrap();
        assert!(d.warps.is_empty());
        assert_eq!(d.samples[0].hr_covariates.len(), 1);
        assert_eq!(d.samples[0].hr_covariates[0], z);
    }

    #[test]
    fn conditional_ensemble_contract() {
        let mut cfg = SynthConfig::new(SynthKind::Unimodal);
        cfg.hr_shape = (32, 32);
        cfg.factor = 8;
        let warp = AxisWarp::new(0, 1, -1, 1).unwrap();
        let n = 2000;
        let ens =
            make_conditional_ensemble(&warp, &cfg, n, 55, ConditioningSource::MeanSurfaceSquare).unwrap();
        assert_eq!(ens.members.len(), n);
        assert_eq!(ens.warp, warp);

        // conditioning field is the coarsened square of the mean surface
        let m = mean_surface(&warp, (32, 32)).unwrap();
        let msq = FieldGrid::new(m.values().mapv(|v| v * v)).unwrap();
        assert_eq!(ens.lr[0], msq.coarsen(8).unwrap());

        // pixelwise sample mean approaches m^2 + 1
        for (i, j) in [(16usize, 16usize), (5, 20)] {
            let expected = m.values()[(i, j)].powi(2) + 1.0;
            let got = ens.members.iter().map(|f| f.values()[(i, j)]).sum::<f64>() / n as f64;
            assert!(
                (got - expected).abs() < 0.05 * expected,
                "pixel ({i},{j}): {got} vs {expected}"
            );
        }

        // member-designated conditioning
        let ens2 = make_conditional_ensemble(&warp, &cfg, 4, 55, ConditioningSource::Member(2)).unwrap();
        assert_eq!(ens2.lr[0], ens2.members[2].coarsen(8).unwrap());
        assert!(make_conditional_ensemble(&warp, &cfg, 4, 55, ConditioningSource::Member(9)).is_err());
    }

    #[test]
    fn fractal_terrain_is_standardized() {
        let z = fractal_terrain((64, 64), 2.0, &mut rng(11)).unwrap();
        assert!(z.is_standardized(1e-6));
        let z2 = fractal_terrain((64, 64), 2.0, &mut rng(11)).unwrap();
        assert_eq!(z, z2);
    }
}
