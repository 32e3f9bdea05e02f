//! Adversarial and content losses.
//!
//! The f64 functions here are the reference definitions every training-side
//! tensor mirror (see [`tensor`]) is tested against: Wasserstein critic and
//! generator losses, MAE, the closed-form empirical CRPS, the radial low-pass
//! used by frequency separation, and the regime dispatch for content losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldGrid, FieldStack};
use crate::spectral;

pub mod tensor;

/// Pixelwise content-loss flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ContentKind {
    Mae,
    Crps,
}

impl ContentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContentKind::Mae => "MAE",
            ContentKind::Crps => "CRPS",
        }
    }
}

/// How the generator's content loss sees the data: low frequencies of one
/// realisation, or an ensemble of stochastic realisations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainRegime {
    FrequencySeparation,
    StochasticSampling,
}

impl TrainRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainRegime::FrequencySeparation => "F",
            TrainRegime::StochasticSampling => "S",
        }
    }
}

/// Loss configuration shared by critic and generator updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    pub content_kind: ContentKind,
    pub regime: TrainRegime,
    /// Weight of the content term relative to unit adversarial weight.
    pub content_weight: f64,
    /// Frequency-separation cutoff; `None` means the LR-pixel-size wavenumber.
    pub cutoff_wavenumber: Option<f64>,
    /// Raised-cosine roll-off width; `None` is a hard cutoff.
    pub cutoff_taper: Option<f64>,
    pub ensemble_size: usize,
    pub gp_weight: f64,
    /// Fair (member-count debiased) CRPS instead of the plain empirical form.
    pub fair_crps: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            content_kind: ContentKind::Mae,
            regime: TrainRegime::FrequencySeparation,
            content_weight: 5.0,
            cutoff_wavenumber: None,
            cutoff_taper: None,
            ensemble_size: 6,
            gp_weight: 10.0,
            fair_crps: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.content_weight < 0.0 {
            return Err(Error::invalid("content_weight must be nonnegative"));
        }
        if self.gp_weight < 0.0 {
            return Err(Error::invalid("gp_weight must be nonnegative"));
        }
        if let Some(kc) = self.cutoff_wavenumber {
            if !(kc > 0.0) {
                return Err(Error::invalid("cutoff_wavenumber must be positive"));
            }
        }
        if self.content_kind == ContentKind::Crps {
            if self.regime != TrainRegime::StochasticSampling {
                return Err(Error::invalid(
                    "CRPS content loss requires the stochastic_sampling regime",
                ));
            }
            if self.ensemble_size < 2 {
                return Err(Error::invalid("CRPS requires ensemble_size >= 2"));
            }
        }
        if self.regime == TrainRegime::StochasticSampling && self.ensemble_size == 0 {
            return Err(Error::invalid("stochastic sampling requires ensemble_size >= 1"));
        }
        Ok(())
    }
}

/// Wasserstein critic loss: mean(fake) - mean(real) + gp_weight * gp_term.
pub fn critic_loss(real_scores: &[f64], fake_scores: &[f64], gp_term: f64, gp_weight: f64) -> Result<f64> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::invalid("critic loss needs nonempty score batches"));
    }
    if real_scores.len() != fake_scores.len() {
        return Err(Error::invalid("real and fake batches must have equal size"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(fake_scores) - mean(real_scores) + gp_weight * gp_term)
}

/// Generator adversarial loss: -mean(fake_scores).
pub fn generator_adversarial_loss(fake_scores: &[f64]) -> Result<f64> {
    if fake_scores.is_empty() {
        return Err(Error::invalid("adversarial loss needs a nonempty batch"));
    }
    Ok(-fake_scores.iter().sum::<f64>() / fake_scores.len() as f64)
}

/// Mean absolute error over all pixels and channels.
pub fn mae_content(pred: &FieldStack, truth: &FieldStack) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "stack sizes differ: pred {} vs truth {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if p.shape() != t.shape() {
            return Err(Error::shape(format!(
                "field shapes differ: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        for (a, b) in p.as_slice().iter().zip(t.as_slice()) {
            acc += (a - b).abs();
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Exact integral of (F_N(y) - H(y - x))^2 dy for the empirical CDF F_N:
/// (1/N)Σ|g_i - x| - (1/(2N²))ΣΣ|g_i - g_j|. Reduces to |g - x| at N = 1.
pub fn crps_empirical(ensemble: &[f64], truth: f64) -> Result<f64> {
    if ensemble.is_empty() {
        return Err(Error::invalid("CRPS needs a nonempty ensemble"));
    }
    let n = ensemble.len() as f64;
    let term1 = ensemble.iter().map(|g| (g - truth).abs()).sum::<f64>() / n;
    let spread = pairwise_abs_sum(ensemble);
    Ok(term1 - spread / (2.0 * n * n))
}

/// Fair CRPS: the ensemble-size-debiased estimator, spread term divided by
/// N(N-1) instead of N².
pub fn crps_empirical_fair(ensemble: &[f64], truth: f64) -> Result<f64> {
    let n = ensemble.len();
    if n < 2 {
        return Err(Error::invalid("fair CRPS needs at least 2 members"));
    }
    let nf = n as f64;
    let term1 = ensemble.iter().map(|g| (g - truth).abs()).sum::<f64>() / nf;
    let spread = pairwise_abs_sum(ensemble);
    Ok(term1 - spread / (2.0 * nf * (nf - 1.0)))
}

fn pairwise_abs_sum(values: &[f64]) -> f64 {
    // Σ_i Σ_j |v_i - v_j| over ordered pairs, via the sorted identity.
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut acc = 0.0;
    let mut prefix = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        acc += v * i as f64 - prefix;
        prefix += v;
    }
    2.0 * acc
}

/// Zeroes all 2-D Fourier coefficients with radial wavenumber above k_c and
/// transforms back. Conjugate symmetry is preserved, so the output is real.
pub fn low_pass(field: &FieldGrid, k_c: f64) -> Result<FieldGrid> {
    low_pass_with(field, k_c, None)
}

/// Low-pass with an optional raised-cosine roll-off of the given width.
pub fn low_pass_with(field: &FieldGrid, k_c: f64, taper_width: Option<f64>) -> Result<FieldGrid> {
    if !(k_c > 0.0) {
        return Err(Error::invalid("cutoff wavenumber must be positive"));
    }
    FieldGrid::new(spectral::lowpass_2d(field.values(), k_c, taper_width))
}

/// Regime dispatch for the content loss over one sample.
///
/// - frequency separation: MAE between low-passed single realisation and truth
/// - stochastic sampling + MAE: MAE between the ensemble pixel mean and truth
/// - stochastic sampling + CRPS: pixel mean of the empirical CRPS over members
pub fn content_loss(members: &[FieldStack], truth: &FieldStack, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if members.is_empty() {
        return Err(Error::invalid("content loss needs at least one realisation"));
    }
    match (cfg.regime, cfg.content_kind) {
        (TrainRegime::FrequencySeparation, ContentKind::Mae) => {
            if members.len() != 1 {
                return Err(Error::invalid(
                    "frequency separation takes exactly one realisation",
                ));
            }
            let (h, _) = truth
                .first()
                .ok_or_else(|| Error::invalid("empty truth stack"))?
                .shape();
            let w = truth[0].width();
            let k_c = cfg
                .cutoff_wavenumber
                .unwrap_or_else(|| spectral::max_radial_wavenumber(h, w));
            let pred: FieldStack = members[0]
                .iter()
                .map(|f| low_pass_with(f, k_c, cfg.cutoff_taper))
                .collect::<Result<_>>()?;
            let truth_lp: FieldStack = truth
                .iter()
                .map(|f| low_pass_with(f, k_c, cfg.cutoff_taper))
                .collect::<Result<_>>()?;
            mae_content(&pred, &truth_lp)
        }
        (TrainRegime::FrequencySeparation, ContentKind::Crps) => {
            Err(Error::invalid("CRPS cannot be applied to frequency separation"))
        }
        (TrainRegime::StochasticSampling, ContentKind::Mae) => {
            let mean = ensemble_mean(members)?;
            mae_content(&mean, truth)
        }
        (TrainRegime::StochasticSampling, ContentKind::Crps) => {
            if members.len() < 2 {
                return Err(Error::invalid("CRPS requires an ensemble of at least 2"));
            }
            crps_field_mean(members, truth, cfg.fair_crps)
        }
    }
}

/// Pixelwise mean across ensemble members.
pub fn ensemble_mean(members: &[FieldStack]) -> Result<FieldStack> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("empty ensemble"))?;
    let channels = first.len();
    let inv = 1.0 / members.len() as f64;
    let mut out = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut acc = first[c].values().clone();
        for m in &members[1..] {
            if m.len() != channels || m[c].shape() != first[c].shape() {
                return Err(Error::shape("ensemble member shapes differ"));
            }
            acc = acc + m[c].values();
        }
        out.push(FieldGrid::new(acc.mapv(|v| v * inv))?);
    }
    Ok(out)
}

fn crps_field_mean(members: &[FieldStack], truth: &FieldStack, fair: bool) -> Result<f64> {
    let channels = truth.len();
    if members.iter().any(|m| m.len() != channels) {
        return Err(Error::shape("member channel count differs from truth"));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut column = vec![0.0; members.len()];
    for c in 0..channels {
        let t = truth[c].as_slice();
        for (idx, &tv) in t.iter().enumerate() {
            for (k, m) in members.iter().enumerate() {
                column[k] = m[c].as_slice()[idx];
            }
            acc += if fair {
                crps_empirical_fair(&column, tv)?
            } else {
                crps_empirical(&column, tv)?
            };
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn grid(values: Vec<f64>, h: usize, w: usize) -> FieldGrid {
        FieldGrid::new(Array2::from_shape_vec((h, w), values).unwrap()).unwrap()
    }

    #[test]
    fn critic_loss_examples() {
        assert_eq!(critic_loss(&[1.0, 2.0], &[1.0, 2.0], 0.0, 10.0).unwrap(), 0.0);
        assert_eq!(critic_loss(&[1.0, 1.0], &[0.0, 0.0], 0.0, 10.0).unwrap(), -1.0);
        // gp_weight 10, gp_term 0.5 adds +5
        let base = critic_loss(&[1.0, 1.0], &[0.0, 0.0], 0.0, 10.0).unwrap();
        let with_gp = critic_loss(&[1.0, 1.0], &[0.0, 0.0], 0.5, 10.0).unwrap();
        assert_eq!(with_gp - base, 5.0);
    }

    #[test]
    fn critic_loss_monotone_in_fake_scores() {
        let a = critic_loss(&[0.3, -0.2], &[1.0, 2.0], 0.1, 10.0).unwrap();
        let b = critic_loss(&[0.3, -0.2], &[0.5, 1.5], 0.1, 10.0).unwrap();
        assert!(b < a);
    }

    #[test]
    fn adversarial_loss_examples() {
        assert_eq!(generator_adversarial_loss(&[0.0]).unwrap(), 0.0);
        assert_eq!(generator_adversarial_loss(&[2.0, 4.0]).unwrap(), -3.0);
        assert_eq!(
            generator_adversarial_loss(&[2.0, 4.0]).unwrap(),
            generator_adversarial_loss(&[4.0, 2.0]).unwrap()
        );
    }

    #[test]
    fn mae_examples() {
        let t = vec![grid(vec![1.0, 1.0], 1, 2)];
        assert_eq!(mae_content(&t, &t).unwrap(), 0.0);
        let p = vec![grid(vec![2.0, 2.0], 1, 2)];
        assert_eq!(mae_content(&p, &t).unwrap(), 1.0);
        let p2 = vec![grid(vec![0.0, 2.0], 1, 2)];
        assert_eq!(mae_content(&p2, &t).unwrap(), 1.0);
        let bad = vec![grid(vec![0.0; 4], 2, 2)];
        assert!(mae_content(&bad, &t).is_err());
    }

    /// Independent oracle: Eq-style numerical integration of the squared CDF
    /// distance. The integrand is piecewise constant between pooled
    /// breakpoints, so summing rectangles is exact.
    fn crps_by_integration(ensemble: &[f64], truth: f64) -> f64 {
        let mut points: Vec<f64> = ensemble.to_vec();
        points.push(truth);
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = ensemble.len() as f64;
        let mut acc = 0.0;
        for win in points.windows(2) {
            let (lo, hi) = (win[0], win[1]);
            if hi <= lo {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let f = ensemble.iter().filter(|&&g| g <= mid).count() as f64 / n;
            let hstep = if mid >= truth { 1.0 } else { 0.0 };
            acc += (f - hstep).powi(2) * (hi - lo);
        }
        acc
    }

    #[test]
    fn crps_examples() {
        // single member degenerates to absolute error
        assert_eq!(crps_empirical(&[3.0], 1.0).unwrap(), 2.0);
        // frozen from the integration oracle: {0,1} vs 0.5
        assert_eq!(crps_empirical(&[0.0, 1.0], 0.5).unwrap(), 0.25);
        assert_abs_diff_eq!(crps_by_integration(&[0.0, 1.0], 0.5), 0.25, epsilon = 1e-12);
        // perfect forecast
        assert_eq!(crps_empirical(&[0.7, 0.7, 0.7], 0.7).unwrap(), 0.0);
        assert!(crps_empirical(&[], 0.0).is_err());
    }

    #[test]
    fn crps_matches_integration_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=10);
            let ens: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let truth = rng.random_range(-6.0..6.0);
            let closed = crps_empirical(&ens, truth).unwrap();
            let integ = crps_by_integration(&ens, truth);
            assert_abs_diff_eq!(closed, integ, epsilon = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn crps_nonnegative_and_permutation_invariant(
            mut ens in proptest::collection::vec(-10.0f64..10.0, 1..8),
            truth in -12.0f64..12.0,
        ) {
            let a = crps_empirical(&ens, truth).unwrap();
            prop_assert!(a >= -1e-12);
            ens.reverse();
            let b = crps_empirical(&ens, truth).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn crps_zero_iff_degenerate_at_truth(
            ens in proptest::collection::vec(-10.0f64..10.0, 2..8),
            truth in -12.0f64..12.0,
        ) {
            let v = crps_empirical(&ens, truth).unwrap();
            let degenerate = ens.iter().all(|&g| g == truth);
            if degenerate {
                prop_assert!(v == 0.0);
            } else {
                prop_assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn fair_crps_relation() {
        let ens = [0.0, 1.0, 2.0];
        let truth = 0.4;
        let plain = crps_empirical(&ens, truth).unwrap();
        let fair = crps_empirical_fair(&ens, truth).unwrap();
        assert!(fair < plain);
        assert!(crps_empirical_fair(&[1.0], 0.0).is_err());
    }

    #[test]
    fn low_pass_constant_unchanged() {
        let f = FieldGrid::constant(16, 16, 2.5).unwrap();
        let lp = low_pass(&f, 2.0).unwrap();
        for (a, b) in lp.as_slice().iter().zip(f.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn low_pass_kills_high_sinusoid() {
        let n = 32;
        let k = 9.0; // above cutoff 4
        let f = FieldGrid::from_fn(n, n, |i, _| (2.0 * std::f64::consts::PI * k * i as f64 / n as f64).sin()).unwrap();
        let lp = low_pass(&f, 4.0).unwrap();
        let max = lp.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-6, "residual amplitude {max}");
    }

    #[test]
    fn low_pass_nyquist_is_identity() {
        let f = FieldGrid::from_fn(16, 16, |i, j| ((i * 17 + j * 5) % 13) as f64 - 6.0).unwrap();
        let kc = spectral::max_radial_wavenumber(16, 16);
        let lp = low_pass(&f, kc).unwrap();
        for (a, b) in lp.as_slice().iter().zip(f.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn low_pass_idempotent() {
        let f = FieldGrid::from_fn(24, 24, |i, j| ((i as f64).sin() + (j as f64 * 0.3).cos()) * 2.0).unwrap();
        let once = low_pass(&f, 5.0).unwrap();
        let twice = low_pass(&once, 5.0).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn content_loss_degenerate_collapses() {
        let truth = vec![grid(vec![1.0, 2.0, 3.0, 4.0], 2, 2)];
        let member = vec![grid(vec![1.5, 2.5, 2.5, 3.5], 2, 2)];
        let plain = mae_content(&member, &truth).unwrap();

        // identical members: S+MAE == plain MAE
        let cfg_mae = LossConfig {
            content_kind: ContentKind::Mae,
            regime: TrainRegime::StochasticSampling,
            ..Default::default()
        };
        let members = vec![member.clone(), member.clone(), member.clone()];
        assert_eq!(content_loss(&members, &truth, &cfg_mae).unwrap(), plain);

        // identical members: S+CRPS == plain MAE
        let cfg_crps = LossConfig {
            content_kind: ContentKind::Crps,
            regime: TrainRegime::StochasticSampling,
            ..Default::default()
        };
        let v = content_loss(&members, &truth, &cfg_crps).unwrap();
        assert_abs_diff_eq!(v, plain, epsilon = 1e-12);

        // F regime with Nyquist cutoff equals plain MAE
        let cfg_f = LossConfig {
            content_kind: ContentKind::Mae,
            regime: TrainRegime::FrequencySeparation,
            cutoff_wavenumber: Some(spectral::max_radial_wavenumber(2, 2)),
            ..Default::default()
        };
        let v = content_loss(&[member.clone()], &truth, &cfg_f).unwrap();
        assert_abs_diff_eq!(v, plain, epsilon = 1e-6);
    }

    #[test]
    fn content_loss_permutation_invariant() {
        let truth = vec![grid(vec![0.0, 0.5, 1.0, 1.5], 2, 2)];
        let a = vec![grid(vec![0.1, 0.2, 0.9, 1.2], 2, 2)];
        let b = vec![grid(vec![-0.3, 0.8, 1.4, 1.6], 2, 2)];
        let c = vec![grid(vec![0.4, 0.3, 0.8, 1.9], 2, 2)];
        let cfg = LossConfig {
            content_kind: ContentKind::Crps,
            regime: TrainRegime::StochasticSampling,
            ..Default::default()
        };
        let v1 = content_loss(&[a.clone(), b.clone(), c.clone()], &truth, &cfg).unwrap();
        let v2 = content_loss(&[c, a, b], &truth, &cfg).unwrap();
        assert_abs_diff_eq!(v1, v2, epsilon = 1e-12);
    }

    #[test]
    fn loss_config_validation() {
        let bad = LossConfig {
            content_kind: ContentKind::Crps,
            regime: TrainRegime::FrequencySeparation,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad2 = LossConfig {
            content_kind: ContentKind::Crps,
            regime: TrainRegime::StochasticSampling,
            ensemble_size: 1,
            ..Default::default()
        };
        assert!(bad2.validate().is_err());
    }
}
