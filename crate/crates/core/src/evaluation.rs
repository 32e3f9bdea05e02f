//! Verification metrics: two-sample KS maps, rank histograms (pixelwise and
//! spatial-extreme quantile variants), radially averaged spectral power, and
//! per-pixel marginal statistics of the full distribution.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::field::FieldGrid;
use crate::spectral;

/// Exact two-sample Kolmogorov-Smirnov statistic: sup |Ĝ(x) - T̂(x)| swept
/// over the pooled sorted values.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS needs two nonempty samples"));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite values"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite values"));
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        if diff > d {
            d = diff;
        }
    }
    Ok(d)
}

/// One-sample KS against an analytic CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::invalid("KS needs a nonempty sample"));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite values"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(d)
}

/// Per-pixel KS statistics between two ensembles.
#[derive(Debug, Clone)]
pub struct KsMap {
    pub stats: Array2<f64>,
}

impl KsMap {
    /// 0.25 / 0.5 / 0.75 quantiles of the per-pixel statistics, for
    /// violin-style summaries.
    pub fn quartiles(&self) -> [f64; 3] {
        let mut v: Vec<f64> = self.stats.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("KS stats are finite"));
        [
            quantile_type7(&v, 0.25),
            quantile_type7(&v, 0.5),
            quantile_type7(&v, 0.75),
        ]
    }

    pub fn median(&self) -> f64 {
        self.quartiles()[1]
    }
}

/// KS at each pixel across ensemble members. Both ensembles need at least two
/// members and identical field shapes.
pub fn pixelwise_ks(generated: &[FieldGrid], truth: &[FieldGrid]) -> Result<KsMap> {
    if generated.len() < 2 || truth.len() < 2 {
        return Err(Error::invalid("pixelwise KS needs >= 2 members per ensemble"));
    }
    let shape = generated[0].shape();
    for f in generated.iter().chain(truth) {
        if f.shape() != shape {
            return Err(Error::shape("ensemble member shapes differ"));
        }
    }
    let (h, w) = shape;
    let stats: Vec<f64> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let g: Vec<f64> = generated.iter().map(|f| f.as_slice()[idx]).collect();
            let t: Vec<f64> = truth.iter().map(|f| f.as_slice()[idx]).collect();
            ks_two_sample(&g, &t)
        })
        .collect::<Result<_>>()?;
    Ok(KsMap { stats: Array2::from_shape_vec((h, w), stats).expect("length h*w") })
}

/// Counts of the truth's rank among N ensemble members (N+1 bins).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankHistogram {
    pub counts: Vec<u64>,
    pub members: usize,
}

impl RankHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Cumulative distribution over rank bins; nondecreasing, ends at 1.
    pub fn cdf(&self) -> Vec<f64> {
        let total = self.total() as f64;
        let mut acc = 0u64;
        self.counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / total
            })
            .collect()
    }

    /// Chi-square statistic against the uniform histogram.
    pub fn chi2_statistic(&self) -> f64 {
        let bins = self.counts.len() as f64;
        let expected = self.total() as f64 / bins;
        self.counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum()
    }

    /// P-value of the chi-square uniformity test (dof = bins - 1).
    pub fn chi2_pvalue(&self) -> f64 {
        let dof = (self.counts.len() - 1) as f64;
        let dist = ChiSquared::new(dof).expect("positive dof");
        1.0 - dist.cdf(self.chi2_statistic())
    }

    pub fn passes_uniformity(&self, alpha: f64) -> bool {
        self.chi2_pvalue() > alpha
    }

    /// Accumulates another histogram over the same member count (streaming
    /// evaluation adds per-sample histograms).
    pub fn merge(&mut self, other: &RankHistogram) -> Result<()> {
        if self.members != other.members || self.counts.len() != other.counts.len() {
            return Err(Error::invalid("cannot merge rank histograms with different member counts"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Max absolute deviation of the rank CDF from the uniform CDF — the
    /// headline calibration number (chi-square over all pixels is inflated by
    /// spatial correlation).
    pub fn max_cdf_deviation(&self) -> f64 {
        let bins = self.counts.len() as f64;
        self.cdf()
            .iter()
            .enumerate()
            .map(|(i, &c)| (c - (i + 1) as f64 / bins).abs())
            .fold(0.0, f64::max)
    }
}

fn rank_with_ties(truth: f64, members: &[f64], rng: &mut impl Rng) -> usize {
    let below = members.iter().filter(|&&g| g < truth).count();
    let ties = members.iter().filter(|&&g| g == truth).count();
    if ties == 0 {
        below
    } else {
        below + rng.random_range(0..=ties)
    }
}

/// Pixelwise rank histogram: for every pixel of every conditioning field, the
/// rank of the truth value among the N member values, ties split uniformly.
pub fn rank_histogram(
    truths: &[FieldGrid],
    ensembles: &[Vec<FieldGrid>],
    rng: &mut impl Rng,
) -> Result<RankHistogram> {
    if truths.is_empty() || truths.len() != ensembles.len() {
        return Err(Error::invalid(format!(
            "need matching truth/ensemble counts, got {} vs {}",
            truths.len(),
            ensembles.len()
        )));
    }
    let n = ensembles[0].len();
    if n == 0 {
        return Err(Error::invalid("ensembles must have at least one member"));
    }
    let mut counts = vec![0u64; n + 1];
    let mut column = vec![0.0; n];
    for (truth, ens) in truths.iter().zip(ensembles) {
        if ens.len() != n {
            return Err(Error::invalid("ensembles have differing member counts"));
        }
        let shape = truth.shape();
        for m in ens {
            if m.shape() != shape {
                return Err(Error::shape("member shape differs from truth"));
            }
        }
        let t = truth.as_slice();
        for idx in 0..t.len() {
            for (k, m) in ens.iter().enumerate() {
                column[k] = m.as_slice()[idx];
            }
            counts[rank_with_ties(t[idx], &column, rng)] += 1;
        }
    }
    Ok(RankHistogram { counts, members: n })
}

/// Spatial-extreme variant: per conditioning field, the q-quantile across all
/// pixels of the truth is ranked among the members' q-quantiles.
pub fn quantile_rank_histogram(
    truths: &[FieldGrid],
    ensembles: &[Vec<FieldGrid>],
    q: f64,
    rng: &mut impl Rng,
) -> Result<RankHistogram> {
    if !(0.0 < q && q < 1.0) {
        return Err(Error::invalid(format!("quantile {q} outside (0,1)")));
    }
    if truths.is_empty() || truths.len() != ensembles.len() {
        return Err(Error::invalid("need matching truth/ensemble counts"));
    }
    let n = ensembles[0].len();
    if n == 0 {
        return Err(Error::invalid("ensembles must have at least one member"));
    }
    let field_quantile = |f: &FieldGrid| {
        let mut v = f.as_slice().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        quantile_type7(&v, q)
    };
    let mut counts = vec![0u64; n + 1];
    for (truth, ens) in truths.iter().zip(ensembles) {
        if ens.len() != n {
            return Err(Error::invalid("ensembles have differing member counts"));
        }
        let tq = field_quantile(truth);
        let mq: Vec<f64> = ens.par_iter().map(field_quantile).collect();
        counts[rank_with_ties(tq, &mq, rng)] += 1;
    }
    Ok(RankHistogram { counts, members: n })
}

/// Linear interpolation of order statistics (type 7). Input must be sorted.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Whether RASP bins hold squared magnitudes (power) or magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralConvention {
    Power,
    Amplitude,
}

#[derive(Debug, Clone, Copy)]
pub struct RaspConfig {
    pub convention: SpectralConvention,
    /// Apply a Hann window before the transform (for non-periodic real data).
    pub hann_window: bool,
}

impl Default for RaspConfig {
    fn default() -> Self {
        Self { convention: SpectralConvention::Power, hann_window: false }
    }
}

/// Radially averaged spectrum: per-wavenumber-ring mean across fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumProfile {
    /// Integer ring centers 0, 1, 2, ...
    pub bins: Vec<f64>,
    /// Mean within-ring average per field, averaged across fields.
    pub mean: Vec<f64>,
    /// Standard deviation across fields of the within-ring average.
    pub sd: Vec<f64>,
    /// Number of spectral cells in each ring.
    pub ring_cells: Vec<usize>,
    pub fields: usize,
    pub field_shape: (usize, usize),
    pub convention: SpectralConvention,
}

/// Ring totals (sums, not means) for one field — the Parseval-consistent
/// decomposition: the per-field ring sums add up to the field's total power.
pub fn ring_power_sums(field: &FieldGrid, cfg: &RaspConfig) -> Vec<f64> {
    let (h, w) = field.shape();
    let data = apply_window(field, cfg.hann_window);
    let spec = spectral::fft2d(&data);
    let n_bins = max_ring(h, w) + 1;
    let mut sums = vec![0.0; n_bins];
    for i in 0..h {
        for j in 0..w {
            let ring = spectral::radial_wavenumber(i, j, h, w).round() as usize;
            let mag2 = spec[(i, j)].norm_sqr();
            sums[ring] += match cfg.convention {
                SpectralConvention::Power => mag2,
                SpectralConvention::Amplitude => mag2.sqrt(),
            };
        }
    }
    sums
}

fn max_ring(h: usize, w: usize) -> usize {
    spectral::max_radial_wavenumber(h, w).round() as usize
}

fn apply_window(field: &FieldGrid, hann: bool) -> Array2<f64> {
    if !hann {
        return field.values().clone();
    }
    let (h, w) = field.shape();
    let wi: Vec<f64> = (0..h)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / h as f64).cos()))
        .collect();
    let wj: Vec<f64> = (0..w)
        .map(|j| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / w as f64).cos()))
        .collect();
    Array2::from_shape_fn((h, w), |(i, j)| field.values()[(i, j)] * wi[i] * wj[j])
}

fn ring_cell_counts(h: usize, w: usize) -> Vec<usize> {
    let mut cells = vec![0usize; max_ring(h, w) + 1];
    for i in 0..h {
        for j in 0..w {
            cells[spectral::radial_wavenumber(i, j, h, w).round() as usize] += 1;
        }
    }
    cells
}

/// 2-D transform per field, amplitudes binned into integer annular rings
/// centered at wavenumber zero; mean and SD taken across fields.
pub fn rasp(fields: &[FieldGrid], cfg: &RaspConfig) -> Result<SpectrumProfile> {
    let first = fields.first().ok_or_else(|| Error::invalid("RASP needs at least one field"))?;
    let (h, w) = first.shape();
    if fields.iter().any(|f| f.shape() != (h, w)) {
        return Err(Error::shape("RASP fields must share one shape"));
    }
    let cells = ring_cell_counts(h, w);
    let n_bins = cells.len();
    let per_field: Vec<Vec<f64>> = fields
        .par_iter()
        .map(|f| {
            let sums = ring_power_sums(f, cfg);
            sums.iter().zip(&cells).map(|(s, &c)| s / c as f64).collect()
        })
        .collect();
    let nf = fields.len() as f64;
    let mut mean = vec![0.0; n_bins];
    for prof in &per_field {
        for (m, v) in mean.iter_mut().zip(prof) {
            *m += v / nf;
        }
    }
    let mut sd = vec![0.0; n_bins];
    if fields.len() > 1 {
        for prof in &per_field {
            for ((s, v), m) in sd.iter_mut().zip(prof).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in sd.iter_mut() {
            *s = (*s / (nf - 1.0)).sqrt();
        }
    }
    Ok(SpectrumProfile {
        bins: (0..n_bins).map(|k| k as f64).collect(),
        mean,
        sd,
        ring_cells: cells,
        fields: fields.len(),
        field_shape: (h, w),
        convention: cfg.convention,
    })
}

/// Generated-over-truth amplitude ratio per ring; 1 means matched power.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioProfile {
    pub bins: Vec<f64>,
    /// `None` where the truth amplitude is zero (bin undefined).
    pub ratio: Vec<Option<f64>>,
    /// Relative spread band: (generated sd) / truth mean, per defined bin.
    pub band: Vec<Option<f64>>,
    /// Reference wavenumber corresponding to the LR pixel size, for plotting.
    pub lr_reference_wavenumber: Option<f64>,
}

/// Standardizes a generated spectrum by the truth spectrum bin-by-bin.
pub fn rasp_standardized(
    generated: &SpectrumProfile,
    truth: &SpectrumProfile,
    lr_factor: Option<usize>,
) -> Result<RatioProfile> {
    if generated.bins != truth.bins {
        return Err(Error::shape("spectrum profiles have different binning"));
    }
    if generated.convention != truth.convention {
        return Err(Error::invalid("spectrum profiles use different conventions"));
    }
    let ratio: Vec<Option<f64>> = generated
        .mean
        .iter()
        .zip(&truth.mean)
        .map(|(&g, &t)| if t == 0.0 { None } else { Some(g / t) })
        .collect();
    let band: Vec<Option<f64>> = generated
        .sd
        .iter()
        .zip(&truth.mean)
        .map(|(&s, &t)| if t == 0.0 { None } else { Some(s / t) })
        .collect();
    let lr_reference_wavenumber =
        lr_factor.map(|f| spectral::lr_reference_wavenumber(generated.field_shape.0, f));
    Ok(RatioProfile { bins: generated.bins.clone(), ratio, band, lr_reference_wavenumber })
}

/// Mean ratio over defined bins — a scalar summary used in smoke checks.
impl RatioProfile {
    pub fn defined(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.bins
            .iter()
            .zip(&self.ratio)
            .filter_map(|(&b, r)| r.map(|v| (b, v)))
    }
}

/// Per-pixel summary maps of a field set.
#[derive(Debug, Clone)]
pub struct StatMaps {
    pub median: Array2<f64>,
    pub iqr: Array2<f64>,
    /// Requested quantile maps, in the order given.
    pub quantiles: Vec<(f64, Array2<f64>)>,
}

/// Default quantiles reported alongside median and IQR: 99.9th, 99.99th and
/// 0.01st percentiles.
pub const DEFAULT_STAT_QUANTILES: [f64; 3] = [0.999, 0.9999, 0.0001];

/// Per-pixel median, IQR, and requested quantiles across a field set.
pub fn marginal_stats(fields: &[FieldGrid], quantiles: &[f64]) -> Result<StatMaps> {
    let first = fields.first().ok_or_else(|| Error::invalid("marginal stats need fields"))?;
    let (h, w) = first.shape();
    if fields.iter().any(|f| f.shape() != (h, w)) {
        return Err(Error::shape("fields must share one shape"));
    }
    for &q in quantiles {
        if !(0.0 < q && q < 1.0) {
            return Err(Error::invalid(format!("quantile {q} outside (0,1)")));
        }
    }
    let n_pix = h * w;
    let rows: Vec<Vec<f64>> = (0..n_pix)
        .into_par_iter()
        .map(|idx| {
            let mut v: Vec<f64> = fields.iter().map(|f| f.as_slice()[idx]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            let mut out = Vec::with_capacity(quantiles.len() + 3);
            out.push(quantile_type7(&v, 0.5));
            out.push(quantile_type7(&v, 0.75) - quantile_type7(&v, 0.25));
            for &q in quantiles {
                out.push(quantile_type7(&v, q));
            }
            out
        })
        .collect();
    let collect_map = |k: usize| {
        Array2::from_shape_vec((h, w), rows.iter().map(|r| r[k]).collect()).expect("length h*w")
    };
    Ok(StatMaps {
        median: collect_map(0),
        iqr: collect_map(1),
        quantiles: quantiles.iter().enumerate().map(|(k, &q)| (q, collect_map(k + 2))).collect(),
    })
}

/// Pairwise difference maps (truth - model) for matching stat maps.
pub fn difference_maps(truth: &StatMaps, model: &StatMaps) -> Result<StatMaps> {
    if truth.median.dim() != model.median.dim() || truth.quantiles.len() != model.quantiles.len() {
        return Err(Error::shape("stat maps do not match"));
    }
    Ok(StatMaps {
        median: &truth.median - &model.median,
        iqr: &truth.iqr - &model.iqr,
        quantiles: truth
            .quantiles
            .iter()
            .zip(&model.quantiles)
            .map(|((q, t), (_, m))| (*q, t - m))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ks_trivial_cases() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[0.0], &[1.0]).unwrap(), 1.0);
        // frozen from the brute-force sweep below
        assert_abs_diff_eq!(
            ks_two_sample(&[0.0, 1.0, 2.0], &[0.0, 1.0, 5.0]).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    /// Brute force: evaluate |F_a - F_b| at every pooled breakpoint.
    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        pooled.sort_by(|p, q| p.partial_cmp(q).unwrap());
        pooled
            .iter()
            .map(|&v| {
                let fa = a.iter().filter(|&&x| x <= v).count() as f64 / a.len() as f64;
                let fb = b.iter().filter(|&&x| x <= v).count() as f64 / b.len() as f64;
                (fa - fb).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_matches_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..300 {
            use rand::Rng;
            let n = rng.random_range(1..=50);
            let m = rng.random_range(1..=50);
            // draw from a small lattice so ties are common
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 * 0.5).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..20) as f64 * 0.5).collect();
            assert_eq!(ks_two_sample(&a, &b).unwrap(), ks_brute(&a, &b));
        }
    }

    #[test]
    fn ks_symmetric_and_monotone_invariant() {
        let a = [0.3, 1.4, -2.0, 0.7, 0.7];
        let b = [0.1, 0.2, 2.5];
        let d1 = ks_two_sample(&a, &b).unwrap();
        let d2 = ks_two_sample(&b, &a).unwrap();
        assert_eq!(d1, d2);
        // strictly monotone transform applied to both samples
        let f = |x: f64| (x * 0.5).exp();
        let at: Vec<f64> = a.iter().map(|&x| f(x)).collect();
        let bt: Vec<f64> = b.iter().map(|&x| f(x)).collect();
        assert_eq!(ks_two_sample(&at, &bt).unwrap(), d1);
    }

    #[test]
    fn ks_one_sample_uniform() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d < 1e-3, "D = {d}");
    }

    fn gaussian_field(h: usize, w: usize, sigma: f64, rng: &mut ChaCha12Rng) -> FieldGrid {
        FieldGrid::from_fn(h, w, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * sigma
        })
        .unwrap()
    }

    #[test]
    fn pixelwise_ks_zero_for_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let ens: Vec<FieldGrid> = (0..4).map(|_| gaussian_field(3, 3, 1.0, &mut rng)).collect();
        let map = pixelwise_ks(&ens, &ens).unwrap();
        assert!(map.stats.iter().all(|&d| d == 0.0));
        assert!(map.stats.iter().all(|&d| (0.0..=1.0).contains(&d)));
    }

    #[test]
    fn pixelwise_ks_null_median_below_critical() {
        // Monte Carlo null for the two-sample KS at n = m = 500: the 95th
        // percentile is about 0.086. Two same-distribution ensembles should
        // produce a median pixel statistic well under it.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 500;
        let gen: Vec<FieldGrid> = (0..n).map(|_| gaussian_field(4, 4, 1.0, &mut rng)).collect();
        let truth: Vec<FieldGrid> = (0..n).map(|_| gaussian_field(4, 4, 1.0, &mut rng)).collect();
        let map = pixelwise_ks(&gen, &truth).unwrap();

        let mut null_ds: Vec<f64> = (0..400)
            .map(|_| {
                let a: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let b: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                ks_two_sample(&a, &b).unwrap()
            })
            .collect();
        null_ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let crit = quantile_type7(&null_ds, 0.95);
        assert!((0.07..0.11).contains(&crit), "null 95th percentile {crit}");
        assert!(map.median() < crit, "median {} vs critical {crit}", map.median());
    }

    #[test]
    fn rank_histogram_all_low() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let truth = vec![FieldGrid::constant(2, 2, -10.0).unwrap()];
        let ens = vec![(0..5).map(|k| FieldGrid::constant(2, 2, k as f64).unwrap()).collect::<Vec<_>>()];
        let h = rank_histogram(&truth, &ens, &mut rng).unwrap();
        assert_eq!(h.counts[0], 4);
        assert_eq!(h.total(), 4);
        assert_eq!(h.counts.len(), 6);
    }

    #[test]
    fn rank_histogram_counts_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let k = 3;
        let truths: Vec<FieldGrid> = (0..k).map(|_| gaussian_field(4, 5, 1.0, &mut rng)).collect();
        let ens: Vec<Vec<FieldGrid>> = (0..k)
            .map(|_| (0..7).map(|_| gaussian_field(4, 5, 1.0, &mut rng)).collect())
            .collect();
        let h = rank_histogram(&truths, &ens, &mut rng).unwrap();
        assert_eq!(h.total(), (k * 4 * 5) as u64);
        let cdf = h.cdf();
        assert!(cdf.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        assert_abs_diff_eq!(*cdf.last().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_histogram_uniform_for_calibrated_toy() {
        // members and truth i.i.d. => every rank equally likely
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let n_members = 96;
        let k = 30;
        let truths: Vec<FieldGrid> = (0..k).map(|_| gaussian_field(16, 16, 1.0, &mut rng)).collect();
        let ens: Vec<Vec<FieldGrid>> = (0..k)
            .map(|_| (0..n_members).map(|_| gaussian_field(16, 16, 1.0, &mut rng)).collect())
            .collect();
        let h = rank_histogram(&truths, &ens, &mut rng).unwrap();
        assert!(h.passes_uniformity(0.01), "p = {}", h.chi2_pvalue());
        assert!(h.max_cdf_deviation() < 0.05);
    }

    #[test]
    fn rank_histogram_ties_stay_uniform() {
        // degenerate ensemble identical to truth: randomized tie-splitting
        // keeps the histogram spread over all bins
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let n_members = 9;
        let truths: Vec<FieldGrid> = (0..40).map(|_| FieldGrid::constant(8, 8, 1.5).unwrap()).collect();
        let ens: Vec<Vec<FieldGrid>> = (0..40)
            .map(|_| (0..n_members).map(|_| FieldGrid::constant(8, 8, 1.5).unwrap()).collect())
            .collect();
        let h = rank_histogram(&truths, &ens, &mut rng).unwrap();
        assert!(h.passes_uniformity(0.01), "p = {}", h.chi2_pvalue());
    }

    #[test]
    fn quantile_rank_histogram_counts_and_uniformity() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let k = 400;
        let n_members = 19;
        let truths: Vec<FieldGrid> = (0..k).map(|_| gaussian_field(8, 8, 1.0, &mut rng)).collect();
        let ens: Vec<Vec<FieldGrid>> = (0..k)
            .map(|_| (0..n_members).map(|_| gaussian_field(8, 8, 1.0, &mut rng)).collect())
            .collect();
        let h = quantile_rank_histogram(&truths, &ens, 0.5, &mut rng).unwrap();
        assert_eq!(h.total(), k as u64);
        assert!(h.passes_uniformity(0.01), "p = {}", h.chi2_pvalue());
        assert!(quantile_rank_histogram(&truths, &ens, 1.5, &mut rng).is_err());
    }

    #[test]
    fn quantile_type7_matches_known_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type7(&v, 0.5), 2.5);
        assert_eq!(quantile_type7(&v, 0.25), 1.75);
        assert_eq!(quantile_type7(&v, 1.0), 4.0);
    }

    #[test]
    fn rasp_constant_field_all_dc() {
        let fields: Vec<FieldGrid> = (0..3).map(|_| FieldGrid::constant(16, 16, 2.0).unwrap()).collect();
        let p = rasp(&fields, &RaspConfig::default()).unwrap();
        assert!(p.mean[0] > 0.0);
        assert!(p.mean[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rasp_sinusoid_dominant_bin() {
        let n = 32;
        let k0 = 6.0;
        let f = FieldGrid::from_fn(n, n, |i, _| {
            (2.0 * std::f64::consts::PI * k0 * i as f64 / n as f64).sin()
        })
        .unwrap();
        let p = rasp(&[f], &RaspConfig::default()).unwrap();
        let max_bin = p
            .mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(max_bin, k0 as usize);
    }

    #[test]
    fn rasp_parseval_consistent() {
        let f = FieldGrid::from_fn(24, 24, |i, j| ((i * 31 + j * 7) % 11) as f64 - 5.0).unwrap();
        let sums = ring_power_sums(&f, &RaspConfig::default());
        let total: f64 = sums.iter().sum();
        let spatial: f64 = f.as_slice().iter().map(|v| v * v).sum::<f64>() * (24.0 * 24.0);
        let rel = (total - spatial).abs() / spatial;
        assert!(rel < 1e-6, "relative Parseval error {rel}");
    }

    #[test]
    fn rasp_standardized_self_is_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let fields: Vec<FieldGrid> = (0..5).map(|_| gaussian_field(16, 16, 1.0, &mut rng)).collect();
        let p = rasp(&fields, &RaspConfig::default()).unwrap();
        let r = rasp_standardized(&p, &p, Some(8)).unwrap();
        for (_, v) in r.defined() {
            assert_eq!(v, 1.0);
        }
        assert!(r.lr_reference_wavenumber.is_some());
    }

    #[test]
    fn rasp_standardized_scaling_law() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let fields: Vec<FieldGrid> = (0..5).map(|_| gaussian_field(16, 16, 1.0, &mut rng)).collect();
        let scaled: Vec<FieldGrid> =
            fields.iter().map(|f| FieldGrid::new(f.values().mapv(|v| 2.0 * v)).unwrap()).collect();
        let pt = rasp(&fields, &RaspConfig::default()).unwrap();
        let pg = rasp(&scaled, &RaspConfig::default()).unwrap();
        let r = rasp_standardized(&pg, &pt, None).unwrap();
        // power convention: amplitude scale 2 -> power ratio 4
        for (_, v) in r.defined() {
            assert_abs_diff_eq!(v, 4.0, epsilon = 1e-9);
        }
        // amplitude convention: ratio 2
        let cfg = RaspConfig { convention: SpectralConvention::Amplitude, hann_window: false };
        let r2 = rasp_standardized(&rasp(&scaled, &cfg).unwrap(), &rasp(&fields, &cfg).unwrap(), None).unwrap();
        for (_, v) in r2.defined() {
            assert_abs_diff_eq!(v, 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn marginal_stats_gaussian_iqr() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let sigma = 2.0;
        let fields: Vec<FieldGrid> = (0..60_000).map(|_| gaussian_field(2, 2, sigma, &mut rng)).collect();
        let stats = marginal_stats(&fields, &[0.9]).unwrap();
        // IQR of a normal is 1.34898 sigma
        for &v in stats.iqr.iter() {
            assert!((v - 1.34898 * sigma).abs() < 0.02 * 1.34898 * sigma, "IQR {v}");
        }
    }

    #[test]
    fn marginal_stats_monotone_in_quantile() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let fields: Vec<FieldGrid> = (0..50).map(|_| gaussian_field(5, 5, 1.0, &mut rng)).collect();
        let stats = marginal_stats(&fields, &[0.1, 0.5, 0.9]).unwrap();
        for idx in 0..25 {
            let q10 = stats.quantiles[0].1.as_slice().unwrap()[idx];
            let q50 = stats.quantiles[1].1.as_slice().unwrap()[idx];
            let q90 = stats.quantiles[2].1.as_slice().unwrap()[idx];
            assert!(q10 <= q50 && q50 <= q90);
        }
        assert!(marginal_stats(&fields, &[1.0]).is_err());
    }

    #[test]
    fn difference_maps_zero_for_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let fields: Vec<FieldGrid> = (0..20).map(|_| gaussian_field(4, 4, 1.0, &mut rng)).collect();
        let s = marginal_stats(&fields, &DEFAULT_STAT_QUANTILES).unwrap();
        let d = difference_maps(&s, &s).unwrap();
        assert!(d.median.iter().all(|&v| v == 0.0));
        assert!(d.iqr.iter().all(|&v| v == 0.0));
        assert!(d.quantiles.iter().all(|(_, m)| m.iter().all(|&v| v == 0.0)));
    }
}
