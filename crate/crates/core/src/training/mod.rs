//! WGAN training orchestration: alternating critic/generator updates for the
//! F-class (frequency separation) and S-class (stochastic sampling) regimes,
//! step-indexed noise and batch streams for exact resumption, checkpointing,
//! and the model naming convention.

mod adam;
mod checkpoint;
mod data;

pub use adam::{Adam, AdamParams};
pub use checkpoint::{config_diff, config_hash, load_checkpoint, save_checkpoint};
pub use data::{fit_standardizer, tensor_to_fields, ChannelStats, Standardizer, TrainData};

use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation;
use crate::losses::{self, tensor as lt, ContentKind, LossConfig, TrainRegime};
use crate::network::{
    count_noise_layers, Critic, CriticConfig, Generator, GeneratorConfig, NoisePreset, NoiseSource,
    VarRegistry,
};

/// Channel/shape contract between a dataset and the networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSpec {
    pub lr_channels: usize,
    pub hr_cov_channels: usize,
    pub target_channels: usize,
    pub hr_shape: (usize, usize),
    pub factor: usize,
}

impl DataSpec {
    pub fn from_train_data(td: &TrainData, factor: usize) -> Result<Self> {
        let (lr_channels, hr_cov_channels, target_channels) = td.channels()?;
        Ok(Self { lr_channels, hr_cov_channels, target_channels, hr_shape: td.hr_shape()?, factor })
    }
}

/// Optimization schedule and bookkeeping cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub critic_steps_per_gen_step: usize,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub total_steps: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    pub snapshot_every: usize,
    pub val_every: usize,
    pub val_fields: usize,
    pub val_members: usize,
    /// Weight-clipping constant; the alternative Lipschitz mechanism when the
    /// gradient penalty is disabled.
    pub weight_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            critic_steps_per_gen_step: 5,
            lr_generator: 1e-4,
            lr_critic: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            total_steps: 0,
            ensemble_size: 6,
            seed: 0,
            snapshot_every: 1000,
            val_every: 1000,
            val_fields: 8,
            val_members: 32,
            weight_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.critic_steps_per_gen_step == 0 {
            return Err(Error::invalid("critic_steps_per_gen_step must be positive"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::invalid("ensemble_size must be positive"));
        }
        if !(self.lr_generator > 0.0) || !(self.lr_critic > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }
}

/// The full run description: data contract, architectures, losses, schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSpec,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub loss: LossConfig,
    pub schedule: TrainConfig,
    pub noise_preset: NoisePreset,
}

impl RunConfig {
    /// Resolves the noise preset into block counts and aligns the loss-side
    /// ensemble size with the schedule.
    pub fn normalize(&mut self) {
        self.generator.noise = self.noise_preset.resolve(
            self.generator.rrdb_lr,
            self.generator.rrdb_hr,
            self.generator.rrdb_fusion,
        );
        self.loss.ensemble_size = self.schedule.ensemble_size;
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.critic.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        if self.generator.upscale_factor != self.data.factor {
            return Err(Error::ConfigMismatch(format!(
                "generator upscale factor {} != data factor {}",
                self.generator.upscale_factor, self.data.factor
            )));
        }
        if (1usize << self.critic.hr_downsample_blocks) != self.data.factor {
            return Err(Error::ConfigMismatch(format!(
                "critic downsamples by 2^{} but the data factor is {}",
                self.critic.hr_downsample_blocks, self.data.factor
            )));
        }
        // Some Lipschitz mechanism must be active: gradient penalty or clipping.
        if self.loss.gp_weight == 0.0 && self.schedule.weight_clip.is_none() {
            return Err(Error::invalid(
                "unsupported configuration: gp_weight = 0 with weight clipping disabled leaves \
                 the critic unconstrained; set loss.gp_weight > 0 or schedule.weight_clip",
            ));
        }
        Ok(())
    }

    pub fn noise_layer_counts(&self) -> (usize, usize) {
        count_noise_layers(&self.generator)
    }
}

/// Renders the naming convention: regime `F`/`S`, noise tag subscript, content
/// loss superscript, e.g. `S_full^CRPS`.
pub fn model_name(regime: TrainRegime, preset: NoisePreset, content: ContentKind) -> String {
    format!("{}_{}^{}", regime.as_str(), preset.tag(), content.as_str())
}

pub fn parse_model_name(name: &str) -> Result<(TrainRegime, NoisePreset, ContentKind)> {
    let (head, content) = name
        .split_once('^')
        .ok_or_else(|| Error::invalid(format!("model name '{name}' lacks a ^content part")))?;
    let (regime, noise) = head
        .split_once('_')
        .ok_or_else(|| Error::invalid(format!("model name '{name}' lacks a _noise part")))?;
    let regime = match regime {
        "F" => TrainRegime::FrequencySeparation,
        "S" => TrainRegime::StochasticSampling,
        other => return Err(Error::invalid(format!("unknown regime '{other}'"))),
    };
    let content = match content {
        "MAE" => ContentKind::Mae,
        "CRPS" => ContentKind::Crps,
        other => return Err(Error::invalid(format!("unknown content loss '{other}'"))),
    };
    Ok((regime, noise.parse()?, content))
}

/// Scalars captured at each generator step.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub w_distance: f64,
    pub content: f64,
    pub val_ks_median: Option<f64>,
    pub val_rank_dev: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub w_distance: f64,
    pub content: f64,
    pub val_ks_median: Option<f64>,
    pub val_rank_dev: Option<f64>,
}

/// Mutable training state: both networks, their optimizers, and provenance.
pub struct TrainState {
    pub run: RunConfig,
    pub generator: Generator,
    pub g_reg: VarRegistry,
    pub critic: Critic,
    pub c_reg: VarRegistry,
    pub adam_g: Adam,
    pub adam_c: Adam,
    pub standardizer: Standardizer,
    pub step: usize,
    pub last_metrics: MetricsSnapshot,
}

// Seed-derivation domains so independent streams never collide.
const DOMAIN_INIT_G: u64 = 1;
const DOMAIN_INIT_C: u64 = 2;
const DOMAIN_BATCH: u64 = 3;
const DOMAIN_NOISE: u64 = 4;
const DOMAIN_GP: u64 = 5;
const DOMAIN_VAL: u64 = 6;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for (base seed, domain, index).
pub fn derive_seed(base: u64, domain: u64, index: u64) -> u64 {
    splitmix(base ^ splitmix(domain) ^ splitmix(index).rotate_left(17))
}

fn batch_indices(seed: u64, draw: u64, n: usize, batch: usize) -> Vec<u32> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, DOMAIN_BATCH, draw));
    (0..batch).map(|_| rng.random_range(0..n as u32)).collect()
}

impl TrainState {
    /// Fresh state from a normalized config (weights from the config seed).
    pub fn build(mut run: RunConfig, standardizer: Standardizer, device: &Device) -> Result<Self> {
        run.normalize();
        run.validate()?;
        let mut g_reg =
            VarRegistry::new(device, DType::F32, derive_seed(run.schedule.seed, DOMAIN_INIT_G, 0));
        let generator = Generator::new(
            &run.generator,
            run.data.lr_channels,
            run.data.hr_cov_channels,
            run.data.target_channels,
            &mut g_reg,
        )?;
        let mut c_reg =
            VarRegistry::new(device, DType::F32, derive_seed(run.schedule.seed, DOMAIN_INIT_C, 0));
        let critic = Critic::new(
            &run.critic,
            run.data.target_channels,
            run.data.lr_channels,
            run.data.hr_cov_channels,
            &mut c_reg,
        )?;
        let adam_g = Adam::new(AdamParams {
            lr: run.schedule.lr_generator,
            beta1: run.schedule.beta1,
            beta2: run.schedule.beta2,
            eps: 1e-8,
        });
        let adam_c = Adam::new(AdamParams {
            lr: run.schedule.lr_critic,
            beta1: run.schedule.beta1,
            beta2: run.schedule.beta2,
            eps: 1e-8,
        });
        Ok(Self {
            run,
            generator,
            g_reg,
            critic,
            c_reg,
            adam_g,
            adam_c,
            standardizer,
            step: 0,
            last_metrics: MetricsSnapshot::default(),
        })
    }

    pub fn model_name(&self) -> String {
        model_name(self.run.loss.regime, self.run.noise_preset, self.run.loss.content_kind)
    }

    fn device(&self) -> Device {
        self.g_reg.device().clone()
    }
}

#[derive(Debug, Clone)]
pub struct CriticStepLog {
    pub loss: f64,
    pub w_estimate: f64,
    pub gp_value: f64,
}

/// One critic update on a fresh batch: real scores vs scores of freshly
/// generated (detached) fakes plus the gradient penalty. Generator weights
/// are untouched.
pub fn critic_step(state: &mut TrainState, data: &TrainData, n_train: usize, draw: u64) -> Result<CriticStepLog> {
    let sched = state.run.schedule.clone();
    let idx = batch_indices(sched.seed, draw, n_train, sched.batch_size);
    let (lr, hr_cov, target) = data.batch(&idx)?;
    let device = state.device();

    let mut noise =
        NoiseSource::for_stream(derive_seed(sched.seed, DOMAIN_NOISE, draw), 0, &device, DType::F32);
    let fake = state.generator.forward(&lr, hr_cov.as_ref(), &mut noise)?.detach();

    let real_scores = state.critic.forward(&target, &lr, hr_cov.as_ref())?;
    let fake_scores = state.critic.forward(&fake, &lr, hr_cov.as_ref())?;

    let gp = if state.run.loss.gp_weight > 0.0 {
        let mut gp_rng = ChaCha12Rng::seed_from_u64(derive_seed(sched.seed, DOMAIN_GP, draw));
        Some(state.critic.gradient_penalty(&target, &fake, &lr, hr_cov.as_ref(), &mut gp_rng)?)
    } else {
        None
    };

    let loss_t = lt::critic_loss(
        &real_scores,
        &fake_scores,
        gp.as_ref().map(|g| &g.surrogate),
        state.run.loss.gp_weight,
    )?;
    let grads = loss_t.backward()?;
    state.adam_c.step(&state.c_reg, &grads)?;
    if let Some(c) = sched.weight_clip {
        Critic::clip_weights(&state.c_reg, c)?;
    }

    let real_mean = real_scores.mean_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let fake_mean = fake_scores.mean_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let gp_value = gp.as_ref().map(|g| g.value).unwrap_or(0.0);
    let loss = losses::critic_loss(&[real_mean], &[fake_mean], gp_value, state.run.loss.gp_weight)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("critic loss at draw {draw}")));
    }
    Ok(CriticStepLog { loss, w_estimate: real_mean - fake_mean, gp_value })
}

#[derive(Debug, Clone)]
pub struct GeneratorStepLog {
    pub adversarial: f64,
    pub content: f64,
}

/// One generator update. The S regime draws `ensemble_size` realisations per
/// sample (fresh noise each) and applies the configured content loss across
/// the ensemble; the F regime draws one realisation and low-passes the
/// content comparison. Critic weights are untouched.
pub fn generator_step(state: &mut TrainState, data: &TrainData, n_train: usize, draw: u64) -> Result<GeneratorStepLog> {
    let sched = state.run.schedule.clone();
    let loss_cfg = effective_loss_config(&state.run)?;
    let idx = batch_indices(sched.seed, draw, n_train, sched.batch_size);
    let (lr, hr_cov, target) = data.batch(&idx)?;
    let device = state.device();

    let e = match loss_cfg.regime {
        TrainRegime::StochasticSampling => sched.ensemble_size,
        TrainRegime::FrequencySeparation => 1,
    };
    let b = idx.len();
    let lr_rep = Tensor::cat(&vec![&lr; e], 0)?;
    let hr_rep = match &hr_cov {
        Some(t) => Some(Tensor::cat(&vec![t; e], 0)?),
        None => None,
    };

    let mut noise =
        NoiseSource::for_stream(derive_seed(sched.seed, DOMAIN_NOISE, draw), 0, &device, DType::F32);
    let fake_all = state.generator.forward(&lr_rep, hr_rep.as_ref(), &mut noise)?;
    let scores = state.critic.forward(&fake_all, &lr_rep, hr_rep.as_ref())?;
    let adv_t = lt::adversarial(&scores)?;

    let (_, c, h, w) = target.dims4()?;
    let members = fake_all.reshape((e, b, c, h, w))?.permute((1, 0, 2, 3, 4))?.contiguous()?;
    let content_t = lt::content_loss(&members, &target, &loss_cfg)?;

    let total = adv_t.add(&content_t.affine(loss_cfg.content_weight, 0.0)?)?;
    let grads = total.backward()?;
    state.adam_g.step(&state.g_reg, &grads)?;

    let adversarial = adv_t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let content = content_t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !adversarial.is_finite() || !content.is_finite() {
        return Err(Error::NonFinite(format!("generator loss at draw {draw}")));
    }
    Ok(GeneratorStepLog { adversarial, content })
}

/// The loss config with the frequency-separation default cutoff resolved to
/// the LR-pixel-size wavenumber of this run's grids.
pub fn effective_loss_config(run: &RunConfig) -> Result<LossConfig> {
    let mut cfg = run.loss.clone();
    if cfg.regime == TrainRegime::FrequencySeparation && cfg.cutoff_wavenumber.is_none() {
        cfg.cutoff_wavenumber = Some(crate::spectral::lr_reference_wavenumber(
            run.data.hr_shape.0,
            run.data.factor,
        ));
    }
    Ok(cfg)
}

/// n stochastic realisations for each conditioning sample in `lr`; member m
/// draws its noise from stream (seed, m) so results do not depend on how the
/// caller batches. Returns (B, n, C, H, W).
pub fn sample_ensemble(
    generator: &Generator,
    lr: &Tensor,
    hr_cov: Option<&Tensor>,
    members: usize,
    seed: u64,
    noise_off: bool,
) -> Result<Tensor> {
    if members == 0 {
        return Err(Error::invalid("ensemble needs at least one member"));
    }
    let device = lr.device();
    let mut outs = Vec::with_capacity(members);
    for m in 0..members {
        let mut noise = if noise_off {
            NoiseSource::zero(device, DType::F32)
        } else {
            NoiseSource::for_stream(seed, m as u64, device, DType::F32)
        };
        outs.push(generator.forward(lr, hr_cov, &mut noise)?.detach());
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    Ok(Tensor::stack(&refs, 1)?)
}

/// Validation snapshot: median pixelwise KS between held-out truths and the
/// pooled generated values, plus the max CDF deviation of the pooled rank
/// histogram (members per field from the step-indexed stream).
fn validation_snapshot(
    state: &TrainState,
    data: &TrainData,
    indices: &[u32],
    step: usize,
) -> Result<(f64, f64)> {
    let (lr, hr_cov, target) = data.batch(indices)?;
    let seed = derive_seed(state.run.schedule.seed, DOMAIN_VAL, step as u64);
    let members = sample_ensemble(
        &state.generator,
        &lr,
        hr_cov.as_ref(),
        state.run.schedule.val_members,
        seed,
        false,
    )?;

    let truths = tensor_to_fields(&target)?;
    let n_fields = truths.len();
    let m = state.run.schedule.val_members;
    let mut ensembles: Vec<Vec<crate::field::FieldGrid>> = Vec::with_capacity(n_fields);
    for f in 0..n_fields {
        let per_field = members.narrow(0, f, 1)?.squeeze(0)?; // (m, C, H, W)
        let fields = tensor_to_fields(&per_field)?;
        ensembles.push(fields.into_iter().map(|mut stack| stack.remove(0)).collect());
    }
    let truth_fields: Vec<crate::field::FieldGrid> =
        truths.into_iter().map(|mut stack| stack.remove(0)).collect();

    // pooled per-pixel KS: truth values across fields vs all generated values
    let (h, w) = truth_fields[0].shape();
    let mut ds = Vec::with_capacity(h * w);
    for idx in 0..h * w {
        let t: Vec<f64> = truth_fields.iter().map(|f| f.as_slice()[idx]).collect();
        let g: Vec<f64> = ensembles
            .iter()
            .flat_map(|ens| ens.iter().map(move |f| f.as_slice()[idx]))
            .collect();
        ds.push(evaluation::ks_two_sample(&t, &g)?);
    }
    ds.sort_by(|a, b| a.partial_cmp(b).expect("finite KS"));
    let ks_median = evaluation::quantile_type7(&ds, 0.5);

    let mut tie_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, DOMAIN_VAL, 1));
    let hist = evaluation::rank_histogram(&truth_fields, &ensembles, &mut tie_rng)?;
    let _ = m;
    Ok((ks_median, hist.max_cdf_deviation()))
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainReport {
    pub final_step: usize,
    pub metrics: Vec<MetricsRow>,
    pub last_checkpoint: PathBuf,
    pub model_name: String,
}

fn write_metrics_header(path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "step,w_distance,content,val_ks_median,val_rank_dev")?;
    Ok(())
}

fn append_metrics_row(path: &Path, row: &MetricsRow) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(
        f,
        "{},{},{},{},{}",
        row.step,
        row.w_distance,
        row.content,
        opt(&row.val_ks_median),
        opt(&row.val_rank_dev)
    )?;
    Ok(())
}

/// Keeps rows at or below `step` (resume truncation).
fn truncate_metrics(path: &Path, step: usize) -> Result<()> {
    if !path.exists() {
        return write_metrics_header(path);
    }
    let content = std::fs::read_to_string(path)?;
    let mut keep = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            keep.push(line.to_string());
            continue;
        }
        if let Some(first) = line.split(',').next() {
            if let Ok(s) = first.parse::<usize>() {
                if s <= step {
                    keep.push(line.to_string());
                }
            }
        }
    }
    std::fs::write(path, keep.join("\n") + "\n")?;
    Ok(())
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("checkpoint_{step:06}.ckpt"))
}

/// Runs (or resumes) a full training loop over `data`. Validation fields come
/// from `val` when given, otherwise from a tail holdout excluded from batches.
/// Emits periodic checkpoints and an append-only metrics CSV into `out_dir`.
pub fn train(
    run: &RunConfig,
    data: &TrainData,
    val: Option<&TrainData>,
    standardizer: &Standardizer,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut normalized = run.clone();
    normalized.normalize();
    normalized.validate()?;

    let device = Device::Cpu;
    let mut state = match resume {
        Some(path) => {
            let mut state = load_checkpoint(path, &device)?;
            // extending total_steps is what resuming is for; everything else
            // must match exactly
            let zero_steps = |mut r: RunConfig| {
                r.schedule.total_steps = 0;
                r
            };
            let want = config_hash(&zero_steps(normalized.clone()))?;
            let have = config_hash(&zero_steps(state.run.clone()))?;
            if want != have {
                let diff = config_diff(&normalized, &state.run)?;
                return Err(Error::ConfigMismatch(format!(
                    "resume config differs from checkpoint config:\n  {}",
                    diff.join("\n  ")
                )));
            }
            state.run.schedule.total_steps = normalized.schedule.total_steps;
            state
        }
        None => TrainState::build(normalized.clone(), standardizer.clone(), &device)?,
    };

    let sched = state.run.schedule.clone();
    let holdout = if val.is_none() && sched.val_every > 0 {
        sched.val_fields.min(data.n / 4)
    } else {
        0
    };
    let n_train = data.n - holdout;
    if n_train == 0 {
        return Err(Error::invalid("no training samples left after validation holdout"));
    }
    let val_indices: Vec<u32> = match val {
        Some(v) => (0..sched.val_fields.min(v.n) as u32).collect(),
        None => ((n_train as u32)..(n_train + holdout) as u32).collect(),
    };

    let metrics_path = out_dir.join("metrics.csv");
    truncate_metrics(&metrics_path, state.step)?;

    let mut last_ckpt = checkpoint_path(out_dir, state.step);
    if state.step == 0 {
        save_checkpoint(&last_ckpt, &state)?;
    }

    let k = sched.critic_steps_per_gen_step as u64;
    let mut rows = Vec::new();
    while state.step < sched.total_steps {
        let s = state.step as u64;
        let mut w_est = 0.0;
        let mut gp_last = 0.0;
        for i in 0..k {
            let log = match critic_step(&mut state, data, n_train, s * (k + 1) + i) {
                Ok(l) => l,
                Err(Error::NonFinite(msg)) => {
                    let diag = out_dir.join(format!("checkpoint_abort_{:06}.ckpt", state.step));
                    save_checkpoint(&diag, &state)?;
                    return Err(Error::NonFinite(format!(
                        "{msg}; diagnostic snapshot at {}",
                        diag.display()
                    )));
                }
                Err(e) => return Err(e),
            };
            w_est = log.w_estimate;
            gp_last = log.gp_value;
        }
        let glog = match generator_step(&mut state, data, n_train, s * (k + 1) + k) {
            Ok(l) => l,
            Err(Error::NonFinite(msg)) => {
                let diag = out_dir.join(format!("checkpoint_abort_{:06}.ckpt", state.step));
                save_checkpoint(&diag, &state)?;
                return Err(Error::NonFinite(format!(
                    "{msg}; diagnostic snapshot at {}",
                    diag.display()
                )));
            }
            Err(e) => return Err(e),
        };
        let _ = gp_last;
        state.step += 1;

        let mut row = MetricsRow {
            step: state.step,
            w_distance: w_est,
            content: glog.content,
            val_ks_median: None,
            val_rank_dev: None,
        };
        if sched.val_every > 0 && state.step % sched.val_every == 0 && !val_indices.is_empty() {
            let source = val.unwrap_or(data);
            let (ks, dev) = validation_snapshot(&state, source, &val_indices, state.step)?;
            row.val_ks_median = Some(ks);
            row.val_rank_dev = Some(dev);
        }
        state.last_metrics = MetricsSnapshot {
            w_distance: row.w_distance,
            content: row.content,
            val_ks_median: row.val_ks_median,
            val_rank_dev: row.val_rank_dev,
        };
        append_metrics_row(&metrics_path, &row)?;
        rows.push(row);

        if sched.snapshot_every > 0 && state.step % sched.snapshot_every == 0 {
            last_ckpt = checkpoint_path(out_dir, state.step);
            save_checkpoint(&last_ckpt, &state)?;
        }
    }

    let final_path = checkpoint_path(out_dir, state.step);
    if !final_path.exists() {
        save_checkpoint(&final_path, &state)?;
    }
    Ok(TrainReport {
        final_step: state.step,
        metrics: rows,
        last_checkpoint: final_path,
        model_name: state.model_name(),
    })
}

#[cfg(test)]
mod tests;
