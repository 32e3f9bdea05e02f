use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use finescale::container::read_container;
use finescale::losses::LossConfig;
use finescale::network::{CriticConfig, GeneratorConfig, NoisePreset};
use finescale::training::{self, DataSpec, RunConfig, TrainConfig, TrainData};
use finescale::Error;
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// JSON config file (see --dump-config for every key and default)
    #[arg(long, required_unless_present = "dump_config")]
    pub config: Option<PathBuf>,
    /// Training container (from synth or ingest)
    #[arg(long, required_unless_present = "dump_config")]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.csv
    #[arg(long, required_unless_present = "dump_config")]
    pub out: Option<PathBuf>,
    /// Resume from a checkpoint (config must match)
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Validation container; defaults to a tail holdout of the training data
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Print the default config JSON and exit
    #[arg(long, default_value_t = false)]
    pub dump_config: bool,
}

/// The on-disk config: sections {generator, critic, loss, schedule} plus the
/// noise preset. The data section (channels, shapes, factor) is read from the
/// container itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileConfig {
    pub noise_preset: NoisePreset,
    #[serde(default)]
    pub generator: GeneratorConfig,
    /// Defaults to a schedule sized for the data factor.
    #[serde(default)]
    pub critic: Option<CriticConfig>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub schedule: TrainConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            noise_preset: NoisePreset::Full,
            generator: GeneratorConfig::default(),
            critic: Some(CriticConfig::default()),
            loss: LossConfig::default(),
            schedule: TrainConfig { total_steps: 20_000, ..Default::default() },
        }
    }
}

fn infer_factor(td: &TrainData, attrs_factor: Option<u64>) -> Result<usize> {
    if let Some(f) = attrs_factor {
        return Ok(f as usize);
    }
    let (h, _) = td.hr_shape()?;
    let (lh, _) = td.lr_shape()?;
    if lh == 0 || h % lh != 0 {
        return Err(Error::shape(format!("cannot infer factor from HR {h} and LR {lh}")).into());
    }
    Ok(h / lh)
}

pub fn assemble_run_config(file: &FileConfig, td: &TrainData, factor: usize) -> Result<RunConfig> {
    let critic = match &file.critic {
        Some(c) => c.clone(),
        None => CriticConfig::for_factor(factor, 64)?,
    };
    let mut generator = file.generator.clone();
    generator.upscale_factor = factor;
    let mut run = RunConfig {
        data: DataSpec::from_train_data(td, factor)?,
        generator,
        critic,
        loss: file.loss.clone(),
        schedule: file.schedule.clone(),
        noise_preset: file.noise_preset,
    };
    run.normalize();
    run.validate()?;
    Ok(run)
}

pub fn run(args: TrainArgs) -> Result<()> {
    if args.dump_config {
        println!("{}", serde_json::to_string_pretty(&FileConfig::default())?);
        return Ok(());
    }
    let (config_path, data_path, out_dir) = (
        args.config.clone().expect("required"),
        args.data.clone().expect("required"),
        args.out.clone().expect("required"),
    );
    let file: FileConfig = serde_json::from_str(&std::fs::read_to_string(&config_path)?)?;

    let container = read_container(&data_path)?;
    let device = candle_core::Device::Cpu;
    let (data, standardizer) = TrainData::from_container(&container, &device)?;
    let factor = infer_factor(&data, container.header.attr_u64("factor"))?;
    let run = assemble_run_config(&file, &data, factor)?;

    let val_pair = match &args.val {
        Some(p) => {
            let vc = read_container(p)?;
            let (vd, _) = TrainData::from_container(&vc, &device)?;
            Some(vd)
        }
        None => None,
    };

    let mut manifest = ManifestBuilder::start("train", &run, Some(run.schedule.seed))?;
    manifest.input(config_path).input(data_path.clone());
    if let Some(p) = &args.val {
        manifest.input(p.clone());
    }

    log::info!(
        "training {} for {} generator steps ({} noise layers LR, {} HR-side)",
        training::model_name(run.loss.regime, run.noise_preset, run.loss.content_kind),
        run.schedule.total_steps,
        run.noise_layer_counts().0,
        run.noise_layer_counts().1,
    );
    let report = training::train(
        &run,
        &data,
        val_pair.as_ref(),
        &standardizer,
        &out_dir,
        args.resume.as_deref(),
    )?;

    manifest.output(report.last_checkpoint.clone()).output(out_dir.join("metrics.csv"));
    manifest.finish_dir(&out_dir)?;
    println!(
        "trained {} to step {}; final checkpoint {}",
        report.model_name,
        report.final_step,
        report.last_checkpoint.display()
    );
    Ok(())
}
