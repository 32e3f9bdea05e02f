use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use finescale::container::{
    read_container, write_container, ContainerHeader, DataContainer, ENTRY_LR,
};
use finescale::training::{load_checkpoint, sample_ensemble, config_hash};
use finescale::Error;
use ndarray::{ArrayD, IxDyn};
use serde::Serialize;

use crate::commands::{conditioning_batch, tensor_from};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Checkpoint file
    #[arg(long)]
    pub model: PathBuf,
    /// Conditioning container (dataset or ensemble style)
    #[arg(long)]
    pub data: PathBuf,
    /// Realisations per conditioning sample
    #[arg(long, default_value_t = 96)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output container
    #[arg(long)]
    pub out: PathBuf,
    /// Use only the first K conditioning samples
    #[arg(long)]
    pub samples: Option<usize>,
    /// Replace all noise planes with zeros (deterministic output)
    #[arg(long, default_value_t = false)]
    pub noise_off: bool,
}

pub fn run(args: GenerateArgs) -> Result<()> {
    let device = candle_core::Device::Cpu;
    let state = load_checkpoint(&args.model, &device)?;
    let container = read_container(&args.data)?;

    let lr_arr = container.array(ENTRY_LR)?;
    let total = lr_arr.shape()[0];
    let k = args.samples.unwrap_or(total).min(total);
    let indices: Vec<usize> = (0..k).collect();

    // compatibility: the container must provide the channel/shape contract the
    // checkpoint was trained for
    let batch = conditioning_batch(&container, &indices, &state.standardizer, ENTRY_LR, None)?;
    let (_, cl, hl, wl) = batch.lr.dims4()?;
    let ch = match &batch.hr_cov {
        Some(t) => t.dims4()?.1,
        None => 0,
    };
    let want = &state.run.data;
    let f = want.factor;
    if cl != want.lr_channels || ch != want.hr_cov_channels || (hl * f, wl * f) != want.hr_shape {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint expects lr_channels {}, hr_cov_channels {}, hr_shape {:?} (factor {f}); \
             container provides lr_channels {cl}, hr_cov_channels {ch}, lr {hl}x{wl}",
            want.lr_channels, want.hr_cov_channels, want.hr_shape
        ))
        .into());
    }

    let mut manifest = ManifestBuilder::start("generate", &args, Some(args.seed))?;
    manifest.input(args.model.clone()).input(args.data.clone());

    let ens = sample_ensemble(
        &state.generator,
        &batch.lr,
        batch.hr_cov.as_ref(),
        args.n,
        args.seed,
        args.noise_off,
    )?;
    let dims = ens.dims().to_vec(); // (k, n, C, H, W)
    let std_values: Vec<f32> = ens.flatten_all()?.to_vec1()?;

    // de-standardized copy alongside the standardized one
    let (b, n, c, h, w) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    let flat = ens.reshape((b * n, c, h, w))?;
    let nat = state.standardizer.invert_target(&flat)?;
    let nat_values: Vec<f32> = nat.flatten_all()?.to_vec1()?;

    let mut header = ContainerHeader::new(vec![]);
    header.kind = Some("generated".into());
    header.seed = Some(args.seed);
    header.attrs.insert("model_name".into(), serde_json::json!(state.model_name()));
    header.attrs.insert("checkpoint_config_hash".into(), serde_json::json!(config_hash(&state.run)?));
    header.attrs.insert("realisations".into(), serde_json::json!(args.n));
    header.attrs.insert("noise_off".into(), serde_json::json!(args.noise_off));
    let mut out = DataContainer::new(header);
    out.arrays.insert(
        "generated_std".into(),
        ArrayD::from_shape_vec(IxDyn(&dims), std_values).expect("shape"),
    );
    out.arrays.insert(
        "generated".into(),
        ArrayD::from_shape_vec(IxDyn(&dims), nat_values).expect("shape"),
    );
    // carry the conditioning stack for self-contained downstream evaluation
    let lr_sel: Vec<f32> = tensor_from(lr_arr)?
        .index_select(
            &candle_core::Tensor::from_vec(
                indices.iter().map(|&i| i as u32).collect::<Vec<u32>>(),
                (indices.len(),),
                &device,
            )?,
            0,
        )?
        .flatten_all()?
        .to_vec1()?;
    let mut lr_shape = lr_arr.shape().to_vec();
    lr_shape[0] = k;
    out.arrays.insert(ENTRY_LR.into(), ArrayD::from_shape_vec(IxDyn(&lr_shape), lr_sel).expect("shape"));

    write_container(&args.out, &out)?;
    manifest.output(args.out.clone());
    manifest.finish_beside(&args.out)?;
    println!(
        "generated {} realisations for {} conditioning samples -> {}",
        args.n,
        k,
        args.out.display()
    );
    Ok(())
}
