use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use finescale::container::{ensemble_container, read_container, write_container, dataset_container};
use finescale::field::FieldGrid;
use finescale::synthetic::{
    fractal_terrain, make_conditional_ensemble, make_dataset, AxisWarp, ConditioningSource,
    CovarianceSpec, HeterogeneitySpec, MixtureSpec, SynthConfig, SynthKind,
};
use finescale::Error;
use rand::SeedableRng;
use serde::Serialize;

use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// unimodal | bimodal | hetero
    #[arg(long)]
    pub kind: String,
    /// Number of paired samples (ignored when --ensemble-warp is given)
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output container file
    #[arg(long)]
    pub out: PathBuf,
    /// HR grid size (square)
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Downscaling factor
    #[arg(long, default_value_t = 8)]
    pub factor: usize,
    /// Correlation taper length in pixels
    #[arg(long, default_value_t = 4.0)]
    pub taper: f64,
    /// Pointwise variance of the Gaussian field
    #[arg(long, default_value_t = 1.0)]
    pub variance: f64,
    /// Fixed warp "a1,a2,b1,b2": emit a truth ensemble instead of a dataset
    #[arg(long)]
    pub ensemble_warp: Option<String>,
    /// Ensemble size for --ensemble-warp
    #[arg(long, default_value_t = 500)]
    pub ensemble_n: usize,
    /// Condition the ensemble on a designated member instead of the
    /// mean-surface square
    #[arg(long)]
    pub ensemble_member_conditioning: Option<usize>,
    /// Heterogeneity weight (hetero kind; 0.1, 1, or 10)
    #[arg(long)]
    pub hetero_weight: Option<f64>,
    /// Accept heterogeneity weights outside {0.1, 1, 10}
    #[arg(long, default_value_t = false)]
    pub hetero_override: bool,
    /// Topography container (entry "topography"); default: synthetic fractal
    /// terrain
    #[arg(long)]
    pub topo: Option<PathBuf>,
    /// Spectral exponent of the fractal terrain
    #[arg(long, default_value_t = 2.0)]
    pub topo_beta: f64,
    /// Do not attach the topography as an HR covariate
    #[arg(long, default_value_t = false)]
    pub no_topo_covariate: bool,
    /// Bernoulli probability of the high mixture component
    #[arg(long, default_value_t = 0.35)]
    pub mix_p: f64,
    #[arg(long, default_value_t = 5.0)]
    pub mix_hi: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mix_lo: f64,
}

fn parse_warp(s: &str) -> Result<AxisWarp> {
    let parts: Vec<i8> = s
        .split(',')
        .map(|p| p.trim().parse::<i8>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("warp '{s}' must be four integers a1,a2,b1,b2"))?;
    if parts.len() != 4 {
        return Err(Error::invalid(format!("warp '{s}' must have four components")).into());
    }
    Ok(AxisWarp::new(parts[0], parts[1], parts[2], parts[3])?)
}

fn load_topography(args: &SynthArgs) -> Result<FieldGrid> {
    match &args.topo {
        Some(path) => {
            let c = read_container(path)?;
            let arr = c.array("topography")?;
            let dims = arr.shape().to_vec();
            let (h, w) = match dims.as_slice() {
                [h, w] => (*h, *w),
                [1, h, w] | [1, 1, h, w] => (*h, *w),
                other => {
                    return Err(Error::shape(format!(
                        "topography entry has shape {other:?}, expected (h, w)"
                    ))
                    .into())
                }
            };
            let flat: Vec<f32> = arr.iter().copied().collect();
            let raw = FieldGrid::from_f32_slice(h, w, &flat)?;
            Ok(raw.standardize()?)
        }
        None => {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(args.seed ^ 0x7065_7274);
            Ok(fractal_terrain((args.size, args.size), args.topo_beta, &mut rng)?)
        }
    }
}

pub fn build_config(args: &SynthArgs) -> Result<SynthConfig> {
    let kind: SynthKind = args.kind.parse::<SynthKind>()?;
    let mut cfg = SynthConfig::new(kind);
    cfg.hr_shape = (args.size, args.size);
    cfg.factor = args.factor;
    cfg.cov = CovarianceSpec::new(args.taper, args.variance)?;
    cfg.mix = MixtureSpec::new(args.mix_p, args.mix_hi, args.mix_lo)?;
    cfg.topo_covariate = !args.no_topo_covariate;
    if kind == SynthKind::Hetero {
        let w = args
            .hetero_weight
            .ok_or_else(|| Error::invalid("hetero kind requires --hetero-weight"))?;
        let z = load_topography(args)?;
        cfg.hetero = Some(if args.hetero_override {
            HeterogeneitySpec::with_override(w, z)?
        } else {
            HeterogeneitySpec::new(w, z)?
        });
    }
    Ok(cfg)
}

pub fn run(args: SynthArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let mut manifest = ManifestBuilder::start("synth", &args, Some(args.seed))?;
    if let Some(p) = &args.topo {
        manifest.input(p.clone());
    }

    let container = match &args.ensemble_warp {
        Some(spec) => {
            let warp = parse_warp(spec)?;
            let source = match args.ensemble_member_conditioning {
                Some(i) => ConditioningSource::Member(i),
                None => ConditioningSource::MeanSurfaceSquare,
            };
            let ens = make_conditional_ensemble(&warp, &cfg, args.ensemble_n, args.seed, source)?;
            log::info!(
                "ensemble: kind {} warp {:?} members {}",
                args.kind,
                warp.as_array(),
                ens.members.len()
            );
            let mut c = ensemble_container(&ens)?;
            c.header.attrs.insert("factor".into(), serde_json::json!(args.factor));
            c
        }
        None => {
            let ds = make_dataset(&cfg, args.n, args.seed)?;
            log::info!("dataset: kind {} samples {}", args.kind, ds.samples.len());
            dataset_container(&ds)?
        }
    };
    write_container(&args.out, &container)?;
    manifest.output(args.out.clone());
    manifest.finish_beside(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
