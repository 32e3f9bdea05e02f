use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use finescale::container::{
    read_container, write_container, ContainerHeader, ContainerReader, DataContainer,
    ENTRY_HR_COV, ENTRY_HR_TARGET, ENTRY_LR, ENTRY_MEMBERS,
};
use finescale::evaluation::{
    self, marginal_stats, pixelwise_ks, rasp, rasp_standardized, RankHistogram, RaspConfig,
    StatMaps, DEFAULT_STAT_QUANTILES,
};
use finescale::field::FieldGrid;
use finescale::training::{derive_seed, load_checkpoint, sample_ensemble, tensor_to_fields, TrainState};
use finescale::Error;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use candle_core::Tensor;

use crate::commands::{choose_indices, conditioning_batch};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Checkpoint file
    #[arg(long)]
    pub model: PathBuf,
    /// Paired test container (rank/qrank/rasp/marginals)
    #[arg(long)]
    pub data: PathBuf,
    /// Comma list of: ks, rank, qrank, rasp, marginals
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Stochastic realisations per conditioning sample
    #[arg(long, default_value_t = 96)]
    pub ensemble: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Truth-ensemble container (required for the ks metric)
    #[arg(long)]
    pub truth_ensemble: Option<PathBuf>,
    /// Conditioning fields per metric (defaults: rank 100, qrank 400,
    /// rasp 1200, marginals all)
    #[arg(long)]
    pub fields: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spatial-extreme quantiles for qrank
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.999, 0.001])]
    pub quantiles: Vec<f64>,
}

const EVAL_DOMAIN: u64 = 0xeva1;

struct EvalContext {
    state: TrainState,
    reader: ContainerReader,
    standardized: bool,
    n: usize,
    seed: u64,
    ensemble: usize,
}

impl EvalContext {
    fn sample_tensor(&mut self, entry: &str, index: usize) -> Result<Tensor> {
        let arr = self.reader.read_sample(entry, index)?;
        let mut shape = vec![1usize];
        shape.extend(arr.shape());
        let data: Vec<f32> = arr.iter().copied().collect();
        Ok(Tensor::from_vec(data, shape, &candle_core::Device::Cpu)?)
    }

    /// Streams one conditioning sample, draws `members` de-standardized
    /// realisations (channel 0), and returns them with the truth field.
    fn generate(&mut self, index: usize, members: usize, stream: u64) -> Result<(Vec<FieldGrid>, FieldGrid)> {
        let mut lr = self.sample_tensor(ENTRY_LR, index)?;
        let mut hr_cov = if self.reader.header().entry(ENTRY_HR_COV).is_ok() {
            let shared = self.reader.samples(ENTRY_HR_COV)? == 1;
            Some(self.sample_tensor(ENTRY_HR_COV, if shared { 0 } else { index })?)
        } else {
            None
        };
        let mut truth = self.sample_tensor(ENTRY_HR_TARGET, index)?;
        if !self.standardized {
            let std = &self.state.standardizer;
            lr = std.transform_lr(&lr)?;
            hr_cov = hr_cov.map(|t| std.transform_hr_cov(&t)).transpose()?;
            truth = std.transform_target(&truth)?;
        }
        let ens = sample_ensemble(
            &self.state.generator,
            &lr,
            hr_cov.as_ref(),
            members,
            derive_seed(self.seed, EVAL_DOMAIN, stream),
            false,
        )?;
        let (_, m, c, h, w) = {
            let d = ens.dims();
            (d[0], d[1], d[2], d[3], d[4])
        };
        let flat = ens.reshape((m, c, h, w))?;
        let nat = self.state.standardizer.invert_target(&flat)?;
        let member_fields: Vec<FieldGrid> =
            tensor_to_fields(&nat)?.into_iter().map(|mut s| s.remove(0)).collect();
        let truth_nat = self.state.standardizer.invert_target(&truth)?;
        let truth_field = tensor_to_fields(&truth_nat)?.remove(0).remove(0);
        Ok((member_fields, truth_field))
    }
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}

fn rank_outputs(dir: &Path, tag: &str, hist: &RankHistogram) -> Result<Vec<PathBuf>> {
    let counts = dir.join(format!("{tag}.csv"));
    write_csv(
        &counts,
        "rank,count",
        hist.counts.iter().enumerate().map(|(r, c)| format!("{r},{c}")),
    )?;
    let cdf_path = dir.join(format!("{tag}_cdf.csv"));
    write_csv(
        &cdf_path,
        "rank,cdf",
        hist.cdf().iter().enumerate().map(|(r, v)| format!("{r},{v}")),
    )?;
    let summary = dir.join(format!("{tag}_summary.csv"));
    write_csv(
        &summary,
        "members,total,chi2,p_value,max_cdf_deviation",
        std::iter::once(format!(
            "{},{},{},{},{}",
            hist.members,
            hist.total(),
            hist.chi2_statistic(),
            hist.chi2_pvalue(),
            hist.max_cdf_deviation()
        )),
    )?;
    Ok(vec![counts, cdf_path, summary])
}

fn run_rank(ctx: &mut EvalContext, dir: &Path, fields: Option<usize>) -> Result<Vec<PathBuf>> {
    let k = fields.unwrap_or(100).min(ctx.n);
    let indices = choose_indices(ctx.n, k, derive_seed(ctx.seed, EVAL_DOMAIN, 1));
    let mut acc: Option<RankHistogram> = None;
    let mut tie_rng = ChaCha12Rng::seed_from_u64(derive_seed(ctx.seed, EVAL_DOMAIN, 2));
    let members = ctx.ensemble;
    for (j, &idx) in indices.iter().enumerate() {
        let (ens, truth) = ctx.generate(idx, members, 100 + j as u64)?;
        let h = evaluation::rank_histogram(&[truth], &[ens], &mut tie_rng)?;
        match &mut acc {
            Some(a) => a.merge(&h)?,
            None => acc = Some(h),
        }
    }
    let hist = acc.expect("at least one field");
    log::info!(
        "rank histogram over {k} fields x {} members: max CDF deviation {:.4}",
        ctx.ensemble,
        hist.max_cdf_deviation()
    );
    rank_outputs(dir, "rank", &hist)
}

fn run_qrank(ctx: &mut EvalContext, dir: &Path, fields: Option<usize>, quantiles: &[f64]) -> Result<Vec<PathBuf>> {
    let k = fields.unwrap_or(400).min(ctx.n);
    let indices = choose_indices(ctx.n, k, derive_seed(ctx.seed, EVAL_DOMAIN, 3));
    let members = ctx.ensemble;
    // the same realisations rank every requested quantile
    let mut accs: Vec<Option<RankHistogram>> = vec![None; quantiles.len()];
    let mut tie_rng = ChaCha12Rng::seed_from_u64(derive_seed(ctx.seed, EVAL_DOMAIN, 4));
    for (j, &idx) in indices.iter().enumerate() {
        let (ens, truth) = ctx.generate(idx, members, 1000 + j as u64)?;
        for (qi, &q) in quantiles.iter().enumerate() {
            let h = evaluation::quantile_rank_histogram(
                std::slice::from_ref(&truth),
                std::slice::from_ref(&ens),
                q,
                &mut tie_rng,
            )?;
            match &mut accs[qi] {
                Some(a) => a.merge(&h)?,
                None => accs[qi] = Some(h),
            }
        }
    }
    let mut outputs = Vec::new();
    for (qi, &q) in quantiles.iter().enumerate() {
        let hist = accs[qi].take().expect("at least one field");
        outputs.extend(rank_outputs(dir, &format!("qrank_{q}"), &hist)?);
    }
    Ok(outputs)
}

fn run_ks(ctx: &mut EvalContext, dir: &Path, truth_ensemble: &Path) -> Result<Vec<PathBuf>> {
    let tc = read_container(truth_ensemble)?;
    if !tc.header.attrs.get("ensemble").and_then(|v| v.as_bool()).unwrap_or(false) {
        return Err(Error::invalid(
            "the ks metric needs a truth-ensemble container (synth --ensemble-warp)",
        )
        .into());
    }
    let truth_arr = tc.array(ENTRY_MEMBERS)?;
    let dims = truth_arr.shape().to_vec();
    let (n_truth, h, w) = (dims[0], dims[2], dims[3]);
    let flat: Vec<f32> = truth_arr.iter().copied().collect();
    let truth_members: Vec<FieldGrid> = (0..n_truth)
        .map(|i| FieldGrid::from_f32_slice(h, w, &flat[i * h * w..(i + 1) * h * w]))
        .collect::<finescale::Result<_>>()?;

    // generate against the ensemble's shared conditioning stack
    let batch = conditioning_batch(&tc, &[0], &ctx.state.standardizer, ENTRY_LR, None)?;
    let ens = sample_ensemble(
        &ctx.state.generator,
        &batch.lr,
        batch.hr_cov.as_ref(),
        ctx.ensemble,
        derive_seed(ctx.seed, EVAL_DOMAIN, 7),
        false,
    )?;
    let (_, m, c, hh, ww) = {
        let d = ens.dims();
        (d[0], d[1], d[2], d[3], d[4])
    };
    let flat = ens.reshape((m, c, hh, ww))?;
    let nat = ctx.state.standardizer.invert_target(&flat)?;
    let gen_members: Vec<FieldGrid> =
        tensor_to_fields(&nat)?.into_iter().map(|mut s| s.remove(0)).collect();

    let map = pixelwise_ks(&gen_members, &truth_members)?;
    let [q25, median, q75] = map.quartiles();
    log::info!("pixelwise KS: median {median:.4} (quartiles {q25:.4}/{q75:.4})");

    let ks_path = dir.join("ks.csv");
    let (mh, mw) = map.stats.dim();
    write_csv(
        &ks_path,
        "i,j,D",
        (0..mh).flat_map(|i| {
            let row = map.stats.row(i).to_owned();
            (0..mw).map(move |j| format!("{i},{j},{}", row[j])).collect::<Vec<_>>()
        }),
    )?;
    let summary = dir.join("ks_summary.csv");
    write_csv(
        &summary,
        "q25,median,q75,generated_members,truth_members",
        std::iter::once(format!("{q25},{median},{q75},{m},{n_truth}")),
    )?;
    Ok(vec![ks_path, summary])
}

fn run_rasp(ctx: &mut EvalContext, dir: &Path, fields: Option<usize>) -> Result<Vec<PathBuf>> {
    let k = fields.unwrap_or(1200).min(ctx.n);
    let indices = choose_indices(ctx.n, k, derive_seed(ctx.seed, EVAL_DOMAIN, 5));
    let mut gen_fields = Vec::with_capacity(k);
    let mut truth_fields = Vec::with_capacity(k);
    for (j, &idx) in indices.iter().enumerate() {
        let (mut ens, truth) = ctx.generate(idx, 1, 2000 + j as u64)?;
        gen_fields.push(ens.remove(0));
        truth_fields.push(truth);
    }
    let cfg = RaspConfig::default();
    let gen_profile = rasp(&gen_fields, &cfg)?;
    let truth_profile = rasp(&truth_fields, &cfg)?;
    let ratio = rasp_standardized(&gen_profile, &truth_profile, Some(ctx.state.run.data.factor))?;

    let rasp_path = dir.join("rasp.csv");
    write_csv(
        &rasp_path,
        "wavenumber,truth_mean,truth_sd,gen_mean,gen_sd,ratio,band",
        (0..gen_profile.bins.len()).map(|i| {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            format!(
                "{},{},{},{},{},{},{}",
                gen_profile.bins[i],
                truth_profile.mean[i],
                truth_profile.sd[i],
                gen_profile.mean[i],
                gen_profile.sd[i],
                fmt(ratio.ratio[i]),
                fmt(ratio.band[i]),
            )
        }),
    )?;
    let summary = dir.join("rasp_summary.csv");
    write_csv(
        &summary,
        "fields,lr_reference_wavenumber",
        std::iter::once(format!(
            "{k},{}",
            ratio.lr_reference_wavenumber.map(|v| v.to_string()).unwrap_or_default()
        )),
    )?;
    Ok(vec![rasp_path, summary])
}

fn stat_maps_container(maps: &StatMaps) -> DataContainer {
    let mut header = ContainerHeader::new(vec![]);
    header.kind = Some("stat_maps".into());
    let mut c = DataContainer::new(header);
    let to_arr = |a: &ndarray::Array2<f64>| {
        ArrayD::from_shape_vec(
            IxDyn(&[a.nrows(), a.ncols()]),
            a.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape")
    };
    c.arrays.insert("median".into(), to_arr(&maps.median));
    c.arrays.insert("iqr".into(), to_arr(&maps.iqr));
    for (q, map) in &maps.quantiles {
        c.arrays.insert(format!("q_{q}"), to_arr(map));
    }
    c
}

fn run_marginals(ctx: &mut EvalContext, dir: &Path, fields: Option<usize>) -> Result<Vec<PathBuf>> {
    let k = fields.unwrap_or(ctx.n).min(ctx.n);
    let indices = choose_indices(ctx.n, k, derive_seed(ctx.seed, EVAL_DOMAIN, 6));
    let mut gen_fields = Vec::with_capacity(k);
    let mut truth_fields = Vec::with_capacity(k);
    // one realisation per conditioning sample: the model side of the full
    // distribution p(HR) across samples
    for (j, &idx) in indices.iter().enumerate() {
        let (mut ens, truth) = ctx.generate(idx, 1, 3000 + j as u64)?;
        gen_fields.push(ens.remove(0));
        truth_fields.push(truth);
    }
    let truth_stats = marginal_stats(&truth_fields, &DEFAULT_STAT_QUANTILES)?;
    let gen_stats = marginal_stats(&gen_fields, &DEFAULT_STAT_QUANTILES)?;
    let diff = evaluation::difference_maps(&truth_stats, &gen_stats)?;

    let mut outputs = Vec::new();
    for (name, maps) in [("truth_stats", &truth_stats), ("gen_stats", &gen_stats), ("diff_stats", &diff)] {
        let path = dir.join(format!("{name}.fields"));
        write_container(&path, &stat_maps_container(maps))?;
        outputs.push(path);
    }
    let summary = dir.join("marginals_summary.csv");
    let mad = |a: &ndarray::Array2<f64>| a.iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64;
    write_csv(
        &summary,
        "stat,mean_abs_difference",
        [
            format!("median,{}", mad(&diff.median)),
            format!("iqr,{}", mad(&diff.iqr)),
        ]
        .into_iter()
        .chain(diff.quantiles.iter().map(|(q, m)| format!("q_{q},{}", mad(m)))),
    )?;
    outputs.push(summary);
    Ok(outputs)
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let device = candle_core::Device::Cpu;
    let state = load_checkpoint(&args.model, &device)?;
    let reader = ContainerReader::open(&args.data)?;
    let n = {
        let e = reader.header().entry(ENTRY_LR)?;
        *e.shape.first().unwrap_or(&0)
    };
    let standardized = reader
        .header()
        .attrs
        .get("standardized")
        .and_then(|v| v.as_bool())
        .unwrap_or(false);

    let mut manifest = ManifestBuilder::start("evaluate", &args, Some(args.seed))?;
    manifest.input(args.model.clone()).input(args.data.clone());
    if let Some(p) = &args.truth_ensemble {
        manifest.input(p.clone());
    }

    let mut ctx = EvalContext { state, reader, standardized, n, seed: args.seed, ensemble: args.ensemble };

    let requested: Vec<String> = if args.metrics.is_empty() {
        vec!["rank".into(), "rasp".into(), "marginals".into()]
    } else {
        args.metrics.clone()
    };
    for metric in &requested {
        let outputs = match metric.as_str() {
            "rank" => run_rank(&mut ctx, &args.out, args.fields)?,
            "qrank" => run_qrank(&mut ctx, &args.out, args.fields, &args.quantiles)?,
            "ks" => {
                let te = args.truth_ensemble.as_ref().ok_or_else(|| {
                    Error::invalid("the ks metric requires --truth-ensemble")
                })?;
                run_ks(&mut ctx, &args.out, te)?
            }
            "rasp" => run_rasp(&mut ctx, &args.out, args.fields)?,
            "marginals" => run_marginals(&mut ctx, &args.out, args.fields)?,
            other => return Err(Error::invalid(format!("unknown metric '{other}'")).into()),
        };
        for o in outputs {
            manifest.output(o);
        }
        log::info!("finished metric {metric}");
    }
    manifest.finish_dir(&args.out)?;
    println!("evaluation written to {}", args.out.display());
    Ok(())
}
