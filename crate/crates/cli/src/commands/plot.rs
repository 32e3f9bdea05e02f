use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use finescale::container::read_container;
use finescale::Error;
use ndarray::Array2;
use serde::Serialize;

use crate::manifest::ManifestBuilder;
use crate::plotting::{heatmap_png, ks_summary_chart, rank_cdf_chart, rasp_chart, QuartileSummary, RaspSeries, Series};

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    /// One or more evaluate output directories (one per model)
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<PathBuf>,
    /// Legend labels, one per metrics directory (defaults to dir names)
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Output directory for figures
    #[arg(long)]
    pub out: PathBuf,
    /// Subset of figures: rank, qrank, rasp, ks, maps (default: all present)
    #[arg(long, value_delimiter = ',')]
    pub which: Vec<String>,
}

fn read_table(path: &Path, required: &[&str]) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::MissingData(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(finescale::Error::from)?
        .iter()
        .map(|s| s.to_string())
        .collect();
    for col in required {
        if !header.iter().any(|h| h == col) {
            return Err(Error::MissingData(format!(
                "{} lacks required column '{col}' (found: {})",
                path.display(),
                header.join(", ")
            ))
            .into());
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(finescale::Error::from)?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok((header, rows))
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<Option<f64>> {
    let idx = header.iter().position(|h| h == name).expect("checked");
    rows.iter().map(|r| r.get(idx).and_then(|v| v.parse::<f64>().ok())).collect()
}

fn label_for(args: &PlotArgs, i: usize) -> String {
    args.labels.get(i).cloned().unwrap_or_else(|| {
        args.metrics[i]
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("model {i}"))
    })
}

fn rank_series(args: &PlotArgs, file: &str) -> Result<Vec<Series>> {
    let mut out = Vec::new();
    for (i, dir) in args.metrics.iter().enumerate() {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        let (header, rows) = read_table(&path, &["rank", "cdf"])?;
        let ranks = column(&header, &rows, "rank");
        let cdfs = column(&header, &rows, "cdf");
        let n = ranks.len().max(2) as f64 - 1.0;
        let points: Vec<(f64, f64)> = ranks
            .iter()
            .zip(&cdfs)
            .filter_map(|(r, c)| Some((r.as_ref()? / n, (*c)?)))
            .collect();
        out.push(Series { label: label_for(args, i), points });
    }
    Ok(out)
}

fn plot_rank(args: &PlotArgs, file: &str, title: &str, out_name: &str, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let series = rank_series(args, file)?;
    if series.is_empty() {
        return Ok(());
    }
    let path = args.out.join(out_name);
    rank_cdf_chart(&series, title, &path)?;
    outputs.push(path);
    Ok(())
}

fn plot_rasp(args: &PlotArgs, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let mut series = Vec::new();
    let mut lr_ref = None;
    for (i, dir) in args.metrics.iter().enumerate() {
        let path = dir.join("rasp.csv");
        if !path.exists() {
            continue;
        }
        let (header, rows) = read_table(&path, &["wavenumber", "ratio", "band"])?;
        let k = column(&header, &rows, "wavenumber");
        let ratio = column(&header, &rows, "ratio");
        let band = column(&header, &rows, "band");
        let points: Vec<(f64, f64, f64)> = k
            .iter()
            .zip(ratio.iter().zip(&band))
            .filter_map(|(k, (r, b))| Some(((*k)?, (*r)?, b.unwrap_or(0.0))))
            .collect();
        series.push(RaspSeries { label: label_for(args, i), points });

        let summary = dir.join("rasp_summary.csv");
        if summary.exists() && lr_ref.is_none() {
            let (h, r) = read_table(&summary, &["lr_reference_wavenumber"])?;
            lr_ref = column(&h, &r, "lr_reference_wavenumber").first().copied().flatten();
        }
    }
    if series.is_empty() {
        return Ok(());
    }
    let path = args.out.join("rasp.svg");
    rasp_chart(&series, lr_ref, "standardized radially averaged spectral power", &path)?;
    outputs.push(path);
    Ok(())
}

fn plot_ks(args: &PlotArgs, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let mut summaries = Vec::new();
    for (i, dir) in args.metrics.iter().enumerate() {
        let path = dir.join("ks_summary.csv");
        if !path.exists() {
            continue;
        }
        let (header, rows) = read_table(&path, &["q25", "median", "q75"])?;
        let q25 = column(&header, &rows, "q25");
        let med = column(&header, &rows, "median");
        let q75 = column(&header, &rows, "q75");
        if let (Some(Some(a)), Some(Some(m)), Some(Some(b))) =
            (q25.first(), med.first(), q75.first())
        {
            summaries.push(QuartileSummary { label: label_for(args, i), q25: *a, median: *m, q75: *b });
        }
    }
    if summaries.is_empty() {
        return Ok(());
    }
    let path = args.out.join("ks_summary.svg");
    ks_summary_chart(&summaries, "pixelwise KS vs truth ensemble", &path)?;
    outputs.push(path);
    Ok(())
}

fn plot_maps(args: &PlotArgs, outputs: &mut Vec<PathBuf>) -> Result<()> {
    for (i, dir) in args.metrics.iter().enumerate() {
        for (name, diverging) in [("truth_stats", false), ("gen_stats", false), ("diff_stats", true)] {
            let path = dir.join(format!("{name}.fields"));
            if !path.exists() {
                continue;
            }
            let c = read_container(&path)?;
            for (entry, arr) in &c.arrays {
                let shape = arr.shape();
                if shape.len() != 2 {
                    continue;
                }
                let field = Array2::from_shape_fn((shape[0], shape[1]), |(r, q)| {
                    arr[[r, q]] as f64
                });
                let label = label_for(args, i).replace([' ', '/'], "_");
                let out = args.out.join(format!("{label}_{name}_{entry}.png"));
                heatmap_png(&field, diverging, &out)?;
                outputs.push(out.clone());
            }
        }
    }
    Ok(())
}

pub fn run(args: PlotArgs) -> Result<()> {
    if args.metrics.is_empty() {
        return Err(Error::invalid("plot needs at least one --metrics directory").into());
    }
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = ManifestBuilder::start("plot", &args, None)?;
    for m in &args.metrics {
        manifest.input(m.clone());
    }

    let wanted = |k: &str| args.which.is_empty() || args.which.iter().any(|w| w == k);
    let mut outputs = Vec::new();
    if wanted("rank") {
        plot_rank(&args, "rank_cdf.csv", "rank histogram CDF", "rank_cdf.svg", &mut outputs)?;
    }
    if wanted("qrank") {
        for q in ["0.999", "0.001"] {
            plot_rank(
                &args,
                &format!("qrank_{q}_cdf.csv"),
                &format!("spatial {q} quantile rank CDF"),
                &format!("qrank_{q}_cdf.svg"),
                &mut outputs,
            )?;
        }
    }
    if wanted("rasp") {
        plot_rasp(&args, &mut outputs)?;
    }
    if wanted("ks") {
        plot_ks(&args, &mut outputs)?;
    }
    if wanted("maps") {
        plot_maps(&args, &mut outputs)?;
    }
    if outputs.is_empty() {
        return Err(Error::MissingData(
            "no plottable metric files found in the given directories".into(),
        )
        .into());
    }
    for o in &outputs {
        manifest.output(o.clone());
    }
    manifest.finish_dir(&args.out)?;
    println!("wrote {} figures to {}", outputs.len(), args.out.display());
    Ok(())
}
