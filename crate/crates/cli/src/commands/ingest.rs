use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use finescale::container::{
    read_container, write_container, ContainerHeader, DataContainer, ENTRY_HR_COV, ENTRY_HR_TARGET,
    ENTRY_LR,
};
use finescale::training::Standardizer;
use finescale::Error;
use ndarray::{ArrayD, Axis, IxDyn};
use serde::Serialize;

use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Container holding the LR covariate variables plus a "year" entry
    #[arg(long)]
    pub lr: PathBuf,
    /// Container holding the HR variables plus a "year" entry
    #[arg(long)]
    pub hr: PathBuf,
    /// LR covariate variable names, in network channel order
    #[arg(long, value_delimiter = ',')]
    pub lr_vars: Vec<String>,
    /// HR target variable names
    #[arg(long, value_delimiter = ',')]
    pub hr_vars: Vec<String>,
    /// Static or per-sample HR covariates (e.g. topography)
    #[arg(long, value_delimiter = ',')]
    pub hr_cov_vars: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub train_years: Vec<i64>,
    /// May be empty for a train-only container
    #[arg(long, value_delimiter = ',')]
    pub test_years: Vec<i64>,
    /// Output directory (train.fields, test.fields, standardizer.json)
    #[arg(long)]
    pub out: PathBuf,
    /// Downscaling factor recorded for downstream configs
    #[arg(long, default_value_t = 8)]
    pub factor: usize,
}

fn names(list: &[String]) -> Vec<String> {
    list.iter().filter(|s| !s.is_empty()).cloned().collect()
}

/// (n, h, w) variable entry, with (h, w) static entries broadcast over n.
fn variable(c: &DataContainer, name: &str, n: usize) -> Result<ArrayD<f32>> {
    let arr = c.arrays.get(name).ok_or_else(|| {
        let available: Vec<&str> = c.header.entries.iter().map(|e| e.name.as_str()).collect();
        Error::MissingData(format!(
            "variable '{name}' not found; available: {}",
            available.join(", ")
        ))
    })?;
    match arr.shape() {
        [k, _, _] if *k == n => Ok(arr.clone()),
        [h, w] => {
            let mut out = ArrayD::zeros(IxDyn(&[n, *h, *w]));
            for mut row in out.axis_iter_mut(Axis(0)) {
                row.assign(&arr.view().into_dimensionality().expect("2d"));
            }
            Ok(out)
        }
        other => Err(Error::shape(format!(
            "variable '{name}' has shape {other:?}, expected ({n}, h, w) or static (h, w)"
        ))
        .into()),
    }
}

fn years_of(c: &DataContainer) -> Result<Vec<i64>> {
    let arr = c.array("year")?;
    Ok(arr.iter().map(|&v| v as i64).collect())
}

/// Stacks named (n, h, w) variables into (n, c, h, w) for the given rows.
fn stack_vars(c: &DataContainer, vars: &[String], rows: &[usize], n: usize) -> Result<Option<ArrayD<f32>>> {
    if vars.is_empty() {
        return Ok(None);
    }
    let mut channels = Vec::with_capacity(vars.len());
    for v in vars {
        channels.push(variable(c, v, n)?);
    }
    let (h, w) = {
        let s = channels[0].shape();
        (s[1], s[2])
    };
    let mut data = Vec::with_capacity(rows.len() * vars.len() * h * w);
    for &r in rows {
        for ch in &channels {
            if ch.shape()[1] != h || ch.shape()[2] != w {
                return Err(Error::shape("variables disagree on grid shape").into());
            }
            data.extend(ch.index_axis(Axis(0), r).iter().copied());
        }
    }
    Ok(Some(
        ArrayD::from_shape_vec(IxDyn(&[rows.len(), vars.len(), h, w]), data).expect("shape"),
    ))
}

fn split_rows(years: &[i64], wanted: &[i64]) -> Vec<usize> {
    years
        .iter()
        .enumerate()
        .filter(|(_, y)| wanted.contains(y))
        .map(|(i, _)| i)
        .collect()
}

struct SplitOut {
    path: PathBuf,
    rows: usize,
}

#[allow(clippy::too_many_arguments)]
fn write_split(
    out_dir: &PathBuf,
    name: &str,
    lr_c: &DataContainer,
    hr_c: &DataContainer,
    args: &IngestArgs,
    rows: &[usize],
    years: &[i64],
    n: usize,
    std: &Standardizer,
) -> Result<SplitOut> {
    let (n_lr, n_hr) = (n, n);
    let lr = stack_vars(lr_c, &names(&args.lr_vars), rows, n_lr)?
        .ok_or_else(|| Error::invalid("ingest needs at least one LR variable"))?;
    let target = stack_vars(hr_c, &names(&args.hr_vars), rows, n_hr)?
        .ok_or_else(|| Error::invalid("ingest needs at least one HR target variable"))?;
    let hr_cov = stack_vars(hr_c, &names(&args.hr_cov_vars), rows, n_hr)?;

    let apply = |arr: ArrayD<f32>, stats: &[finescale::training::ChannelStats]| -> ArrayD<f32> {
        let mut out = arr;
        for (c, st) in stats.iter().enumerate() {
            out.index_axis_mut(Axis(1), c).mapv_inplace(|v| st.transform(v as f64) as f32);
        }
        out
    };

    let mut header = ContainerHeader::new(vec![]);
    header.kind = Some("ingested".into());
    header.attrs.insert("factor".into(), serde_json::json!(args.factor));
    header.attrs.insert("standardized".into(), serde_json::json!(true));
    header.attrs.insert("standardizer".into(), serde_json::to_value(std)?);
    header.attrs.insert("lr_vars".into(), serde_json::json!(names(&args.lr_vars)));
    header.attrs.insert("hr_vars".into(), serde_json::json!(names(&args.hr_vars)));
    header.attrs.insert("hr_cov_vars".into(), serde_json::json!(names(&args.hr_cov_vars)));
    header.attrs.insert("split".into(), serde_json::json!(name));

    let mut c = DataContainer::new(header);
    c.arrays.insert(ENTRY_LR.into(), apply(lr, &std.lr));
    if let Some(hc) = hr_cov {
        c.arrays.insert(ENTRY_HR_COV.into(), apply(hc, &std.hr_cov));
    }
    c.arrays.insert(ENTRY_HR_TARGET.into(), apply(target, &std.target));
    let year_col: Vec<f32> = rows.iter().map(|&r| years[r] as f32).collect();
    c.arrays.insert(
        "year".into(),
        ArrayD::from_shape_vec(IxDyn(&[rows.len()]), year_col).expect("shape"),
    );

    let path = out_dir.join(format!("{name}.fields"));
    write_container(&path, &c)?;
    Ok(SplitOut { path, rows: rows.len() })
}

pub fn run(args: IngestArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = ManifestBuilder::start("ingest", &args, None)?;
    manifest.input(args.lr.clone()).input(args.hr.clone());

    let lr_c = read_container(&args.lr)?;
    let hr_c = read_container(&args.hr)?;
    let lr_years = years_of(&lr_c)?;
    let hr_years = years_of(&hr_c)?;
    if lr_years != hr_years {
        return Err(Error::ConfigMismatch(
            "LR and HR containers disagree on the year axis; inputs must be pre-aligned".into(),
        )
        .into());
    }
    let n = lr_years.len();

    let train_rows = split_rows(&lr_years, &args.train_years);
    if train_rows.is_empty() {
        return Err(Error::invalid("no samples fall in the requested training years").into());
    }

    // statistics from the training split only, reused verbatim for the test split
    let lr_train = stack_vars(&lr_c, &names(&args.lr_vars), &train_rows, n)?
        .ok_or_else(|| Error::invalid("ingest needs at least one LR variable"))?;
    let tgt_train = stack_vars(&hr_c, &names(&args.hr_vars), &train_rows, n)?
        .ok_or_else(|| Error::invalid("ingest needs at least one HR target variable"))?;
    let cov_train = stack_vars(&hr_c, &names(&args.hr_cov_vars), &train_rows, n)?;
    let std = Standardizer::fit_arrays(&lr_train, cov_train.as_ref(), &tgt_train)?;
    drop((lr_train, tgt_train, cov_train));

    let train = write_split(&args.out, "train", &lr_c, &hr_c, &args, &train_rows, &lr_years, n, &std)?;
    manifest.output(train.path.clone());
    log::info!("train split: {} samples from years {:?}", train.rows, args.train_years);

    if !args.test_years.is_empty() {
        let test_rows = split_rows(&lr_years, &args.test_years);
        let test = write_split(&args.out, "test", &lr_c, &hr_c, &args, &test_rows, &lr_years, n, &std)?;
        manifest.output(test.path.clone());
        log::info!("test split: {} samples from years {:?}", test.rows, args.test_years);
    }

    let std_path = args.out.join("standardizer.json");
    std::fs::write(&std_path, serde_json::to_string_pretty(&std)?)?;
    manifest.output(std_path);
    manifest.finish_dir(&args.out)?;
    println!("ingested {n} samples into {}", args.out.display());
    Ok(())
}
