//! Rendered figures for metric outputs: rank-CDF curves against the uniform
//! reference, standardized RASP with spread bands and the LR-wavenumber
//! marker, KS quartile summaries, and stat/difference heat maps.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use plotters::prelude::*;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Rank-histogram CDFs with the dashed uniform reference.
pub fn rank_cdf_chart(series: &[Series], title: &str, out: &Path) -> Result<()> {
    if series.is_empty() {
        bail!("no rank CDF series to plot");
    }
    let root = SVGBackend::new(out, (760, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..1f64, 0f64..1f64)?;
    chart
        .configure_mesh()
        .x_desc("normalized rank")
        .y_desc("CDF")
        .max_light_lines(1)
        .draw()?;
    chart.draw_series(DashedLineSeries::new(
        (0..=50).map(|i| (i as f64 / 50.0, i as f64 / 50.0)),
        6,
        4,
        BLACK.into(),
    ))?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE.mix(0.85)).draw()?;
    root.present()?;
    Ok(())
}

pub struct RaspSeries {
    pub label: String,
    /// (wavenumber, ratio, band) per defined bin.
    pub points: Vec<(f64, f64, f64)>,
}

/// Standardized RASP: ratio curves with ±1 SD bands, the unity reference, and
/// a dashed vertical line at the LR-pixel-size wavenumber.
pub fn rasp_chart(series: &[RaspSeries], lr_wavenumber: Option<f64>, title: &str, out: &Path) -> Result<()> {
    if series.is_empty() {
        bail!("no RASP series to plot");
    }
    let kmax = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0f64, f64::max);
    let ymax = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1 + p.2))
        .fold(2.0f64, f64::max)
        .min(5.0);
    let root = SVGBackend::new(out, (760, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..kmax, 0f64..ymax)?;
    chart
        .configure_mesh()
        .x_desc("radial wavenumber")
        .y_desc("standardized amplitude")
        .max_light_lines(1)
        .draw()?;
    chart.draw_series(DashedLineSeries::new(
        (0..=50).map(|i| (kmax * i as f64 / 50.0, 1.0)),
        6,
        4,
        BLACK.into(),
    ))?;
    if let Some(klr) = lr_wavenumber {
        chart.draw_series(DashedLineSeries::new(
            (0..=50).map(|i| (klr, ymax * i as f64 / 50.0)),
            6,
            4,
            RGBColor(90, 90, 90).into(),
        ))?;
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart.draw_series(AreaSeries::new(
            s.points
                .iter()
                .map(|&(k, r, b)| (k, (r + b).min(ymax)))
                .chain(s.points.iter().rev().map(|&(k, r, b)| (k, (r - b).max(0.0)))),
            0.0,
            color.mix(0.15),
        ))?;
        chart
            .draw_series(LineSeries::new(
                s.points.iter().map(|&(k, r, _)| (k, r.min(ymax))),
                color.stroke_width(2),
            ))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE.mix(0.85)).draw()?;
    root.present()?;
    Ok(())
}

pub struct QuartileSummary {
    pub label: String,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Box-style summary of per-pixel KS distributions, one box per model.
pub fn ks_summary_chart(summaries: &[QuartileSummary], title: &str, out: &Path) -> Result<()> {
    if summaries.is_empty() {
        bail!("no KS summaries to plot");
    }
    let ymax = summaries.iter().map(|s| s.q75).fold(0.2f64, f64::max) * 1.3;
    let root = SVGBackend::new(out, (620, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(56)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..summaries.len() as f64, 0f64..ymax)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(summaries.len())
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            summaries.get(i).map(|s| s.label.clone()).unwrap_or_default()
        })
        .y_desc("pixelwise KS statistic")
        .draw()?;
    for (i, s) in summaries.iter().enumerate() {
        let x0 = i as f64 + 0.25;
        let x1 = i as f64 + 0.75;
        let color = PALETTE[i % PALETTE.len()];
        chart.draw_series(std::iter::once(Rectangle::new(
            [(x0, s.q25), (x1, s.q75)],
            color.mix(0.35).filled(),
        )))?;
        chart.draw_series(std::iter::once(PathElement::new(
            vec![(x0, s.median), (x1, s.median)],
            color.stroke_width(3),
        )))?;
    }
    root.present()?;
    Ok(())
}

/// Diverging blue-white-red map for difference fields, sequential map otherwise.
fn colormap(v: f64, lo: f64, hi: f64, diverging: bool) -> [u8; 3] {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    if diverging {
        // blue -> white -> red
        if t < 0.5 {
            let u = t * 2.0;
            [
                (255.0 * u + 33.0 * (1.0 - u)) as u8,
                (255.0 * u + 102.0 * (1.0 - u)) as u8,
                (255.0 * u + 172.0 * (1.0 - u)) as u8,
            ]
        } else {
            let u = (t - 0.5) * 2.0;
            [
                (255.0 * (1.0 - u) + 178.0 * u) as u8,
                (255.0 * (1.0 - u) + 24.0 * u) as u8,
                (255.0 * (1.0 - u) + 43.0 * u) as u8,
            ]
        }
    } else {
        // dark violet -> orange -> light yellow
        let stops = [(13.0, 8.0, 135.0), (156.0, 23.0, 158.0), (237.0, 121.0, 83.0), (240.0, 249.0, 33.0)];
        let x = t * (stops.len() - 1) as f64;
        let i = (x.floor() as usize).min(stops.len() - 2);
        let u = x - i as f64;
        let (r0, g0, b0) = stops[i];
        let (r1, g1, b1) = stops[i + 1];
        [
            (r0 + (r1 - r0) * u) as u8,
            (g0 + (g1 - g0) * u) as u8,
            (b0 + (b1 - b0) * u) as u8,
        ]
    }
}

/// Renders one field as a PNG heat map, scaled up for visibility.
pub fn heatmap_png(field: &Array2<f64>, diverging: bool, out: &Path) -> Result<()> {
    let (h, w) = field.dim();
    let scale = (512 / h.max(w)).max(1);
    let (lo, hi) = if diverging {
        let amax = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (-amax, amax)
    } else {
        let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let mut img = image::RgbImage::new((w * scale) as u32, (h * scale) as u32);
    for i in 0..h {
        for j in 0..w {
            let rgb = colormap(field[(i, j)], lo, hi, diverging);
            for di in 0..scale {
                for dj in 0..scale {
                    img.put_pixel(
                        (j * scale + dj) as u32,
                        (i * scale + di) as u32,
                        image::Rgb(rgb),
                    );
                }
            }
        }
    }
    img.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
