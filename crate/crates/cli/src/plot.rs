//! SVG charts rendered from an already-written sweep.csv.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

#[derive(Debug, Clone, Copy)]
struct Point {
    x: f64,
    mean: f64,
    ci: f64,
}

type Series = BTreeMap<String, Vec<Point>>;

fn x_label(param: &str) -> &'static str {
    match param {
        "aps" => "Number of APs",
        _ => "Transmit power per AP (dBm)",
    }
}

fn read_series(csv_path: &Path) -> Result<(String, Series, Series)> {
    let mut r = csv::Reader::from_path(csv_path).with_context(|| format!("cannot read {}", csv_path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("column `{name}` missing"));
    let (c_param, c_value, c_est, c_status) = (col("param")?, col("value")?, col("estimator")?, col("status")?);
    let (c_tm, c_tc, c_cm, c_cc) =
        (col("throughput_mean")?, col("throughput_ci95")?, col("correlation_mean")?, col("correlation_ci95")?);
    let mut param = String::new();
    let mut thr = Series::new();
    let mut corr = Series::new();
    for rec in r.records() {
        let rec = rec?;
        param = rec[c_param].to_string();
        if &rec[c_status] != "ok" {
            continue;
        }
        let x: f64 = rec[c_value].parse()?;
        let est = rec[c_est].to_string();
        thr.entry(est.clone()).or_default().push(Point { x, mean: rec[c_tm].parse()?, ci: rec[c_tc].parse()? });
        if !rec[c_cm].is_empty() {
            corr.entry(est).or_default().push(Point { x, mean: rec[c_cm].parse()?, ci: rec[c_cc].parse()? });
        }
    }
    if thr.is_empty() {
        bail!("no completed sweep points in {}", csv_path.display());
    }
    Ok((param, thr, corr))
}

fn bounds(series: &Series) -> (f64, f64, f64, f64) {
    let pts = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.mean - p.ci);
        y1 = y1.max(p.mean + p.ci);
    }
    let pad_x = ((x1 - x0) * 0.05).max(0.5);
    let pad_y = ((y1 - y0) * 0.08).max(1e-3);
    (x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y)
}

fn draw(path: &Path, title: &str, xlabel: &str, ylabel: &str, series: &Series) -> Result<()> {
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let (x0, x1, y0, y1) = bounds(series);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc(xlabel).y_desc(ylabel).draw()?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().map(|p| (p.x, p.mean)), color.stroke_width(2)))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(pts.iter().map(|p| Circle::new((p.x, p.mean), 3, color.filled())))?;
        chart.draw_series(
            pts.iter().map(|p| PathElement::new(vec![(p.x, p.mean - p.ci), (p.x, p.mean + p.ci)], color)),
        )?;
    }
    chart.configure_series_labels().border_style(BLACK).background_style(WHITE.mix(0.8)).draw()?;
    root.present()?;
    Ok(())
}

/// Writes `sweep_throughput.svg` and `sweep_correlation.svg` next to the CSV.
pub fn render_sweep_charts(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (param, thr, corr) = read_series(csv_path)?;
    let xl = x_label(&param);
    let mut written = Vec::new();
    let p = out_dir.join("sweep_throughput.svg");
    draw(&p, "Average throughput", xl, "Throughput (bit/s/Hz)", &thr)?;
    written.push(p);
    if !corr.is_empty() {
        let p = out_dir.join("sweep_correlation.svg");
        draw(&p, "Channel correlation", xl, "Correlation coefficient", &corr)?;
        written.push(p);
    }
    Ok(written)
}
