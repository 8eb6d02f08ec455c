use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

/// One named line per input file.
struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("{}: cannot draw chart: {e}", path.display()))
}

fn stem(path: &Path) -> String {
    let parent = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned());
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match parent {
        Some(p) => format!("{p}/{name}"),
        None => name,
    }
}

/// Reads a CSV whose first row names the columns. The x axis is the first
/// column when numeric, the 1-based row number otherwise; every other
/// numeric column becomes a series.
fn read_csv(path: &Path) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{}: empty log", path.display())))?
        .split(',')
        .collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!("{}: empty log", path.display())));
    }
    let numeric = |c: usize| rows.iter().all(|r| r.get(c).is_some_and(|v| v.is_empty() || v.parse::<f64>().is_ok()));
    let x_numeric = numeric(0);
    let xs: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| if x_numeric { r[0].parse().unwrap_or(i as f64 + 1.0) } else { i as f64 + 1.0 })
        .collect();
    let mut out = Vec::new();
    for (c, name) in header.iter().enumerate().skip(1) {
        if !numeric(c) {
            continue;
        }
        let points = rows
            .iter()
            .zip(&xs)
            .filter_map(|(r, &x)| r[c].parse::<f64>().ok().filter(|y| y.is_finite()).map(|y| (x, y)))
            .collect();
        out.push((name.to_string(), points));
    }
    Ok(out)
}

fn read_report(path: &Path) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvalReport = serde_json::from_str(&text)?;
    if report.recall.is_empty() {
        return Err(Error::invalid(format!("{}: report has no recall rows", path.display())));
    }
    let pick = |f: fn(&crate::metrics::PartitionScores) -> Option<f64>| {
        report
            .recall
            .iter()
            .filter_map(|r| f(&r.scores).map(|v| (r.k as f64, v)))
            .collect::<Vec<_>>()
    };
    Ok(vec![
        ("recall_full".into(), pick(|s| s.full)),
        ("recall_seen".into(), pick(|s| s.seen)),
        ("recall_unseen".into(), pick(|s| s.unseen)),
    ])
}

fn bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pad = (y1 - y0) * 0.05;
    ((x0, x1), (y0 - pad, y1 + pad))
}

fn draw(path: &Path, title: &str, series: &[Series]) -> Result<()> {
    let ((x0, x1), (y0, y1)) = bounds(series);
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(path, e))?;
    chart.configure_mesh().draw().map_err(|e| plot_err(path, e))?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

/// Draws one SVG per metric into `out`. Inputs are loss logs, ablation
/// tables or `report.json` files; runs sharing a metric share its chart.
pub fn plot(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::config("plot needs at least one input file"));
    }
    let mut metrics: Vec<(String, Vec<Series>)> = Vec::new();
    for input in inputs {
        let columns = if input.extension().is_some_and(|e| e == "json") {
            read_report(input)?
        } else {
            read_csv(input)?
        };
        for (name, points) in columns {
            let s = Series {
                label: stem(input),
                points,
            };
            match metrics.iter_mut().find(|(n, _)| *n == name) {
                Some((_, list)) => list.push(s),
                None => metrics.push((name, vec![s])),
            }
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for (name, series) in &metrics {
        let series: Vec<Series> = series
            .iter()
            .filter(|s| !s.points.is_empty())
            .map(|s| Series {
                label: s.label.clone(),
                points: s.points.clone(),
            })
            .collect();
        if series.is_empty() {
            continue;
        }
        let file: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
        let path = out.join(format!("{file}.svg"));
        draw(&path, name, &series)?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(Error::invalid("no plottable series in the inputs"));
    }
    Ok(written)
}
