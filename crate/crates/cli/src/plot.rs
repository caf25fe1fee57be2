use std::path::Path;

use anyhow::{anyhow, Result};
use flexdet::nas::ParetoReport;
use plotters::prelude::*;

/// Accuracy-vs-latency scatter of every evaluated config with the frontier
/// drawn as a line. Output is an SVG that depends only on the report.
pub fn plot_frontier(report: &ParetoReport, path: &Path) -> Result<()> {
    let pts: Vec<(f64, f64)> = report
        .points
        .iter()
        .filter_map(|p| Some((p.latency_ms?, p.accuracy? * 100.0)))
        .collect();
    let front: Vec<(f64, f64)> = report
        .frontier_points()
        .iter()
        .map(|p| (p.latency_ms.unwrap(), p.accuracy.unwrap() * 100.0))
        .collect();

    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 100.0);
    }
    let pad = |lo: f64, hi: f64| {
        let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
        (lo - 0.05 * span, hi + 0.05 * span)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);

    let err = |e: DrawingAreaErrorKind<_>| anyhow!("plotting {}: {e}", path.display());
    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("accuracy vs latency", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("latency (ms)")
        .y_desc("AP")
        .draw()
        .map_err(err)?;
    chart
        .draw_series(pts.iter().map(|&p| Circle::new(p, 3, RGBColor(150, 150, 150).filled())))
        .map_err(err)?;
    chart
        .draw_series(LineSeries::new(front.clone(), RED.stroke_width(2)))
        .map_err(err)?;
    chart
        .draw_series(front.iter().map(|&p| Circle::new(p, 4, RED.filled())))
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}
