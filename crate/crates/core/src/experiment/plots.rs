//! SVG panels for one run.

use std::path::Path;

use plotters::coord::Shift;
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::{
    generator_variance_series, modulus, normalize_spread, rolling_parameter_spread, LogMode,
    SpectralReport, TrajectoryLog,
};

pub const PLOT_NAMES: [&str; 5] = ["losses", "stability", "eigenvalues", "distance", "mode_collapse"];

const SIZE: (u32, u32) = (720, 480);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutcome {
    /// Written files, relative to the run directory.
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

fn plot_error<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(format!("plot rendering failed: {e}")))
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5 - 0.5 * lo.abs(), hi + 0.5 + 0.5 * hi.abs())
    }
}

fn canvas(path: &Path) -> DrawingArea<SVGBackend<'_>, Shift> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root
}

/// Positive values on a log axis; points that cannot be shown are dropped.
fn log_series_plot(
    path: &Path,
    title: &str,
    y_label: &str,
    series: &[(&str, RGBColor, Vec<(f64, f64)>)],
) -> Result<bool> {
    let shown: Vec<(&str, RGBColor, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(name, color, pts)| {
            let keep = pts.iter().copied().filter(|(_, v)| v.is_finite() && *v > 0.0).collect();
            (*name, *color, keep)
        })
        .filter(|(_, _, pts): &(&str, RGBColor, Vec<(f64, f64)>)| !pts.is_empty())
        .collect();
    let all = || shown.iter().flat_map(|(_, _, p)| p.iter().copied());
    let (Some((x0, x1)), Some((y0, y1))) = (bounds(all().map(|p| p.0)), bounds(all().map(|p| p.1))) else {
        return Ok(false);
    };
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x1 + 1.0) };
    let (y0, y1) = if y1 > y0 { (y0 / 1.5, y1 * 1.5) } else { (y0 / 10.0, y1 * 10.0) };
    let root = canvas(path);
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(72)
        .build_cartesian_2d(x0..x1, (y0..y1).log_scale())
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc(y_label)
        .draw()
        .map_err(plot_error)?;
    for (name, color, pts) in &shown {
        let color = *color;
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color))
            .map_err(plot_error)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(true)
}

fn linear_plot(path: &Path, title: &str, y_label: &str, pts: &[(f64, f64)], color: RGBColor) -> Result<bool> {
    let pts: Vec<(f64, f64)> = pts.iter().copied().filter(|(_, v)| v.is_finite()).collect();
    let (Some((x0, x1)), Some((y0, y1))) = (
        bounds(pts.iter().map(|p| p.0)),
        bounds(pts.iter().map(|p| p.1)),
    ) else {
        return Ok(false);
    };
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x1 + 1.0) };
    let (y0, y1) = padded(y0, y1);
    let root = canvas(path);
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(72)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc(y_label)
        .draw()
        .map_err(plot_error)?;
    chart
        .draw_series(LineSeries::new(pts.iter().copied(), color))
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(true)
}

fn eigenvalue_plot(path: &Path, report: &SpectralReport) -> Result<()> {
    let rho = report.eigenvalues.iter().map(modulus).fold(0.0, f64::max);
    let extent = 1.2 * rho.max(1.0);
    let root = canvas(path);
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("eigenvalues of the fitted operator", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(-extent..extent, -extent..extent)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc("Re")
        .y_desc("Im")
        .draw()
        .map_err(plot_error)?;
    let circle: Vec<(f64, f64)> = (0..=360)
        .map(|i| {
            let t = (i as f64).to_radians();
            (t.cos(), t.sin())
        })
        .collect();
    chart
        .draw_series(DashedLineSeries::new(circle, 6, 4, BLACK.into()))
        .map_err(plot_error)?;
    chart
        .draw_series(
            report
                .eigenvalues
                .iter()
                .map(|z| Circle::new((z[0], z[1]), 4, BLUE.filled())),
        )
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(())
}

/// Renders every panel the log supports into `<run_dir>/plots/`.
/// Panels that cannot be drawn are skipped with a warning.
pub fn emit_plots(run_dir: &Path, log: &TrajectoryLog, report: &SpectralReport, window: usize) -> Result<PlotOutcome> {
    let mut out = PlotOutcome::default();
    if log.is_empty() {
        out.warnings.push("empty trajectory: no plots written".into());
        return Ok(out);
    }
    let dir = run_dir.join("plots");
    std::fs::create_dir_all(&dir)?;
    let file = |name: &str| (dir.join(format!("{name}.svg")), format!("plots/{name}.svg"));
    let ks: Vec<f64> = log.snapshots().iter().map(|s| s.k as f64).collect();

    let (path, rel) = file("losses");
    let (lf, lg) = log.loss_series();
    let loss_points = |series: Option<Vec<f64>>| -> Vec<(f64, f64)> {
        series
            .map(|s| ks.iter().copied().zip(s.into_iter().map(f64::abs)).collect())
            .unwrap_or_default()
    };
    let series = [
        ("|loss_f|", RED, loss_points(lf)),
        ("|loss_g|", BLUE, loss_points(lg)),
    ];
    if log_series_plot(&path, "losses", "absolute loss", &series)? {
        out.files.push(rel);
    } else {
        out.warnings.push("losses: no positive finite values to plot".into());
    }

    let (path, rel) = file("stability");
    match rolling_parameter_spread(log, window) {
        Ok((wk, spread)) => {
            let pts: Vec<(f64, f64)> = wk.into_iter().zip(spread.into_iter().map(normalize_spread)).collect();
            if linear_plot(&path, "windowed parameter stability", "1 / (1 + spread)", &pts, GREEN)? {
                out.files.push(rel);
            }
        }
        Err(e) => out.warnings.push(format!("stability: {e}")),
    }

    let (path, rel) = file("eigenvalues");
    eigenvalue_plot(&path, report)?;
    out.files.push(rel);

    let (path, rel) = file("distance");
    let norms: Vec<f64> = log
        .snapshots()
        .iter()
        .map(|s| match log.mode() {
            LogMode::Full => s.state.iter().map(|v| v * v).sum::<f64>().sqrt(),
            LogMode::Norms => s.state[0].hypot(s.state[1]),
        })
        .collect();
    let mut series = vec![("||w_k||", BLACK, ks.iter().copied().zip(norms).collect::<Vec<_>>())];
    if log.mode() == LogMode::Full {
        let steps: Vec<(f64, f64)> = log
            .snapshots()
            .windows(2)
            .map(|p| {
                let d = p[1].state.iter().zip(&p[0].state).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                (p[1].k as f64, d.sqrt())
            })
            .collect();
        series.push(("||w_k - w_prev||", MAGENTA, steps));
    }
    if log_series_plot(&path, "parameter distance", "distance", &series)? {
        out.files.push(rel);
    } else {
        out.warnings.push("distance: no positive finite values to plot".into());
    }

    let (path, rel) = file("mode_collapse");
    match generator_variance_series(log, window) {
        Ok((wk, var, temporal)) => {
            let title = if temporal {
                "generator variance over time"
            } else {
                "generator variance across coordinates"
            };
            let pts: Vec<(f64, f64)> = wk.into_iter().zip(var).collect();
            if linear_plot(&path, title, "smoothed variance", &pts, CYAN)? {
                out.files.push(rel);
            }
        }
        Err(e) => out.warnings.push(format!("mode collapse: {e}")),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameDims;
    use crate::spectral::{analyze, SpectralParams};

    fn rotation_log() -> TrajectoryLog {
        let mut log = TrajectoryLog::new(GameDims { m: 1, n: 1 }, LogMode::Full, 1).unwrap();
        for k in 0..120u64 {
            let t = 0.1 * k as f64;
            let r = 0.99f64.powi(k as i32);
            let (x, y) = (r * t.cos(), r * t.sin());
            log.push_raw(k, Some(x * y * 1e-6f64.powf(k as f64 / 120.0)), Some(-x * y), vec![x, y])
                .unwrap();
        }
        log
    }

    #[test]
    fn writes_all_panels() {
        let dir = tempfile::tempdir().unwrap();
        let log = rotation_log();
        let report = analyze(&log, &SpectralParams::default()).unwrap();
        let out = emit_plots(dir.path(), &log, &report, 20).unwrap();
        assert_eq!(out.files.len(), 5, "{:?}", out.warnings);
        for f in &out.files {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(text.starts_with("<svg"));
        }
        let eig = std::fs::read_to_string(dir.path().join("plots/eigenvalues.svg")).unwrap();
        assert_eq!(eig.matches("<circle").count(), 2);
        assert!(eig.contains("<polyline") || eig.contains("<path") || eig.contains("<line"));
    }

    #[test]
    fn empty_log_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let log = TrajectoryLog::new(GameDims { m: 1, n: 1 }, LogMode::Full, 1).unwrap();
        let report = SpectralReport::unavailable(&log, &SpectralParams::default(), "empty");
        let out = emit_plots(dir.path(), &log, &report, 20).unwrap();
        assert!(out.files.is_empty());
        assert_eq!(out.warnings.len(), 1);
        assert!(!dir.path().join("plots").exists());
    }

    #[test]
    fn log_axis_keeps_wide_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.svg");
        let pts: Vec<(f64, f64)> = (0..7).map(|i| (i as f64, 10f64.powi(-i))).collect();
        assert!(log_series_plot(&path, "wide", "v", &[("v", RED, pts)]).unwrap());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("<polyline") || text.contains("<path"));
    }
}
