//! Scalar stability indices over sliding windows. Every `[0, 1]` index maps a
//! non-negative spread `σ` to `1 / (1 + σ)`.

use crate::error::{Error, Result};

use super::log::{LogMode, TrajectoryLog};

pub fn normalize_spread(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma)
}

fn check_window(window: usize) -> Result<()> {
    if window < 2 {
        return Err(Error::usage(format!("window must be >= 2, got {window}")));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
fn std_dev(x: &[f64]) -> f64 {
    let mu = mean(x);
    (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Least-squares slope of `y` against `x`; zero for fewer than two distinct points.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx > 0.0 { sxy / sxx } else { 0.0 }
}

/// `1/(1+σ)` with `σ` the mean within-window standard deviation of the series.
/// The window is capped at the series length.
pub fn loss_stability_index(series: &[f64], window: usize) -> Result<f64> {
    check_window(window)?;
    if series.len() < 2 {
        return Err(Error::usage("loss stability needs at least two values"));
    }
    let w = window.min(series.len());
    let spreads: Vec<f64> = series.windows(w).map(std_dev).collect();
    Ok(normalize_spread(mean(&spreads)))
}

fn full_states(log: &TrajectoryLog) -> Result<Vec<&[f64]>> {
    if log.mode() != LogMode::Full {
        return Err(Error::usage("index needs full-state snapshots"));
    }
    if log.len() < 2 {
        return Err(Error::usage("index needs at least two snapshots"));
    }
    Ok(log.snapshots().iter().map(|s| s.state.as_slice()).collect())
}

/// Root-mean-square distance of the iterates to their window mean.
fn window_spread(states: &[&[f64]]) -> f64 {
    let d = states[0].len();
    let n = states.len() as f64;
    let centre: Vec<f64> = (0..d).map(|i| states.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let sq: f64 = states
        .iter()
        .map(|s| s.iter().zip(&centre).map(|(a, c)| (a - c).powi(2)).sum::<f64>())
        .sum();
    (sq / n).sqrt()
}

/// Per-window RMS distance to the window mean, keyed by the window's mean iteration.
pub fn rolling_parameter_spread(log: &TrajectoryLog, window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_window(window)?;
    let states = full_states(log)?;
    let ks: Vec<f64> = log.snapshots().iter().map(|s| s.k as f64).collect();
    let w = window.min(states.len());
    Ok((
        ks.windows(w).map(mean).collect(),
        states.windows(w).map(window_spread).collect(),
    ))
}

/// `1/(1+σ)` with `σ` the mean over sliding windows of the RMS distance between
/// the iterates and the window's mean iterate.
pub fn global_stability_index(log: &TrajectoryLog, window: usize) -> Result<f64> {
    let (_, spreads) = rolling_parameter_spread(log, window)?;
    Ok(normalize_spread(mean(&spreads)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCollapse {
    /// Slope of the smoothed generator variance per iteration.
    pub slope: f64,
    /// `m = 1`: the variance was taken over time instead of across coordinates.
    pub temporal_fallback: bool,
}

impl ModeCollapse {
    pub fn is_high(&self, threshold: f64) -> bool {
        self.slope < -threshold
    }
}

/// Smoothed spread of the generator parameters `θ_G = w[..m]`, keyed by the
/// window's mean iteration. The flag is set when `m = 1` forced the temporal variant.
///
/// With `m > 1` the per-snapshot variance across coordinates is smoothed by a
/// moving average; with `m = 1` the rolling variance over time is used.
pub fn generator_variance_series(log: &TrajectoryLog, window: usize) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    check_window(window)?;
    let states = full_states(log)?;
    let m = log.dims().m;
    let ks: Vec<f64> = log.snapshots().iter().map(|s| s.k as f64).collect();
    let w = window.min(states.len());
    let window_k: Vec<f64> = ks.windows(w).map(mean).collect();
    if m > 1 {
        let variance: Vec<f64> = states.iter().map(|s| std_dev(&s[..m]).powi(2)).collect();
        Ok((window_k, variance.windows(w).map(mean).collect(), false))
    } else {
        let theta: Vec<f64> = states.iter().map(|s| s[0]).collect();
        Ok((window_k, theta.windows(w).map(|x| std_dev(x).powi(2)).collect(), true))
    }
}

/// Least-squares trend of [`generator_variance_series`].
pub fn mode_collapse_trend(log: &TrajectoryLog, window: usize) -> Result<ModeCollapse> {
    let (ks, values, temporal_fallback) = generator_variance_series(log, window)?;
    Ok(ModeCollapse {
        slope: least_squares_slope(&ks, &values),
        temporal_fallback,
    })
}
