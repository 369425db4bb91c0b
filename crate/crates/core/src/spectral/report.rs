use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::fit::{dominant_eigenvalues, dominant_eigenvalues_iterative, fit_reduced_operator};
use super::indices::{global_stability_index, loss_stability_index, mode_collapse_trend};
use super::log::{LogMode, TrajectoryLog};
use super::psd::{welch_psd, Detrend, WelchOptions, MIN_WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Stable,
    Marginal,
    Unstable,
}

impl StabilityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityClass::Stable => "stable",
            StabilityClass::Marginal => "marginal",
            StabilityClass::Unstable => "unstable",
        }
    }
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseLevel {
    High,
    Low,
}

/// Diagnostic parameters; every field has a default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralParams {
    pub rank: usize,
    pub eps: f64,
    pub hf_cutoff: f64,
    pub hf_ratio_threshold: f64,
    /// Sliding window for the indices.
    pub window: usize,
    /// Welch segment length; `None` means `min(256, len)`.
    pub welch_window: Option<usize>,
    pub detrend: Detrend,
    /// Subtract the snapshot mean before the operator fit.
    pub center: bool,
    /// Use the Arnoldi eigen path instead of the dense solver.
    pub iterative: bool,
    pub collapse_threshold: f64,
}

impl Default for SpectralParams {
    fn default() -> Self {
        SpectralParams {
            rank: 40,
            eps: 0.05,
            hf_cutoff: 0.1,
            hf_ratio_threshold: 0.2,
            window: 20,
            welch_window: None,
            detrend: Detrend::None,
            center: false,
            iterative: false,
            collapse_threshold: 1e-3,
        }
    }
}

impl SpectralParams {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::usage("rank must be >= 1"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::usage(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.hf_cutoff > 0.0 && self.hf_cutoff < 0.5) {
            return Err(Error::usage(format!("hf_cutoff must lie in (0, 0.5), got {}", self.hf_cutoff)));
        }
        if !(0.0..=1.0).contains(&self.hf_ratio_threshold) {
            return Err(Error::usage("hf_ratio_threshold must lie in [0, 1]"));
        }
        if self.window < 2 {
            return Err(Error::usage("window must be >= 2"));
        }
        if self.welch_window.is_some_and(|w| w < MIN_WINDOW) {
            return Err(Error::usage(format!("welch_window must be >= {MIN_WINDOW}")));
        }
        if !(self.collapse_threshold >= 0.0) {
            return Err(Error::usage("collapse_threshold must be >= 0"));
        }
        Ok(())
    }

    fn welch(&self) -> WelchOptions {
        WelchOptions {
            window_len: self.welch_window,
            overlap: None,
            detrend: self.detrend,
        }
    }
}

/// The classification rule given the high-frequency ratio (if one could be computed).
/// Inside the band, a missing ratio counts as marginal.
pub fn classify_from_ratio(
    rho: f64,
    eps: f64,
    hf_ratio: Option<f64>,
    hf_ratio_threshold: f64,
) -> StabilityClass {
    if rho < 1.0 - eps {
        StabilityClass::Stable
    } else if rho > 1.0 + eps {
        StabilityClass::Unstable
    } else {
        match hf_ratio {
            Some(r) if r > hf_ratio_threshold => StabilityClass::Unstable,
            _ => StabilityClass::Marginal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class: StabilityClass,
    pub hf_ratio: Option<f64>,
    pub flags: Vec<String>,
}

/// Largest high-frequency power fraction over the available loss series.
pub fn high_frequency_ratio(
    series: &[&[f64]],
    hf_cutoff: f64,
    welch: &WelchOptions,
    flags: &mut Vec<String>,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for s in series {
        match welch_psd(s, welch) {
            Ok(psd) => {
                if psd.window_shrunk && !flags.iter().any(|f| f == "welch_window_shrunk") {
                    flags.push("welch_window_shrunk".into());
                }
                let r = psd.high_frequency_ratio(hf_cutoff);
                best = Some(best.map_or(r, |b: f64| b.max(r)));
            }
            Err(_) => {
                if !flags.iter().any(|f| f == "loss_series_too_short") {
                    flags.push("loss_series_too_short".into());
                }
            }
        }
    }
    best
}

pub fn classify_stability(
    rho: f64,
    loss_f: Option<&[f64]>,
    loss_g: Option<&[f64]>,
    params: &SpectralParams,
) -> Classification {
    let mut flags = Vec::new();
    let series: Vec<&[f64]> = [loss_f, loss_g].into_iter().flatten().collect();
    if series.is_empty() {
        flags.push("losses_missing".into());
    }
    let hf_ratio = high_frequency_ratio(&series, params.hf_cutoff, &params.welch(), &mut flags);
    let class = classify_from_ratio(rho, params.eps, hf_ratio, params.hf_ratio_threshold);
    if hf_ratio.is_none() && class == StabilityClass::Marginal {
        flags.push("hf_ratio_unavailable".into());
    }
    Classification {
        class,
        hf_ratio,
        flags,
    }
}

/// Spectral and stability summary of one trajectory.
///
/// Optional fields are `null` when the log does not carry what they need; the
/// reason is listed in `flags`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// `[re, im]` pairs, descending modulus.
    pub eigenvalues: Vec<[f64; 2]>,
    pub spectral_radius: Option<f64>,
    pub stability_class: Option<StabilityClass>,
    pub high_freq_power_ratio: Option<f64>,
    pub loss_stability: Option<f64>,
    pub mode_collapse_trend: Option<f64>,
    pub mode_collapse: Option<CollapseLevel>,
    pub global_stability: Option<f64>,
    pub requested_rank: usize,
    pub effective_rank: usize,
    pub eps: f64,
    pub hf_cutoff: f64,
    pub hf_ratio_threshold: f64,
    pub snapshots: usize,
    pub stride: u64,
    pub eigen_solver: String,
    pub flags: Vec<String>,
}

pub fn modulus(z: &[f64; 2]) -> f64 {
    z[0].hypot(z[1])
}

impl SpectralReport {
    /// A report with every derived field missing, for logs that cannot be analyzed.
    pub fn unavailable(log: &TrajectoryLog, params: &SpectralParams, reason: &str) -> Self {
        SpectralReport {
            eigenvalues: Vec::new(),
            spectral_radius: None,
            stability_class: None,
            high_freq_power_ratio: None,
            loss_stability: None,
            mode_collapse_trend: None,
            mode_collapse: None,
            global_stability: None,
            requested_rank: params.rank,
            effective_rank: 0,
            eps: params.eps,
            hf_cutoff: params.hf_cutoff,
            hf_ratio_threshold: params.hf_ratio_threshold,
            snapshots: log.len(),
            stride: log.stride(),
            eigen_solver: "none".into(),
            flags: vec![reason.to_string()],
        }
    }

    /// Checks the report's internal invariants.
    pub fn is_consistent(&self) -> bool {
        let rho = self.eigenvalues.iter().map(modulus).fold(0.0, f64::max);
        let rho_ok = match self.spectral_radius {
            Some(r) => r == rho,
            None => self.eigenvalues.is_empty(),
        };
        let class_ok = match (self.spectral_radius, self.stability_class) {
            (Some(r), Some(c)) => {
                c == classify_from_ratio(r, self.eps, self.high_freq_power_ratio, self.hf_ratio_threshold)
            }
            (None, None) => true,
            _ => false,
        };
        let unit = |v: Option<f64>| v.is_none_or(|x| (0.0..=1.0).contains(&x));
        rho_ok
            && class_ok
            && unit(self.high_freq_power_ratio)
            && unit(self.loss_stability)
            && unit(self.global_stability)
    }
}

fn push_flag(flags: &mut Vec<String>, flag: &str) {
    if !flags.iter().any(|f| f == flag) {
        flags.push(flag.to_string());
    }
}

/// Runs fit, eigenvalues, classification and indices on one log.
pub fn analyze(log: &TrajectoryLog, params: &SpectralParams) -> Result<SpectralReport> {
    params.validate()?;
    if log.len() < 2 {
        return Err(Error::usage(format!(
            "analysis needs at least two snapshots, got {}",
            log.len()
        )));
    }
    let mut flags = Vec::new();
    let (loss_f, loss_g) = log.loss_series();
    let series: Vec<&[f64]> = [loss_f.as_deref(), loss_g.as_deref()].into_iter().flatten().collect();
    if series.is_empty() {
        push_flag(&mut flags, "losses_missing");
    }
    let hf_ratio = high_frequency_ratio(&series, params.hf_cutoff, &params.welch(), &mut flags);
    let loss_stability = match loss_f.as_deref() {
        Some(f) => Some(loss_stability_index(f, params.window)?),
        None => None,
    };

    let mut report = SpectralReport {
        eigenvalues: Vec::new(),
        spectral_radius: None,
        stability_class: None,
        high_freq_power_ratio: hf_ratio,
        loss_stability,
        mode_collapse_trend: None,
        mode_collapse: None,
        global_stability: None,
        requested_rank: params.rank,
        effective_rank: 0,
        eps: params.eps,
        hf_cutoff: params.hf_cutoff,
        hf_ratio_threshold: params.hf_ratio_threshold,
        snapshots: log.len(),
        stride: log.stride(),
        eigen_solver: "none".into(),
        flags,
    };
    if log.mode() != LogMode::Full {
        push_flag(&mut report.flags, "state_not_recorded");
        return Ok(report);
    }

    let rank = params.rank.min(log.len() - 1).min(log.state_len());
    if rank < params.rank {
        push_flag(&mut report.flags, "rank_capped");
    }
    let fit = fit_reduced_operator(log, rank, params.center)?;
    if fit.effective_rank < rank {
        push_flag(&mut report.flags, "rank_reduced");
    }
    let eigenvalues = if params.iterative {
        let res = dominant_eigenvalues_iterative(&fit.matrix)?;
        if res.fell_back {
            push_flag(&mut report.flags, "iterative_eigen_fallback");
            report.eigen_solver = "dense".into();
        } else {
            report.eigen_solver = "arnoldi".into();
        }
        res.eigenvalues
    } else {
        report.eigen_solver = "dense".into();
        dominant_eigenvalues(&fit.matrix)?
    };
    report.eigenvalues = eigenvalues.iter().map(|z| [z.re, z.im]).collect();
    let rho = report.eigenvalues.iter().map(modulus).fold(0.0, f64::max);
    report.effective_rank = fit.effective_rank;
    report.spectral_radius = Some(rho);
    let class = classify_from_ratio(rho, params.eps, hf_ratio, params.hf_ratio_threshold);
    if hf_ratio.is_none() && class == StabilityClass::Marginal {
        push_flag(&mut report.flags, "hf_ratio_unavailable");
    }
    report.stability_class = Some(class);

    report.global_stability = Some(global_stability_index(log, params.window)?);
    let collapse = mode_collapse_trend(log, params.window)?;
    if collapse.temporal_fallback {
        push_flag(&mut report.flags, "mode_collapse_temporal_variance");
    }
    report.mode_collapse_trend = Some(collapse.slope);
    report.mode_collapse = Some(if collapse.is_high(params.collapse_threshold) {
        CollapseLevel::High
    } else {
        CollapseLevel::Low
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{GameDims, JointIterate};

    fn smooth_losses(len: usize) -> Vec<f64> {
        (0..len).map(|k| 0.98f64.powi(k as i32)).collect()
    }

    fn rough_losses(len: usize) -> Vec<f64> {
        (0..len).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect()
    }

    #[test]
    fn classification_fixtures() {
        let p = SpectralParams::default();
        let smooth = smooth_losses(200);
        let rough = rough_losses(200);
        let class = |rho: f64, l: &[f64]| classify_stability(rho, Some(l), Some(l), &p).class;
        assert_eq!(class(0.90, &smooth), StabilityClass::Stable);
        assert_eq!(class(1.02, &smooth), StabilityClass::Marginal);
        assert_eq!(class(1.02, &rough), StabilityClass::Unstable);
        assert_eq!(class(2.81, &smooth), StabilityClass::Unstable);
        assert_eq!(class(1.48, &smooth), StabilityClass::Unstable);
        // The rule looks at the worse of the two players.
        let mixed = classify_stability(1.0, Some(&smooth), Some(&rough), &p);
        assert_eq!(mixed.class, StabilityClass::Unstable);
    }

    #[test]
    fn missing_ratio_is_marginal_and_flagged() {
        let p = SpectralParams::default();
        let c = classify_stability(1.0, None, None, &p);
        assert_eq!(c.class, StabilityClass::Marginal);
        assert!(c.flags.contains(&"hf_ratio_unavailable".to_string()));
        let short = [1.0, 2.0, 3.0];
        let c = classify_stability(1.0, Some(&short), None, &p);
        assert!(c.flags.contains(&"loss_series_too_short".to_string()));
        assert_eq!(classify_stability(0.5, None, None, &p).class, StabilityClass::Stable);
    }

    #[test]
    fn geometric_growth_is_unstable() {
        let states: Vec<Vec<f64>> = (0..60).map(|k| vec![1.2f64.powi(k), -0.5 * 1.2f64.powi(k)]).collect();
        let log = TrajectoryLog::from_states(GameDims { m: 1, n: 1 }, states).unwrap();
        let report = analyze(&log, &SpectralParams::default()).unwrap();
        assert!((report.spectral_radius.unwrap() - 1.2).abs() < 1e-10);
        assert_eq!(report.stability_class, Some(StabilityClass::Unstable));
        assert_eq!(report.effective_rank, 1);
        assert!(report.flags.contains(&"rank_capped".to_string()) || report.requested_rank == 40);
        assert!(report.is_consistent());
    }

    #[test]
    fn report_json_round_trip() {
        let mut log = TrajectoryLog::new(GameDims { m: 2, n: 1 }, LogMode::Full, 1).unwrap();
        let mut w = JointIterate::from_slices(&[1.0, 0.5], &[-0.3]);
        for k in 0..80 {
            let lf = w.x.dot(&w.x);
            log.push(k, Some(lf), Some(-lf), &w).unwrap();
            w = JointIterate::from_slices(
                &[0.9 * w.x[0] - 0.2 * w.y[0], 0.95 * w.x[1]],
                &[0.2 * w.x[0] + 0.9 * w.y[0]],
            );
        }
        let report = analyze(&log, &SpectralParams::default()).unwrap();
        assert!(report.is_consistent());
        let text = serde_json::to_string_pretty(&report).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let first = &value["eigenvalues"][0];
        assert_eq!(first.as_array().map(|a| a.len()), Some(2));
        let back: SpectralReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert!(back.is_consistent());
    }

    #[test]
    fn norm_logs_give_partial_reports() {
        let mut log = TrajectoryLog::new(GameDims { m: 1, n: 1 }, LogMode::Norms, 1).unwrap();
        for k in 0..30 {
            let w = JointIterate::from_slices(&[k as f64], &[1.0]);
            log.push(k, Some(1.0), Some(1.0), &w).unwrap();
        }
        let report = analyze(&log, &SpectralParams::default()).unwrap();
        assert!(report.spectral_radius.is_none() && report.stability_class.is_none());
        assert!(report.flags.contains(&"state_not_recorded".to_string()));
        assert_eq!(report.loss_stability, Some(1.0));
        assert!(report.is_consistent());
    }

    #[test]
    fn iterative_path_matches_dense() {
        let states: Vec<Vec<f64>> = (0..100)
            .map(|k| {
                let t = 0.2 * k as f64;
                let a = 0.97f64.powi(k);
                vec![a * t.cos(), a * t.sin(), 0.5f64.powi(k), 0.8f64.powi(k)]
            })
            .collect();
        let log = TrajectoryLog::from_states(GameDims { m: 2, n: 2 }, states).unwrap();
        let dense = analyze(&log, &SpectralParams::default()).unwrap();
        let iter = analyze(
            &log,
            &SpectralParams {
                iterative: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((dense.spectral_radius.unwrap() - 0.97).abs() < 1e-8);
        assert!((dense.spectral_radius.unwrap() - iter.spectral_radius.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn params_validation() {
        assert!(SpectralParams::default().validate().is_ok());
        for bad in [
            SpectralParams { eps: 0.0, ..Default::default() },
            SpectralParams { hf_cutoff: 0.5, ..Default::default() },
            SpectralParams { window: 1, ..Default::default() },
            SpectralParams { rank: 0, ..Default::default() },
            SpectralParams { welch_window: Some(4), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
