//! Trajectory diagnostics: a reduced linear operator fitted to successive
//! iterates, its dominant spectrum, a Welch-refined stability class and
//! sliding-window stability indices.

mod fit;
mod indices;
mod log;
mod psd;
mod report;

pub use fit::{
    dominant_eigenvalues, dominant_eigenvalues_iterative, fit_reduced_operator, IterativeEigen,
    ReducedOperator, RANK_TOLERANCE,
};
pub use indices::{
    generator_variance_series, global_stability_index, least_squares_slope, loss_stability_index,
    mode_collapse_trend, normalize_spread, rolling_parameter_spread, ModeCollapse,
};
pub use log::{LogMode, Snapshot, TrajectoryLog};
pub use psd::{hann, welch_psd, Detrend, Psd, WelchOptions};
pub use report::{
    analyze, classify_from_ratio, classify_stability, high_frequency_ratio, modulus,
    Classification, CollapseLevel, SpectralParams, SpectralReport, StabilityClass,
};
