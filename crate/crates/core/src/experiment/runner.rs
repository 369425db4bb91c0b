use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{evaluate_field, Batch, BatchToken, Game, GameDims, JointIterate};
use crate::optimizers::{build_optimizer, OptimizerConfig, OptimizerKind};
use crate::spectral::{analyze, SpectralReport, TrajectoryLog};

use super::config::{ExperimentConfig, GameSpec, OptimizerSpec};
use super::plots::emit_plots;

/// Runs stop once `‖w‖` exceeds this.
pub const DIVERGENCE_NORM: f64 = 1e12;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 13] = [
    "game",
    "optimizer",
    "status",
    "steps_completed",
    "spectral_radius",
    "stability_class",
    "final_grad_norm",
    "final_loss_f",
    "final_loss_g",
    "final_w_norm",
    "wall_time_s",
    "run_dir",
    "plots",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
        }
    }
}

/// Everything a single (game, optimizer) run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub game: String,
    pub optimizer: String,
    pub kind: OptimizerKind,
    pub dims: GameDims,
    pub status: RunStatus,
    pub divergence: Option<String>,
    pub steps_completed: u64,
    pub final_iterate: JointIterate,
    pub final_grad_norm: Option<f64>,
    pub final_loss_f: Option<f64>,
    pub final_loss_g: Option<f64>,
    pub log: TrajectoryLog,
    pub report: SpectralReport,
    pub wall_time_s: f64,
}

/// Metadata written next to each run's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub game: String,
    pub optimizer: String,
    pub kind: OptimizerKind,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub steps_requested: u64,
    pub steps_completed: u64,
    pub status: RunStatus,
    pub divergence: Option<String>,
    pub optimizer_config: OptimizerConfig,
    pub plots: Vec<String>,
    pub plot_warnings: Vec<String>,
}

fn losses(game: &dyn Game, w: &JointIterate) -> (Option<f64>, Option<f64>) {
    let finite = |v: Option<f64>| v.filter(|x| x.is_finite());
    (
        finite(game.loss_f(w, &Batch::Full)),
        finite(game.loss_g(w, &Batch::Full)),
    )
}

/// Runs one optimizer on one game. Numerical failures and the norm guard end the
/// run early as diverged; the truncated log is still analyzed. Logged losses and
/// the final field norm use the full data set.
pub fn run_single(game_spec: &GameSpec, opt_spec: &OptimizerSpec, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    let game = game_spec.build(cfg.seed)?;
    let dims = game.dims();
    let opt_cfg = opt_spec.config();
    let mut optimizer = build_optimizer(opt_spec.name, opt_cfg, dims)?;
    let mut w = game_spec.initial_iterate(dims, cfg.seed)?;
    let mut log = TrajectoryLog::new(dims, cfg.logging.mode, cfg.logging.stride)?;
    let (lf, lg) = losses(game.as_ref(), &w);
    log.push(0, lf, lg, &w)?;

    let mut status = RunStatus::Completed;
    let mut divergence = None;
    let mut completed = 0;
    for k in 0..cfg.steps {
        let next = match optimizer.step(game.as_ref(), &w, BatchToken::new(cfg.seed, k)) {
            Ok(next) => next,
            Err(e @ Error::Numerical { .. }) => {
                status = RunStatus::Diverged;
                divergence = Some(format!("step {k}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        w = next;
        completed = k + 1;
        let norm = w.norm();
        let (lf, lg) = losses(game.as_ref(), &w);
        let blown = !(norm <= DIVERGENCE_NORM);
        if completed % cfg.logging.stride == 0 || blown {
            log.push(completed, lf, lg, &w)?;
        }
        if blown {
            status = RunStatus::Diverged;
            divergence = Some(format!("step {k}: |w| = {norm:e} exceeds {DIVERGENCE_NORM:e}"));
            break;
        }
    }

    let report = match analyze(&log, &cfg.spectral) {
        Ok(r) => r,
        Err(e @ (Error::Usage(_) | Error::Numerical { .. })) => {
            SpectralReport::unavailable(&log, &cfg.spectral, &format!("analysis_failed: {e}"))
        }
        Err(e) => return Err(e),
    };
    let final_grad_norm = evaluate_field(game.as_ref(), &w, &Batch::Full).ok().map(|f| f.norm());
    let (final_loss_f, final_loss_g) = losses(game.as_ref(), &w);
    Ok(RunOutcome {
        game: game_spec.label(),
        optimizer: opt_spec.label(),
        kind: opt_spec.name,
        dims,
        status,
        divergence,
        steps_completed: completed,
        final_iterate: w,
        final_grad_norm,
        final_loss_f,
        final_loss_g,
        log,
        report,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub game: String,
    pub optimizer: String,
    pub status: RunStatus,
    pub steps_completed: u64,
    pub spectral_radius: Option<f64>,
    pub stability_class: Option<String>,
    pub final_grad_norm: Option<f64>,
    pub final_loss_f: Option<f64>,
    pub final_loss_g: Option<f64>,
    pub final_w_norm: f64,
    pub wall_time_s: f64,
    pub run_dir: String,
    pub plots: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<SummaryRow>,
    pub warnings: Vec<String>,
}

pub fn run_dir_name(game: &str, optimizer: &str) -> String {
    format!("{game}__{optimizer}")
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_run(out_dir: &Path, run: &RunOutcome, cfg: &ExperimentConfig) -> Result<(SummaryRow, Vec<String>)> {
    let name = run_dir_name(&run.game, &run.optimizer);
    let dir = out_dir.join(&name);
    std::fs::create_dir_all(&dir)?;
    run.log.write_csv(BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    write_json(&dir.join("report.json"), &run.report)?;
    let plots = if cfg.plots {
        emit_plots(&dir, &run.log, &run.report, cfg.spectral.window)?
    } else {
        Default::default()
    };
    let meta = RunMeta {
        game: run.game.clone(),
        optimizer: run.optimizer.clone(),
        kind: run.kind,
        m: run.dims.m,
        n: run.dims.n,
        seed: cfg.seed,
        steps_requested: cfg.steps,
        steps_completed: run.steps_completed,
        status: run.status,
        divergence: run.divergence.clone(),
        optimizer_config: cfg
            .optimizers
            .iter()
            .find(|o| o.label() == run.optimizer)
            .map(|o| o.config())
            .unwrap_or_default(),
        plots: plots.files.clone(),
        plot_warnings: plots.warnings.clone(),
    };
    write_json(&dir.join("run.json"), &meta)?;
    let row = SummaryRow {
        game: run.game.clone(),
        optimizer: run.optimizer.clone(),
        status: run.status,
        steps_completed: run.steps_completed,
        spectral_radius: run.report.spectral_radius,
        stability_class: run.report.stability_class.map(|c| c.to_string()),
        final_grad_norm: run.final_grad_norm,
        final_loss_f: run.final_loss_f,
        final_loss_g: run.final_loss_g,
        final_w_norm: run.final_iterate.norm(),
        wall_time_s: run.wall_time_s,
        run_dir: name.clone(),
        plots: plots.files.iter().map(|f| format!("{name}/{f}")).collect(),
    };
    let warnings = plots
        .warnings
        .into_iter()
        .map(|w| format!("{name}: {w}"))
        .collect();
    Ok((row, warnings))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(SUMMARY_HEADER).map_err(io)?;
    for r in rows {
        out.write_record([
            r.game.clone(),
            r.optimizer.clone(),
            r.status.as_str().to_string(),
            r.steps_completed.to_string(),
            opt_num(r.spectral_radius),
            r.stability_class.clone().unwrap_or_default(),
            opt_num(r.final_grad_norm),
            opt_num(r.final_loss_f),
            opt_num(r.final_loss_g),
            num(r.final_w_norm),
            format!("{:.6}", r.wall_time_s),
            r.run_dir.clone(),
            r.plots.join(";"),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Runs every game against every optimizer, `parallel` runs at a time, and writes
/// all artifacts under `out_dir`. The configuration is validated before anything
/// is written. A diverged run does not affect its siblings.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, parallel: usize) -> Result<RunSummary> {
    cfg.validate()?;
    let jobs: Vec<(&GameSpec, &OptimizerSpec)> = cfg
        .games
        .iter()
        .flat_map(|g| cfg.optimizers.iter().map(move |o| (g, o)))
        .collect();
    std::fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let results: Vec<Result<(SummaryRow, Vec<String>)>> = pool.install(|| {
        jobs.par_iter()
            .map(|(g, o)| {
                let run = run_single(g, o, cfg)?;
                log::info!(
                    "{} / {}: {} after {} steps",
                    run.game,
                    run.optimizer,
                    run.status.as_str(),
                    run.steps_completed
                );
                write_run(out_dir, &run, cfg)
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for r in results {
        let (row, w) = r?;
        rows.push(row);
        warnings.extend(w);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    write_summary(&out_dir.join(SUMMARY_FILE), &rows)?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        rows,
        warnings,
    })
}

/// Re-renders the plots of a run directory, or of every run listed in an
/// experiment directory's summary.
pub fn replot(dir: &Path, window: usize) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    let run_dirs: Vec<PathBuf> = if dir.join(SUMMARY_FILE).exists() {
        let mut reader = csv::Reader::from_path(dir.join(SUMMARY_FILE))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let mut dirs = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Usage(format!("malformed summary: {e}")))?;
            dirs.push(dir.join(&rec[11]));
        }
        dirs
    } else {
        vec![dir.to_path_buf()]
    };
    for run in run_dirs {
        let meta: RunMeta = read_json(&run.join("run.json"))?;
        let report: SpectralReport = read_json(&run.join("report.json"))?;
        let dims = GameDims::new(meta.m, meta.n)?;
        let log = TrajectoryLog::read_csv(File::open(run.join("trajectory.csv"))?, dims)?;
        let out = emit_plots(&run, &log, &report, window)?;
        warnings.extend(out.warnings.into_iter().map(|w| format!("{}: {w}", run.display())));
    }
    Ok(warnings)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bilinear_config(steps: u64) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
steps = {steps}
seed = 1
plots = false
[game]
name = "bilinear"
dim = 1
x0 = [1.0]
y0 = [0.0]
[[optimizers]]
name = "simgd"
eta = 0.1
[[optimizers]]
name = "sga"
eta = 0.1
tau = 0.5
"#
        ))
        .unwrap()
    }

    #[test]
    fn bilinear_pair_matches_analytic_maps() {
        let cfg = bilinear_config(500);
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path(), 2).unwrap();
        let simgd = &summary.rows[0];
        let sga = &summary.rows[1];
        assert!(sga.spectral_radius.unwrap() < 1.0);
        assert!(sga.final_w_norm < 1e-6);
        assert!(simgd.spectral_radius.unwrap() > 1.0 - cfg.spectral.eps);
        let run = run_single(&cfg.games[0], &cfg.optimizers[0], &cfg).unwrap();
        let norms: Vec<f64> = run.log.snapshots().iter().map(|s| s.state[0].hypot(s.state[1])).collect();
        assert!(norms.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn summary_radius_matches_report() {
        let cfg = bilinear_config(100);
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path(), 1).unwrap();
        let mut reader = csv::Reader::from_path(dir.path().join(SUMMARY_FILE)).unwrap();
        for (rec, row) in reader.records().zip(&summary.rows) {
            let rec = rec.unwrap();
            let report: SpectralReport = read_json(&dir.path().join(&rec[11]).join("report.json")).unwrap();
            let rho: f64 = rec[4].parse().unwrap();
            assert_eq!(Some(rho), report.spectral_radius);
            assert_eq!(Some(rho), row.spectral_radius);
        }
    }

    #[test]
    fn divergence_guard_stops_run() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
steps = 5000
plots = false
[game]
name = "bilinear"
dim = 2
x0 = [1.0, 1.0]
y0 = [0.0, 1.0]
[[optimizers]]
name = "simgd"
eta = 1.5
[[optimizers]]
name = "sga"
eta = 0.1
tau = 0.5
"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path(), 2).unwrap();
        assert_eq!(summary.rows[0].status, RunStatus::Diverged);
        assert!(summary.rows[0].steps_completed < 5000);
        assert!(summary.rows[0].final_w_norm > DIVERGENCE_NORM);
        assert_eq!(summary.rows[1].status, RunStatus::Completed);
        let log = TrajectoryLog::read_csv(
            File::open(dir.path().join("bilinear__simgd/trajectory.csv")).unwrap(),
            GameDims { m: 2, n: 2 },
        )
        .unwrap();
        assert_eq!(log.snapshots().last().unwrap().k, summary.rows[0].steps_completed);
    }

    #[test]
    fn stride_and_norm_logging() {
        let mut cfg = bilinear_config(50);
        cfg.logging.stride = 5;
        let run = run_single(&cfg.games[0], &cfg.optimizers[1], &cfg).unwrap();
        let ks: Vec<u64> = run.log.snapshots().iter().map(|s| s.k).collect();
        assert_eq!(ks, (0..=50).step_by(5).collect::<Vec<u64>>());
        cfg.logging.mode = crate::spectral::LogMode::Norms;
        let run = run_single(&cfg.games[0], &cfg.optimizers[1], &cfg).unwrap();
        assert!(run.report.spectral_radius.is_none());
        assert!(run.report.flags.iter().any(|f| f == "state_not_recorded"));
    }

    #[test]
    fn parallel_and_serial_outputs_match() {
        let cfg = bilinear_config(80);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, a.path(), 1).unwrap();
        run_experiment(&cfg, b.path(), 4).unwrap();
        for f in ["bilinear__simgd/trajectory.csv", "bilinear__sga/report.json", "bilinear__sga/run.json"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
    }
}
