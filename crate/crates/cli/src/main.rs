use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lmlrsga::experiment::{replot, run_experiment, write_json, ExperimentConfig};
use lmlrsga::game::GameDims;
use lmlrsga::spectral::{analyze, SpectralParams, TrajectoryLog};
use lmlrsga::Error;

#[derive(Parser)]
#[command(name = "lmlrsga", version, about = "Competitive optimization experiments and spectral diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every game in a TOML config against every optimizer.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Spectral analysis of a trajectory CSV recorded elsewhere.
    Analyze {
        #[arg(long)]
        trajectory: PathBuf,
        /// Player sizes as `m,n`.
        #[arg(long, value_parser = parse_dims)]
        dims: GameDims,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render plots for a run directory or a whole experiment directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = SpectralParams::default().window)]
        window: usize,
    },
}

fn parse_dims(s: &str) -> Result<GameDims, String> {
    let (m, n) = s.split_once(',').ok_or("expected m,n")?;
    let m: usize = m.trim().parse().map_err(|_| format!("bad m in '{s}'"))?;
    let n: usize = n.trim().parse().map_err(|_| format!("bad n in '{s}'"))?;
    GameDims::new(m, n).map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Capability(_) => 2,
        Error::Numerical { .. } | Error::DegenerateStep(_) => 3,
        Error::Io(_) => 4,
    }
}

fn execute(cli: Cli) -> lmlrsga::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            parallel,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set `output`".into()))?;
            let summary = run_experiment(&cfg, &out, parallel)?;
            for row in &summary.rows {
                println!(
                    "{:<16} {:<14} {:<10} rho={:<12} {}",
                    row.game,
                    row.optimizer,
                    row.status.as_str(),
                    row.spectral_radius.map_or("n/a".to_string(), |r| format!("{r:.6}")),
                    row.stability_class.as_deref().unwrap_or("n/a"),
                );
            }
            println!("summary written to {}", out.join("summary.csv").display());
            Ok(())
        }
        Command::Analyze {
            trajectory,
            dims,
            rank,
            eps,
            out,
        } => {
            let log = TrajectoryLog::read_csv(File::open(&trajectory)?, dims)?;
            let defaults = SpectralParams::default();
            let params = SpectralParams {
                rank: rank.unwrap_or(defaults.rank),
                eps: eps.unwrap_or(defaults.eps),
                ..defaults
            };
            let report = analyze(&log, &params)?;
            match out {
                Some(path) => write_json(&path, &report),
                None => {
                    let text = serde_json::to_string_pretty(&report)
                        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Plot { run, window } => {
            for w in replot(&run, window)? {
                log::warn!("{w}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
