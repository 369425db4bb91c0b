use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Game, GameDims, JointIterate};
use crate::games::{BilinearGame, PenaltyNorm, QuadraticGame, RealDistribution, ToyGanConfig, ToyGanGame};
use crate::optimizers::{AdamParams, BatchMode, OptimizerConfig, OptimizerKind};
use crate::spectral::{LogMode, SpectralParams};

/// Game section of an experiment file. `name` selects the game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSpec {
    /// `f = xᵀCy`. `C = scale·I` unless `coupling` gives the rows of a dense matrix.
    Bilinear {
        #[serde(default)]
        label: Option<String>,
        dim: usize,
        #[serde(default)]
        scale: Option<f64>,
        #[serde(default)]
        coupling: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default)]
        y0: Option<Vec<f64>>,
    },
    /// Random instance of size `m`, `n` unless all of `p`, `q`, `b` are given.
    Quadratic {
        #[serde(default)]
        label: Option<String>,
        m: usize,
        n: usize,
        #[serde(default)]
        instance_seed: Option<u64>,
        #[serde(default)]
        p: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        q: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        b: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default)]
        y0: Option<Vec<f64>>,
    },
    ToyGan {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "one")]
        m: usize,
        #[serde(default = "one")]
        n: usize,
        #[serde(default = "default_real")]
        real: RealDistribution,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_penalty")]
        penalty: PenaltyNorm,
        #[serde(default = "default_pool")]
        pool_size: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_stride")]
        batch_stride: usize,
        #[serde(default)]
        data_seed: Option<u64>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default)]
        y0: Option<Vec<f64>>,
    },
}

fn one() -> usize {
    1
}
fn default_real() -> RealDistribution {
    ToyGanConfig::default().real
}
fn default_lambda() -> f64 {
    ToyGanConfig::default().lambda
}
fn default_penalty() -> PenaltyNorm {
    ToyGanConfig::default().penalty
}
fn default_pool() -> usize {
    ToyGanConfig::default().pool_size
}
fn default_batch() -> usize {
    ToyGanConfig::default().batch_size
}
fn default_stride() -> usize {
    ToyGanConfig::default().batch_stride
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl GameSpec {
    pub fn label(&self) -> String {
        let (label, fallback) = match self {
            GameSpec::Bilinear { label, .. } => (label, "bilinear"),
            GameSpec::Quadratic { label, .. } => (label, "quadratic"),
            GameSpec::ToyGan { label, .. } => (label, "toy_gan"),
        };
        label.clone().unwrap_or_else(|| fallback.to_string())
    }

    fn initial(&self) -> (&Option<Vec<f64>>, &Option<Vec<f64>>) {
        match self {
            GameSpec::Bilinear { x0, y0, .. }
            | GameSpec::Quadratic { x0, y0, .. }
            | GameSpec::ToyGan { x0, y0, .. } => (x0, y0),
        }
    }

    /// Instantiates the game; random pieces draw from `seed`.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Game>> {
        let config = |e: Error| match e {
            Error::Usage(msg) => Error::Config(format!("game '{}': {msg}", self.label())),
            other => other,
        };
        Ok(match self {
            GameSpec::Bilinear { dim, scale, coupling, .. } => {
                if *dim == 0 {
                    return Err(Error::Config("bilinear dim must be >= 1".into()));
                }
                match coupling {
                    Some(rows) => {
                        if scale.is_some() {
                            return Err(Error::Config("give either scale or coupling, not both".into()));
                        }
                        let c = matrix(rows, "coupling")?;
                        if c.nrows() != *dim {
                            return Err(Error::Config(format!("coupling must be {dim}x{dim}")));
                        }
                        Box::new(BilinearGame::dense(c).map_err(config)?)
                    }
                    None => Box::new(BilinearGame::scaled(*dim, scale.unwrap_or(1.0))),
                }
            }
            GameSpec::Quadratic { m, n, instance_seed, p, q, b, .. } => {
                if *m == 0 || *n == 0 {
                    return Err(Error::Config("quadratic m and n must be >= 1".into()));
                }
                match (p, q, b) {
                    (Some(p), Some(q), Some(b)) => {
                        let game = QuadraticGame::new(matrix(p, "p")?, matrix(q, "q")?, matrix(b, "b")?)
                            .map_err(config)?;
                        if game.dims() != (GameDims { m: *m, n: *n }) {
                            return Err(Error::Config("p, q, b do not match m and n".into()));
                        }
                        Box::new(game)
                    }
                    (None, None, None) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed.unwrap_or(seed));
                        Box::new(QuadraticGame::random(*m, *n, &mut rng))
                    }
                    _ => return Err(Error::Config("give all of p, q, b or none of them".into())),
                }
            }
            GameSpec::ToyGan {
                m,
                n,
                real,
                lambda,
                penalty,
                pool_size,
                batch_size,
                batch_stride,
                data_seed,
                ..
            } => Box::new(
                ToyGanGame::new(ToyGanConfig {
                    m: *m,
                    n: *n,
                    real: *real,
                    lambda: *lambda,
                    penalty: *penalty,
                    pool_size: *pool_size,
                    batch_size: *batch_size,
                    batch_stride: *batch_stride,
                    data_seed: data_seed.unwrap_or(seed),
                })
                .map_err(config)?,
            ),
        })
    }

    /// Explicit `x0`/`y0` if given, otherwise uniform draws in [-1, 1] from `seed`.
    pub fn initial_iterate(&self, dims: GameDims, seed: u64) -> Result<JointIterate> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0));
        let (x0, y0) = self.initial();
        let pick = |given: &Option<Vec<f64>>, len: usize, random: DVector<f64>, what: &str| match given {
            Some(v) if v.len() != len => Err(Error::Config(format!(
                "game '{}': {what} has length {}, expected {len}",
                self.label(),
                v.len()
            ))),
            Some(v) if v.iter().any(|e| !e.is_finite()) => {
                Err(Error::Config(format!("game '{}': {what} is not finite", self.label())))
            }
            Some(v) => Ok(DVector::from_column_slice(v)),
            None => Ok(random),
        };
        let rx = draw(dims.m);
        let ry = draw(dims.n);
        Ok(JointIterate::new(pick(x0, dims.m, rx, "x0")?, pick(y0, dims.n, ry, "y0")?))
    }

    fn uses_overlapping_batches(&self) -> Option<(usize, usize)> {
        match self {
            GameSpec::ToyGan {
                batch_size,
                batch_stride,
                pool_size,
                ..
            } if *batch_size > 0 && batch_size < pool_size => Some((*batch_size, *batch_stride)),
            _ => None,
        }
    }
}

/// One optimizer entry; unset hyperparameters take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: OptimizerKind,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub eps_x: Option<f64>,
    #[serde(default)]
    pub eps_y: Option<f64>,
    #[serde(default)]
    pub history: Option<usize>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub batch_mode: Option<BatchMode>,
    #[serde(default)]
    pub adam_beta1: Option<f64>,
    #[serde(default)]
    pub adam_beta2: Option<f64>,
    #[serde(default)]
    pub adam_eps: Option<f64>,
}

impl OptimizerSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.name.to_string())
    }

    pub fn config(&self) -> OptimizerConfig {
        let d = OptimizerConfig::default();
        OptimizerConfig {
            eta: self.eta.unwrap_or(d.eta),
            tau: self.tau.unwrap_or(d.tau),
            eps_x: self.eps_x.unwrap_or(d.eps_x),
            eps_y: self.eps_y.unwrap_or(d.eps_y),
            history: self.history.unwrap_or(d.history),
            beta: self.beta.unwrap_or(d.beta),
            batch_mode: self.batch_mode.unwrap_or(d.batch_mode),
            adam: AdamParams {
                beta1: self.adam_beta1.unwrap_or(d.adam.beta1),
                beta2: self.adam_beta2.unwrap_or(d.adam.beta2),
                eps: self.adam_eps.unwrap_or(d.adam.eps),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingConfig {
    pub stride: u64,
    pub mode: LogMode,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        LoggingConfig {
            stride: 1,
            mode: LogMode::Full,
        }
    }
}

/// Raw file layout: either one `[game]` table or a `[[games]]` array.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    steps: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default = "yes")]
    plots: bool,
    #[serde(default)]
    game: Option<GameSpec>,
    #[serde(default)]
    games: Vec<GameSpec>,
    optimizers: Vec<OptimizerSpec>,
    #[serde(default)]
    logging: LoggingConfig,
    #[serde(default)]
    spectral: SpectralParams,
}

fn yes() -> bool {
    true
}

/// A validated experiment: every game is run with every optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub steps: u64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub plots: bool,
    pub games: Vec<GameSpec>,
    pub optimizers: Vec<OptimizerSpec>,
    pub logging: LoggingConfig,
    pub spectral: SpectralParams,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let games = match (raw.game, raw.games.is_empty()) {
            (Some(g), true) => vec![g],
            (None, false) => raw.games,
            (Some(_), false) => return Err(Error::Config("use either [game] or [[games]], not both".into())),
            (None, true) => return Err(Error::Config("no game given".into())),
        };
        let cfg = ExperimentConfig {
            steps: raw.steps,
            seed: raw.seed,
            output: raw.output,
            plots: raw.plots,
            games,
            optimizers: raw.optimizers,
            logging: raw.logging,
            spectral: raw.spectral,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Checks everything that can be checked without running, including building
    /// each game once.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.logging.stride == 0 {
            return Err(Error::Config("logging.stride must be >= 1".into()));
        }
        if self.optimizers.is_empty() {
            return Err(Error::Config("no optimizers given".into()));
        }
        self.spectral.validate().map_err(as_config)?;
        unique(self.games.iter().map(GameSpec::label), "game")?;
        unique(self.optimizers.iter().map(OptimizerSpec::label), "optimizer")?;
        for label in self.games.iter().map(GameSpec::label).chain(self.optimizers.iter().map(OptimizerSpec::label)) {
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!(
                    "label '{label}' may only use ASCII letters, digits, '_' and '-'"
                )));
            }
        }
        for opt in &self.optimizers {
            opt.config()
                .validate()
                .map_err(|e| Error::Config(format!("optimizer '{}': {}", opt.label(), strip(e))))?;
        }
        for game in &self.games {
            let built = game.build(self.seed)?;
            game.initial_iterate(built.dims(), self.seed)?;
            if let Some((size, stride)) = game.uses_overlapping_batches() {
                let overlap_mode = self
                    .optimizers
                    .iter()
                    .any(|o| o.config().batch_mode == BatchMode::Overlap);
                if overlap_mode && stride >= size {
                    return Err(Error::Config(format!(
                        "game '{}': overlap batch mode needs batch_stride < batch_size",
                        game.label()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Usage(msg) | Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

fn as_config(e: Error) -> Error {
    Error::Config(strip(e))
}

fn unique(labels: impl Iterator<Item = String>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.clone()) {
            return Err(Error::Config(format!("duplicate {what} label '{l}'")));
        }
    }
    Ok(())
}
