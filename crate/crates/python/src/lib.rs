//! Python bindings: games, optimizers, the curvature history and spectral diagnostics.

use std::path::PathBuf;

use lmlrsga::curvature::{CurvaturePair, HistoryBuffer as CoreHistory, Side};
use lmlrsga::experiment::{run_experiment, ExperimentConfig};
use lmlrsga::game::{evaluate_field, Batch, BatchToken, Game as CoreGame, GameDims, JointIterate};
use lmlrsga::games::{BilinearGame, QuadraticGame, RealDistribution, ToyGanConfig, ToyGanGame};
use lmlrsga::optimizers::{build_optimizer, BatchMode, Optimizer as CoreOptimizer, OptimizerConfig, OptimizerKind};
use lmlrsga::spectral::{analyze as core_analyze, welch_psd as core_welch, SpectralParams, TrajectoryLog, WelchOptions};
use lmlrsga::Error;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numerical { .. } | Error::DegenerateStep(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

fn parse_name<T: serde::de::DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} '{name}'")))
}

fn json_to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A two-player differentiable game. Build one with the static constructors.
#[pyclass(module = "lmlrsga_py", frozen)]
struct Game {
    inner: Box<dyn CoreGame>,
}

impl Game {
    fn iterate(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<JointIterate> {
        let dims = self.inner.dims();
        if x.len() != dims.m || y.len() != dims.n {
            return Err(PyValueError::new_err(format!(
                "expected x of length {} and y of length {}",
                dims.m, dims.n
            )));
        }
        Ok(JointIterate::from_slices(&x, &y))
    }
}

#[pymethods]
impl Game {
    /// f = xᵀ(scale·I)y, g = −f.
    #[staticmethod]
    #[pyo3(signature = (dim = 1, scale = 1.0))]
    fn bilinear(dim: usize, scale: f64) -> PyResult<Self> {
        if dim == 0 {
            return Err(PyValueError::new_err("dim must be positive"));
        }
        Ok(Game {
            inner: Box::new(BilinearGame::scaled(dim, scale)),
        })
    }

    /// f = ½xᵀPx + xᵀBy, g = ½yᵀQy − xᵀBy.
    #[staticmethod]
    fn quadratic(p: Vec<Vec<f64>>, q: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Self> {
        let game = QuadraticGame::new(matrix(p)?, matrix(q)?, matrix(b)?).map_err(to_py)?;
        Ok(Game { inner: Box::new(game) })
    }

    #[staticmethod]
    #[pyo3(signature = (m, n, seed = 0))]
    fn random_quadratic(m: usize, n: usize, seed: u64) -> PyResult<Self> {
        GameDims::new(m, n).map_err(to_py)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Game {
            inner: Box::new(QuadraticGame::random(m, n, &mut rng)),
        })
    }

    /// Toy GAN against a Gaussian data distribution. `batch_size = 0` uses the whole pool.
    #[staticmethod]
    #[pyo3(signature = (m = 2, n = 2, mean = 1.0, std = 0.5, batch_size = 32, batch_stride = 16, data_seed = 0))]
    fn toy_gan(
        m: usize,
        n: usize,
        mean: f64,
        std: f64,
        batch_size: usize,
        batch_stride: usize,
        data_seed: u64,
    ) -> PyResult<Self> {
        let game = ToyGanGame::new(ToyGanConfig {
            m,
            n,
            real: RealDistribution::Gaussian { mean, std },
            batch_size,
            batch_stride,
            data_seed,
            ..ToyGanConfig::default()
        })
        .map_err(to_py)?;
        Ok(Game { inner: Box::new(game) })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dims(&self) -> (usize, usize) {
        let d = self.inner.dims();
        (d.m, d.n)
    }

    /// Stacked game field (∂x f, ∂y g) on the full data set.
    fn field(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        let w = self.iterate(x, y)?;
        Ok(evaluate_field(self.inner.as_ref(), &w, &Batch::Full).map_err(to_py)?.as_slice().to_vec())
    }

    fn losses(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<(Option<f64>, Option<f64>)> {
        let w = self.iterate(x, y)?;
        Ok((self.inner.loss_f(&w, &Batch::Full), self.inner.loss_g(&w, &Batch::Full)))
    }
}

/// Stateful optimizer bound to one game shape.
#[pyclass(module = "lmlrsga_py")]
struct Optimizer {
    inner: Box<dyn CoreOptimizer>,
    dims: GameDims,
    seed: u64,
    k: u64,
}

#[pymethods]
impl Optimizer {
    #[new]
    #[pyo3(signature = (kind, game, eta = 0.2, tau = 0.002, history = 10, beta = 0.9, eps_x = 0.0, eps_y = 0.0, batch_mode = "displacement", seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        game: &Game,
        eta: f64,
        tau: f64,
        history: usize,
        beta: f64,
        eps_x: f64,
        eps_y: f64,
        batch_mode: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let kind: OptimizerKind = parse_name("optimizer", kind)?;
        let batch_mode: BatchMode = parse_name("batch mode", batch_mode)?;
        let cfg = OptimizerConfig {
            eta,
            tau,
            history,
            beta,
            eps_x,
            eps_y,
            batch_mode,
            ..OptimizerConfig::default()
        };
        let dims = game.inner.dims();
        Ok(Optimizer {
            inner: build_optimizer(kind, cfg, dims).map_err(to_py)?,
            dims,
            seed,
            k: 0,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn steps_taken(&self) -> u64 {
        self.k
    }

    /// One step from (x, y); returns the new (x, y).
    fn step(&mut self, game: &Game, x: Vec<f64>, y: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        if game.inner.dims() != self.dims {
            return Err(PyValueError::new_err("game shape differs from the one the optimizer was built for"));
        }
        let w = game.iterate(x, y)?;
        let next = self
            .inner
            .step(game.inner.as_ref(), &w, BatchToken::new(self.seed, self.k))
            .map_err(to_py)?;
        self.k += 1;
        Ok((next.x.as_slice().to_vec(), next.y.as_slice().to_vec()))
    }

    /// Runs `steps` steps and returns every iterate, starting with (x, y), as stacked rows.
    fn run(&mut self, game: &Game, x: Vec<f64>, y: Vec<f64>, steps: usize) -> PyResult<Vec<Vec<f64>>> {
        let mut states = Vec::with_capacity(steps + 1);
        states.push(x.iter().chain(&y).copied().collect());
        let (mut x, mut y) = (x, y);
        for _ in 0..steps {
            (x, y) = self.step(game, x, y)?;
            states.push(x.iter().chain(&y).copied().collect());
        }
        Ok(states)
    }
}

fn parse_side(side: &str) -> PyResult<Side> {
    match side {
        "m" | "M" => Ok(Side::M),
        "n" | "N" => Ok(Side::N),
        _ => Err(PyValueError::new_err("side must be 'm' or 'n'")),
    }
}

/// Bounded secant-pair history with two-loop products for the implicit M and N.
#[pyclass(module = "lmlrsga_py")]
struct HistoryBuffer {
    inner: CoreHistory,
}

#[pymethods]
impl HistoryBuffer {
    #[new]
    fn new(m: usize, n: usize, capacity: usize) -> PyResult<Self> {
        let dims = GameDims::new(m, n).map_err(to_py)?;
        Ok(HistoryBuffer {
            inner: CoreHistory::new(dims, capacity).map_err(to_py)?,
        })
    }

    fn push(&mut self, s_x: Vec<f64>, s_y: Vec<f64>, y_f: Vec<f64>, y_g: Vec<f64>) -> PyResult<()> {
        let pair = CurvaturePair::new(
            DVector::from_vec(s_x),
            DVector::from_vec(s_y),
            DVector::from_vec(y_f),
            DVector::from_vec(y_g),
        )
        .map_err(to_py)?;
        self.inner.push_pair(pair).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn stored_scalars(&self) -> usize {
        self.inner.stored_scalars()
    }

    fn direct(&self, side: &str, q: Vec<f64>) -> PyResult<Vec<f64>> {
        let out = self.inner.two_loop_direct(parse_side(side)?, &DVector::from_vec(q)).map_err(to_py)?;
        Ok(out.as_slice().to_vec())
    }

    fn transpose(&self, side: &str, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let out = self.inner.two_loop_transpose(parse_side(side)?, &DVector::from_vec(u)).map_err(to_py)?;
        Ok(out.as_slice().to_vec())
    }
}

/// Spectral report for a list of stacked states (x then y), as a dict.
#[pyfunction]
#[pyo3(signature = (states, m, n, rank = 40, eps = 0.05))]
fn analyze(py: Python<'_>, states: Vec<Vec<f64>>, m: usize, n: usize, rank: usize, eps: f64) -> PyResult<Py<PyAny>> {
    let dims = GameDims::new(m, n).map_err(to_py)?;
    let log = TrajectoryLog::from_states(dims, states).map_err(to_py)?;
    let params = SpectralParams {
        rank,
        eps,
        ..SpectralParams::default()
    };
    let report = core_analyze(&log, &params).map_err(to_py)?;
    json_to_py(py, &report)
}

/// One-sided Welch estimate; returns (frequencies, density).
#[pyfunction]
#[pyo3(signature = (signal, window_len = None))]
fn welch_psd(signal: Vec<f64>, window_len: Option<usize>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let opts = WelchOptions {
        window_len,
        ..WelchOptions::default()
    };
    let psd = core_welch(&signal, &opts).map_err(to_py)?;
    Ok((psd.frequencies, psd.density))
}

/// Runs a TOML experiment config and returns the summary rows as dicts.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None, parallel = 1))]
fn run(py: Python<'_>, config: PathBuf, out: PathBuf, seed: Option<u64>, parallel: usize) -> PyResult<Vec<Py<PyAny>>> {
    let mut cfg = ExperimentConfig::from_file(&config).map_err(to_py)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let summary = py.detach(|| run_experiment(&cfg, &out, parallel)).map_err(to_py)?;
    summary
        .rows
        .iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("game", &row.game)?;
            d.set_item("optimizer", &row.optimizer)?;
            d.set_item("status", row.status.as_str())?;
            d.set_item("steps_completed", row.steps_completed)?;
            d.set_item("spectral_radius", row.spectral_radius)?;
            d.set_item("stability_class", &row.stability_class)?;
            d.set_item("final_grad_norm", row.final_grad_norm)?;
            d.set_item("final_w_norm", row.final_w_norm)?;
            d.set_item("run_dir", out.join(&row.run_dir))?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

#[pymodule]
fn lmlrsga_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Game>()?;
    m.add_class::<Optimizer>()?;
    m.add_class::<HistoryBuffer>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(welch_psd, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
