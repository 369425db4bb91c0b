//! Two-player differentiable games and the stacked game vector field.
//!
//! Player 1 owns `x` (length `m`) and minimizes `f`, player 2 owns `y`
//! (length `n`) and minimizes `g`. The game gradient stacks `∂x f` over
//! `∂y g`; its Jacobian is the (generally non-symmetric) game Hessian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default central-difference step for unit-scale problems.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameDims {
    pub m: usize,
    pub n: usize,
}

impl GameDims {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::usage(format!(
                "player dimensions must be positive, got m={m}, n={n}"
            )));
        }
        Ok(GameDims { m, n })
    }

    pub fn total(&self) -> usize {
        self.m + self.n
    }
}

/// The joint strategy `w = (x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointIterate {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl JointIterate {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        JointIterate { x, y }
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Self {
        JointIterate {
            x: DVector::from_column_slice(x),
            y: DVector::from_column_slice(y),
        }
    }

    pub fn zeros(dims: GameDims) -> Self {
        JointIterate {
            x: DVector::zeros(dims.m),
            y: DVector::zeros(dims.n),
        }
    }

    /// Splits a stacked vector of length `m + n`.
    pub fn unstack(w: &DVector<f64>, dims: GameDims) -> Result<Self> {
        if w.len() != dims.total() {
            return Err(Error::usage(format!(
                "stacked iterate has length {}, expected {}",
                w.len(),
                dims.total()
            )));
        }
        Ok(JointIterate {
            x: w.rows(0, dims.m).into_owned(),
            y: w.rows(dims.m, dims.n).into_owned(),
        })
    }

    pub fn stack(&self) -> DVector<f64> {
        let mut w = DVector::zeros(self.x.len() + self.y.len());
        w.rows_mut(0, self.x.len()).copy_from(&self.x);
        w.rows_mut(self.x.len(), self.y.len()).copy_from(&self.y);
        w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    pub fn norm_squared(&self) -> f64 {
        self.x.norm_squared() + self.y.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Index (in stacked order) of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        first_non_finite(self.x.as_slice())
            .or_else(|| first_non_finite(self.y.as_slice()).map(|i| i + self.x.len()))
    }

    pub(crate) fn check_dims(&self, dims: GameDims) -> Result<()> {
        if self.x.len() != dims.m || self.y.len() != dims.n {
            return Err(Error::usage(format!(
                "iterate has dims ({}, {}), game expects ({}, {})",
                self.x.len(),
                self.y.len(),
                dims.m,
                dims.n
            )));
        }
        Ok(())
    }
}

pub(crate) fn first_non_finite(v: &[f64]) -> Option<usize> {
    v.iter().position(|a| !a.is_finite())
}

/// Reproducible handle for one mini-batch: a schedule seed plus the step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchToken {
    pub seed: u64,
    pub index: u64,
}

impl BatchToken {
    pub fn new(seed: u64, index: u64) -> Self {
        BatchToken { seed, index }
    }

    pub fn next(&self) -> Self {
        BatchToken {
            seed: self.seed,
            index: self.index + 1,
        }
    }
}

/// A materialized batch: either the whole data set or a sorted list of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    Full,
    Samples(Vec<usize>),
}

impl Batch {
    /// Set intersection. `Full` is the identity element.
    pub fn intersect(&self, other: &Batch) -> Batch {
        match (self, other) {
            (Batch::Full, b) | (b, Batch::Full) => b.clone(),
            (Batch::Samples(a), Batch::Samples(b)) => {
                let (mut i, mut j) = (0, 0);
                let mut out = Vec::new();
                while i < a.len() && j < b.len() {
                    match a[i].cmp(&b[j]) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            out.push(a[i]);
                            i += 1;
                            j += 1;
                        }
                    }
                }
                Batch::Samples(out)
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Batch::Samples(s) if s.is_empty())
    }
}

/// Closed-form mixed second derivatives: `∂²xy f` (m×n) and `∂²yx g` (n×m).
#[derive(Debug, Clone)]
pub struct MixedBlocks {
    pub fxy: DMatrix<f64>,
    pub gyx: DMatrix<f64>,
}

/// A two-player differentiable game.
///
/// Deterministic games ignore the batch argument. Stochastic games must return
/// bit-identical gradients for the same materialized batch.
pub trait Game: Send + Sync {
    fn name(&self) -> &str;

    fn dims(&self) -> GameDims;

    fn grad_x_f(&self, w: &JointIterate, batch: &Batch) -> DVector<f64>;

    fn grad_y_g(&self, w: &JointIterate, batch: &Batch) -> DVector<f64>;

    fn loss_f(&self, _w: &JointIterate, _batch: &Batch) -> Option<f64> {
        None
    }

    fn loss_g(&self, _w: &JointIterate, _batch: &Batch) -> Option<f64> {
        None
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    /// Re-materializes the batch named by `token`.
    fn batch(&self, _token: BatchToken) -> Batch {
        Batch::Full
    }

    fn mixed_blocks(&self, _w: &JointIterate) -> Option<MixedBlocks> {
        None
    }
}

/// Game vector field `F(w) = (∂x f(w), ∂y g(w))`, stacked.
pub fn evaluate_field(game: &dyn Game, w: &JointIterate, batch: &Batch) -> Result<DVector<f64>> {
    let (gx, gy) = player_gradients(game, w, batch)?;
    Ok(JointIterate::new(gx, gy).stack())
}

/// Per-player gradients with the same checks as [`evaluate_field`].
pub fn player_gradients(
    game: &dyn Game,
    w: &JointIterate,
    batch: &Batch,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let dims = game.dims();
    w.check_dims(dims)?;
    let gx = game.grad_x_f(w, batch);
    let gy = game.grad_y_g(w, batch);
    if gx.len() != dims.m || gy.len() != dims.n {
        return Err(Error::usage(format!(
            "game '{}' returned gradients of length ({}, {})",
            game.name(),
            gx.len(),
            gy.len()
        )));
    }
    if let Some(i) = first_non_finite(gx.as_slice()) {
        return Err(Error::numerical("game gradient", Some(i)));
    }
    if let Some(i) = first_non_finite(gy.as_slice()) {
        return Err(Error::numerical("game gradient", Some(dims.m + i)));
    }
    Ok((gx, gy))
}

/// Central-difference Jacobian of `F` at `w` on a pinned batch.
pub fn fd_game_hessian(
    game: &dyn Game,
    w: &JointIterate,
    batch: &Batch,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be > 0, got {h}")));
    }
    let dims = game.dims();
    w.check_dims(dims)?;
    let d = dims.total();
    let base = w.stack();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut plus = base.clone();
        plus[j] += h;
        let mut minus = base.clone();
        minus[j] -= h;
        let fp = evaluate_field(game, &JointIterate::unstack(&plus, dims)?, batch)?;
        let fm = evaluate_field(game, &JointIterate::unstack(&minus, dims)?, batch)?;
        let col = (fp - fm) / (2.0 * h);
        jac.set_column(j, &col);
    }
    if let Some(i) = first_non_finite(jac.as_slice()) {
        return Err(Error::numerical("finite-difference game Hessian", Some(i)));
    }
    Ok(jac)
}

/// Central differences of the player losses: `(∂x f, ∂y g)` without touching the
/// closed-form gradients. Games without losses yield a capability error.
pub fn fd_loss_field(
    game: &dyn Game,
    w: &JointIterate,
    batch: &Batch,
    h: f64,
) -> Result<DVector<f64>> {
    let dims = game.dims();
    w.check_dims(dims)?;
    let missing = || Error::Capability(format!("game '{}' does not expose losses", game.name()));
    let mut out = DVector::zeros(dims.total());
    for i in 0..dims.total() {
        let mut plus = w.clone();
        let mut minus = w.clone();
        if i < dims.m {
            plus.x[i] += h;
            minus.x[i] -= h;
            let lp = game.loss_f(&plus, batch).ok_or_else(missing)?;
            let lm = game.loss_f(&minus, batch).ok_or_else(missing)?;
            out[i] = (lp - lm) / (2.0 * h);
        } else {
            let j = i - dims.m;
            plus.y[j] += h;
            minus.y[j] -= h;
            let lp = game.loss_g(&plus, batch).ok_or_else(missing)?;
            let lm = game.loss_g(&minus, batch).ok_or_else(missing)?;
            out[i] = (lp - lm) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Splits a square matrix into its symmetric and antisymmetric parts.
///
/// `S` is exactly symmetric and `A` exactly antisymmetric; `S + A` reproduces
/// `H` up to one rounding of the halved sum and difference.
pub fn split_symmetric_antisymmetric(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !h.is_square() {
        return Err(Error::usage(format!(
            "expected a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let d = h.nrows();
    let mut s = DMatrix::zeros(d, d);
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        s[(i, i)] = h[(i, i)];
        for j in (i + 1)..d {
            let sym = 0.5 * (h[(i, j)] + h[(j, i)]);
            let anti = 0.5 * (h[(i, j)] - h[(j, i)]);
            s[(i, j)] = sym;
            s[(j, i)] = sym;
            a[(i, j)] = anti;
            a[(j, i)] = -anti;
        }
    }
    Ok((s, a))
}

/// Antisymmetric part of the game Hessian built from the mixed blocks:
/// off-diagonal blocks `½(∂²xy f − (∂²yx g)ᵀ)` and its negative transpose.
pub fn antisymmetric_from_blocks(blocks: &MixedBlocks) -> DMatrix<f64> {
    let m = blocks.fxy.nrows();
    let n = blocks.fxy.ncols();
    let upper = (&blocks.fxy - blocks.gyx.transpose()) * 0.5;
    let mut a = DMatrix::zeros(m + n, m + n);
    a.view_mut((0, m), (m, n)).copy_from(&upper);
    a.view_mut((m, 0), (n, m)).copy_from(&(-upper.transpose()));
    a
}
