//! Limited-memory curvature engine.
//!
//! The mixed-block approximations `M_k ≈ ∂²xy f` (m×n) and `N_k ≈ ∂²yx g` (n×m)
//! follow the least-change secant recursion
//!
//! ```text
//! M_k = M_{k-1} Ṽ_{k-1} + p_{k-1} y^f_{k-1} (s^y_{k-1})ᵀ,   Ṽ = I − p s^y (s^y)ᵀ
//! N_k = N_{k-1} V_{k-1} + p_{k-1} y^g_{k-1} (s^x_{k-1})ᵀ,   V = I − p s^x (s^x)ᵀ
//! ```
//!
//! with the common scaling `p = 1/‖s_w‖²`. Only the last `ℓ` pairs are kept; the
//! older history is summarized by a rank-one base matrix built from the most
//! recently evicted pair. Products with `M`, `N` and their transposes are
//! evaluated by two-loop recursions and never form an m×n array.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::game::{GameDims, JointIterate};

/// Pairs with `‖s_w‖²` below this floor are never stored.
pub const DEGENERATE_STEP_FLOOR: f64 = 1e-24;

/// Secant data for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s_x: DVector<f64>,
    pub s_y: DVector<f64>,
    pub y_f: DVector<f64>,
    pub y_g: DVector<f64>,
    /// `1 / (‖s_x‖² + ‖s_y‖²)`.
    pub p: f64,
}

impl CurvaturePair {
    /// Builds a pair from displacements and (already corrected) gradient differences.
    pub fn new(
        s_x: DVector<f64>,
        s_y: DVector<f64>,
        y_f: DVector<f64>,
        y_g: DVector<f64>,
    ) -> Result<Self> {
        if y_f.len() != s_x.len() || y_g.len() != s_y.len() {
            return Err(Error::usage(format!(
                "pair shapes disagree: s_x {}, y_f {}, s_y {}, y_g {}",
                s_x.len(),
                y_f.len(),
                s_y.len(),
                y_g.len()
            )));
        }
        let sq = s_x.norm_squared() + s_y.norm_squared();
        if !(sq >= DEGENERATE_STEP_FLOOR) || !sq.is_finite() {
            return Err(Error::DegenerateStep(sq));
        }
        Ok(CurvaturePair {
            s_x,
            s_y,
            y_f,
            y_g,
            p: 1.0 / sq,
        })
    }

    pub fn dims(&self) -> GameDims {
        GameDims {
            m: self.s_x.len(),
            n: self.s_y.len(),
        }
    }

    pub fn joint_step_norm_squared(&self) -> f64 {
        self.s_x.norm_squared() + self.s_y.norm_squared()
    }

    /// `(s, y)` components used by the given recursion side.
    pub fn side(&self, side: Side) -> (&DVector<f64>, &DVector<f64>) {
        match side {
            Side::M => (&self.s_y, &self.y_f),
            Side::N => (&self.s_x, &self.y_g),
        }
    }

    fn is_valid(&self) -> bool {
        let sq = self.joint_step_norm_squared();
        sq >= DEGENERATE_STEP_FLOOR
            && sq.is_finite()
            && self.p.is_finite()
            && self.p > 0.0
            && (self.p * sq - 1.0).abs() <= 1e-12
    }
}

/// Curvature pair from two iterates and the player gradients evaluated at each.
///
/// `y_f = Δ∂x f − ε_x s_x`, `y_g = Δ∂y g − ε_y s_y`.
pub fn make_pair(
    w_prev: &JointIterate,
    w_next: &JointIterate,
    g_prev: (&DVector<f64>, &DVector<f64>),
    g_next: (&DVector<f64>, &DVector<f64>),
    eps_x: f64,
    eps_y: f64,
) -> Result<CurvaturePair> {
    let dgx = g_next.0 - g_prev.0;
    let dgy = g_next.1 - g_prev.1;
    pair_from_differences(w_prev, w_next, dgx, dgy, eps_x, eps_y)
}

/// Same as [`make_pair`] when the gradient differences are already formed
/// (e.g. on a consistent batch).
pub fn pair_from_differences(
    w_prev: &JointIterate,
    w_next: &JointIterate,
    dgx: DVector<f64>,
    dgy: DVector<f64>,
    eps_x: f64,
    eps_y: f64,
) -> Result<CurvaturePair> {
    if !(eps_x >= 0.0 && eps_y >= 0.0) {
        return Err(Error::usage(format!(
            "diagonal surrogates must be >= 0, got eps_x={eps_x}, eps_y={eps_y}"
        )));
    }
    if w_prev.dims() != w_next.dims()
        || dgx.len() != w_prev.x.len()
        || dgy.len() != w_prev.y.len()
    {
        return Err(Error::usage("iterates and gradient differences disagree in shape"));
    }
    let s_x = &w_next.x - &w_prev.x;
    let s_y = &w_next.y - &w_prev.y;
    let y_f = dgx - &s_x * eps_x;
    let y_g = dgy - &s_y * eps_y;
    CurvaturePair::new(s_x, s_y, y_f, y_g)
}

/// Which mixed-block approximation a recursion applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `M ≈ ∂²xy f` (m×n), built from `(s_y, y_f)`.
    M,
    /// `N ≈ ∂²yx g` (n×m), built from `(s_x, y_g)`.
    N,
}

impl Side {
    /// `(rows, cols)` of the operator on this side.
    pub fn shape(&self, dims: GameDims) -> (usize, usize) {
        match self {
            Side::M => (dims.m, dims.n),
            Side::N => (dims.n, dims.m),
        }
    }
}

/// Bounded FIFO of curvature pairs plus the evicted pair seeding the base matrix.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    dims: GameDims,
    capacity: usize,
    pairs: VecDeque<CurvaturePair>,
    base: Option<CurvaturePair>,
}

impl HistoryBuffer {
    pub fn new(dims: GameDims, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::usage("history capacity must be >= 1"));
        }
        Ok(HistoryBuffer {
            dims,
            capacity,
            pairs: VecDeque::with_capacity(capacity + 1),
            base: None,
        })
    }

    pub fn dims(&self) -> GameDims {
        self.dims
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stored pairs, oldest first.
    pub fn pairs(&self) -> impl ExactSizeIterator<Item = &CurvaturePair> + DoubleEndedIterator {
        self.pairs.iter()
    }

    pub fn base_pair(&self) -> Option<&CurvaturePair> {
        self.base.as_ref()
    }

    /// Appends `pair`, evicting the oldest pair into the base slot when full.
    ///
    /// Degenerate or malformed pairs are rejected and leave the buffer unchanged.
    pub fn push_pair(&mut self, pair: CurvaturePair) -> Result<()> {
        if pair.dims() != self.dims || pair.y_f.len() != self.dims.m || pair.y_g.len() != self.dims.n
        {
            return Err(Error::usage(format!(
                "pair dims {:?} do not match buffer dims {:?}",
                pair.dims(),
                self.dims
            )));
        }
        if !pair.is_valid() {
            return Err(Error::DegenerateStep(pair.joint_step_norm_squared()));
        }
        self.pairs.push_back(pair);
        if self.pairs.len() > self.capacity {
            self.base = self.pairs.pop_front();
        }
        Ok(())
    }

    /// Number of f64 scalars held by the buffer.
    pub fn stored_scalars(&self) -> usize {
        let per_pair = 2 * self.dims.m + 2 * self.dims.n + 1;
        (self.pairs.len() + usize::from(self.base.is_some())) * per_pair
    }

    fn check_len(&self, q: &DVector<f64>, expected: usize, what: &str) -> Result<()> {
        if q.len() != expected {
            return Err(Error::usage(format!(
                "{what}: vector has length {}, expected {expected}",
                q.len()
            )));
        }
        Ok(())
    }

    /// `H₀ q` for the rank-one base `H₀ = p_b · y_b s_bᵀ`; zero on cold start.
    pub fn base_apply_direct(&self, side: Side, q: &DVector<f64>) -> Result<DVector<f64>> {
        let (rows, cols) = side.shape(self.dims);
        self.check_len(q, cols, "base_apply_direct")?;
        Ok(match &self.base {
            None => DVector::zeros(rows),
            Some(b) => {
                let (s, y) = b.side(side);
                y * (b.p * s.dot(q))
            }
        })
    }

    /// `H₀ᵀ q = p_b · s_b (y_bᵀ q)`; zero on cold start.
    pub fn base_apply_transpose(&self, side: Side, q: &DVector<f64>) -> Result<DVector<f64>> {
        let (rows, cols) = side.shape(self.dims);
        self.check_len(q, rows, "base_apply_transpose")?;
        Ok(match &self.base {
            None => DVector::zeros(cols),
            Some(b) => {
                let (s, y) = b.side(side);
                s * (b.p * y.dot(q))
            }
        })
    }

    /// `M_k q` (side M, `q` of length n) or `N_k q` (side N, `q` of length m).
    pub fn two_loop_direct(&self, side: Side, q: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, cols) = side.shape(self.dims);
        self.check_len(q, cols, "two_loop_direct")?;
        let mut work = q.clone();
        let mut alpha = vec![0.0; self.pairs.len()];
        for (i, pair) in self.pairs.iter().enumerate().rev() {
            let (s, _) = pair.side(side);
            let a = pair.p * s.dot(&work);
            work.axpy(-a, s, 1.0);
            alpha[i] = a;
        }
        let mut r = self.base_apply_direct(side, &work)?;
        for (pair, a) in self.pairs.iter().zip(alpha.iter()) {
            let (_, y) = pair.side(side);
            r.axpy(*a, y, 1.0);
        }
        Ok(r)
    }

    /// `M_kᵀ q` (side M, `q` of length m) or `N_kᵀ q` (side N, `q` of length n).
    pub fn two_loop_transpose(&self, side: Side, q: &DVector<f64>) -> Result<DVector<f64>> {
        let (rows, _) = side.shape(self.dims);
        self.check_len(q, rows, "two_loop_transpose")?;
        let alpha: Vec<f64> = self
            .pairs
            .iter()
            .map(|pair| pair.p * pair.side(side).1.dot(q))
            .collect();
        let mut r = self.base_apply_transpose(side, q)?;
        for (pair, a) in self.pairs.iter().zip(alpha.iter()) {
            let (s, _) = pair.side(side);
            let beta = pair.p * s.dot(&r);
            r.axpy(a - beta, s, 1.0);
        }
        Ok(r)
    }
}

/// Exponential moving average of the gradient differences.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    beta: f64,
    y_f: DVector<f64>,
    y_g: DVector<f64>,
}

impl EmaState {
    /// Averages start at zero.
    pub fn new(beta: f64, dims: GameDims) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::usage(format!("EMA beta must lie in [0, 1), got {beta}")));
        }
        Ok(EmaState {
            beta,
            y_f: DVector::zeros(dims.m),
            y_g: DVector::zeros(dims.n),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn averages(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.y_f, &self.y_g)
    }

    /// `ỹ ← β ỹ + (1 − β) y` for both players.
    pub fn update(&mut self, y_f: &DVector<f64>, y_g: &DVector<f64>) -> Result<()> {
        if y_f.len() != self.y_f.len() || y_g.len() != self.y_g.len() {
            return Err(Error::usage("EMA update with mismatched lengths"));
        }
        let b = self.beta;
        self.y_f.zip_apply(y_f, |acc, v| *acc = b * *acc + (1.0 - b) * v);
        self.y_g.zip_apply(y_g, |acc, v| *acc = b * *acc + (1.0 - b) * v);
        Ok(())
    }

    /// Folds the pair's differences into the averages and replaces them by the smoothed values.
    pub fn smooth_pair(&mut self, mut pair: CurvaturePair) -> Result<CurvaturePair> {
        self.update(&pair.y_f, &pair.y_g)?;
        pair.y_f.copy_from(&self.y_f);
        pair.y_g.copy_from(&self.y_g);
        Ok(pair)
    }
}
