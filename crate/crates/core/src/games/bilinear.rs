use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{Batch, Game, GameDims, JointIterate, MixedBlocks};

/// Coupling matrix `C` of the bilinear game.
///
/// `Scaled` keeps `C = c·I` implicit so large instances never hold an n×n array.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    Scaled { dim: usize, scale: f64 },
    Dense(DMatrix<f64>),
}

impl Coupling {
    pub fn dim(&self) -> usize {
        match self {
            Coupling::Scaled { dim, .. } => *dim,
            Coupling::Dense(c) => c.nrows(),
        }
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Coupling::Scaled { scale, .. } => v * *scale,
            Coupling::Dense(c) => c * v,
        }
    }

    fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Coupling::Scaled { scale, .. } => v * *scale,
            Coupling::Dense(c) => c.tr_mul(v),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Coupling::Scaled { dim, scale } => DMatrix::identity(*dim, *dim) * *scale,
            Coupling::Dense(c) => c.clone(),
        }
    }
}

/// `f = xᵀCy`, `g = −xᵀCy`; unique equilibrium at the origin for invertible `C`.
#[derive(Debug, Clone)]
pub struct BilinearGame {
    coupling: Coupling,
}

impl BilinearGame {
    pub fn identity(dim: usize) -> Self {
        Self::scaled(dim, 1.0)
    }

    pub fn scaled(dim: usize, scale: f64) -> Self {
        assert!(dim > 0, "bilinear game needs a positive dimension");
        BilinearGame {
            coupling: Coupling::Scaled { dim, scale },
        }
    }

    pub fn dense(c: DMatrix<f64>) -> Result<Self> {
        if !c.is_square() || c.nrows() == 0 {
            return Err(Error::usage(format!(
                "bilinear coupling must be square and non-empty, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(BilinearGame {
            coupling: Coupling::Dense(c),
        })
    }

    /// Dense coupling with i.i.d. standard-normal-ish entries.
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let c = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        BilinearGame {
            coupling: Coupling::Dense(c),
        }
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    fn value(&self, w: &JointIterate) -> f64 {
        w.x.dot(&self.coupling.apply(&w.y))
    }
}

impl Game for BilinearGame {
    fn name(&self) -> &str {
        "bilinear"
    }

    fn dims(&self) -> GameDims {
        let d = self.coupling.dim();
        GameDims { m: d, n: d }
    }

    fn grad_x_f(&self, w: &JointIterate, _batch: &Batch) -> DVector<f64> {
        self.coupling.apply(&w.y)
    }

    fn grad_y_g(&self, w: &JointIterate, _batch: &Batch) -> DVector<f64> {
        -self.coupling.apply_transpose(&w.x)
    }

    fn loss_f(&self, w: &JointIterate, _batch: &Batch) -> Option<f64> {
        Some(self.value(w))
    }

    fn loss_g(&self, w: &JointIterate, _batch: &Batch) -> Option<f64> {
        Some(-self.value(w))
    }

    fn mixed_blocks(&self, _w: &JointIterate) -> Option<MixedBlocks> {
        let c = self.coupling.to_matrix();
        Some(MixedBlocks {
            gyx: -c.transpose(),
            fxy: c,
        })
    }
}

/// `gx = C y`, `gy = −Cᵀ x`.
pub fn bilinear_gradients(
    c: &DMatrix<f64>,
    w: &JointIterate,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if c.nrows() != w.x.len() || c.ncols() != w.y.len() {
        return Err(Error::usage(format!(
            "coupling is {}x{} but iterate has dims ({}, {})",
            c.nrows(),
            c.ncols(),
            w.x.len(),
            w.y.len()
        )));
    }
    Ok((c * &w.y, -c.tr_mul(&w.x)))
}
