//! Closed-form benchmark games used both as optimizer testbeds and as analytic oracles.

mod bilinear;
mod quadratic;
mod toygan;

pub use bilinear::{bilinear_gradients, BilinearGame, Coupling};
pub use quadratic::{quadratic_gradients, QuadraticGame};
pub use toygan::{PenaltyNorm, RealDistribution, ToyGanConfig, ToyGanGame};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::game::{antisymmetric_from_blocks, Game, JointIterate};

/// Antisymmetric part of the game Hessian from the game's closed-form mixed blocks.
pub fn exact_antisymmetric_block(game: &dyn Game, w: &JointIterate) -> Result<DMatrix<f64>> {
    w.check_dims(game.dims())?;
    let blocks = game.mixed_blocks(w).ok_or_else(|| {
        Error::Capability(format!(
            "game '{}' has no closed-form mixed second derivatives",
            game.name()
        ))
    })?;
    Ok(antisymmetric_from_blocks(&blocks))
}
