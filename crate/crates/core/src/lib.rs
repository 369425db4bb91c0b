pub mod error;
pub mod game;
pub mod games;
pub mod curvature;
pub mod optimizers;
pub mod spectral;
pub mod experiment;

pub use error::{Error, Result};
