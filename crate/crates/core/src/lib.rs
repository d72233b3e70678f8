//! Rotation-augmented sparse image matching at desk scale.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod pipeline;
pub mod scenes;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
