//! Compositional text-to-3D on toy scenes: a multi-view diffusion model
//! with attention-guided sampling, and sparse-view 3D distillation.

pub mod camera;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod eval;
pub mod field;
pub mod img;
pub mod refocus;
pub mod rng;
pub mod scenes;
pub mod text;
pub mod viewset;

pub use error::{Error, Result};
