//! Multi-view RGB-D 4D face reconstruction: a linear morphable face model,
//! camera rig calibration, a differentiable rasterizer, the staged fitting
//! pipeline, motion statistics and animation-side operators.

pub mod anim;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod render;
pub mod rig;
pub mod scene;

pub use error::{Error, Result};
