//! Motor-focus prediction from monocular video.
//!
//! Each consecutive frame pair goes through dense optical flow, a rigid
//! camera-motion fit over every pixel, subtraction of the fitted motion,
//! and a focus-of-expansion search on what is left. Per-frame foci are then
//! smoothed by summing Gaussian bumps over a sliding window.

pub mod aggregation;
pub mod config;
pub mod ego_motion;
pub mod error;
pub mod eval;
pub mod focus;
pub mod frame_io;
pub mod geom;
pub mod imgproc;
pub mod optical_flow;
mod par;
pub mod pipeline;
pub mod synth;
pub mod viz;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geom::Vec2;
pub use par::{current_workers, with_workers};
pub use pipeline::{Pipeline, PredictionRecord};
