//! Landmark-based detection of face-swap videos: calibrated landmark
//! tracking, similarity alignment and a two-stream recurrent classifier.

pub mod calibration;
pub mod classifier;
pub mod config;
pub mod error;
pub mod geometry;
pub mod landmarks;
pub mod io;
pub mod lk;
pub mod metrics;
pub mod pipeline;
pub mod point;
pub mod pyramid;
pub mod synth;

pub use error::{Error, Result};
pub use landmarks::{LandmarkFrame, LandmarkSequence, LandmarkSet, FEATURE_DIM, NUM_LANDMARKS};
pub use point::{Displacement, Point, Vec2};
pub use pyramid::{build_pyramid, Frame, ImagePyramid};
