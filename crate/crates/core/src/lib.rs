//! Targetless event-camera to RGB calibration and multi-modal detection fusion.
//!
//! Geometry, clustering, assignment, RANSAC, ICP and the calibration pipeline are
//! generic over the scalar type through [`scalar::Real`]; the aliases below fix it
//! to `f64` (and `f32` where single precision is useful).

// Config validation writes `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod events;
pub mod fusion;
pub mod geometry;
pub mod imgproc;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rgb;
pub mod scalar;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};

pub type Point = geometry::Point2<f64>;
pub type Affine2D = geometry::Affine<f64>;
pub type Affine2Df32 = geometry::Affine<f32>;
pub type Rect2D = geometry::Rect<f64>;
pub type EdgeCloud2D = model::EdgeCloud<f64>;
pub type EdgeCloud2Df32 = model::EdgeCloud<f32>;
pub type Correspondence2D = calibration::Correspondence<f64>;
pub type Calibration = calibration::CalibrationResult<f64>;
