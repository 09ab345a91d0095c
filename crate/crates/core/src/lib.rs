//! Closed-loop scoring of candidate driving plans against recorded scenes.

pub mod bench;
pub mod camera;
pub mod config;
pub mod correlate;
pub mod geometry;
pub mod kernel;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod num;
pub mod proposals;
pub mod scene;
pub mod simulator;
pub mod synth;

pub use num::Real;

pub type Point2D = geometry::Point2<f64>;
pub type Pose2D = geometry::Pose2<f64>;
pub type CameraModel = camera::Camera<f64>;
