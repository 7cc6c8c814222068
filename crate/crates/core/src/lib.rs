//! Real-time lidar odometry from cylindrical range images.
//!
//! The pipeline encodes raw scans into fixed-size range-image matrices,
//! estimates per-cell surface normals on the grid, scores local planarity with
//! a zero-sum smoothness filter, aligns consecutive scans with Gauss-Newton
//! point-to-plane registration, and refines every pose against a sliding
//! window map of recent scans. Geometric-consistency objectives over warped
//! normal fields are exposed as scalar losses so pose hypotheses can be scored
//! or polished directly. A KITTI-protocol trajectory evaluator and a small CLI
//! tie the pieces together.

pub mod config;
pub mod consistency;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod ingest;
pub mod mapping;
pub mod normals;
pub mod pose;
pub mod projection;
pub mod spatial;
pub mod synth;

mod icp;

pub use error::Error;
pub use pose::PoseSE3;

pub type Result<T> = std::result::Result<T, Error>;
