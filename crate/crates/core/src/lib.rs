//! Rolling-shutter light-field (RSLF) geometry and joint 3D shape / motion
//! estimation from a single light-field exposure.
//!
//! Pipeline: [`sim::simulate`] (or real matches) → [`init::triangulate_horizontal`]
//! → [`solver::solve`] → [`metrics::compute_metrics`].

// `!(x >= eps)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod cloud;
pub mod error;
pub mod geometry;
pub mod init;
pub mod metrics;
pub mod observations;
pub mod par;
pub mod pipeline;
pub mod rotation;
pub mod sim;
pub mod solver;

pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use geometry::{
    delta_rotation, delta_translation, gs_projection, intrinsic_tensor, pinhole_reduction,
    project_point, CameraPose, ImagePoint, LightFieldIntrinsics, MotionState, Viewpoint,
};
pub use init::{triangulate_horizontal, InitReport};
pub use metrics::{compute_metrics, distortion_summary, MetricsReport};
pub use observations::ObservationSet;
pub use sim::{check_observability, default_rig, simulate, MotionScenario, Scene};
pub use solver::{solve, Mode, SolveConfig, SolveReport};
