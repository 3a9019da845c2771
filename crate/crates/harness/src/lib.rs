//! Synthetic scenes, warp oracle, metrics, file formats and trajectories around the
//! `worldsheet` core, plus the `worldsheet` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod scene;
pub mod trajectory;

pub use error::{HarnessError, Result};
pub use metrics::{psnr, ssim, MetricsReport, RegionScores};
pub use oracle::{warp_oracle, Warp};
pub use scene::{gen_scene, GeneratedScene, Pattern, Primitive, Scene, SceneSpec, Shape};
pub use trajectory::{render_trajectory, TrajectorySpec};
