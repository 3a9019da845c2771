//! Losses, the Adam optimizer, the recorded view-synthesis objective and the
//! per-scene fitting loop.

mod adam;
mod fit;
mod loss;
mod objective;

pub use adam::AdamState;
pub use fit::{
    fit_scene, init_params_from_depth, predict_view, DepthPreset, FitConfig, FitResult, TraceRow,
};
pub use loss::{depth_l1_loss, l1_image_loss, total_loss, LossBreakdown, LossWeights};
pub use objective::{Evaluation, SceneSample, SheetObjective};
