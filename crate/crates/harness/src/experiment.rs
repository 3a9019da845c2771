//! Evaluation helpers shared by the command line and the acceptance suite.

use worldsheet::fitting::predict_view;
use worldsheet::geometry::decode_depth;
use worldsheet::{build_mesh, RenderSettings, SheetParams};

use crate::error::{HarnessError, Result};
use crate::metrics::MetricsReport;
use crate::scene::{GeneratedScene, Scene};

/// Renders `params` at the target pose and scores it against the target image.
pub fn novel_view_report(
    scene: &GeneratedScene,
    params: &SheetParams<f64>,
    settings: &RenderSettings<f64>,
) -> Result<MetricsReport> {
    let view = predict_view(
        params,
        &scene.input_image,
        &scene.intrinsics,
        &scene.spec.input_pose,
        &scene.spec.target_pose,
        settings,
    )?;
    MetricsReport::compute(&view.image, &scene.target_image, Some(&scene.visibility))
}

/// Mean absolute difference between each vertex's depth and the scene depth along the
/// input-camera ray through it, over vertices whose ray lies in the image and hits the scene.
pub fn vertex_depth_mae(scene: &Scene, params: &SheetParams<f64>) -> Result<f64> {
    let intr = scene.intrinsics();
    let mesh = build_mesh(params, &intr)?;
    let depths = decode_depth(params)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (v, z) in mesh.vertices.iter().zip(depths) {
        let ndc = intr.project(*v);
        if ndc[0].abs() > 1.0 || ndc[1].abs() > 1.0 {
            continue;
        }
        if let Some(gt) = scene.depth_at(&scene.spec().input_pose, ndc) {
            sum += (z - gt).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(HarnessError::Invalid("no vertex projects onto the scene".into()));
    }
    Ok(sum / n as f64)
}
