//! Plane-induced homography warp, independent of the mesh renderer.

use nalgebra::Vector3;
use worldsheet::{CameraIntrinsics, CameraPose, Grid, Image};

use crate::error::{HarnessError, Result};
use crate::scene::{pose_parts, pixel_to_ndc};

/// Warped image plus a per-pixel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Warp {
    pub image: Image<f64>,
    pub valid: Vec<bool>,
}

/// Renders the fronto-parallel plane `z = plane_depth` (input camera frame), textured by
/// `input`, from the camera reached by `relative` (input-camera to target-camera coordinates).
/// Target pixels whose ray misses the plane or lands outside the input image are invalid
/// and left at 0.
pub fn warp_oracle(
    input: &Image<f64>,
    plane_depth: f64,
    relative: &CameraPose<f64>,
    intrinsics: &CameraIntrinsics,
) -> Result<Warp> {
    intrinsics.validate()?;
    relative.validate()?;
    let (w, h) = (intrinsics.image_width, intrinsics.image_height);
    input.ensure_shape(w, h, 3)?;
    if !(plane_depth > 0.0) {
        return Err(HarnessError::Geometry(format!("plane depth must be positive, got {plane_depth}")));
    }
    let (r, t) = pose_parts(relative);
    let rt = r.transpose();
    let shift = rt * t;
    let tan = intrinsics.tan_half_fov::<f64>();
    let mut image = Grid::zeros(w, h, 3);
    let mut valid = vec![false; w * h];
    for row in 0..h {
        for col in 0..w {
            let ndc = pixel_to_ndc(intrinsics, col as f64, row as f64);
            let dir = rt * Vector3::new(ndc[0] * tan, ndc[1] * tan, 1.0);
            if dir.z <= 1e-12 {
                continue;
            }
            let s = (plane_depth + shift.z) / dir.z;
            if s <= 0.0 {
                continue;
            }
            let p = dir * s - shift;
            let src = intrinsics.ndc_to_pixel([p.x / (p.z * tan), p.y / (p.z * tan)]);
            let (x, y) = (src[0], src[1]);
            if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
                continue;
            }
            let (x0, y0) = ((x.floor() as usize).min(w - 2), (y.floor() as usize).min(h - 2));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            for c in 0..3 {
                let top = input.get(y0, x0, c) * (1.0 - fx) + input.get(y0, x0 + 1, c) * fx;
                let bottom = input.get(y0 + 1, x0, c) * (1.0 - fx) + input.get(y0 + 1, x0 + 1, c) * fx;
                image.set(row, col, c, top * (1.0 - fy) + bottom * fy);
            }
            valid[row * w + col] = true;
        }
    }
    Ok(Warp { image, valid })
}
