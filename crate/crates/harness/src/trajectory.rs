//! Camera trajectories through keyframes and frame rendering along them.

use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use worldsheet::texture::sample_texture;
use worldsheet::{build_mesh, render_textured, transform_vertices, CameraIntrinsics, CameraPose, Image, RenderSettings, SheetParams};

use crate::error::{HarnessError, Result};
use crate::io::write_image;
use crate::scene::pose_parts;

/// Keyframe poses with the number of frames generated on each segment.
///
/// Segment `i` contributes `frames_per_segment[i]` frames starting at keyframe `i`; the last
/// keyframe is appended as the final frame. Rotations are interpolated spherically and camera
/// centres linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub keyframes: Vec<CameraPose<f64>>,
    pub frames_per_segment: Vec<usize>,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.keyframes.len() < 2 {
            return Err(HarnessError::Invalid("a trajectory needs at least two keyframes".into()));
        }
        if self.frames_per_segment.len() != self.keyframes.len() - 1 {
            return Err(HarnessError::Invalid(format!(
                "{} keyframes need {} segment frame counts, got {}",
                self.keyframes.len(),
                self.keyframes.len() - 1,
                self.frames_per_segment.len()
            )));
        }
        if self.frames_per_segment.contains(&0) {
            return Err(HarnessError::Invalid("every segment needs at least one frame".into()));
        }
        for k in &self.keyframes {
            k.validate()?;
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.frames_per_segment.iter().sum::<usize>() + 1
    }

    pub fn poses(&self) -> Result<Vec<CameraPose<f64>>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.frame_count());
        for (i, &n) in self.frames_per_segment.iter().enumerate() {
            for j in 0..n {
                out.push(interpolate(&self.keyframes[i], &self.keyframes[i + 1], j as f64 / n as f64)?);
            }
        }
        out.push(*self.keyframes.last().expect("validated"));
        Ok(out)
    }
}

fn interpolate(a: &CameraPose<f64>, b: &CameraPose<f64>, t: f64) -> Result<CameraPose<f64>> {
    if t == 0.0 {
        return Ok(*a);
    }
    let (ra, ta) = pose_parts(a);
    let (rb, tb) = pose_parts(b);
    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(ra));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rb));
    let q = qa
        .try_slerp(&qb, t, 1e-9)
        .ok_or_else(|| HarnessError::Invalid("keyframe rotations are opposite; interpolation is ambiguous".into()))?;
    let center = (-(ra.transpose() * ta)).lerp(&(-(rb.transpose() * tb)), t);
    let r = q.to_rotation_matrix().into_inner();
    let trans: Vector3<f64> = -(r * center);
    Ok(CameraPose {
        rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
        translation: [trans.x, trans.y, trans.z],
    })
}

/// File name of frame `index`.
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

/// Renders one PNG per trajectory pose into `out_dir`. The trajectory must start at the
/// input pose. Frames render in parallel and are written to distinct files.
pub fn render_trajectory(
    params: &SheetParams<f64>,
    input_image: &Image<f64>,
    intrinsics: &CameraIntrinsics,
    input_pose: &CameraPose<f64>,
    settings: &RenderSettings<f64>,
    trajectory: &TrajectorySpec,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let poses = trajectory.poses()?;
    if poses[0].max_abs_diff(input_pose) > 1e-6 {
        return Err(HarnessError::Invalid("the first keyframe must equal the input pose".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let settings = settings.resolved_for(input_image);
    let mesh = build_mesh(params, intrinsics)?;
    let texture = sample_texture(input_image, &mesh, intrinsics, &settings)?;
    poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let moved = transform_vertices(&mesh, &CameraPose::relative(input_pose, pose));
            let view = render_textured(&moved, &texture, intrinsics, &settings)?;
            let path = out_dir.join(frame_name(i));
            write_image(&path, &view.image)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::camera_at;

    #[test]
    fn frame_counts() {
        let t = TrajectorySpec { keyframes: vec![CameraPose::identity(), camera_at([0.1, 0.0, 0.0])], frames_per_segment: vec![1] };
        assert_eq!(t.poses().unwrap().len(), 2);
        let t = TrajectorySpec { keyframes: vec![CameraPose::identity(); 3], frames_per_segment: vec![4, 2] };
        assert_eq!(t.poses().unwrap().len(), 7);
        let bad = TrajectorySpec { keyframes: vec![CameraPose::identity()], frames_per_segment: vec![] };
        assert!(bad.validate().is_err());
        let bad = TrajectorySpec { keyframes: vec![CameraPose::identity(); 2], frames_per_segment: vec![0] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn interpolation_moves_centres_linearly_and_rotations_by_half_angle() {
        let a = CameraPose::identity();
        let b = CameraPose::yaw(0.4).compose(&camera_at([1.0, 0.0, 0.0]));
        let t = TrajectorySpec { keyframes: vec![a, b], frames_per_segment: vec![2] };
        let poses = t.poses().unwrap();
        assert_eq!(poses[0], a);
        assert!(poses[2].max_abs_diff(&b) < 1e-12);
        let mid = poses[1];
        assert!(mid.max_abs_diff(&CameraPose::yaw(0.2).compose(&camera_at([0.5, 0.0, 0.0]))) < 1e-12);
        assert!((mid.center()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn names_are_zero_padded() {
        assert_eq!(frame_name(0), "frame_00000.png");
        assert_eq!(frame_name(123), "frame_00123.png");
    }
}
