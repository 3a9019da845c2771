//! Pinhole camera model and rigid poses.
//!
//! Camera frame: +x right, +y up, +z forward (into the scene). Normalized
//! device coordinates span `[-1, 1]` on both image axes; image row 0 sits at
//! `y_ndc = +1` and column 0 at `x_ndc = -1`. Pixel `(row, col)` has its
//! centre at `x_ndc = -1 + (2 col + 1) / W`, `y_ndc = 1 - (2 row + 1) / H`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Field of view (degrees), applied to both image axes.
    pub fov_degrees: f64,
    pub image_width: usize,
    pub image_height: usize,
}

impl CameraIntrinsics {
    pub fn new(fov_degrees: f64, image_width: usize, image_height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fov_degrees,
            image_width,
            image_height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::InvalidInput(format!(
                "field of view must lie in (0, 180) degrees, got {}",
                self.fov_degrees
            )));
        }
        if self.image_width < 2 || self.image_height < 2 {
            return Err(Error::InvalidInput(format!(
                "image must be at least 2x2, got {}x{}",
                self.image_width, self.image_height
            )));
        }
        Ok(())
    }

    /// `tan(fov / 2)`.
    pub fn tan_half_fov<T: Real>(&self) -> T {
        T::lit((self.fov_degrees.to_radians() * 0.5).tan())
    }

    pub fn pixel_count(&self) -> usize {
        self.image_width * self.image_height
    }

    #[inline]
    pub fn pixel_center_ndc<T: Real>(&self, row: usize, col: usize) -> [T; 2] {
        let w = T::from_usize_lossy(self.image_width);
        let h = T::from_usize_lossy(self.image_height);
        let two = T::lit(2.0);
        [
            -T::one() + (two * T::from_usize_lossy(col) + T::one()) / w,
            T::one() - (two * T::from_usize_lossy(row) + T::one()) / h,
        ]
    }

    /// Continuous pixel coordinates `(col, row)` of an NDC point; pixel centres are integers.
    #[inline]
    pub fn ndc_to_pixel<T: Real>(&self, ndc: [T; 2]) -> [T; 2] {
        let half = T::lit(0.5);
        [
            (ndc[0] + T::one()) * half * T::from_usize_lossy(self.image_width) - half,
            (T::one() - ndc[1]) * half * T::from_usize_lossy(self.image_height) - half,
        ]
    }

    /// NDC of a camera-frame point. Caller guarantees `p[2] > 0`.
    #[inline]
    pub fn project<T: Real>(&self, p: Vec3<T>) -> [T; 2] {
        let t = self.tan_half_fov::<T>();
        [p[0] / (p[2] * t), p[1] / (p[2] * t)]
    }
}

/// World-to-camera rigid transform `p_cam = R p + T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose<T> {
    /// Row-major rotation matrix.
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> CameraPose<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        CameraPose {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z, z, z],
        }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        let p = CameraPose {
            rotation,
            translation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_translation(translation: Vec3<T>) -> Self {
        CameraPose {
            translation,
            ..Self::identity()
        }
    }

    /// Rotation about the camera y axis by `angle` radians.
    pub fn yaw(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        CameraPose {
            rotation: [[c, z, s], [z, o, z], [-s, z, c]],
            translation: [z, z, z],
        }
    }

    /// Checks orthonormality and `det(R) = 1` within `1e-6`.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().flatten().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("pose contains non-finite values".into()));
        }
        let tol = T::lit(1e-6);
        for i in 0..3 {
            for j in 0..3 {
                let dot = (0..3).map(|k| r[i][k] * r[j][k]).sum::<T>();
                let expect = if i == j { T::one() } else { T::zero() };
                if (dot - expect).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "rotation is not orthonormal (R R^T[{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        let det = det3(r);
        if (det - T::one()).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "rotation determinant is {det}, expected 1"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// `R^T v`, the adjoint of the linear part.
    #[inline]
    pub fn rotate_transposed(&self, v: Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let rt = transpose3(&self.rotation);
        let t = self.rotate_transposed(self.translation);
        CameraPose {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let rotation = mul3(&self.rotation, &other.rotation);
        let translation = self.apply(other.translation);
        CameraPose {
            rotation,
            translation,
        }
    }

    /// Transform from the `from` camera frame into the `to` camera frame,
    /// both given as world-to-camera poses: `to ∘ from⁻¹`.
    pub fn relative(from: &Self, to: &Self) -> Self {
        to.compose(&from.inverse())
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        let c = self.rotate_transposed(self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn cast<U: Real>(&self) -> CameraPose<U> {
        CameraPose {
            rotation: self.rotation.map(|row| row.map(|v| U::lit(v.as_f64()))),
            translation: self.translation.map(|v| U::lit(v.as_f64())),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((self.rotation[i][j] - other.rotation[i][j]).abs());
            }
            m = m.max((self.translation[i] - other.translation[i]).abs());
        }
        m
    }
}

pub(crate) fn det3<T: Real>(r: &Mat3<T>) -> T {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

pub(crate) fn transpose3<T: Real>(r: &Mat3<T>) -> Mat3<T> {
    [
        [r[0][0], r[1][0], r[2][0]],
        [r[0][1], r[1][1], r[2][1]],
        [r[0][2], r[1][2], r[2][2]],
    ]
}

pub(crate) fn mul3<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(90.0, 64, 64).is_ok());
        assert!(CameraIntrinsics::new(180.0, 64, 64).is_err());
        assert!(CameraIntrinsics::new(0.0, 64, 64).is_err());
        assert!(CameraIntrinsics::new(60.0, 1, 64).is_err());
    }

    #[test]
    fn pixel_centers_and_ndc_round_trip() {
        let k = CameraIntrinsics::new(90.0, 4, 2).unwrap();
        let c: [f64; 2] = k.pixel_center_ndc(0, 0);
        assert_eq!(c, [-0.75, 0.5]);
        let px = k.ndc_to_pixel(k.pixel_center_ndc::<f64>(1, 3));
        assert!((px[0] - 3.0).abs() < 1e-12 && (px[1] - 1.0).abs() < 1e-12);
        assert_eq!(k.ndc_to_pixel([-1.0_f64, 1.0]), [-0.5, -0.5]);
    }

    #[test]
    fn pose_validation_rejects_reflections() {
        let r = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraPose::new(r, [0.0; 3]).is_err());
        let r = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraPose::new(r, [0.0; 3]).is_err());
        assert!(CameraPose::<f64>::yaw(0.3).validate().is_ok());
    }

    #[test]
    fn inverse_and_relative_compose_to_identity() {
        let a = CameraPose::<f64>::yaw(0.4).compose(&CameraPose::from_translation([0.1, -0.2, 0.3]));
        let b = CameraPose::<f64>::yaw(-0.1);
        let id = a.compose(&a.inverse());
        assert!(id.max_abs_diff(&CameraPose::identity()) < 1e-12);
        let rel = CameraPose::relative(&a, &b);
        let p = [0.3, 0.7, 2.0];
        let via_rel = rel.apply(a.apply(p));
        let direct = b.apply(p);
        for i in 0..3 {
            assert!((via_rel[i] - direct[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn center_maps_to_origin() {
        let p = CameraPose::<f64>::yaw(0.7).compose(&CameraPose::from_translation([1.0, 2.0, 3.0]));
        let c = p.apply(p.center());
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }
}
