//! Sheet geometry: decode per-vertex logits into a deformed grid mesh in the
//! input camera frame, plus the two geometric regularizers.
//!
//! Vertex `(w, h)` (column `w`, row `h`, zero based) has flat index
//! `h * grid_w + w`. Flattened parameter vectors are laid out block-wise as
//! `[offset_x (n), offset_y (n), depth (n)]`, and decoded sheets the same way
//! as `[dx (n), dy (n), z (n)]`.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose, Vec3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Depth decoding `g(psi) = a / (b * sigmoid(psi) + c) + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScaleConfig<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

impl<T: Real> DepthScaleConfig<T> {
    /// `1 / (0.75 sigmoid(psi) + 0.01) - 1`: depths in roughly (0.32, 99) m.
    pub fn indoor() -> Self {
        DepthScaleConfig {
            a: T::one(),
            b: T::lit(0.75),
            c: T::lit(0.01),
            d: -T::one(),
        }
    }

    /// `2 / (0.75 sigmoid(psi) + 0.01) - 2`, for scenes with a larger depth range.
    pub fn wide_range() -> Self {
        DepthScaleConfig {
            a: T::lit(2.0),
            b: T::lit(0.75),
            c: T::lit(0.01),
            d: T::lit(-2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        if !(self.a > z && self.b > z && self.c > z) || !self.d.is_finite() {
            return Err(Error::InvalidInput(format!(
                "depth scale needs a, b, c > 0 (got a={}, b={}, c={}, d={})",
                self.a, self.b, self.c, self.d
            )));
        }
        let (lo, _) = self.range();
        if !(lo > z) {
            return Err(Error::InvalidInput(format!(
                "depth scale admits non-positive depths (lower bound {lo})"
            )));
        }
        Ok(())
    }

    /// Open interval `(a/(b+c) + d, a/c + d)` of attainable depths.
    pub fn range(&self) -> (T, T) {
        (self.a / (self.b + self.c) + self.d, self.a / self.c + self.d)
    }

    #[inline]
    pub fn depth(&self, psi: T) -> T {
        self.a / (self.b * psi.sigmoid() + self.c) + self.d
    }

    /// `dg/dpsi`, always negative.
    #[inline]
    pub fn depth_derivative(&self, psi: T) -> T {
        let s = psi.sigmoid();
        let den = self.b * s + self.c;
        -self.a * self.b * s * (T::one() - s) / (den * den)
    }

    /// Inverts `g`, clamping the implied sigmoid to `[eps, 1 - eps]` so that
    /// depths outside the attainable range map to the nearest finite logit.
    pub fn logit_for_depth(&self, z: T) -> T {
        let eps = T::lit(1e-6);
        let den = z - self.d;
        let s = if den > T::zero() {
            (self.a / den - self.c) / self.b
        } else {
            T::one()
        };
        let s = s.max(eps).min(T::one() - eps);
        (s / (T::one() - s)).ln()
    }
}

/// Neighbourhood used by the Laplacian regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Free per-vertex logits describing a sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetParams<T> {
    pub grid_w: usize,
    pub grid_h: usize,
    pub offset_logits_x: Vec<T>,
    pub offset_logits_y: Vec<T>,
    pub depth_logits: Vec<T>,
    pub depth_scale: DepthScaleConfig<T>,
}

impl<T: Real> SheetParams<T> {
    /// Undeformed sheet at constant depth `g(0)`.
    pub fn flat(grid_w: usize, grid_h: usize, depth_scale: DepthScaleConfig<T>) -> Self {
        let n = grid_w * grid_h;
        SheetParams {
            grid_w,
            grid_h,
            offset_logits_x: vec![T::zero(); n],
            offset_logits_y: vec![T::zero(); n],
            depth_logits: vec![T::zero(); n],
            depth_scale,
        }
    }

    /// Undeformed sheet with every vertex at depth `z` (clamped to the attainable range).
    pub fn at_depth(grid_w: usize, grid_h: usize, depth_scale: DepthScaleConfig<T>, z: T) -> Self {
        let mut p = Self::flat(grid_w, grid_h, depth_scale);
        let psi = depth_scale.logit_for_depth(z);
        p.depth_logits.iter_mut().for_each(|v| *v = psi);
        p
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_w < 2 || self.grid_h < 2 {
            return Err(Error::InvalidInput(format!(
                "sheet grid must be at least 2x2, got {}x{}",
                self.grid_w, self.grid_h
            )));
        }
        let n = self.vertex_count();
        for (name, v) in [
            ("offset_logits_x", &self.offset_logits_x),
            ("offset_logits_y", &self.offset_logits_y),
            ("depth_logits", &self.depth_logits),
        ] {
            if v.len() != n {
                return Err(Error::shape(format!("{name} with {n} values"), v.len()));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name}[{i}] is not finite")));
            }
        }
        self.depth_scale.validate()
    }

    /// `[offset_x, offset_y, depth]` concatenated.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(3 * self.vertex_count());
        v.extend_from_slice(&self.offset_logits_x);
        v.extend_from_slice(&self.offset_logits_y);
        v.extend_from_slice(&self.depth_logits);
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.vertex_count();
        if flat.len() != 3 * n {
            return Err(Error::shape(3 * n, flat.len()));
        }
        self.offset_logits_x.copy_from_slice(&flat[..n]);
        self.offset_logits_y.copy_from_slice(&flat[n..2 * n]);
        self.depth_logits.copy_from_slice(&flat[2 * n..]);
        Ok(())
    }

    pub fn with_flat(&self, flat: &[T]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }
}

/// Grid mesh: vertices in a camera frame, triangle faces and lattice UVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetMesh<T> {
    pub grid_w: usize,
    pub grid_h: usize,
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[usize; 3]>,
    /// `(u, v)` in `[0, 1]²`; `v = 0` on the top row.
    pub uvs: Vec<[T; 2]>,
}

/// Anchor NDC position of vertex `(w, h)`: x from -1 (left) to 1, y from 1 (top) to -1.
#[inline]
pub fn anchor<T: Real>(w: usize, h: usize, grid_w: usize, grid_h: usize) -> [T; 2] {
    let two = T::lit(2.0);
    [
        -T::one() + two * T::from_usize_lossy(w) / T::from_usize_lossy(grid_w - 1),
        T::one() - two * T::from_usize_lossy(h) / T::from_usize_lossy(grid_h - 1),
    ]
}

/// Per-vertex `(dx, dy) = (tanh(lx) / (W_m - 1), tanh(ly) / (H_m - 1))`.
pub fn decode_offsets<T: Real>(params: &SheetParams<T>) -> Result<Vec<[T; 2]>> {
    params.validate()?;
    let sx = T::from_usize_lossy(params.grid_w - 1);
    let sy = T::from_usize_lossy(params.grid_h - 1);
    Ok(params
        .offset_logits_x
        .iter()
        .zip(&params.offset_logits_y)
        .map(|(&lx, &ly)| [lx.tanh() / sx, ly.tanh() / sy])
        .collect())
}

pub fn decode_depth<T: Real>(params: &SheetParams<T>) -> Result<Vec<T>> {
    params.validate()?;
    Ok(params
        .depth_logits
        .iter()
        .map(|&psi| params.depth_scale.depth(psi))
        .collect())
}

/// Decodes the flat parameter vector into `[dx, dy, z]` blocks.
pub fn decode_flat<T: Real>(
    flat: &[T],
    grid_w: usize,
    grid_h: usize,
    scale: &DepthScaleConfig<T>,
) -> Vec<T> {
    let n = grid_w * grid_h;
    let sx = T::from_usize_lossy(grid_w - 1);
    let sy = T::from_usize_lossy(grid_h - 1);
    let mut out = Vec::with_capacity(3 * n);
    out.extend(flat[..n].iter().map(|&l| l.tanh() / sx));
    out.extend(flat[n..2 * n].iter().map(|&l| l.tanh() / sy));
    out.extend(flat[2 * n..3 * n].iter().map(|&psi| scale.depth(psi)));
    out
}

pub(crate) fn decode_flat_backward<T: Real>(
    flat: &[T],
    grad_decoded: &[T],
    grid_w: usize,
    grid_h: usize,
    scale: &DepthScaleConfig<T>,
    grad_flat: &mut [T],
) {
    let n = grid_w * grid_h;
    let sx = T::from_usize_lossy(grid_w - 1);
    let sy = T::from_usize_lossy(grid_h - 1);
    for i in 0..n {
        let tx = flat[i].tanh();
        grad_flat[i] += grad_decoded[i] * (T::one() - tx * tx) / sx;
        let ty = flat[n + i].tanh();
        grad_flat[n + i] += grad_decoded[n + i] * (T::one() - ty * ty) / sy;
        grad_flat[2 * n + i] += grad_decoded[2 * n + i] * scale.depth_derivative(flat[2 * n + i]);
    }
}

/// Vertex positions `[z (x̂ + dx) t, z (ŷ + dy) t, z]` from decoded blocks, flattened xyz.
pub fn vertices_from_decoded<T: Real>(decoded: &[T], grid_w: usize, grid_h: usize, tan_half_fov: T) -> Vec<T> {
    let n = grid_w * grid_h;
    let mut out = Vec::with_capacity(3 * n);
    for h in 0..grid_h {
        for w in 0..grid_w {
            let i = h * grid_w + w;
            let a = anchor::<T>(w, h, grid_w, grid_h);
            let z = decoded[2 * n + i];
            out.push(z * (a[0] + decoded[i]) * tan_half_fov);
            out.push(z * (a[1] + decoded[n + i]) * tan_half_fov);
            out.push(z);
        }
    }
    out
}

pub(crate) fn vertices_from_decoded_backward<T: Real>(
    decoded: &[T],
    grad_vertices: &[T],
    grid_w: usize,
    grid_h: usize,
    tan_half_fov: T,
    grad_decoded: &mut [T],
) {
    let n = grid_w * grid_h;
    for h in 0..grid_h {
        for w in 0..grid_w {
            let i = h * grid_w + w;
            let a = anchor::<T>(w, h, grid_w, grid_h);
            let z = decoded[2 * n + i];
            let (gx, gy, gz) = (grad_vertices[3 * i], grad_vertices[3 * i + 1], grad_vertices[3 * i + 2]);
            grad_decoded[i] += gx * z * tan_half_fov;
            grad_decoded[n + i] += gy * z * tan_half_fov;
            grad_decoded[2 * n + i] +=
                gx * (a[0] + decoded[i]) * tan_half_fov + gy * (a[1] + decoded[n + i]) * tan_half_fov + gz;
        }
    }
}

/// Two triangles per grid cell, split along the `(w, h) -> (w + 1, h + 1)` diagonal.
pub fn grid_faces(grid_w: usize, grid_h: usize) -> Vec<[usize; 3]> {
    let mut faces = Vec::with_capacity(2 * (grid_w - 1) * (grid_h - 1));
    for h in 0..grid_h - 1 {
        for w in 0..grid_w - 1 {
            let v00 = h * grid_w + w;
            let v10 = v00 + 1;
            let v01 = v00 + grid_w;
            let v11 = v01 + 1;
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    faces
}

/// Equally spaced lattice UVs, `u` along columns and `v` along rows.
pub fn grid_uvs<T: Real>(grid_w: usize, grid_h: usize) -> Vec<[T; 2]> {
    let mut uvs = Vec::with_capacity(grid_w * grid_h);
    for h in 0..grid_h {
        for w in 0..grid_w {
            uvs.push([
                T::from_usize_lossy(w) / T::from_usize_lossy(grid_w - 1),
                T::from_usize_lossy(h) / T::from_usize_lossy(grid_h - 1),
            ]);
        }
    }
    uvs
}

impl<T: Real> SheetMesh<T> {
    /// Assembles a mesh from flat xyz vertex positions, with the standard grid faces and UVs.
    pub fn from_flat_vertices(grid_w: usize, grid_h: usize, flat: &[T]) -> Self {
        SheetMesh {
            grid_w,
            grid_h,
            vertices: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            faces: grid_faces(grid_w, grid_h),
            uvs: grid_uvs(grid_w, grid_h),
        }
    }

    pub fn flat_vertices(&self) -> Vec<T> {
        self.vertices.iter().flatten().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid_w * self.grid_h;
        if self.vertices.len() != n || self.uvs.len() != n {
            return Err(Error::shape(
                format!("{n} vertices and uvs"),
                format!("{} vertices, {} uvs", self.vertices.len(), self.uvs.len()),
            ));
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Geometry(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    /// Wavefront OBJ text with `v`, `vt` and `f` records (1-based, `vt` with v flipped up).
    pub fn to_obj(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "# worldsheet {}x{} grid mesh", self.grid_w, self.grid_h);
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for uv in &self.uvs {
            let _ = writeln!(s, "vt {} {}", uv[0], T::one() - uv[1]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {0}/{0} {1}/{1} {2}/{2}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }
}

/// Builds the sheet mesh in the input camera frame.
pub fn build_mesh<T: Real>(params: &SheetParams<T>, intrinsics: &CameraIntrinsics) -> Result<SheetMesh<T>> {
    params.validate()?;
    intrinsics.validate()?;
    let decoded = decode_flat(&params.to_flat(), params.grid_w, params.grid_h, &params.depth_scale);
    let n = params.vertex_count();
    if let Some(i) = decoded[2 * n..].iter().position(|&z| !(z > T::zero())) {
        return Err(Error::Geometry(format!(
            "vertex {i} decodes to non-positive depth {}",
            decoded[2 * n + i]
        )));
    }
    let flat = vertices_from_decoded(&decoded, params.grid_w, params.grid_h, intrinsics.tan_half_fov());
    Ok(SheetMesh::from_flat_vertices(params.grid_w, params.grid_h, &flat))
}

/// Applies `V' = R V + T` to every vertex; faces and UVs are unchanged.
pub fn transform_vertices<T: Real>(mesh: &SheetMesh<T>, pose: &CameraPose<T>) -> SheetMesh<T> {
    SheetMesh {
        vertices: mesh.vertices.iter().map(|&v| pose.apply(v)).collect(),
        ..mesh.clone()
    }
}

/// `L_g = Σ (dx² + dy²)` over all vertices.
pub fn grid_offset_reg<T: Real>(params: &SheetParams<T>) -> Result<T> {
    Ok(decode_offsets(params)?
        .iter()
        .map(|o| o[0] * o[0] + o[1] * o[1])
        .sum())
}

/// Grid neighbours of every vertex; boundary vertices get truncated neighbourhoods.
pub fn grid_neighbors(grid_w: usize, grid_h: usize, connectivity: Connectivity) -> Vec<Vec<usize>> {
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
    };
    let mut out = Vec::with_capacity(grid_w * grid_h);
    for h in 0..grid_h as isize {
        for w in 0..grid_w as isize {
            out.push(
                offsets
                    .iter()
                    .filter_map(|&(dw, dh)| {
                        let (nw, nh) = (w + dw, h + dh);
                        (nw >= 0 && nh >= 0 && nw < grid_w as isize && nh < grid_h as isize)
                            .then(|| nh as usize * grid_w + nw as usize)
                    })
                    .collect(),
            );
        }
    }
    out
}

/// Umbrella vector `Σ_{n ∈ N(v)} (V_n - V_v)` of every vertex.
fn umbrella<T: Real>(vertices: &[T], neighbors: &[Vec<usize>]) -> Vec<Vec3<T>> {
    neighbors
        .iter()
        .enumerate()
        .map(|(v, nb)| {
            let mut acc = [T::zero(); 3];
            for &n in nb {
                for c in 0..3 {
                    acc[c] += vertices[3 * n + c] - vertices[3 * v + c];
                }
            }
            acc
        })
        .collect()
}

/// `L_m`: L1 norm of each vertex's umbrella vector, summed over the sheet.
pub fn laplacian_reg<T: Real>(mesh: &SheetMesh<T>, connectivity: Connectivity) -> T {
    let flat = mesh.flat_vertices();
    laplacian_flat(&flat, &grid_neighbors(mesh.grid_w, mesh.grid_h, connectivity))
}

pub(crate) fn laplacian_flat<T: Real>(vertices: &[T], neighbors: &[Vec<usize>]) -> T {
    umbrella(vertices, neighbors)
        .iter()
        .map(|u| u[0].abs() + u[1].abs() + u[2].abs())
        .sum()
}

pub(crate) fn laplacian_flat_backward<T: Real>(
    vertices: &[T],
    neighbors: &[Vec<usize>],
    upstream: T,
    grad: &mut [T],
) {
    for (v, (u, nb)) in umbrella(vertices, neighbors).iter().zip(neighbors).enumerate() {
        for c in 0..3 {
            let s = u[c].sign0() * upstream;
            if s == T::zero() {
                continue;
            }
            for &n in nb {
                grad[3 * n + c] += s;
            }
            grad[3 * v + c] -= s * T::from_usize_lossy(nb.len());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(gw: usize, gh: usize) -> SheetParams<f64> {
        SheetParams::flat(gw, gh, DepthScaleConfig::indoor())
    }

    #[test]
    fn decode_offsets_examples() {
        let mut p = params(33, 33);
        let o = decode_offsets(&p).unwrap();
        assert_eq!(o[0], [0.0, 0.0]);
        p.offset_logits_x[0] = 20.0;
        p.offset_logits_x[1] = 1.0;
        let o = decode_offsets(&p).unwrap();
        assert!((o[0][0] - 0.03125).abs() < 1e-6);
        // tanh(1) / 32
        assert_relative_eq!(o[1][0], 0.7615941559557649 / 32.0, epsilon = 1e-12);
        assert!((o[1][0] - 0.023800).abs() < 5e-7);
    }

    #[test]
    fn decode_rejects_non_finite_logits() {
        let mut p = params(3, 3);
        p.offset_logits_y[4] = f64::NAN;
        assert!(matches!(decode_offsets(&p), Err(Error::InvalidInput(_))));
        p.offset_logits_y[4] = 0.0;
        p.depth_logits[0] = f64::INFINITY;
        assert!(decode_depth(&p).is_err());
    }

    #[test]
    fn decode_depth_indoor_preset() {
        let mut p = params(2, 2);
        p.depth_logits = vec![0.0, -20.0, 20.0, 1.0];
        let z = decode_depth(&p).unwrap();
        assert_relative_eq!(z[0], 1.0 / 0.385 - 1.0, epsilon = 1e-12);
        assert!((z[0] - 1.5974).abs() < 1e-4);
        assert!((z[1] - 99.0).abs() < 1e-3);
        assert!((z[2] - (1.0 / 0.76 - 1.0)).abs() < 1e-6);
        assert!((z[2] - 0.31579).abs() < 1e-5);
        assert!(z[3] < z[0]);
    }

    #[test]
    fn depth_scale_validation_and_inverse() {
        let s = DepthScaleConfig::<f64>::indoor();
        assert!(s.validate().is_ok());
        let bad = DepthScaleConfig { d: -2.0, ..s };
        assert!(bad.validate().is_err());
        for z in [0.5, 1.0, 2.5, 10.0, 50.0] {
            assert_relative_eq!(s.depth(s.logit_for_depth(z)), z, max_relative = 1e-9);
        }
        // out of range saturates rather than producing NaN
        assert!(s.logit_for_depth(0.01).is_finite());
        assert!(s.logit_for_depth(1000.0).is_finite());
    }

    #[test]
    fn build_mesh_examples() {
        let k = CameraIntrinsics::new(90.0, 64, 64).unwrap();
        let p = SheetParams::at_depth(3, 3, DepthScaleConfig::indoor(), 2.0);
        let m = build_mesh(&p, &k).unwrap();
        let v = m.vertices[6]; // (w=0, h=2): anchor (-1, -1)
        assert_relative_eq!(v[0], -2.0, epsilon = 1e-9);
        assert_relative_eq!(v[1], -2.0, epsilon = 1e-9);
        assert_relative_eq!(v[2], 2.0, epsilon = 1e-9);

        let p = SheetParams::at_depth(3, 3, DepthScaleConfig::indoor(), 5.0);
        let m = build_mesh(&p, &k).unwrap();
        let c: [f64; 3] = m.vertices[4];
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
        assert_relative_eq!(c[2], 5.0, epsilon = 1e-9);

        let m = build_mesh(&params(33, 33), &k).unwrap();
        assert_eq!(m.vertices.len(), 1089);
        assert_eq!(m.faces.len(), 2048);
        assert_eq!(m.uvs[33], [0.0, 1.0 / 32.0]);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn build_mesh_rejects_non_positive_depth() {
        let k = CameraIntrinsics::new(90.0, 8, 8).unwrap();
        let mut p = params(2, 2);
        // bypass validation of the scale to reach the per-vertex depth check
        p.depth_scale = DepthScaleConfig { a: 1.0, b: 0.75, c: 0.01, d: -1.0 };
        p.depth_logits[0] = 0.0;
        assert!(build_mesh(&p, &k).is_ok());
        let mut p2 = p.clone();
        p2.depth_scale.d = -10.0;
        assert!(build_mesh(&p2, &k).is_err());
    }

    #[test]
    fn transform_examples() {
        let k = CameraIntrinsics::new(90.0, 8, 8).unwrap();
        let m = build_mesh(&params(3, 3), &k).unwrap();
        assert_eq!(transform_vertices(&m, &CameraPose::identity()), m);

        let mut single = m.clone();
        single.vertices[0] = [0.0, 0.0, 5.0];
        let t = transform_vertices(&single, &CameraPose::from_translation([0.0, 0.0, 1.0]));
        assert_eq!(t.vertices[0], [0.0, 0.0, 6.0]);

        single.vertices[0] = [1.0, 0.0, 2.0];
        let yaw = CameraPose::new([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]], [0.0; 3]).unwrap();
        let t = transform_vertices(&single, &yaw);
        assert_eq!(t.vertices[0], [-1.0, 0.0, -2.0]);
        assert_eq!(t.faces, single.faces);
    }

    #[test]
    fn grid_offset_reg_examples() {
        let mut p = params(5, 5);
        assert_eq!(grid_offset_reg(&p).unwrap(), 0.0);
        // logit giving dx = 0.01 on a 5-wide grid: tanh(l) = 0.04
        p.offset_logits_x[7] = 0.04_f64.atanh();
        assert_relative_eq!(grid_offset_reg(&p).unwrap(), 1e-4, max_relative = 1e-10);
        let n = p.vertex_count();
        p.offset_logits_x = vec![0.04_f64.atanh(); n];
        p.offset_logits_y = vec![0.04_f64.atanh(); n];
        assert_relative_eq!(grid_offset_reg(&p).unwrap(), 2e-4 * n as f64, max_relative = 1e-10);
    }

    #[test]
    fn laplacian_examples() {
        let k = CameraIntrinsics::new(90.0, 8, 8).unwrap();
        let flat = build_mesh(&SheetParams::at_depth(3, 3, DepthScaleConfig::indoor(), 2.0), &k).unwrap();
        let nb = grid_neighbors(3, 3, Connectivity::Four);
        let u = umbrella(&flat.flat_vertices(), &nb);
        assert!(u[4].iter().all(|c: &f64| c.abs() < 1e-12));

        let delta = 0.3;
        let z_only = |m: &SheetMesh<f64>| -> f64 {
            umbrella(&m.flat_vertices(), &nb).iter().map(|u| u[2].abs()).sum()
        };
        let mut raised = flat.clone();
        raised.vertices[4][2] += delta;
        assert_relative_eq!(z_only(&raised) - z_only(&flat), 8.0 * delta, max_relative = 1e-12);

        let shifted = transform_vertices(&raised, &CameraPose::from_translation([0.4, -1.0, 2.0]));
        for conn in [Connectivity::Four, Connectivity::Eight] {
            assert_relative_eq!(
                laplacian_reg(&shifted, conn),
                laplacian_reg(&raised, conn),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn neighbor_counts() {
        let n4 = grid_neighbors(3, 3, Connectivity::Four);
        assert_eq!(n4.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 3, 2, 3, 4, 3, 2, 3, 2]);
        let n8 = grid_neighbors(3, 3, Connectivity::Eight);
        assert_eq!(n8[4].len(), 8);
        assert_eq!(n8[0].len(), 3);
    }

    #[test]
    fn connectivity_serde() {
        assert_eq!(serde_json::to_string(&Connectivity::Eight).unwrap(), "8");
        assert_eq!(serde_json::from_str::<Connectivity>("4").unwrap(), Connectivity::Four);
        assert!(serde_json::from_str::<Connectivity>("6").is_err());
    }

    #[test]
    fn obj_export_counts_records() {
        let k = CameraIntrinsics::new(90.0, 8, 8).unwrap();
        let m = build_mesh(&params(3, 4), &k).unwrap();
        let obj = m.to_obj();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 12);
        assert_eq!(obj.lines().filter(|l| l.starts_with("vt ")).count(), 12);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 12);
        assert!(obj.contains("f 1/1 2/2 5/5"));
    }
}
