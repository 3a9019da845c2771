//! Soft rasterization of sheet meshes into a K-deep fragment buffer, softmax
//! depth blending, and textured rendering.
//!
//! Fragment attributes are packed per slot as `[b0, b1, b2, depth, coverage]`
//! (perspective-correct barycentrics, camera-space depth and soft coverage),
//! slot `k` of pixel `p` starting at `(p * K + k) * ATTR_STRIDE`. Per-pixel
//! blend weights are packed as `K` fragment weights followed by the
//! background weight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Vec3};
use crate::error::{Error, Result};
use crate::geometry::SheetMesh;
use crate::grid::{Grid, Image};
use crate::scalar::Real;
use crate::texture::{self, TextureMap};

pub const ATTR_STRIDE: usize = 5;
pub const INVALID_FACE: u32 = u32::MAX;

/// Minimum |area| (NDC²) of a projected face; smaller faces are skipped.
const MIN_PROJECTED_AREA: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real + Deserialize<'de>", serialize = "T: Serialize"))]
pub struct RenderSettings<T> {
    /// `K`, fragments kept per pixel.
    pub faces_per_pixel: usize,
    /// Coverage sharpness (NDC² units).
    pub sigma: T,
    /// Softmax blending temperature.
    pub gamma: T,
    /// Faces are dilated by this NDC distance when testing coverage.
    pub blur_radius: T,
    /// `None` resolves to the mean colour of the input image.
    pub background_color: Option<[T; 3]>,
    pub z_near: T,
    pub z_far: T,
    /// Rasterize and shade rows on the rayon pool. Results are bit-identical either way.
    pub parallel: bool,
}

impl<T: Real> Default for RenderSettings<T> {
    fn default() -> Self {
        RenderSettings {
            faces_per_pixel: 10,
            sigma: T::lit(1e-4),
            gamma: T::lit(1e-4),
            blur_radius: T::lit(1e-8),
            background_color: None,
            z_near: T::lit(0.1),
            z_far: T::lit(100.0),
            parallel: true,
        }
    }
}

impl<T: Real> RenderSettings<T> {
    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        if self.faces_per_pixel == 0 || self.faces_per_pixel > 64 {
            return Err(Error::Configuration(format!(
                "faces_per_pixel must be in 1..=64, got {}",
                self.faces_per_pixel
            )));
        }
        if !(self.sigma > z && self.gamma > z) {
            return Err(Error::Configuration("sigma and gamma must be positive".into()));
        }
        if !(self.blur_radius >= z) {
            return Err(Error::Configuration("blur_radius must be non-negative".into()));
        }
        if !(self.z_near > z && self.z_near < self.z_far && self.z_far.is_finite()) {
            return Err(Error::Configuration(format!(
                "need 0 < z_near < z_far, got {} / {}",
                self.z_near, self.z_far
            )));
        }
        if let Some(bg) = self.background_color {
            if bg.iter().any(|c| !c.is_finite()) {
                return Err(Error::Configuration("background colour must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> RenderSettings<U> {
        let c = |x: T| U::lit(x.as_f64());
        RenderSettings {
            faces_per_pixel: self.faces_per_pixel,
            sigma: c(self.sigma),
            gamma: c(self.gamma),
            blur_radius: c(self.blur_radius),
            background_color: self.background_color.map(|b| b.map(c)),
            z_near: c(self.z_near),
            z_far: c(self.z_far),
            parallel: self.parallel,
        }
    }

    pub fn background(&self) -> [T; 3] {
        self.background_color.unwrap_or([T::zero(); 3])
    }

    /// Fills in the background colour from `image` when it is unset.
    pub fn resolved_for(&self, image: &Image<T>) -> Self {
        let mut s = self.clone();
        if s.background_color.is_none() {
            let m = image.channel_means();
            s.background_color = Some([m[0], m[1], m[2]]);
        }
        s
    }
}

/// Soft-rasterization outputs of one face at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry<T> {
    /// Perspective-correct barycentrics.
    pub bary: [T; 3],
    pub screen_bary: [T; 3],
    pub depth: T,
    /// Signed NDC distance to the face boundary, positive inside.
    pub dist: T,
    /// `sigmoid(sign(d) d² / sigma)`.
    pub coverage: T,
}

/// Upstream gradient of a [`FaceGeometry`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FaceGeometryGrad<T> {
    pub bary: [T; 3],
    pub depth: T,
    pub coverage: T,
}

#[inline]
fn sub2<T: Real>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn cross2<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn dot2<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[0] + a[1] * b[1]
}

fn segment_distance<T: Real>(q: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let e = sub2(b, a);
    let r = sub2(q, a);
    let len2 = dot2(e, e);
    let t = if len2 > T::zero() { dot2(r, e) / len2 } else { T::zero() };
    if t <= T::zero() {
        dot2(r, r).sqrt()
    } else if t >= T::one() {
        let rb = sub2(q, b);
        dot2(rb, rb).sqrt()
    } else {
        cross2(e, r).abs() / len2.sqrt()
    }
}

/// Edge `i` joins the two vertices other than `i`.
const EDGES: [(usize, usize); 3] = [(1, 2), (2, 0), (0, 1)];

fn nearest_edge<T: Real>(s: &[[T; 2]; 3], q: [T; 2]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (i, &(a, b)) in EDGES.iter().enumerate() {
        let d = segment_distance(q, s[a], s[b]);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Evaluates a face at NDC point `q` from its projected vertices `s` and camera depths `z`.
pub fn face_geometry_projected<T: Real>(
    s: &[[T; 2]; 3],
    z: &[T; 3],
    q: [T; 2],
    sigma: T,
) -> Option<FaceGeometry<T>> {
    let d = [sub2(s[0], q), sub2(s[1], q), sub2(s[2], q)];
    let e = [cross2(d[1], d[2]), cross2(d[2], d[0]), cross2(d[0], d[1])];
    let area = e[0] + e[1] + e[2];
    if !(area.abs() > T::lit(MIN_PROJECTED_AREA)) {
        return None;
    }
    let lam = [e[0] / area, e[1] / area, e[2] / area];
    let inside = lam.iter().all(|&l| l >= T::zero());
    let (_, dist) = nearest_edge(s, q);
    let dist = if inside { dist } else { -dist };
    let w = [lam[0] / z[0], lam[1] / z[1], lam[2] / z[2]];
    let sum = w[0] + w[1] + w[2];
    if !(sum > T::zero()) {
        return None;
    }
    Some(FaceGeometry {
        bary: [w[0] / sum, w[1] / sum, w[2] / sum],
        screen_bary: lam,
        depth: T::one() / sum,
        dist,
        coverage: (dist * dist.abs() / sigma).sigmoid(),
    })
}

#[inline]
fn project_face<T: Real>(v: &[Vec3<T>; 3], tan_half_fov: T) -> [[T; 2]; 3] {
    v.map(|p| [p[0] / (p[2] * tan_half_fov), p[1] / (p[2] * tan_half_fov)])
}

/// [`face_geometry_projected`] from camera-space vertices.
pub fn face_geometry<T: Real>(v: &[Vec3<T>; 3], q: [T; 2], tan_half_fov: T, sigma: T) -> Option<FaceGeometry<T>> {
    let s = project_face(v, tan_half_fov);
    face_geometry_projected(&s, &[v[0][2], v[1][2], v[2][2]], q, sigma)
}

/// Vector-Jacobian product of [`face_geometry`] with respect to the camera-space vertices.
pub fn face_geometry_vjp<T: Real>(
    v: &[Vec3<T>; 3],
    q: [T; 2],
    tan_half_fov: T,
    sigma: T,
    grad: &FaceGeometryGrad<T>,
) -> [Vec3<T>; 3] {
    let zero = T::zero();
    let mut gv = [[zero; 3]; 3];
    let s = project_face(v, tan_half_fov);
    let z = [v[0][2], v[1][2], v[2][2]];
    let d = [sub2(s[0], q), sub2(s[1], q), sub2(s[2], q)];
    let e = [cross2(d[1], d[2]), cross2(d[2], d[0]), cross2(d[0], d[1])];
    let area = e[0] + e[1] + e[2];
    if !(area.abs() > T::lit(MIN_PROJECTED_AREA)) {
        return gv;
    }
    let lam = [e[0] / area, e[1] / area, e[2] / area];
    let inside = lam.iter().all(|&l| l >= zero);
    let w = [lam[0] / z[0], lam[1] / z[1], lam[2] / z[2]];
    let sum = w[0] + w[1] + w[2];
    if !(sum > zero) {
        return gv;
    }

    let mut gs = [[zero; 2]; 3];
    let mut gz = [zero; 3];

    // bary_i = w_i / S, depth = 1 / S, S = Σ w
    let s2 = sum * sum;
    let mut g_sum = -grad.depth / s2;
    for i in 0..3 {
        g_sum -= grad.bary[i] * w[i] / s2;
    }
    let mut g_lam = [zero; 3];
    for i in 0..3 {
        let gw = grad.bary[i] / sum + g_sum;
        g_lam[i] = gw / z[i];
        gz[i] -= gw * lam[i] / (z[i] * z[i]);
    }
    // lam_i = e_i / A with A = Σ e
    let g_area = -(0..3).map(|i| g_lam[i] * lam[i]).sum::<T>() / area;
    let g_e = [g_lam[0] / area + g_area, g_lam[1] / area + g_area, g_lam[2] / area + g_area];
    // e_i = cross(d_a, d_b) with d = s - q
    for (i, &(a, b)) in EDGES.iter().enumerate() {
        let (da, db) = (d[a], d[b]);
        gs[a][0] += g_e[i] * db[1];
        gs[a][1] -= g_e[i] * db[0];
        gs[b][0] -= g_e[i] * da[1];
        gs[b][1] += g_e[i] * da[0];
    }

    // coverage = sigmoid(d |d| / sigma)
    if grad.coverage != zero {
        let (edge, dist) = nearest_edge(&s, q);
        let signed = if inside { dist } else { -dist };
        let cov = (signed * signed.abs() / sigma).sigmoid();
        let g_signed = grad.coverage * cov * (T::one() - cov) * T::lit(2.0) * signed.abs() / sigma;
        let g_dist = if inside { g_signed } else { -g_signed };
        let (ia, ib) = EDGES[edge];
        let (a, b) = (s[ia], s[ib]);
        let ev = sub2(b, a);
        let r = sub2(q, a);
        let len2 = dot2(ev, ev);
        let t = if len2 > zero { dot2(r, ev) / len2 } else { zero };
        if t <= zero {
            if dist > zero {
                gs[ia][0] -= g_dist * r[0] / dist;
                gs[ia][1] -= g_dist * r[1] / dist;
            }
        } else if t >= T::one() {
            let rb = sub2(q, b);
            if dist > zero {
                gs[ib][0] -= g_dist * rb[0] / dist;
                gs[ib][1] -= g_dist * rb[1] / dist;
            }
        } else {
            let c = cross2(ev, r);
            let len = len2.sqrt();
            let sg = c.sign0();
            let ge = [
                g_dist * (sg * r[1] / len - c.abs() * ev[0] / (len2 * len)),
                g_dist * (-sg * r[0] / len - c.abs() * ev[1] / (len2 * len)),
            ];
            let gr = [g_dist * sg * -ev[1] / len, g_dist * sg * ev[0] / len];
            gs[ib][0] += ge[0];
            gs[ib][1] += ge[1];
            gs[ia][0] -= ge[0] + gr[0];
            gs[ia][1] -= ge[1] + gr[1];
        }
    }

    // s = (X / (Z t), Y / (Z t))
    for i in 0..3 {
        let zt = z[i] * tan_half_fov;
        gv[i][0] = gs[i][0] / zt;
        gv[i][1] = gs[i][1] / zt;
        gv[i][2] = gz[i] - (gs[i][0] * s[i][0] + gs[i][1] * s[i][1]) / z[i];
    }
    gv
}

/// One entry of a [`FragmentBuffer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment<T> {
    pub face: u32,
    pub bary: [T; 3],
    pub depth: T,
    pub coverage: T,
    pub dist: T,
}

/// Per-pixel list of up to `K` covering faces sorted by ascending depth.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentBuffer<T> {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    /// Number of valid slots per pixel.
    pub counts: Vec<u8>,
    /// `W * H * K` face indices, [`INVALID_FACE`] for empty slots.
    pub faces: Vec<u32>,
    /// `W * H * K * ATTR_STRIDE` packed attributes.
    pub attrs: Vec<T>,
    /// `W * H * K` signed boundary distances.
    pub dists: Vec<T>,
}

impl<T: Real> FragmentBuffer<T> {
    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn fragments(&self, row: usize, col: usize) -> Vec<Fragment<T>> {
        let p = row * self.width + col;
        (0..self.counts[p] as usize)
            .map(|k| {
                let slot = p * self.k + k;
                let a = &self.attrs[slot * ATTR_STRIDE..(slot + 1) * ATTR_STRIDE];
                Fragment {
                    face: self.faces[slot],
                    bary: [a[0], a[1], a[2]],
                    depth: a[3],
                    coverage: a[4],
                    dist: self.dists[slot],
                }
            })
            .collect()
    }

    /// Structural fingerprint of the discrete face selection, for stability screening.
    pub fn selection(&self) -> &[u32] {
        &self.faces
    }

    pub fn covered_pixels(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

struct ProjectedFace<T> {
    index: u32,
    s: [[T; 2]; 3],
    z: [T; 3],
    cols: (usize, usize),
}

fn project_faces<T: Real>(
    mesh: &SheetMesh<T>,
    intrinsics: &CameraIntrinsics,
    settings: &RenderSettings<T>,
) -> (Vec<ProjectedFace<T>>, Vec<Vec<u32>>) {
    let t = intrinsics.tan_half_fov::<T>();
    let (w, h) = (intrinsics.image_width, intrinsics.image_height);
    let mut faces = Vec::new();
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let v = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        // no clipping: faces crossing the near plane are dropped entirely
        if v.iter().any(|p| !(p[2] >= settings.z_near)) {
            continue;
        }
        let s = project_face(&v, t);
        let area = cross2(sub2(s[1], s[0]), sub2(s[2], s[0]));
        if !(area.abs() > T::lit(MIN_PROJECTED_AREA)) {
            continue;
        }
        let r = settings.blur_radius;
        let xmin = s.iter().map(|p| p[0]).fold(T::infinity(), T::min) - r;
        let xmax = s.iter().map(|p| p[0]).fold(T::neg_infinity(), T::max) + r;
        let ymin = s.iter().map(|p| p[1]).fold(T::infinity(), T::min) - r;
        let ymax = s.iter().map(|p| p[1]).fold(T::neg_infinity(), T::max) + r;
        let lo = intrinsics.ndc_to_pixel([xmin, ymax]);
        let hi = intrinsics.ndc_to_pixel([xmax, ymin]);
        let Some(cols) = pixel_span(lo[0], hi[0], w) else { continue };
        let Some(span) = pixel_span(lo[1], hi[1], h) else { continue };
        let idx = faces.len() as u32;
        for row in rows.iter_mut().take(span.1 + 1).skip(span.0) {
            row.push(idx);
        }
        faces.push(ProjectedFace {
            index: fi as u32,
            s,
            z: [v[0][2], v[1][2], v[2][2]],
            cols,
        });
    }
    (faces, rows)
}

/// Integer pixel centres inside `[lo, hi]`, clamped to `0..n`.
fn pixel_span<T: Real>(lo: T, hi: T, n: usize) -> Option<(usize, usize)> {
    let lo = lo.ceil().max(T::zero());
    let hi = hi.floor().min(T::from_usize_lossy(n - 1));
    if !(lo <= hi) {
        return None;
    }
    Some((lo.to_usize()?, hi.to_usize()?))
}

struct RowFragments<T> {
    counts: Vec<u8>,
    faces: Vec<u32>,
    attrs: Vec<T>,
    dists: Vec<T>,
}

/// Builds the K-deep z-buffer of `mesh` (camera-frame vertices) as seen by `intrinsics`.
pub fn rasterize<T: Real>(
    mesh: &SheetMesh<T>,
    intrinsics: &CameraIntrinsics,
    settings: &RenderSettings<T>,
) -> Result<FragmentBuffer<T>> {
    settings.validate()?;
    intrinsics.validate()?;
    mesh.validate()?;
    let (faces, rows) = project_faces(mesh, intrinsics, settings);
    let (w, h, k) = (intrinsics.image_width, intrinsics.image_height, settings.faces_per_pixel);

    let raster_row = |row: usize| -> RowFragments<T> {
        let mut out = RowFragments {
            counts: vec![0; w],
            faces: vec![INVALID_FACE; w * k],
            attrs: vec![T::zero(); w * k * ATTR_STRIDE],
            dists: vec![T::zero(); w * k],
        };
        let mut best: Vec<(T, u32, FaceGeometry<T>)> = Vec::with_capacity(k + 1);
        for col in 0..w {
            best.clear();
            let q = intrinsics.pixel_center_ndc::<T>(row, col);
            for &fi in &rows[row] {
                let f = &faces[fi as usize];
                if col < f.cols.0 || col > f.cols.1 {
                    continue;
                }
                let Some(g) = face_geometry_projected(&f.s, &f.z, q, settings.sigma) else {
                    continue;
                };
                if g.dist < -settings.blur_radius || !(g.depth > T::zero()) {
                    continue;
                }
                let key = (g.depth, f.index);
                let pos = best
                    .iter()
                    .position(|b| (b.0, b.1) > key)
                    .unwrap_or(best.len());
                if pos < k {
                    best.insert(pos, (key.0, key.1, g));
                    best.truncate(k);
                }
            }
            out.counts[col] = best.len() as u8;
            for (slot, (_, face, g)) in best.iter().enumerate() {
                let i = col * k + slot;
                out.faces[i] = *face;
                out.dists[i] = g.dist;
                let a = &mut out.attrs[i * ATTR_STRIDE..(i + 1) * ATTR_STRIDE];
                a.copy_from_slice(&[g.bary[0], g.bary[1], g.bary[2], g.depth, g.coverage]);
            }
        }
        out
    };

    let row_results: Vec<RowFragments<T>> = if settings.parallel {
        (0..h).into_par_iter().map(raster_row).collect()
    } else {
        (0..h).map(raster_row).collect()
    };

    let mut buf = FragmentBuffer {
        width: w,
        height: h,
        k,
        counts: Vec::with_capacity(w * h),
        faces: Vec::with_capacity(w * h * k),
        attrs: Vec::with_capacity(w * h * k * ATTR_STRIDE),
        dists: Vec::with_capacity(w * h * k),
    };
    for r in row_results {
        buf.counts.extend(r.counts);
        buf.faces.extend(r.faces);
        buf.attrs.extend(r.attrs);
        buf.dists.extend(r.dists);
    }
    Ok(buf)
}

/// Recomputes packed attributes for a fixed face selection from camera-frame vertices (flat xyz).
pub fn fragment_attributes<T: Real>(
    frags: &FragmentBuffer<T>,
    faces: &[[usize; 3]],
    vertices: &[T],
    intrinsics: &CameraIntrinsics,
    sigma: T,
) -> Vec<T> {
    let t = intrinsics.tan_half_fov::<T>();
    let mut attrs = vec![T::zero(); frags.attrs.len()];
    for p in 0..frags.pixel_count() {
        let q = intrinsics.pixel_center_ndc::<T>(p / frags.width, p % frags.width);
        for slot in 0..frags.counts[p] as usize {
            let i = p * frags.k + slot;
            let v = face_vertices(faces[frags.faces[i] as usize], vertices);
            if let Some(g) = face_geometry(&v, q, t, sigma) {
                attrs[i * ATTR_STRIDE..(i + 1) * ATTR_STRIDE]
                    .copy_from_slice(&[g.bary[0], g.bary[1], g.bary[2], g.depth, g.coverage]);
            }
        }
    }
    attrs
}

#[inline]
fn face_vertices<T: Real>(f: [usize; 3], vertices: &[T]) -> [Vec3<T>; 3] {
    f.map(|i| [vertices[3 * i], vertices[3 * i + 1], vertices[3 * i + 2]])
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fragment_attributes_backward<T: Real>(
    frags: &FragmentBuffer<T>,
    faces: &[[usize; 3]],
    vertices: &[T],
    intrinsics: &CameraIntrinsics,
    sigma: T,
    grad_attrs: &[T],
    parallel: bool,
    grad_vertices: &mut [T],
) {
    let t = intrinsics.tan_half_fov::<T>();
    let width = frags.width;
    let pixel_grads = |p: usize| -> Vec<(u32, [Vec3<T>; 3])> {
        let q = intrinsics.pixel_center_ndc::<T>(p / width, p % width);
        (0..frags.counts[p] as usize)
            .filter_map(|slot| {
                let i = p * frags.k + slot;
                let g = &grad_attrs[i * ATTR_STRIDE..(i + 1) * ATTR_STRIDE];
                if g.iter().all(|&x| x == T::zero()) {
                    return None;
                }
                let upstream = FaceGeometryGrad {
                    bary: [g[0], g[1], g[2]],
                    depth: g[3],
                    coverage: g[4],
                };
                let face = frags.faces[i];
                let v = face_vertices(faces[face as usize], vertices);
                Some((face, face_geometry_vjp(&v, q, t, sigma, &upstream)))
            })
            .collect()
    };
    let per_pixel: Vec<Vec<(u32, [Vec3<T>; 3])>> = if parallel {
        (0..frags.pixel_count()).into_par_iter().map(pixel_grads).collect()
    } else {
        (0..frags.pixel_count()).map(pixel_grads).collect()
    };
    // fixed-order accumulation keeps results independent of the thread count
    for (face, gv) in per_pixel.into_iter().flatten() {
        for (corner, &vi) in faces[face as usize].iter().enumerate() {
            for c in 0..3 {
                grad_vertices[3 * vi + c] += gv[corner][c];
            }
        }
    }
}

/// Softmax blend weights `p^k` and background weight `p^bg` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendWeights<T> {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    /// `W * H * (K + 1)`: fragment weights then background weight.
    pub weights: Vec<T>,
}

impl<T: Real> BlendWeights<T> {
    #[inline]
    pub fn weight(&self, pixel: usize, slot: usize) -> T {
        self.weights[pixel * (self.k + 1) + slot]
    }

    #[inline]
    pub fn background(&self, pixel: usize) -> T {
        self.weights[pixel * (self.k + 1) + self.k]
    }

    /// Soft foreground mask `1 - p^bg`.
    pub fn mask(&self) -> Grid<T> {
        Grid {
            width: self.width,
            height: self.height,
            channels: 1,
            data: (0..self.width * self.height)
                .map(|p| T::one() - self.background(p))
                .collect(),
        }
    }
}

#[inline]
fn normalized_inverse_depth<T: Real>(z: T, settings: &RenderSettings<T>) -> (T, bool) {
    let v = (settings.z_far - z) / (settings.z_far - settings.z_near);
    if v < T::zero() {
        (T::zero(), false)
    } else if v > T::one() {
        (T::one(), false)
    } else {
        (v, true)
    }
}

/// Blend weights from packed attributes. Uses the max-shifted form of
/// `w^k = D^k exp(ẑ^k / γ)`, `w^bg = 1`, so large `1/γ` cannot overflow.
pub fn blend_from_attrs<T: Real>(attrs: &[T], counts: &[u8], k: usize, settings: &RenderSettings<T>) -> Vec<T> {
    let mut out = vec![T::zero(); counts.len() * (k + 1)];
    for (p, &n) in counts.iter().enumerate() {
        let o = &mut out[p * (k + 1)..(p + 1) * (k + 1)];
        let n = n as usize;
        let mut zhat = [T::zero(); 64];
        let mut m = T::zero();
        for s in 0..n {
            let a = &attrs[(p * k + s) * ATTR_STRIDE..];
            zhat[s] = normalized_inverse_depth(a[3], settings).0;
            m = m.max(zhat[s]);
        }
        let mut total = (-m / settings.gamma).exp();
        o[k] = total;
        for s in 0..n {
            let cov = attrs[(p * k + s) * ATTR_STRIDE + 4];
            o[s] = cov * ((zhat[s] - m) / settings.gamma).exp();
            total += o[s];
        }
        o.iter_mut().for_each(|v| *v /= total);
    }
    out
}

pub(crate) fn blend_backward<T: Real>(
    attrs: &[T],
    counts: &[u8],
    k: usize,
    settings: &RenderSettings<T>,
    weights: &[T],
    grad_weights: &[T],
    grad_attrs: &mut [T],
) {
    let range = settings.z_far - settings.z_near;
    for (p, &n) in counts.iter().enumerate() {
        let n = n as usize;
        if n == 0 {
            continue;
        }
        let pw = &weights[p * (k + 1)..(p + 1) * (k + 1)];
        let gw = &grad_weights[p * (k + 1)..(p + 1) * (k + 1)];
        let mut dot = pw[k] * gw[k];
        for s in 0..n {
            dot += pw[s] * gw[s];
        }
        for s in 0..n {
            let i = (p * k + s) * ATTR_STRIDE;
            let cov = attrs[i + 4];
            // p_s = w_s / W: d p / d w_s scaled by w_s gives p_s (g_s - <p, g>)
            let g_logw = pw[s] * (gw[s] - dot);
            if cov > T::zero() {
                grad_attrs[i + 4] += g_logw / cov;
            }
            let (_, interior) = normalized_inverse_depth(attrs[i + 3], settings);
            if interior {
                grad_attrs[i + 3] -= g_logw / settings.gamma / range;
            }
        }
    }
}

/// Blend weights of a fragment buffer.
pub fn blend_weights<T: Real>(frags: &FragmentBuffer<T>, settings: &RenderSettings<T>) -> BlendWeights<T> {
    BlendWeights {
        width: frags.width,
        height: frags.height,
        k: frags.k,
        weights: blend_from_attrs(&frags.attrs, &frags.counts, frags.k, settings),
    }
}

/// Per-pixel colour `Σ_k p^k T(uv_k) + p^bg bg` from slot-major texel coordinates.
pub fn shade<T: Real>(
    weights: &[T],
    uv: &[T],
    counts: &[u8],
    k: usize,
    texture: &Image<T>,
    background: [T; 3],
) -> Vec<T> {
    let n = counts.len();
    let mut out = vec![T::zero(); 3 * n];
    for (p, &cnt) in counts.iter().enumerate() {
        let pw = &weights[p * (k + 1)..(p + 1) * (k + 1)];
        let o = &mut out[3 * p..3 * p + 3];
        for c in 0..3 {
            o[c] = pw[k] * background[c];
        }
        for s in 0..cnt as usize {
            let j = 2 * (s * n + p);
            let col = texture::sample_bilinear(texture, uv[j], uv[j + 1]);
            for c in 0..3 {
                o[c] += pw[s] * col[c];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn shade_backward<T: Real>(
    weights: &[T],
    uv: &[T],
    counts: &[u8],
    k: usize,
    texture: &Image<T>,
    background: [T; 3],
    grad_out: &[T],
    grad_weights: Option<&mut [T]>,
    grad_uv: Option<&mut [T]>,
    grad_texture: Option<&mut [T]>,
) {
    let n = counts.len();
    let mut gwts = grad_weights;
    let mut guv = grad_uv;
    let mut gtex = grad_texture;
    for (p, &cnt) in counts.iter().enumerate() {
        let g = [grad_out[3 * p], grad_out[3 * p + 1], grad_out[3 * p + 2]];
        if g.iter().all(|&x| x == T::zero()) {
            continue;
        }
        let pw = &weights[p * (k + 1)..(p + 1) * (k + 1)];
        if let Some(gw) = gwts.as_deref_mut() {
            gw[p * (k + 1) + k] += g[0] * background[0] + g[1] * background[1] + g[2] * background[2];
        }
        for s in 0..cnt as usize {
            let j = 2 * (s * n + p);
            let (u, v) = (uv[j], uv[j + 1]);
            if let Some(gw) = gwts.as_deref_mut() {
                let col = texture::sample_bilinear(texture, u, v);
                gw[p * (k + 1) + s] += g[0] * col[0] + g[1] * col[1] + g[2] * col[2];
            }
            let scaled = [g[0] * pw[s], g[1] * pw[s], g[2] * pw[s]];
            if let Some(gu) = guv.as_deref_mut() {
                let d = texture::sample_bilinear_grad_uv(texture, u, v, &scaled);
                gu[j] += d[0];
                gu[j + 1] += d[1];
            }
            if let Some(gt) = gtex.as_deref_mut() {
                texture::sample_bilinear_backward(texture.width, texture.height, u, v, &scaled, gt);
            }
        }
    }
}

/// Blend-weighted expected depth `Σ p^k Z^k / Σ p^k`; zero where nothing covers the pixel.
pub fn expected_depth<T: Real>(attrs: &[T], weights: &[T], counts: &[u8], k: usize) -> Vec<T> {
    counts
        .iter()
        .enumerate()
        .map(|(p, &cnt)| {
            let pw = &weights[p * (k + 1)..(p + 1) * (k + 1)];
            let (mut num, mut den) = (T::zero(), T::zero());
            for s in 0..cnt as usize {
                num += pw[s] * attrs[(p * k + s) * ATTR_STRIDE + 3];
                den += pw[s];
            }
            if den > T::epsilon() {
                num / den
            } else {
                T::zero()
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn expected_depth_backward<T: Real>(
    attrs: &[T],
    weights: &[T],
    counts: &[u8],
    k: usize,
    depth: &[T],
    grad_depth: &[T],
    grad_attrs: Option<&mut [T]>,
    grad_weights: Option<&mut [T]>,
) {
    let mut ga = grad_attrs;
    let mut gw = grad_weights;
    for (p, &cnt) in counts.iter().enumerate() {
        let g = grad_depth[p];
        if g == T::zero() {
            continue;
        }
        let pw = &weights[p * (k + 1)..(p + 1) * (k + 1)];
        let den: T = (0..cnt as usize).map(|s| pw[s]).sum();
        if !(den > T::epsilon()) {
            continue;
        }
        for s in 0..cnt as usize {
            let i = (p * k + s) * ATTR_STRIDE + 3;
            if let Some(ga) = ga.as_deref_mut() {
                ga[i] += g * pw[s] / den;
            }
            if let Some(gw) = gw.as_deref_mut() {
                gw[p * (k + 1) + s] += g * (attrs[i] - depth[p]) / den;
            }
        }
    }
}

/// Image, soft foreground mask and optional expected depth of a rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView<T> {
    pub image: Image<T>,
    pub mask: Grid<T>,
    pub depth: Option<Grid<T>>,
}

impl<T: Real> RenderedView<T> {
    /// Mask thresholded at 0.5.
    pub fn binary_mask(&self) -> Vec<bool> {
        self.mask.data.iter().map(|&m| m > T::lit(0.5)).collect()
    }
}

/// Renders `mesh` (camera-frame vertices) with `texture`, producing image, mask and depth.
pub fn render_textured<T: Real>(
    mesh: &SheetMesh<T>,
    texture: &TextureMap<T>,
    intrinsics: &CameraIntrinsics,
    settings: &RenderSettings<T>,
) -> Result<RenderedView<T>> {
    let (w, h) = (intrinsics.image_width, intrinsics.image_height);
    if texture.colors.width != w || texture.colors.height != h || texture.colors.channels != 3 {
        return Err(Error::Configuration(format!(
            "texture is {}x{}x{}, expected {w}x{h}x3 to match the image size",
            texture.colors.width, texture.colors.height, texture.colors.channels
        )));
    }
    let frags = rasterize(mesh, intrinsics, settings)?;
    let weights = blend_weights(&frags, settings);
    let flow = texture::face_flow(&frags, mesh, w, h);
    let color = shade(&weights.weights, &flow.uv, &frags.counts, frags.k, &texture.colors, settings.background());
    let depth = expected_depth(&frags.attrs, &weights.weights, &frags.counts, frags.k);
    Ok(RenderedView {
        image: Grid::from_vec(w, h, 3, color)?,
        mask: weights.mask(),
        depth: Some(Grid::from_vec(w, h, 1, depth)?),
    })
}
