//! Operators recorded by the fitting pipeline. Discrete choices (fragment
//! selection, hole mask, depth-loss mask) are captured at construction and
//! held constant.

use std::sync::Arc;

use super::tape::Operator;
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::geometry::{self, DepthScaleConfig};
use crate::grid::Grid;
use crate::raster::{self, FragmentBuffer, RenderSettings};
use crate::scalar::Real;
use crate::texture::{self, SplatStats};

fn expect_len(op: &str, which: usize, actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::shape(format!("{op} input {which} with {expected} values"), actual));
    }
    Ok(())
}

fn wanted<'a, T>(grads: &'a mut [Vec<T>], wants: &[bool]) -> Vec<Option<&'a mut [T]>> {
    grads
        .iter_mut()
        .zip(wants)
        .map(|(g, &w)| if w { Some(g.as_mut_slice()) } else { None })
        .collect()
}

/// Sum of all entries.
pub struct Sum;

impl<T: Real> Operator<T> for Sum {
    fn name(&self) -> &'static str {
        "Sum"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        Ok(vec![inputs[0].iter().copied().sum()])
    }

    fn backward(&self, _: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        gi[0].iter_mut().for_each(|x| *x += g[0]);
    }
}

/// `Σ x²`.
pub struct SquaredNorm;

impl<T: Real> Operator<T> for SquaredNorm {
    fn name(&self) -> &'static str {
        "SquaredNorm"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        Ok(vec![inputs[0].iter().map(|&x| x * x).sum()])
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        for (d, &x) in gi[0].iter_mut().zip(inputs[0]) {
            *d += T::lit(2.0) * x * g[0];
        }
    }
}

/// Flat logits `[lx, ly, psi]` to decoded `[dx, dy, z]`.
pub struct DecodeSheet<T> {
    pub grid_w: usize,
    pub grid_h: usize,
    pub depth_scale: DepthScaleConfig<T>,
}

impl<T: Real> Operator<T> for DecodeSheet<T> {
    fn name(&self) -> &'static str {
        "DecodeSheet"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        expect_len(self.name(), 0, inputs[0].len(), 3 * self.grid_w * self.grid_h)?;
        Ok(geometry::decode_flat(inputs[0], self.grid_w, self.grid_h, &self.depth_scale))
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        geometry::decode_flat_backward(inputs[0], g, self.grid_w, self.grid_h, &self.depth_scale, &mut gi[0]);
    }
}

/// Decoded `[dx, dy, z]` to flat camera-frame vertex positions.
pub struct BuildVertices<T> {
    pub grid_w: usize,
    pub grid_h: usize,
    pub tan_half_fov: T,
}

impl<T: Real> Operator<T> for BuildVertices<T> {
    fn name(&self) -> &'static str {
        "BuildVertices"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        expect_len(self.name(), 0, inputs[0].len(), 3 * self.grid_w * self.grid_h)?;
        let n = self.grid_w * self.grid_h;
        if let Some(i) = inputs[0][2 * n..].iter().position(|&z| !(z > T::zero())) {
            return Err(Error::Geometry(format!("vertex {i} has non-positive depth")));
        }
        Ok(geometry::vertices_from_decoded(inputs[0], self.grid_w, self.grid_h, self.tan_half_fov))
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        geometry::vertices_from_decoded_backward(inputs[0], g, self.grid_w, self.grid_h, self.tan_half_fov, &mut gi[0]);
    }
}

/// Rigid transform of flat vertex positions.
pub struct TransformVertices<T> {
    pub pose: CameraPose<T>,
}

impl<T: Real> Operator<T> for TransformVertices<T> {
    fn name(&self) -> &'static str {
        "TransformVertices"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        if !inputs[0].len().is_multiple_of(3) {
            return Err(Error::shape("xyz triples", inputs[0].len()));
        }
        Ok(inputs[0]
            .chunks_exact(3)
            .flat_map(|c| self.pose.apply([c[0], c[1], c[2]]))
            .collect())
    }

    fn backward(&self, _: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        for (d, gc) in gi[0].chunks_exact_mut(3).zip(g.chunks_exact(3)) {
            let r = self.pose.rotate_transposed([gc[0], gc[1], gc[2]]);
            for c in 0..3 {
                d[c] += r[c];
            }
        }
    }
}

/// Packed fragment attributes for a fixed face selection.
pub struct FragmentAttributes<T> {
    pub frags: Arc<FragmentBuffer<T>>,
    pub faces: Arc<Vec<[usize; 3]>>,
    pub intrinsics: CameraIntrinsics,
    pub sigma: T,
    pub parallel: bool,
}

impl<T: Real> Operator<T> for FragmentAttributes<T> {
    fn name(&self) -> &'static str {
        "FragmentAttributes"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        let nv = inputs[0].len() / 3;
        if !inputs[0].len().is_multiple_of(3) || self.faces.iter().flatten().any(|&i| i >= nv) {
            return Err(Error::shape("vertices covering every face index", inputs[0].len()));
        }
        Ok(raster::fragment_attributes(&self.frags, &self.faces, inputs[0], &self.intrinsics, self.sigma))
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        raster::fragment_attributes_backward(
            &self.frags,
            &self.faces,
            inputs[0],
            &self.intrinsics,
            self.sigma,
            g,
            self.parallel,
            &mut gi[0],
        );
    }
}

/// Softmax blend weights from packed attributes.
pub struct BlendWeights<T> {
    pub frags: Arc<FragmentBuffer<T>>,
    pub settings: RenderSettings<T>,
}

impl<T: Real> Operator<T> for BlendWeights<T> {
    fn name(&self) -> &'static str {
        "BlendWeights"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        expect_len(self.name(), 0, inputs[0].len(), self.frags.attrs.len())?;
        Ok(raster::blend_from_attrs(inputs[0], &self.frags.counts, self.frags.k, &self.settings))
    }

    fn backward(&self, inputs: &[&[T]], out: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        raster::blend_backward(inputs[0], &self.frags.counts, self.frags.k, &self.settings, out, g, &mut gi[0]);
    }
}

/// Texel coordinates of every fragment from its barycentrics.
pub struct FaceFlow<T> {
    pub frags: Arc<FragmentBuffer<T>>,
    pub faces: Arc<Vec<[usize; 3]>>,
    pub uvs: Arc<Vec<[T; 2]>>,
    pub tex_w: usize,
    pub tex_h: usize,
}

impl<T: Real> Operator<T> for FaceFlow<T> {
    fn name(&self) -> &'static str {
        "FaceFlow"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        expect_len(self.name(), 0, inputs[0].len(), self.frags.attrs.len())?;
        let f = &self.frags;
        Ok(texture::flow_from_attrs(inputs[0], &f.faces, &f.counts, f.k, &self.faces, &self.uvs, self.tex_w, self.tex_h))
    }

    fn backward(&self, _: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        let f = &self.frags;
        texture::flow_from_attrs_backward(&f.faces, &f.counts, f.k, &self.faces, &self.uvs, self.tex_w, self.tex_h, g, &mut gi[0]);
    }
}

/// `(image, blend weights)` to `K` weighted image layers.
pub struct Decompose {
    pub k: usize,
}

impl<T: Real> Operator<T> for Decompose {
    fn name(&self) -> &'static str {
        "Decompose"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        let n = inputs[0].len() / 3;
        expect_len(Operator::<T>::name(self), 1, inputs[1].len(), n * (self.k + 1))?;
        Ok(texture::decompose_image(inputs[0], inputs[1], self.k))
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], wants: &[bool]) {
        let mut it = wanted(gi, wants).into_iter();
        let (g_img, g_w) = (it.next().flatten(), it.next().flatten());
        texture::decompose_image_backward(inputs[0], inputs[1], self.k, g, g_img, g_w);
    }
}

/// `(layers, blend weights, flow)` to accumulated `T_sum` (3 channels) followed by `W_sum`.
pub struct Splat<T> {
    pub frags: Arc<FragmentBuffer<T>>,
    pub tex_w: usize,
    pub tex_h: usize,
    pub stats: SplatStats,
}

impl<T: Real> Operator<T> for Splat<T> {
    fn name(&self) -> &'static str {
        "Splat"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        let (n, k) = (self.frags.pixel_count(), self.frags.k);
        expect_len(self.name(), 0, inputs[0].len(), 3 * k * n)?;
        expect_len(self.name(), 1, inputs[1].len(), (k + 1) * n)?;
        expect_len(self.name(), 2, inputs[2].len(), 2 * k * n)?;
        let (mut t_sum, w_sum, stats) =
            texture::splat_layers(inputs[0], inputs[1], inputs[2], &self.frags.counts, k, self.tex_w, self.tex_h);
        self.stats = stats;
        t_sum.extend(w_sum);
        Ok(t_sum)
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], wants: &[bool]) {
        let split = 3 * self.tex_w * self.tex_h;
        let mut it = wanted(gi, wants).into_iter();
        let (g_layers, g_weights, g_uv) = (it.next().flatten(), it.next().flatten(), it.next().flatten());
        texture::splat_layers_backward(
            inputs[0],
            inputs[1],
            inputs[2],
            &self.frags.counts,
            self.frags.k,
            self.tex_w,
            self.tex_h,
            &g[..split],
            &g[split..],
            g_layers,
            g_weights,
            g_uv,
        );
    }
}

/// Splat normalization and hole filling: `[T_sum, W_sum]` to the texture.
pub struct NormalizeFill {
    pub tex_w: usize,
    pub tex_h: usize,
}

impl<T: Real> Operator<T> for NormalizeFill {
    fn name(&self) -> &'static str {
        "NormalizeFill"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        let n = self.tex_w * self.tex_h;
        expect_len(Operator::<T>::name(self), 0, inputs[0].len(), 4 * n)?;
        let (t, w) = inputs[0].split_at(3 * n);
        Ok(texture::normalize_fill(t, w, self.tex_w, self.tex_h))
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        let n = self.tex_w * self.tex_h;
        let (t, w) = inputs[0].split_at(3 * n);
        let (gt, gw) = gi[0].split_at_mut(3 * n);
        texture::normalize_fill_backward(t, w, self.tex_w, self.tex_h, g, Some(gt), Some(gw));
    }
}

/// `(blend weights, flow, texture)` to the rendered image.
pub struct Shade<T> {
    pub frags: Arc<FragmentBuffer<T>>,
    pub tex_w: usize,
    pub tex_h: usize,
    pub background: [T; 3],
}

impl<T: Real> Shade<T> {
    fn texture(&self, data: &[T]) -> Grid<T> {
        Grid {
            width: self.tex_w,
            height: self.tex_h,
            channels: 3,
            data: data.to_vec(),
        }
    }
}

impl<T: Real> Operator<T> for Shade<T> {
    fn name(&self) -> &'static str {
        "Shade"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        let (n, k) = (self.frags.pixel_count(), self.frags.k);
        expect_len(self.name(), 0, inputs[0].len(), n * (k + 1))?;
        expect_len(self.name(), 1, inputs[1].len(), 2 * k * n)?;
        expect_len(self.name(), 2, inputs[2].len(), 3 * self.tex_w * self.tex_h)?;
        let tex = self.texture(inputs[2]);
        Ok(raster::shade(inputs[0], inputs[1], &self.frags.counts, k, &tex, self.background))
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], wants: &[bool]) {
        let tex = self.texture(inputs[2]);
        let mut it = wanted(gi, wants).into_iter();
        let (gw, guv, gt) = (it.next().flatten(), it.next().flatten(), it.next().flatten());
        raster::shade_backward(
            inputs[0],
            inputs[1],
            &self.frags.counts,
            self.frags.k,
            &tex,
            self.background,
            g,
            gw,
            guv,
            gt,
        );
    }
}

/// `(attributes, blend weights)` to the blend-weighted expected depth.
pub struct RenderDepth<T> {
    pub frags: Arc<FragmentBuffer<T>>,
}

impl<T: Real> Operator<T> for RenderDepth<T> {
    fn name(&self) -> &'static str {
        "RenderDepth"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        let f = &self.frags;
        expect_len(self.name(), 0, inputs[0].len(), f.attrs.len())?;
        expect_len(self.name(), 1, inputs[1].len(), f.pixel_count() * (f.k + 1))?;
        Ok(raster::expected_depth(inputs[0], inputs[1], &f.counts, f.k))
    }

    fn backward(&self, inputs: &[&[T]], out: &[T], g: &[T], gi: &mut [Vec<T>], wants: &[bool]) {
        let mut it = wanted(gi, wants).into_iter();
        let (ga, gw) = (it.next().flatten(), it.next().flatten());
        raster::expected_depth_backward(inputs[0], inputs[1], &self.frags.counts, self.frags.k, out, g, ga, gw);
    }
}

/// `Σ |pred - target| / (W H)`.
pub struct L1ImageLoss<T> {
    pub target: Arc<Vec<T>>,
    pub pixel_count: usize,
}

impl<T: Real> Operator<T> for L1ImageLoss<T> {
    fn name(&self) -> &'static str {
        "L1ImageLoss"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        expect_len(self.name(), 0, inputs[0].len(), self.target.len())?;
        let s: T = inputs[0].iter().zip(self.target.iter()).map(|(&a, &b)| (a - b).abs()).sum();
        Ok(vec![s / T::from_usize_lossy(self.pixel_count)])
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        let scale = g[0] / T::from_usize_lossy(self.pixel_count);
        for ((d, &a), &b) in gi[0].iter_mut().zip(inputs[0]).zip(self.target.iter()) {
            *d += (a - b).sign0() * scale;
        }
    }
}

/// Mean absolute depth error over a fixed pixel mask; zero for an empty mask.
pub struct DepthL1<T> {
    pub target: Arc<Vec<T>>,
    pub mask: Arc<Vec<bool>>,
}

impl<T: Real> DepthL1<T> {
    fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

impl<T: Real> Operator<T> for DepthL1<T> {
    fn name(&self) -> &'static str {
        "DepthL1"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        expect_len(self.name(), 0, inputs[0].len(), self.target.len())?;
        let n = self.count();
        if n == 0 {
            return Ok(vec![T::zero()]);
        }
        let s: T = (0..self.mask.len())
            .filter(|&i| self.mask[i])
            .map(|i| (inputs[0][i] - self.target[i]).abs())
            .sum();
        Ok(vec![s / T::from_usize_lossy(n)])
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        let n = self.count();
        if n == 0 {
            return;
        }
        let scale = g[0] / T::from_usize_lossy(n);
        for i in (0..self.mask.len()).filter(|&i| self.mask[i]) {
            gi[0][i] += (inputs[0][i] - self.target[i]).sign0() * scale;
        }
    }
}

/// `Σ (dx² + dy²)` over the offset blocks of the decoded sheet.
pub struct GridOffsetReg {
    pub vertex_count: usize,
}

impl<T: Real> Operator<T> for GridOffsetReg {
    fn name(&self) -> &'static str {
        "GridOffsetReg"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        expect_len(Operator::<T>::name(self), 0, inputs[0].len(), 3 * self.vertex_count)?;
        Ok(vec![inputs[0][..2 * self.vertex_count].iter().map(|&x| x * x).sum()])
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        for i in 0..2 * self.vertex_count {
            gi[0][i] += T::lit(2.0) * inputs[0][i] * g[0];
        }
    }
}

/// Sum of L1 norms of the per-vertex umbrella vectors.
pub struct LaplacianReg {
    pub neighbors: Arc<Vec<Vec<usize>>>,
}

impl<T: Real> Operator<T> for LaplacianReg {
    fn name(&self) -> &'static str {
        "LaplacianReg"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        expect_len(Operator::<T>::name(self), 0, inputs[0].len(), 3 * self.neighbors.len())?;
        Ok(vec![geometry::laplacian_flat(inputs[0], &self.neighbors)])
    }

    fn backward(&self, inputs: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], _: &[bool]) {
        geometry::laplacian_flat_backward(inputs[0], &self.neighbors, g[0], &mut gi[0]);
    }
}

/// `Σ_i w_i x_i` over scalar inputs.
pub struct WeightedSum<T> {
    pub weights: Vec<T>,
}

impl<T: Real> Operator<T> for WeightedSum<T> {
    fn name(&self) -> &'static str {
        "WeightedSum"
    }

    fn forward(&mut self, inputs: &[&[T]]) -> Result<Vec<T>> {
        if inputs.len() != self.weights.len() || inputs.iter().any(|x| x.len() != 1) {
            return Err(Error::shape(format!("{} scalars", self.weights.len()), inputs.len()));
        }
        Ok(vec![inputs.iter().zip(&self.weights).map(|(x, &w)| x[0] * w).sum()])
    }

    fn backward(&self, _: &[&[T]], _: &[T], g: &[T], gi: &mut [Vec<T>], wants: &[bool]) {
        for ((d, &w), &want) in gi.iter_mut().zip(&self.weights).zip(wants) {
            if want {
                d[0] += g[0] * w;
            }
        }
    }
}
