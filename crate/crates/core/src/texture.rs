//! Texture reconstruction by per-slot bilinear splatting, weight normalization
//! and Gaussian hole filling, plus the bilinear gather used when shading.
//!
//! Texel coordinates are pixel-aligned: UV `(u, v)` maps to texel
//! `(u * W - 0.5, v * H - 0.5)`, so texel `(i, j)` has its centre at UV
//! `((i + 0.5) / W, (j + 0.5) / H)`. Per-slot buffers are slot-major:
//! entry `(k, p)` lives at `k * W * H + p`.

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::geometry::SheetMesh;
use crate::grid::{Grid, Image};
use crate::raster::{self, FragmentBuffer, RenderSettings, ATTR_STRIDE};
use crate::scalar::Real;

/// Splat normalization floor.
pub const WEIGHT_FLOOR: f64 = 1e-4;
/// Floor on the filtered mask below which a hole stays empty.
pub const FILL_FLOOR: f64 = 1e-8;
pub const FILL_KERNEL_SIZE: usize = 7;
pub const FILL_KERNEL_SIGMA: f64 = 2.0;

/// Reconstructed texture with its accumulated splat weight and hole mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap<T> {
    pub colors: Image<T>,
    /// Accumulated splat weight, one channel.
    pub weight: Grid<T>,
    /// 1 where the texel received at least `WEIGHT_FLOOR` splat weight, else 0.
    pub hole_mask: Grid<T>,
    pub stats: SplatStats,
}

impl<T: Real> TextureMap<T> {
    /// Fully valid texture of a single colour.
    pub fn constant(width: usize, height: usize, color: [T; 3]) -> Self {
        TextureMap {
            colors: Grid::from_fn(width, height, 3, |_, _, c| color[c]),
            weight: Grid::filled(width, height, 1, T::one()),
            hole_mask: Grid::filled(width, height, 1, T::one()),
            stats: SplatStats::default(),
        }
    }

    /// Fully valid texture from an image.
    pub fn from_image(image: Image<T>) -> Result<Self> {
        if image.channels != 3 {
            return Err(Error::shape("3 channels", image.channels));
        }
        let (w, h) = (image.width, image.height);
        Ok(TextureMap {
            colors: image,
            weight: Grid::filled(w, h, 1, T::one()),
            hole_mask: Grid::filled(w, h, 1, T::one()),
            stats: SplatStats::default(),
        })
    }

    pub fn valid_texels(&self) -> usize {
        self.hole_mask.data.iter().filter(|&&m| m > T::zero()).count()
    }
}

/// Diagnostics of a splatting pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplatStats {
    /// Source samples splatted (valid slots).
    pub splatted: usize,
    /// Bilinear corner contributions with nonzero weight that fell outside the texture.
    pub clipped: usize,
}

/// Texel-space target of every (slot, pixel) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    /// `2 * K * W * H` texel coordinates, slot-major.
    pub uv: Vec<T>,
    /// `K * W * H` validity flags, slot-major.
    pub valid: Vec<bool>,
}

impl<T: Real> FlowField<T> {
    pub fn get(&self, slot: usize, row: usize, col: usize) -> Option<[T; 2]> {
        let i = slot * self.width * self.height + row * self.width + col;
        self.valid[i].then(|| [self.uv[2 * i], self.uv[2 * i + 1]])
    }
}

/// Converts a UV coordinate in `[0, 1]` to pixel-aligned texel coordinates.
#[inline]
pub fn uv_to_texel<T: Real>(uv: [T; 2], tex_w: usize, tex_h: usize) -> [T; 2] {
    let half = T::lit(0.5);
    [uv[0] * T::from_usize_lossy(tex_w) - half, uv[1] * T::from_usize_lossy(tex_h) - half]
}

/// Texel coordinates from packed fragment attributes; invalid slots are zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn flow_from_attrs<T: Real>(
    attrs: &[T],
    frag_faces: &[u32],
    counts: &[u8],
    k: usize,
    faces: &[[usize; 3]],
    uvs: &[[T; 2]],
    tex_w: usize,
    tex_h: usize,
) -> Vec<T> {
    let n = counts.len();
    let mut out = vec![T::zero(); 2 * k * n];
    for (p, &cnt) in counts.iter().enumerate() {
        for s in 0..cnt as usize {
            let i = p * k + s;
            let a = &attrs[i * ATTR_STRIDE..];
            let f = faces[frag_faces[i] as usize];
            let mut uv = [T::zero(); 2];
            for c in 0..3 {
                uv[0] += a[c] * uvs[f[c]][0];
                uv[1] += a[c] * uvs[f[c]][1];
            }
            let t = uv_to_texel(uv, tex_w, tex_h);
            out[2 * (s * n + p)] = t[0];
            out[2 * (s * n + p) + 1] = t[1];
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn flow_from_attrs_backward<T: Real>(
    frag_faces: &[u32],
    counts: &[u8],
    k: usize,
    faces: &[[usize; 3]],
    uvs: &[[T; 2]],
    tex_w: usize,
    tex_h: usize,
    grad_uv: &[T],
    grad_attrs: &mut [T],
) {
    let n = counts.len();
    let (sw, sh) = (T::from_usize_lossy(tex_w), T::from_usize_lossy(tex_h));
    for (p, &cnt) in counts.iter().enumerate() {
        for s in 0..cnt as usize {
            let i = p * k + s;
            let gu = grad_uv[2 * (s * n + p)] * sw;
            let gv = grad_uv[2 * (s * n + p) + 1] * sh;
            let f = faces[frag_faces[i] as usize];
            for c in 0..3 {
                grad_attrs[i * ATTR_STRIDE + c] += gu * uvs[f[c]][0] + gv * uvs[f[c]][1];
            }
        }
    }
}

/// Per-fragment texel coordinates from barycentric interpolation of the face UVs.
pub fn face_flow<T: Real>(frags: &FragmentBuffer<T>, mesh: &SheetMesh<T>, tex_w: usize, tex_h: usize) -> FlowField<T> {
    let n = frags.pixel_count();
    let mut valid = vec![false; frags.k * n];
    for (p, &cnt) in frags.counts.iter().enumerate() {
        for s in 0..cnt as usize {
            valid[s * n + p] = true;
        }
    }
    FlowField {
        width: frags.width,
        height: frags.height,
        k: frags.k,
        uv: flow_from_attrs(&frags.attrs, &frags.faces, &frags.counts, frags.k, &mesh.faces, &mesh.uvs, tex_w, tex_h),
        valid,
    }
}

/// Splits `image` into `K` layers `I^k = I * p^k`, slot-major with 3 channels per pixel.
pub fn decompose_image<T: Real>(image: &[T], weights: &[T], k: usize) -> Vec<T> {
    let n = image.len() / 3;
    let mut out = vec![T::zero(); 3 * k * n];
    for s in 0..k {
        for p in 0..n {
            let w = weights[p * (k + 1) + s];
            for c in 0..3 {
                out[3 * (s * n + p) + c] = image[3 * p + c] * w;
            }
        }
    }
    out
}

pub(crate) fn decompose_image_backward<T: Real>(
    image: &[T],
    weights: &[T],
    k: usize,
    grad_layers: &[T],
    mut grad_image: Option<&mut [T]>,
    mut grad_weights: Option<&mut [T]>,
) {
    let n = image.len() / 3;
    for s in 0..k {
        for p in 0..n {
            let w = weights[p * (k + 1) + s];
            for c in 0..3 {
                let g = grad_layers[3 * (s * n + p) + c];
                if let Some(gi) = grad_image.as_deref_mut() {
                    gi[3 * p + c] += g * w;
                }
                if let Some(gw) = grad_weights.as_deref_mut() {
                    gw[p * (k + 1) + s] += g * image[3 * p + c];
                }
            }
        }
    }
}

/// Bilinear corners `(col, row, weight)` of a texel-space point, using corners `floor` and `floor + 1`.
#[inline]
fn splat_corners<T: Real>(u: T, v: T) -> [(i64, i64, T); 4] {
    let (uf, vf) = (u.floor(), v.floor());
    let (fu, fv) = (u - uf, v - vf);
    let (iu, iv) = (uf.to_i64().unwrap_or(i64::MIN / 2), vf.to_i64().unwrap_or(i64::MIN / 2));
    let one = T::one();
    [
        (iu, iv, (one - fu) * (one - fv)),
        (iu + 1, iv, fu * (one - fv)),
        (iu, iv + 1, (one - fu) * fv),
        (iu + 1, iv + 1, fu * fv),
    ]
}

/// `d weight / d (u, v)` of each corner in [`splat_corners`] order.
#[inline]
fn splat_corner_grads<T: Real>(u: T, v: T) -> [[T; 2]; 4] {
    let (fu, fv) = (u - u.floor(), v - v.floor());
    let one = T::one();
    [
        [-(one - fv), -(one - fu)],
        [one - fv, -fu],
        [-fv, one - fu],
        [fv, fu],
    ]
}

#[inline]
fn texel_index(col: i64, row: i64, w: usize, h: usize) -> Option<usize> {
    (col >= 0 && row >= 0 && (col as usize) < w && (row as usize) < h).then(|| row as usize * w + col as usize)
}

/// Bilinear scatter of one slot: `values` holds `channels` entries per pixel,
/// `uv` two texel coordinates per pixel. Adds into `out` (`channels` per texel).
#[allow(clippy::too_many_arguments)]
pub fn forward_map<T: Real>(
    values: &[T],
    channels: usize,
    uv: &[T],
    valid: &[bool],
    tex_w: usize,
    tex_h: usize,
    out: &mut [T],
    stats: &mut SplatStats,
) {
    for (p, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
        stats.splatted += 1;
        for (col, row, w) in splat_corners(uv[2 * p], uv[2 * p + 1]) {
            if w == T::zero() {
                continue;
            }
            match texel_index(col, row, tex_w, tex_h) {
                Some(t) => {
                    for c in 0..channels {
                        out[t * channels + c] += values[p * channels + c] * w;
                    }
                }
                None => stats.clipped += 1,
            }
        }
    }
}

/// Splats every slot's colour layer together with the matching layer of an
/// all-ones image (the slot's blend weight); returns `(T_sum, W_sum)` with 3
/// and 1 channels per texel.
pub fn splat_layers<T: Real>(
    layers: &[T],
    weights: &[T],
    uv: &[T],
    counts: &[u8],
    k: usize,
    tex_w: usize,
    tex_h: usize,
) -> (Vec<T>, Vec<T>, SplatStats) {
    let n = counts.len();
    let mut t_sum = vec![T::zero(); 3 * tex_w * tex_h];
    let mut w_sum = vec![T::zero(); tex_w * tex_h];
    let mut stats = SplatStats::default();
    let mut ignored = SplatStats::default();
    for s in 0..k {
        let valid: Vec<bool> = counts.iter().map(|&c| (c as usize) > s).collect();
        let ones: Vec<T> = (0..n).map(|p| weights[p * (k + 1) + s]).collect();
        let uv_s = &uv[2 * s * n..2 * (s + 1) * n];
        forward_map(&layers[3 * s * n..3 * (s + 1) * n], 3, uv_s, &valid, tex_w, tex_h, &mut t_sum, &mut stats);
        forward_map(&ones, 1, uv_s, &valid, tex_w, tex_h, &mut w_sum, &mut ignored);
    }
    (t_sum, w_sum, stats)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn splat_layers_backward<T: Real>(
    layers: &[T],
    weights: &[T],
    uv: &[T],
    counts: &[u8],
    k: usize,
    tex_w: usize,
    tex_h: usize,
    grad_t_sum: &[T],
    grad_w_sum: &[T],
    mut grad_layers: Option<&mut [T]>,
    mut grad_weights: Option<&mut [T]>,
    mut grad_uv: Option<&mut [T]>,
) {
    let n = counts.len();
    for s in 0..k {
        for (p, &cnt) in counts.iter().enumerate() {
            if (cnt as usize) <= s {
                continue;
            }
            let j = s * n + p;
            let pw = weights[p * (k + 1) + s];
            let (u, v) = (uv[2 * j], uv[2 * j + 1]);
            let corners = splat_corners(u, v);
            let dw = splat_corner_grads(u, v);
            for (ci, (col, row, w)) in corners.into_iter().enumerate() {
                let Some(t) = texel_index(col, row, tex_w, tex_h) else { continue };
                let mut g_weight = grad_w_sum[t] * pw;
                for c in 0..3 {
                    let g = grad_t_sum[3 * t + c];
                    g_weight += g * layers[3 * j + c];
                    if let Some(gl) = grad_layers.as_deref_mut() {
                        gl[3 * j + c] += g * w;
                    }
                }
                if let Some(gp) = grad_weights.as_deref_mut() {
                    gp[p * (k + 1) + s] += grad_w_sum[t] * w;
                }
                if let Some(gu) = grad_uv.as_deref_mut() {
                    gu[2 * j] += g_weight * dw[ci][0];
                    gu[2 * j + 1] += g_weight * dw[ci][1];
                }
            }
        }
    }
}

/// `T_norm = T_sum / max(W_sum, 1e-4)` on texels with `W_sum >= 1e-4`, which form the
/// valid mask; texels below the floor are zeroed and left to hole filling.
pub fn normalize_splat<T: Real>(t_sum: &[T], w_sum: &[T], channels: usize) -> (Vec<T>, Vec<T>) {
    let floor = T::lit(WEIGHT_FLOOR);
    let norm = t_sum
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let w = w_sum[i / channels];
            if w >= floor {
                t / w.max(floor)
            } else {
                T::zero()
            }
        })
        .collect();
    let mask = w_sum
        .iter()
        .map(|&w| if w >= floor { T::one() } else { T::zero() })
        .collect();
    (norm, mask)
}

/// Normalized 1-D Gaussian taps; their outer product is the 2-D fill kernel.
pub fn gaussian_kernel<T: Real>(size: usize, sigma: T) -> Vec<T> {
    let centre = T::from_usize_lossy(size / 2);
    let taps: Vec<T> = (0..size)
        .map(|i| {
            let x = T::from_usize_lossy(i) - centre;
            (-(x * x) / (T::lit(2.0) * sigma * sigma)).exp()
        })
        .collect();
    let total: T = taps.iter().copied().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable zero-padded convolution with a symmetric kernel (self-adjoint).
fn convolve<T: Real>(data: &[T], w: usize, h: usize, channels: usize, taps: &[T]) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![T::zero(); data.len()];
    for row in 0..h {
        for col in 0..w {
            for (ti, &t) in taps.iter().enumerate() {
                let c2 = col as isize + ti as isize - r;
                if c2 < 0 || c2 >= w as isize {
                    continue;
                }
                let src = (row * w + c2 as usize) * channels;
                let dst = (row * w + col) * channels;
                for c in 0..channels {
                    tmp[dst + c] += t * data[src + c];
                }
            }
        }
    }
    let mut out = vec![T::zero(); data.len()];
    for row in 0..h {
        for (ti, &t) in taps.iter().enumerate() {
            let r2 = row as isize + ti as isize - r;
            if r2 < 0 || r2 >= h as isize {
                continue;
            }
            let src = r2 as usize * w * channels;
            let dst = row * w * channels;
            for i in 0..w * channels {
                out[dst + i] += t * tmp[src + i];
            }
        }
    }
    out
}

struct FillTerms<T> {
    /// Filtered mask per texel.
    denom: Vec<T>,
}

fn fill_terms<T: Real>(mask: &[T], w: usize, h: usize, taps: &[T]) -> FillTerms<T> {
    FillTerms { denom: convolve(mask, w, h, 1, taps) }
}

/// `M T_norm + (1 - M) (F * T_norm) / (F * M)`, zero where the filtered mask is below the floor.
pub fn fill_holes_flat<T: Real>(t_norm: &[T], mask: &[T], w: usize, h: usize, channels: usize) -> Vec<T> {
    let taps = gaussian_kernel(FILL_KERNEL_SIZE, T::lit(FILL_KERNEL_SIGMA));
    let terms = fill_terms(mask, w, h, &taps);
    let blurred = convolve(t_norm, w, h, channels, &taps);
    let floor = T::lit(FILL_FLOOR);
    (0..t_norm.len())
        .map(|i| {
            let t = i / channels;
            if mask[t] > T::zero() {
                t_norm[i]
            } else if terms.denom[t] > floor {
                blurred[i] / terms.denom[t]
            } else {
                T::zero()
            }
        })
        .collect()
}

fn fill_holes_flat_backward<T: Real>(
    mask: &[T],
    w: usize,
    h: usize,
    channels: usize,
    grad_out: &[T],
) -> Vec<T> {
    let taps = gaussian_kernel(FILL_KERNEL_SIZE, T::lit(FILL_KERNEL_SIGMA));
    let terms = fill_terms(mask, w, h, &taps);
    let floor = T::lit(FILL_FLOOR);
    let mut direct = vec![T::zero(); grad_out.len()];
    let mut through_filter = vec![T::zero(); grad_out.len()];
    for (i, &g) in grad_out.iter().enumerate() {
        let t = i / channels;
        if mask[t] > T::zero() {
            direct[i] = g;
        } else if terms.denom[t] > floor {
            through_filter[i] = g / terms.denom[t];
        }
    }
    let spread = convolve(&through_filter, w, h, channels, &taps);
    direct.iter().zip(spread).map(|(&a, b)| a + b).collect()
}

/// Fills texels with `hole_mask = 0` from a mask-normalized Gaussian blur of the valid texels.
pub fn fill_holes<T: Real>(t_norm: &Image<T>, hole_mask: &Grid<T>) -> Result<Image<T>> {
    hole_mask.ensure_shape(t_norm.width, t_norm.height, 1)?;
    let data = fill_holes_flat(&t_norm.data, &hole_mask.data, t_norm.width, t_norm.height, t_norm.channels);
    Grid::from_vec(t_norm.width, t_norm.height, t_norm.channels, data)
}

/// Normalization followed by hole filling, on flat `T_sum` (3 channels) and `W_sum`.
pub fn normalize_fill<T: Real>(t_sum: &[T], w_sum: &[T], w: usize, h: usize) -> Vec<T> {
    let (norm, mask) = normalize_splat(t_sum, w_sum, 3);
    fill_holes_flat(&norm, &mask, w, h, 3)
}

pub(crate) fn normalize_fill_backward<T: Real>(
    t_sum: &[T],
    w_sum: &[T],
    w: usize,
    h: usize,
    grad_out: &[T],
    mut grad_t_sum: Option<&mut [T]>,
    mut grad_w_sum: Option<&mut [T]>,
) {
    let (_, mask) = normalize_splat(t_sum, w_sum, 3);
    let g_norm = fill_holes_flat_backward(&mask, w, h, 3, grad_out);
    let floor = T::lit(WEIGHT_FLOOR);
    for (i, &g) in g_norm.iter().enumerate() {
        let ws = w_sum[i / 3];
        if ws < floor {
            continue;
        }
        if let Some(gt) = grad_t_sum.as_deref_mut() {
            gt[i] += g / ws;
        }
        if let Some(gw) = grad_w_sum.as_deref_mut() {
            gw[i / 3] -= g * t_sum[i] / (ws * ws);
        }
    }
}

/// Clamp-to-edge bilinear lookup at texel coordinates `(u, v)`.
#[inline]
fn gather_setup<T: Real>(w: usize, h: usize, u: T, v: T) -> (usize, usize, T, T, bool, bool) {
    let max_u = T::from_usize_lossy(w - 1);
    let max_v = T::from_usize_lossy(h - 1);
    let in_u = u > T::zero() && u < max_u;
    let in_v = v > T::zero() && v < max_v;
    let uc = u.max(T::zero()).min(max_u);
    let vc = v.max(T::zero()).min(max_v);
    let c0 = uc.floor().to_usize().unwrap_or(0).min(w - 2);
    let r0 = vc.floor().to_usize().unwrap_or(0).min(h - 2);
    (c0, r0, uc - T::from_usize_lossy(c0), vc - T::from_usize_lossy(r0), in_u, in_v)
}

/// Clamp-to-edge bilinear sample of a 3-channel texture at texel coordinates.
pub fn sample_bilinear<T: Real>(texture: &Image<T>, u: T, v: T) -> [T; 3] {
    let (w, h) = (texture.width, texture.height);
    let (c0, r0, fu, fv, _, _) = gather_setup(w, h, u, v);
    let one = T::one();
    let d = &texture.data;
    let i00 = 3 * (r0 * w + c0);
    let i10 = i00 + 3;
    let i01 = i00 + 3 * w;
    let i11 = i01 + 3;
    let mut out = [T::zero(); 3];
    for c in 0..3 {
        out[c] = (one - fu) * (one - fv) * d[i00 + c]
            + fu * (one - fv) * d[i10 + c]
            + (one - fu) * fv * d[i01 + c]
            + fu * fv * d[i11 + c];
    }
    out
}

/// `Σ_c g_c ∂sample_c / ∂(u, v)`; zero along clamped axes.
pub(crate) fn sample_bilinear_grad_uv<T: Real>(texture: &Image<T>, u: T, v: T, g: &[T; 3]) -> [T; 2] {
    let (w, h) = (texture.width, texture.height);
    let (c0, r0, fu, fv, in_u, in_v) = gather_setup(w, h, u, v);
    let one = T::one();
    let d = &texture.data;
    let i00 = 3 * (r0 * w + c0);
    let i10 = i00 + 3;
    let i01 = i00 + 3 * w;
    let i11 = i01 + 3;
    let mut out = [T::zero(); 2];
    for c in 0..3 {
        if in_u {
            out[0] += g[c] * ((one - fv) * (d[i10 + c] - d[i00 + c]) + fv * (d[i11 + c] - d[i01 + c]));
        }
        if in_v {
            out[1] += g[c] * ((one - fu) * (d[i01 + c] - d[i00 + c]) + fu * (d[i11 + c] - d[i10 + c]));
        }
    }
    out
}

/// Scatters `g` into the texture gradient with the bilinear weights of `(u, v)`.
pub(crate) fn sample_bilinear_backward<T: Real>(w: usize, h: usize, u: T, v: T, g: &[T; 3], grad_texture: &mut [T]) {
    let (c0, r0, fu, fv, _, _) = gather_setup(w, h, u, v);
    let one = T::one();
    let i00 = 3 * (r0 * w + c0);
    let corners = [
        (i00, (one - fu) * (one - fv)),
        (i00 + 3, fu * (one - fv)),
        (i00 + 3 * w, (one - fu) * fv),
        (i00 + 3 * w + 3, fu * fv),
    ];
    for (i, wt) in corners {
        for c in 0..3 {
            grad_texture[i + c] += g[c] * wt;
        }
    }
}

/// Reconstructs the UV texture of `mesh` (input-camera frame) from `image`.
pub fn sample_texture<T: Real>(
    image: &Image<T>,
    mesh: &SheetMesh<T>,
    intrinsics: &CameraIntrinsics,
    settings: &RenderSettings<T>,
) -> Result<TextureMap<T>> {
    let (w, h) = (intrinsics.image_width, intrinsics.image_height);
    image.ensure_shape(w, h, 3)?;
    let frags = raster::rasterize(mesh, intrinsics, settings)?;
    let weights = raster::blend_weights(&frags, settings);
    let flow = face_flow(&frags, mesh, w, h);
    let layers = decompose_image(&image.data, &weights.weights, frags.k);
    let (t_sum, w_sum, stats) = splat_layers(&layers, &weights.weights, &flow.uv, &frags.counts, frags.k, w, h);
    if stats.clipped > 0 {
        log::debug!("splat clipped {} out-of-bounds contributions", stats.clipped);
    }
    let (_, mask) = normalize_splat(&t_sum, &w_sum, 3);
    let colors = normalize_fill(&t_sum, &w_sum, w, h);
    Ok(TextureMap {
        colors: Grid::from_vec(w, h, 3, colors)?,
        weight: Grid::from_vec(w, h, 1, w_sum)?,
        hole_mask: Grid::from_vec(w, h, 1, mask)?,
        stats,
    })
}
