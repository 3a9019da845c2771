use std::sync::Arc;

use super::loss::{LossBreakdown, LossWeights};
use crate::autodiff::ops::{
    BlendWeights, BuildVertices, DecodeSheet, Decompose, DepthL1, FaceFlow, FragmentAttributes, GridOffsetReg,
    L1ImageLoss, LaplacianReg, NormalizeFill, RenderDepth, Shade, Splat, TransformVertices, WeightedSum,
};
use crate::autodiff::{Tape, Var};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::geometry::{grid_faces, grid_neighbors, grid_uvs, Connectivity, DepthScaleConfig, SheetMesh};
use crate::grid::{Grid, Image};
use crate::raster::{self, FragmentBuffer, RenderSettings};
use crate::scalar::Real;
use crate::texture::WEIGHT_FLOOR;

/// A posed input/target image pair with optional depth maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample<T> {
    pub input_image: Image<T>,
    pub target_image: Image<T>,
    pub input_pose: CameraPose<T>,
    pub target_pose: CameraPose<T>,
    pub intrinsics: CameraIntrinsics,
    /// Target-view depth in metres; 0 marks unknown pixels.
    pub target_depth: Option<Grid<T>>,
    /// Input-view depth used to initialise the sheet; 0 marks unknown pixels.
    pub init_depth: Option<Grid<T>>,
}

impl<T: Real> SceneSample<T> {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.input_pose.validate()?;
        self.target_pose.validate()?;
        let (w, h) = (self.intrinsics.image_width, self.intrinsics.image_height);
        self.input_image.ensure_shape(w, h, 3)?;
        self.target_image.ensure_shape(w, h, 3)?;
        for (name, img) in [("input", &self.input_image), ("target", &self.target_image)] {
            if !img.is_finite() {
                return Err(Error::InvalidInput(format!("{name} image has non-finite values")));
            }
        }
        for (name, d) in [("target", &self.target_depth), ("initial", &self.init_depth)] {
            if let Some(d) = d {
                d.ensure_shape(w, h, 1)?;
                if d.data.iter().any(|z| !(z.is_finite() && *z >= T::zero())) {
                    return Err(Error::InvalidInput(format!("{name} depth must be finite and non-negative")));
                }
            }
        }
        Ok(())
    }

    /// Pose taking input-camera coordinates to target-camera coordinates.
    pub fn relative_pose(&self) -> CameraPose<T> {
        CameraPose::relative(&self.input_pose, &self.target_pose)
    }
}

/// Loss and gradient of one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub breakdown: LossBreakdown<T>,
    /// `∂L/∂params` over the flat `[lx, ly, psi]` vector.
    pub gradient: Vec<T>,
    /// `∂L/∂input image` when requested. A background resolved from the image mean is held constant.
    pub image_gradient: Option<Vec<T>>,
}

/// The recorded view-synthesis objective of a sheet on one scene sample.
pub struct SheetObjective<'a, T> {
    sample: &'a SceneSample<T>,
    grid_w: usize,
    grid_h: usize,
    depth_scale: DepthScaleConfig<T>,
    weights: LossWeights,
    settings: RenderSettings<T>,
    relative: CameraPose<T>,
    faces: Arc<Vec<[usize; 3]>>,
    uvs: Arc<Vec<[T; 2]>>,
    neighbors: Arc<Vec<Vec<usize>>>,
    target: Arc<Vec<T>>,
}

struct Recording<T> {
    tape: Tape<T>,
    params: Var,
    image: Var,
    total: Var,
    rgb: Var,
    grid_offset: Var,
    laplacian: Var,
    depth: Option<Var>,
    rendered: Var,
    input_frags: Arc<FragmentBuffer<T>>,
    target_frags: Arc<FragmentBuffer<T>>,
    input_flow: Var,
    target_flow: Var,
    splat: Var,
    depth_mask: Option<Arc<Vec<bool>>>,
}

impl<'a, T: Real> SheetObjective<'a, T> {
    /// `settings` without a background colour fall back to the input image mean.
    pub fn new(
        sample: &'a SceneSample<T>,
        grid_w: usize,
        grid_h: usize,
        depth_scale: DepthScaleConfig<T>,
        connectivity: Connectivity,
        weights: LossWeights,
        settings: &RenderSettings<T>,
    ) -> Result<Self> {
        sample.validate()?;
        weights.validate()?;
        settings.validate()?;
        depth_scale.validate()?;
        if grid_w < 2 || grid_h < 2 {
            return Err(Error::InvalidInput(format!("grid must be at least 2x2, got {grid_w}x{grid_h}")));
        }
        Ok(SheetObjective {
            sample,
            grid_w,
            grid_h,
            depth_scale,
            weights,
            settings: settings.resolved_for(&sample.input_image),
            relative: sample.relative_pose(),
            faces: Arc::new(grid_faces(grid_w, grid_h)),
            uvs: Arc::new(grid_uvs(grid_w, grid_h)),
            neighbors: Arc::new(grid_neighbors(grid_w, grid_h, connectivity)),
            target: Arc::new(sample.target_image.data.clone()),
        })
    }

    pub fn settings(&self) -> &RenderSettings<T> {
        &self.settings
    }

    pub fn param_count(&self) -> usize {
        3 * self.grid_w * self.grid_h
    }

    fn rasterize_flat(&self, flat_vertices: &[T]) -> Result<Arc<FragmentBuffer<T>>> {
        let mesh = SheetMesh {
            grid_w: self.grid_w,
            grid_h: self.grid_h,
            vertices: flat_vertices.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            faces: self.faces.as_ref().clone(),
            uvs: self.uvs.as_ref().clone(),
        };
        Ok(Arc::new(raster::rasterize(&mesh, &self.sample.intrinsics, &self.settings)?))
    }

    fn record(&self, params: &[T], image_requires_grad: bool) -> Result<Recording<T>> {
        if params.len() != self.param_count() {
            return Err(Error::shape(self.param_count(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("parameters must be finite".into()));
        }
        let intr = self.sample.intrinsics;
        let (w, h) = (intr.image_width, intr.image_height);
        let s = &self.settings;
        let mut tape = Tape::new();
        let p = tape.variable(params.to_vec());
        let image = tape.leaf(self.sample.input_image.data.clone(), vec![h, w, 3], image_requires_grad)?;

        let decoded = tape.apply(
            DecodeSheet { grid_w: self.grid_w, grid_h: self.grid_h, depth_scale: self.depth_scale },
            &[p],
        )?;
        let verts = tape.apply(
            BuildVertices { grid_w: self.grid_w, grid_h: self.grid_h, tan_half_fov: intr.tan_half_fov() },
            &[decoded],
        )?;

        let input_frags = self.rasterize_flat(tape.value(verts))?;
        let attrs_in = tape.apply(self.attributes(&input_frags), &[verts])?;
        let blend_in = tape.apply(BlendWeights { frags: input_frags.clone(), settings: s.clone() }, &[attrs_in])?;
        let input_flow = tape.apply(self.flow(&input_frags), &[attrs_in])?;
        let layers = tape.apply(Decompose { k: input_frags.k }, &[image, blend_in])?;
        let splat = tape.apply(
            Splat { frags: input_frags.clone(), tex_w: w, tex_h: h, stats: Default::default() },
            &[layers, blend_in, input_flow],
        )?;
        let texture = tape.apply(NormalizeFill { tex_w: w, tex_h: h }, &[splat])?;

        let moved = tape.apply(TransformVertices { pose: self.relative }, &[verts])?;
        let target_frags = self.rasterize_flat(tape.value(moved))?;
        let attrs_t = tape.apply(self.attributes(&target_frags), &[moved])?;
        let blend_t = tape.apply(BlendWeights { frags: target_frags.clone(), settings: s.clone() }, &[attrs_t])?;
        let target_flow = tape.apply(self.flow(&target_frags), &[attrs_t])?;
        let rendered = tape.apply(
            Shade { frags: target_frags.clone(), tex_w: w, tex_h: h, background: s.background() },
            &[blend_t, target_flow, texture],
        )?;

        let rgb = tape.apply(L1ImageLoss { target: self.target.clone(), pixel_count: w * h }, &[rendered])?;
        let grid_offset = tape.apply(GridOffsetReg { vertex_count: self.grid_w * self.grid_h }, &[decoded])?;
        let laplacian = tape.apply(LaplacianReg { neighbors: self.neighbors.clone() }, &[verts])?;
        let mut terms = vec![rgb, grid_offset, laplacian];
        let mut term_weights = vec![T::lit(self.weights.rgb), T::lit(self.weights.grid_offset), T::lit(self.weights.laplacian)];

        let (depth, depth_mask) = match &self.sample.target_depth {
            Some(gt) => {
                let rendered_depth = tape.apply(RenderDepth { frags: target_frags.clone() }, &[attrs_t, blend_t])?;
                let half = T::lit(0.5);
                let mask: Vec<bool> = (0..w * h)
                    .map(|p| T::one() - tape.value(blend_t)[p * (target_frags.k + 1) + target_frags.k] > half && gt.data[p] > T::zero())
                    .collect();
                if !mask.iter().any(|&m| m) {
                    log::warn!("depth loss mask is empty; depth term set to 0");
                }
                let mask = Arc::new(mask);
                let d = tape.apply(DepthL1 { target: Arc::new(gt.data.clone()), mask: mask.clone() }, &[rendered_depth])?;
                terms.push(d);
                term_weights.push(T::lit(self.weights.depth));
                (Some(d), Some(mask))
            }
            None => (None, None),
        };
        let total = tape.apply(WeightedSum { weights: term_weights }, &terms)?;
        Ok(Recording {
            tape,
            params: p,
            image,
            total,
            rgb,
            grid_offset,
            laplacian,
            depth,
            rendered,
            input_frags,
            target_frags,
            input_flow,
            target_flow,
            splat,
            depth_mask,
        })
    }

    fn attributes(&self, frags: &Arc<FragmentBuffer<T>>) -> FragmentAttributes<T> {
        FragmentAttributes {
            frags: frags.clone(),
            faces: self.faces.clone(),
            intrinsics: self.sample.intrinsics,
            sigma: self.settings.sigma,
            parallel: self.settings.parallel,
        }
    }

    fn flow(&self, frags: &Arc<FragmentBuffer<T>>) -> FaceFlow<T> {
        FaceFlow {
            frags: frags.clone(),
            faces: self.faces.clone(),
            uvs: self.uvs.clone(),
            tex_w: self.sample.intrinsics.image_width,
            tex_h: self.sample.intrinsics.image_height,
        }
    }

    fn breakdown(rec: &Recording<T>) -> Result<LossBreakdown<T>> {
        Ok(LossBreakdown {
            total: rec.tape.scalar(rec.total)?,
            rgb: rec.tape.scalar(rec.rgb)?,
            grid_offset: rec.tape.scalar(rec.grid_offset)?,
            laplacian: rec.tape.scalar(rec.laplacian)?,
            depth: rec.depth.map(|d| rec.tape.scalar(d)).transpose()?,
        })
    }

    /// Forward pass only.
    pub fn loss(&self, params: &[T]) -> Result<LossBreakdown<T>> {
        Self::breakdown(&self.record(params, false)?)
    }

    /// Loss and gradient. Non-finite gradients are returned as-is rather than as an error.
    pub fn evaluate(&self, params: &[T], image_gradient: bool) -> Result<Evaluation<T>> {
        let mut rec = self.record(params, image_gradient)?;
        let breakdown = Self::breakdown(&rec)?;
        if breakdown.total.is_finite() {
            match rec.tape.backward(rec.total) {
                Ok(()) | Err(Error::NumericFault(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(Evaluation {
            breakdown,
            gradient: rec.tape.grad(rec.params).to_vec(),
            image_gradient: image_gradient.then(|| rec.tape.grad(rec.image).to_vec()),
        })
    }

    /// Target-view render of `params` as an image.
    pub fn render_target(&self, params: &[T]) -> Result<Image<T>> {
        let rec = self.record(params, false)?;
        let intr = self.sample.intrinsics;
        Grid::from_vec(intr.image_width, intr.image_height, 3, rec.tape.value(rec.rendered).to_vec())
    }

    /// Operator names recorded for one evaluation, in execution order.
    pub fn recorded_ops(&self, params: &[T]) -> Result<Vec<&'static str>> {
        Ok(self.record(params, false)?.tape.op_names())
    }

    /// Fingerprint of every piecewise choice the objective makes: fragment
    /// selections, bilinear cells, splat support and normalization branches,
    /// L1 residual signs and the depth mask.
    pub fn signature(&self, params: &[T]) -> Result<Vec<u64>> {
        let rec = self.record(params, false)?;
        let t = &rec.tape;
        let mut sig: Vec<u64> = Vec::new();
        for frags in [&rec.input_frags, &rec.target_frags] {
            sig.extend(frags.faces.iter().map(|&f| f as u64));
            sig.extend(frags.dists.iter().map(|&d| (d >= T::zero()) as u64));
        }
        for (flow, frags) in [(rec.input_flow, &rec.input_frags), (rec.target_flow, &rec.target_frags)] {
            let n = frags.pixel_count();
            let uv = t.value(flow);
            for (p, &cnt) in frags.counts.iter().enumerate() {
                for s in 0..cnt as usize {
                    let j = 2 * (s * n + p);
                    sig.push(uv[j].floor().to_i64().unwrap_or(i64::MIN) as u64);
                    sig.push(uv[j + 1].floor().to_i64().unwrap_or(i64::MIN) as u64);
                }
            }
        }
        let intr = self.sample.intrinsics;
        let texels = intr.image_width * intr.image_height;
        let w_sum = &t.value(rec.splat)[3 * texels..];
        sig.extend(w_sum.iter().map(|&w| (w > T::zero()) as u64 + 2 * (w >= T::lit(WEIGHT_FLOOR)) as u64));
        sig.extend(t.value(rec.rendered).iter().zip(self.target.iter()).map(|(&a, &b)| {
            let d = a - b;
            (d > T::zero()) as u64 + 2 * (d < T::zero()) as u64
        }));
        if let Some(m) = &rec.depth_mask {
            sig.extend(m.iter().map(|&b| b as u64));
        }
        Ok(sig)
    }
}
