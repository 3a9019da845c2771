use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::{LossBreakdown, LossWeights};
use super::objective::{SceneSample, SheetObjective};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::geometry::{anchor, build_mesh, transform_vertices, Connectivity, DepthScaleConfig, SheetParams};
use crate::grid::{Grid, Image};
use crate::raster::{render_textured, RenderSettings, RenderedView};
use crate::scalar::Real;
use crate::texture::sample_texture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthPreset {
    #[default]
    Indoor,
    WideRange,
}

impl DepthPreset {
    pub fn config<T: Real>(self) -> DepthScaleConfig<T> {
        match self {
            DepthPreset::Indoor => DepthScaleConfig::indoor(),
            DepthPreset::WideRange => DepthScaleConfig::wide_range(),
        }
    }
}

fn default_betas() -> [f64; 2] {
    [0.9, 0.999]
}

/// Per-scene fitting configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub grid_w: usize,
    pub grid_h: usize,
    #[serde(default = "default_connectivity")]
    pub connectivity: Connectivity,
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: [f64; 2],
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub depth_preset: DepthPreset,
    /// Seeds the optional initial logit perturbation.
    #[serde(default)]
    pub seed: u64,
    /// Half-width of a uniform perturbation added to the initial logits.
    #[serde(default)]
    pub init_noise: f64,
    #[serde(default)]
    pub render: RenderSettings<f64>,
}

fn default_connectivity() -> Connectivity {
    Connectivity::Four
}

fn default_lr() -> f64 {
    1e-2
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            grid_w: 17,
            grid_h: 17,
            connectivity: Connectivity::Four,
            iterations: 1000,
            lr: default_lr(),
            betas: default_betas(),
            loss_weights: LossWeights::default(),
            depth_preset: DepthPreset::Indoor,
            seed: 0,
            init_noise: 0.0,
            render: RenderSettings::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_w < 2 || self.grid_h < 2 {
            return Err(Error::Configuration(format!(
                "grid must be at least 2x2, got {}x{}",
                self.grid_w, self.grid_h
            )));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return Err(Error::Configuration("init_noise must be finite and non-negative".into()));
        }
        self.loss_weights.validate()?;
        self.render.validate()?;
        AdamState::new(0, self.lr).with_betas(self.betas[0], self.betas[1]).validate()
    }

    pub fn render_settings<T: Real>(&self) -> RenderSettings<T> {
        self.render.cast()
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub total: f64,
    pub rgb: f64,
    pub grid_offset: f64,
    pub laplacian: f64,
    pub depth: Option<f64>,
}

impl TraceRow {
    fn new<T: Real>(iteration: usize, b: &LossBreakdown<T>) -> Self {
        TraceRow {
            iteration,
            total: b.total.as_f64(),
            rgb: b.rgb.as_f64(),
            grid_offset: b.grid_offset.as_f64(),
            laplacian: b.laplacian.as_f64(),
            depth: b.depth.map(|d| d.as_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    /// Parameters of the lowest-loss iterate.
    pub params: SheetParams<T>,
    pub best_iteration: usize,
    pub best_loss: T,
    pub trace: Vec<TraceRow>,
    /// Optimizer steps skipped for non-finite gradients.
    pub faults: usize,
}

impl<T: Real> FitResult<T> {
    pub fn initial_loss(&self) -> f64 {
        self.trace.first().map_or(f64::NAN, |r| r.total)
    }
}

/// Depth logits that reproduce `depth` at each vertex's anchor pixel; unknown
/// (zero) depths keep logit 0.
pub fn init_params_from_depth<T: Real>(
    depth: &Grid<T>,
    grid_w: usize,
    grid_h: usize,
    depth_scale: DepthScaleConfig<T>,
    intrinsics: &CameraIntrinsics,
) -> Result<SheetParams<T>> {
    depth.ensure_shape(intrinsics.image_width, intrinsics.image_height, 1)?;
    depth_scale.validate()?;
    let mut params = SheetParams::flat(grid_w, grid_h, depth_scale);
    for h in 0..grid_h {
        for w in 0..grid_w {
            let a = anchor::<T>(w, h, grid_w, grid_h);
            let px = intrinsics.ndc_to_pixel(a);
            let col = px[0].round().max(T::zero()).to_usize().unwrap_or(0).min(intrinsics.image_width - 1);
            let row = px[1].round().max(T::zero()).to_usize().unwrap_or(0).min(intrinsics.image_height - 1);
            let z = depth.get(row, col, 0);
            if z > T::zero() {
                params.depth_logits[h * grid_w + w] = depth_scale.logit_for_depth(z);
            }
        }
    }
    params.validate()?;
    Ok(params)
}

fn initial_params<T: Real>(sample: &SceneSample<T>, config: &FitConfig) -> Result<SheetParams<T>> {
    let scale = config.depth_preset.config::<T>();
    let mut params = match &sample.init_depth {
        Some(d) => init_params_from_depth(d, config.grid_w, config.grid_h, scale, &sample.intrinsics)?,
        None => SheetParams::flat(config.grid_w, config.grid_h, scale),
    };
    if config.init_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut flat = params.to_flat();
        for v in &mut flat {
            *v += T::lit(rng.random_range(-config.init_noise..=config.init_noise));
        }
        params.set_flat(&flat)?;
    }
    Ok(params)
}

/// Fits sheet logits so the input view, re-rendered at the target pose, matches the target image.
pub fn fit_scene<T: Real>(sample: &SceneSample<T>, config: &FitConfig) -> Result<FitResult<T>> {
    config.validate()?;
    let init = initial_params(sample, config)?;
    let objective = SheetObjective::new(
        sample,
        config.grid_w,
        config.grid_h,
        init.depth_scale,
        config.connectivity,
        config.loss_weights,
        &config.render_settings(),
    )?;
    let mut flat = init.to_flat();
    let mut adam = AdamState::new(flat.len(), T::lit(config.lr)).with_betas(T::lit(config.betas[0]), T::lit(config.betas[1]));
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut best = (0, T::infinity(), flat.clone());
    for it in 0..=config.iterations {
        let eval = objective.evaluate(&flat, false)?;
        trace.push(TraceRow::new(it, &eval.breakdown));
        if !eval.breakdown.is_finite() {
            log::error!("loss became non-finite at iteration {it}; trace so far: {trace:?}");
            return Err(Error::Divergence { iteration: it });
        }
        if eval.breakdown.total < best.1 {
            best = (it, eval.breakdown.total, flat.clone());
        }
        if it % 100 == 0 {
            log::debug!("iteration {it}: loss {}", eval.breakdown.total);
        }
        if it < config.iterations {
            adam.step(&mut flat, &eval.gradient)?;
        }
    }
    Ok(FitResult {
        params: init.with_flat(&best.2)?,
        best_iteration: best.0,
        best_loss: best.1,
        trace,
        faults: adam.faults,
    })
}

/// Builds the sheet, samples its texture from the input view and renders it at `novel_pose`.
pub fn predict_view<T: Real>(
    params: &SheetParams<T>,
    input_image: &Image<T>,
    intrinsics: &CameraIntrinsics,
    input_pose: &CameraPose<T>,
    novel_pose: &CameraPose<T>,
    settings: &RenderSettings<T>,
) -> Result<RenderedView<T>> {
    let settings = settings.resolved_for(input_image);
    let mesh = build_mesh(params, intrinsics)?;
    let texture = sample_texture(input_image, &mesh, intrinsics, &settings)?;
    let moved = transform_vertices(&mesh, &CameraPose::relative(input_pose, novel_pose));
    render_textured(&moved, &texture, intrinsics, &settings)
}
