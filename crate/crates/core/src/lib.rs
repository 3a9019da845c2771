//! Differentiable sheet-mesh view synthesis.
//!
//! A deformable grid mesh is wrapped onto a single input image, its texture
//! is reconstructed by differentiable splatting, and the sheet is rendered
//! from novel cameras by soft rasterization. Sheet parameters are fitted per
//! scene by Adam on image losses from a second view.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*F64`
//! and `*F32` aliases name the common concrete instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod camera;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod grid;
pub mod raster;
pub mod scalar;
pub mod texture;

pub use camera::{CameraIntrinsics, CameraPose, Mat3, Vec3};
pub use error::{Error, Result};
pub use fitting::{
    fit_scene, predict_view, AdamState, FitConfig, FitResult, LossBreakdown, LossWeights, SceneSample, SheetObjective,
};
pub use geometry::{build_mesh, transform_vertices, Connectivity, DepthScaleConfig, SheetMesh, SheetParams};
pub use grid::{Grid, Image};
pub use raster::{rasterize, render_textured, FragmentBuffer, RenderSettings, RenderedView};
pub use scalar::Real;
pub use texture::{sample_texture, FlowField, TextureMap};

pub type SheetParamsF64 = SheetParams<f64>;
pub type SheetParamsF32 = SheetParams<f32>;
pub type SheetMeshF64 = SheetMesh<f64>;
pub type SheetMeshF32 = SheetMesh<f32>;
pub type CameraPoseF64 = CameraPose<f64>;
pub type CameraPoseF32 = CameraPose<f32>;
pub type ImageF64 = Image<f64>;
pub type ImageF32 = Image<f32>;
pub type RenderSettingsF64 = RenderSettings<f64>;
pub type RenderSettingsF32 = RenderSettings<f32>;
pub type TextureMapF64 = TextureMap<f64>;
pub type TextureMapF32 = TextureMap<f32>;
pub type SceneSampleF64 = SceneSample<f64>;
pub type SceneSampleF32 = SceneSample<f32>;
