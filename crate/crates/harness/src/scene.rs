//! Analytic synthetic scenes: textured planes rendered by exact ray casting.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use worldsheet::{CameraIntrinsics, CameraPose, Grid, Image, SceneSample};

use crate::error::{HarnessError, Result};

/// Surface colouring as a function of 2D surface coordinates (metres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    Checker { period: f64, colors: [[f64; 3]; 2] },
    /// Linear ramp along `direction`, saturating `length / 2` either side of the origin.
    Gradient { from: [f64; 3], to: [f64; 3], direction: [f64; 2], length: f64 },
    /// Value noise with smoothstep interpolation, summed over octaves that halve the cell size.
    Noise { cell: f64, octaves: u32, low: [f64; 3], high: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// The plane `z = depth`.
    Plane { depth: f64 },
    /// Plane through `(0, 0, depth)` with the given normal.
    SlantedPlane { depth: f64, normal: [f64; 3] },
    /// `z = near_depth` for `x < edge_x`, `z = far_depth` beyond, joined by a wall at `x = edge_x`.
    Step { near_depth: f64, far_depth: f64, edge_x: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub pattern: Pattern,
}

/// A deterministic two-view scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub fov_degrees: f64,
    pub primitives: Vec<Primitive>,
    pub input_pose: CameraPose<f64>,
    pub target_pose: CameraPose<f64>,
    #[serde(default = "default_background")]
    pub background: [f64; 3],
    /// Samples per pixel along each axis.
    #[serde(default = "default_supersample")]
    pub supersample: usize,
}

fn default_background() -> [f64; 3] {
    [0.0; 3]
}

fn default_supersample() -> usize {
    3
}

pub const PRESETS: [&str; 4] = ["plane", "slanted", "step", "checker"];

/// Pose of a camera whose centre sits at `center` with world-aligned axes.
pub fn camera_at(center: [f64; 3]) -> CameraPose<f64> {
    CameraPose::from_translation([-center[0], -center[1], -center[2]])
}

fn noise_pattern(cell: f64, octaves: u32, low: [f64; 3], high: [f64; 3]) -> Pattern {
    Pattern::Noise { cell, octaves, low, high }
}

impl SceneSpec {
    /// A bundled scene; `name` is one of [`PRESETS`].
    pub fn preset(name: &str, seed: u64, size: usize) -> Result<Self> {
        let (primitives, target_pose) = match name {
            "plane" => (
                vec![Primitive {
                    shape: Shape::Plane { depth: 2.0 },
                    pattern: noise_pattern(0.35, 3, [0.1, 0.15, 0.2], [0.9, 0.85, 0.8]),
                }],
                camera_at([0.12, 0.0, 0.0]),
            ),
            "slanted" => (
                vec![Primitive {
                    shape: Shape::SlantedPlane { depth: 2.5, normal: [0.4, 0.1, 1.0] },
                    pattern: noise_pattern(0.4, 3, [0.2, 0.1, 0.1], [0.8, 0.9, 0.7]),
                }],
                CameraPose::yaw(0.04).compose(&camera_at([0.1, -0.03, 0.0])),
            ),
            "step" => (
                vec![Primitive {
                    shape: Shape::Step { near_depth: 2.0, far_depth: 4.0, edge_x: 0.0 },
                    pattern: noise_pattern(0.6, 2, [0.05, 0.1, 0.15], [0.95, 0.9, 0.85]),
                }],
                camera_at([0.3, 0.0, 0.0]),
            ),
            "checker" => (
                vec![Primitive {
                    shape: Shape::Plane { depth: 2.0 },
                    pattern: Pattern::Checker { period: 0.25, colors: [[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]] },
                }],
                camera_at([0.1, 0.0, 0.0]),
            ),
            other => {
                return Err(HarnessError::Invalid(format!(
                    "unknown scene preset {other:?}; expected one of {PRESETS:?}"
                )))
            }
        };
        Ok(SceneSpec {
            seed,
            width: size,
            height: size,
            fov_degrees: 60.0,
            primitives,
            input_pose: CameraPose::identity(),
            target_pose,
            background: [0.5; 3],
            supersample: default_supersample(),
        })
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::new(self.fov_degrees, self.width, self.height)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics()?;
        self.input_pose.validate()?;
        self.target_pose.validate()?;
        if self.primitives.is_empty() {
            return Err(HarnessError::Invalid("scene has no primitives".into()));
        }
        if self.supersample == 0 {
            return Err(HarnessError::Invalid("supersample must be at least 1".into()));
        }
        for p in &self.primitives {
            match p.shape {
                Shape::Plane { depth } if !(depth > 0.0) => {
                    return Err(HarnessError::Geometry(format!("plane depth must be positive, got {depth}")))
                }
                Shape::SlantedPlane { depth, normal } if !(depth > 0.0) || normal[2] == 0.0 => {
                    return Err(HarnessError::Geometry(format!(
                        "slanted plane needs positive depth and a normal with nonzero z, got {depth}, {normal:?}"
                    )))
                }
                Shape::Step { near_depth, far_depth, .. } if !(near_depth > 0.0 && far_depth > near_depth) => {
                    return Err(HarnessError::Geometry(format!(
                        "step needs 0 < near < far, got {near_depth} and {far_depth}"
                    )))
                }
                _ => {}
            }
            match p.pattern {
                Pattern::Checker { period, .. } if !(period > 0.0) => {
                    return Err(HarnessError::Invalid("checker period must be positive".into()))
                }
                Pattern::Gradient { length, .. } if !(length > 0.0) => {
                    return Err(HarnessError::Invalid("gradient length must be positive".into()))
                }
                Pattern::Noise { cell, octaves, .. } if !(cell > 0.0) || octaves == 0 => {
                    return Err(HarnessError::Invalid("noise needs a positive cell size and octaves".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Rotation and translation of a world-to-camera pose.
pub(crate) fn pose_parts(pose: &CameraPose<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let r = pose.rotation;
    (
        Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]),
        Vector3::from(pose.translation),
    )
}

/// NDC of a continuous pixel position whose integer values are pixel centres.
pub(crate) fn pixel_to_ndc(intr: &CameraIntrinsics, col: f64, row: f64) -> [f64; 2] {
    [
        -1.0 + (2.0 * col + 1.0) / intr.image_width as f64,
        1.0 - (2.0 * row + 1.0) / intr.image_height as f64,
    ]
}

struct Surface {
    normal: Vector3<f64>,
    offset: f64,
    /// Inclusive bounds on one world axis.
    bounds: Option<(usize, f64, f64)>,
    /// World axes used as pattern coordinates.
    uv_axes: (usize, usize),
    pattern: usize,
}

struct Hit {
    depth: f64,
    point: Vector3<f64>,
    surface: usize,
}

/// A scene compiled for ray casting.
pub struct Scene {
    spec: SceneSpec,
    intrinsics: CameraIntrinsics,
    surfaces: Vec<Surface>,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let intrinsics = spec.intrinsics()?;
        let mut surfaces = Vec::new();
        for (i, p) in spec.primitives.iter().enumerate() {
            let z = Vector3::z();
            match p.shape {
                Shape::Plane { depth } => surfaces.push(Surface {
                    normal: z,
                    offset: depth,
                    bounds: None,
                    uv_axes: (0, 1),
                    pattern: i,
                }),
                Shape::SlantedPlane { depth, normal } => {
                    let n = Vector3::from(normal).normalize();
                    surfaces.push(Surface { normal: n, offset: n.z * depth, bounds: None, uv_axes: (0, 1), pattern: i })
                }
                Shape::Step { near_depth, far_depth, edge_x } => {
                    surfaces.push(Surface {
                        normal: z,
                        offset: near_depth,
                        bounds: Some((0, f64::NEG_INFINITY, edge_x)),
                        uv_axes: (0, 1),
                        pattern: i,
                    });
                    surfaces.push(Surface {
                        normal: z,
                        offset: far_depth,
                        bounds: Some((0, edge_x, f64::INFINITY)),
                        uv_axes: (0, 1),
                        pattern: i,
                    });
                    surfaces.push(Surface {
                        normal: Vector3::x(),
                        offset: edge_x,
                        bounds: Some((2, near_depth, far_depth)),
                        uv_axes: (2, 1),
                        pattern: i,
                    });
                }
            }
        }
        let scene = Scene { spec, intrinsics, surfaces };
        for (name, pose) in [("input", scene.spec.input_pose), ("target", scene.spec.target_pose)] {
            scene.check_in_front(name, &pose)?;
        }
        Ok(scene)
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }

    fn check_in_front(&self, view: &str, pose: &CameraPose<f64>) -> Result<()> {
        let (r, t) = pose_parts(pose);
        for p in &self.spec.primitives {
            let anchors: Vec<Vector3<f64>> = match p.shape {
                Shape::Plane { depth } | Shape::SlantedPlane { depth, .. } => vec![Vector3::new(0.0, 0.0, depth)],
                Shape::Step { near_depth, far_depth, edge_x } => {
                    vec![Vector3::new(edge_x, 0.0, near_depth), Vector3::new(edge_x, 0.0, far_depth)]
                }
            };
            if anchors.iter().any(|a| (r * a + t).z <= 0.0) {
                return Err(HarnessError::Geometry(format!("{view} camera sees {:?} behind it", p.shape)));
            }
        }
        let c = (self.intrinsics.image_width as f64 - 1.0) / 2.0;
        let m = (self.intrinsics.image_height as f64 - 1.0) / 2.0;
        if self.cast(pose, pixel_to_ndc(&self.intrinsics, c, m)).is_none() {
            return Err(HarnessError::Geometry(format!("{view} camera's central ray misses the scene")));
        }
        Ok(())
    }

    fn cast(&self, pose: &CameraPose<f64>, ndc: [f64; 2]) -> Option<Hit> {
        let (r, t) = pose_parts(pose);
        let tan = self.intrinsics.tan_half_fov::<f64>();
        let origin = -(r.transpose() * t);
        let dir = r.transpose() * Vector3::new(ndc[0] * tan, ndc[1] * tan, 1.0);
        let mut best: Option<Hit> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            let denom = s.normal.dot(&dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let depth = (s.offset - s.normal.dot(&origin)) / denom;
            if depth <= 1e-9 || best.as_ref().is_some_and(|b| b.depth <= depth) {
                continue;
            }
            let point = origin + dir * depth;
            if let Some((axis, lo, hi)) = s.bounds {
                if point[axis] < lo || point[axis] > hi {
                    continue;
                }
            }
            best = Some(Hit { depth, point, surface: i });
        }
        best
    }

    /// Camera-frame depth of the first surface along the ray through `ndc`.
    pub fn depth_at(&self, pose: &CameraPose<f64>, ndc: [f64; 2]) -> Option<f64> {
        self.cast(pose, ndc).map(|h| h.depth)
    }

    fn shade(&self, hit: &Hit) -> [f64; 3] {
        let s = &self.surfaces[hit.surface];
        let uv = [hit.point[s.uv_axes.0], hit.point[s.uv_axes.1]];
        evaluate_pattern(&self.spec.primitives[s.pattern].pattern, uv, self.spec.seed ^ (s.pattern as u64) << 32)
    }

    /// Supersampled colour image and centre-ray depth (0 where nothing is hit).
    pub fn render(&self, pose: &CameraPose<f64>) -> (Image<f64>, Grid<f64>) {
        let (w, h) = (self.intrinsics.image_width, self.intrinsics.image_height);
        let ss = self.spec.supersample;
        let mut image = Grid::zeros(w, h, 3);
        let mut depth = Grid::zeros(w, h, 1);
        let inv = 1.0 / (ss * ss) as f64;
        for row in 0..h {
            for col in 0..w {
                let mut acc = [0.0; 3];
                for sy in 0..ss {
                    for sx in 0..ss {
                        let oc = (sx as f64 + 0.5) / ss as f64 - 0.5;
                        let or = (sy as f64 + 0.5) / ss as f64 - 0.5;
                        let ndc = pixel_to_ndc(&self.intrinsics, col as f64 + oc, row as f64 + or);
                        let rgb = self.cast(pose, ndc).map_or(self.spec.background, |hit| self.shade(&hit));
                        for c in 0..3 {
                            acc[c] += rgb[c];
                        }
                    }
                }
                for (c, v) in acc.iter().enumerate() {
                    image.set(row, col, c, v * inv);
                }
                if let Some(hit) = self.cast(pose, pixel_to_ndc(&self.intrinsics, col as f64, row as f64)) {
                    depth.set(row, col, 0, hit.depth);
                }
            }
        }
        (image, depth)
    }

    /// Target pixels whose centre-ray surface point lies inside the input frustum and is
    /// the first surface the input camera sees along that direction.
    pub fn visibility(&self) -> Vec<bool> {
        let intr = &self.intrinsics;
        let (r_in, t_in) = pose_parts(&self.spec.input_pose);
        let tan = intr.tan_half_fov::<f64>();
        let mut out = Vec::with_capacity(intr.pixel_count());
        for row in 0..intr.image_height {
            for col in 0..intr.image_width {
                let ndc = pixel_to_ndc(intr, col as f64, row as f64);
                let visible = self.cast(&self.spec.target_pose, ndc).is_some_and(|hit| {
                    let p = r_in * hit.point + t_in;
                    if p.z <= 0.0 {
                        return false;
                    }
                    let q = [p.x / (p.z * tan), p.y / (p.z * tan)];
                    if q[0].abs() > 1.0 || q[1].abs() > 1.0 {
                        return false;
                    }
                    self.cast(&self.spec.input_pose, q)
                        .is_some_and(|first| (first.depth - p.z).abs() <= 1e-6 * (1.0 + p.z))
                });
                out.push(visible);
            }
        }
        out
    }

    pub fn generate(&self) -> GeneratedScene {
        let (input_image, input_depth) = self.render(&self.spec.input_pose);
        let (target_image, target_depth) = self.render(&self.spec.target_pose);
        GeneratedScene {
            spec: self.spec.clone(),
            intrinsics: self.intrinsics,
            input_image,
            target_image,
            input_depth,
            target_depth,
            visibility: self.visibility(),
        }
    }
}

/// Both views of a scene with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub spec: SceneSpec,
    pub intrinsics: CameraIntrinsics,
    pub input_image: Image<f64>,
    pub target_image: Image<f64>,
    pub input_depth: Grid<f64>,
    pub target_depth: Grid<f64>,
    /// Target-view visibility from the input camera, row-major.
    pub visibility: Vec<bool>,
}

impl GeneratedScene {
    /// Fitting sample, optionally carrying target-view depth supervision.
    pub fn sample(&self, with_target_depth: bool) -> SceneSample<f64> {
        SceneSample {
            input_image: self.input_image.clone(),
            target_image: self.target_image.clone(),
            input_pose: self.spec.input_pose,
            target_pose: self.spec.target_pose,
            intrinsics: self.intrinsics,
            target_depth: with_target_depth.then(|| self.target_depth.clone()),
            init_depth: None,
        }
    }
}

/// Scene generation in one call.
pub fn gen_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    Ok(Scene::new(spec.clone())?.generate())
}

fn evaluate_pattern(pattern: &Pattern, uv: [f64; 2], seed: u64) -> [f64; 3] {
    match pattern {
        Pattern::Checker { period, colors } => {
            let parity = ((uv[0] / period).floor() + (uv[1] / period).floor()).rem_euclid(2.0);
            colors[(parity != 0.0) as usize]
        }
        Pattern::Gradient { from, to, direction, length } => {
            let norm = direction[0].hypot(direction[1]).max(1e-12);
            let along = (uv[0] * direction[0] + uv[1] * direction[1]) / norm;
            let s = (0.5 + along / length).clamp(0.0, 1.0);
            std::array::from_fn(|c| from[c] + (to[c] - from[c]) * s)
        }
        Pattern::Noise { cell, octaves, low, high } => std::array::from_fn(|c| {
            let (mut sum, mut amp, mut norm, mut size) = (0.0, 1.0, 0.0, *cell);
            for o in 0..*octaves {
                sum += amp * value_noise(uv[0] / size, uv[1] / size, seed.wrapping_add(((o as u64) << 8) | c as u64));
                norm += amp;
                amp *= 0.5;
                size *= 0.5;
            }
            low[c] + (high[c] - low[c]) * sum / norm
        }),
    }
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut x = seed ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (smooth(x - fx), smooth(y - fy));
    let top = lattice(ix, iy, seed) * (1.0 - sx) + lattice(ix + 1, iy, seed) * sx;
    let bottom = lattice(ix, iy + 1, seed) * (1.0 - sx) + lattice(ix + 1, iy + 1, seed) * sx;
    top * (1.0 - sy) + bottom * sy
}
