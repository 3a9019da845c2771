//! File formats: PNG images and masks, 16-bit depth maps, JSON documents and CSV traces.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use worldsheet::fitting::TraceRow;
use worldsheet::{CameraIntrinsics, CameraPose, Grid, Image, RenderSettings, SceneSample, SheetParams};

use crate::error::{HarnessError, Result};
use crate::scene::GeneratedScene;

/// Depth maps are stored as 16-bit millimetres; 0 marks unknown depth.
pub const DEPTH_UNITS_PER_METRE: f64 = 1000.0;

pub fn read_image(path: &Path) -> Result<Image<f64>> {
    let img = image::open(path).map_err(|source| HarnessError::Image { path: path.into(), source })?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_vec(w as usize, h as usize, 3, img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())?)
}

/// Writes an RGB image as 8-bit PNG, clamping to [0, 1].
pub fn write_image(path: &Path, img: &Image<f64>) -> Result<()> {
    img.ensure_shape(img.width, img.height, 3)?;
    let raw: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| HarnessError::Invalid("image buffer size mismatch".into()))?;
    buf.save(path).map_err(|source| HarnessError::Image { path: path.into(), source })
}

/// Reads a mask image; pixels brighter than mid-grey are set.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path).map_err(|source| HarnessError::Image { path: path.into(), source })?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw().into_iter().map(|v| v > 127).collect()))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| HarnessError::Invalid(format!("mask has {} entries for {width}x{height}", mask.len())))?;
    buf.save(path).map_err(|source| HarnessError::Image { path: path.into(), source })
}

fn depth_to_units(depth: &Grid<f64>) -> Result<Vec<u16>> {
    depth.ensure_shape(depth.width, depth.height, 1)?;
    depth
        .data
        .iter()
        .map(|&z| {
            let v = (z * DEPTH_UNITS_PER_METRE).round();
            if !(0.0..=u16::MAX as f64).contains(&v) {
                Err(HarnessError::Invalid(format!("depth {z} m does not fit a 16-bit millimetre map")))
            } else {
                Ok(v as u16)
            }
        })
        .collect()
}

fn depth_from_units(width: usize, height: usize, units: impl IntoIterator<Item = u16>) -> Result<Grid<f64>> {
    Ok(Grid::from_vec(width, height, 1, units.into_iter().map(|v| v as f64 / DEPTH_UNITS_PER_METRE).collect())?)
}

fn is_pgm(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Writes a depth map as 16-bit PGM (`.pgm`) or 16-bit grey PNG (anything else).
pub fn write_depth(path: &Path, depth: &Grid<f64>) -> Result<()> {
    let units = depth_to_units(depth)?;
    if is_pgm(path) {
        let mut bytes = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
        bytes.extend(units.iter().flat_map(|v| v.to_be_bytes()));
        return fs::write(path, bytes).map_err(|e| HarnessError::io(path, e));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(depth.width as u32, depth.height as u32, units)
        .ok_or_else(|| HarnessError::Invalid("depth buffer size mismatch".into()))?;
    buf.save(path).map_err(|source| HarnessError::Image { path: path.into(), source })
}

/// Reads a 16-bit millimetre depth map from PGM or PNG.
pub fn read_depth(path: &Path) -> Result<Grid<f64>> {
    if is_pgm(path) {
        let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        return parse_pgm(&bytes).map_err(|msg| HarnessError::Invalid(format!("{}: {msg}", path.display())));
    }
    let img = image::open(path).map_err(|source| HarnessError::Image { path: path.into(), source })?.to_luma16();
    let (w, h) = img.dimensions();
    depth_from_units(w as usize, h as usize, img.into_raw())
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Grid<f64>, String> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated PGM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    if fields[0] != "P5" {
        return Err(format!("expected binary PGM (P5), found {}", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PGM header field {s:?}"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(format!("PGM maxval {maxval} out of range"));
    }
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    let data = bytes.get(i..i + need).ok_or("PGM pixel data is truncated")?;
    let units: Vec<u16> = if wide {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data.iter().map(|&v| v as u16).collect()
    };
    depth_from_units(w, h, units).map_err(|e| e.to_string())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| HarnessError::Json { path: path.into(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Loss trace with columns `iteration,total,rgb,grid_offset,laplacian,depth`.
pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let csv_err = |source| HarnessError::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let csv_err = |source| HarnessError::Csv { path: path.into(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

/// A posed image pair on disk. Relative paths resolve against the scene file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub input_image: PathBuf,
    pub target_image: PathBuf,
    pub input_pose: CameraPose<f64>,
    pub target_pose: CameraPose<f64>,
    pub fov_degrees: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_depth: Option<PathBuf>,
    /// Target-view visibility mask used for evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<PathBuf>,
}

/// A scene loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub sample: SceneSample<f64>,
    pub visibility: Option<Vec<bool>>,
    pub input_image_path: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

pub fn load_scene(path: &Path) -> Result<LoadedScene> {
    let file: SceneFile = read_json(path)?;
    let base = parent(path);
    let input_image_path = resolve(base, &file.input_image);
    let input_image = read_image(&input_image_path)?;
    let target_image = read_image(&resolve(base, &file.target_image))?;
    let intrinsics = CameraIntrinsics::new(file.fov_degrees, input_image.width, input_image.height)?;
    let target_depth = file.target_depth.as_deref().map(|p| read_depth(&resolve(base, p))).transpose()?;
    let init_depth = file.init_depth.as_deref().map(|p| read_depth(&resolve(base, p))).transpose()?;
    let visibility = match &file.visibility {
        Some(p) => {
            let (w, h, m) = read_mask(&resolve(base, p))?;
            if (w, h) != (input_image.width, input_image.height) {
                return Err(HarnessError::Invalid(format!("visibility mask is {w}x{h}, images are {}x{}", input_image.width, input_image.height)));
            }
            Some(m)
        }
        None => None,
    };
    let sample = SceneSample {
        input_image,
        target_image,
        input_pose: file.input_pose,
        target_pose: file.target_pose,
        intrinsics,
        target_depth,
        init_depth,
    };
    sample.validate()?;
    Ok(LoadedScene { sample, visibility, input_image_path })
}

/// Writes both views, their depth maps, the visibility mask, the generating spec and a
/// `scene.json` referencing them; returns the path of `scene.json`.
pub fn write_generated(dir: &Path, scene: &GeneratedScene) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let (w, h) = (scene.intrinsics.image_width, scene.intrinsics.image_height);
    write_image(&dir.join("input.png"), &scene.input_image)?;
    write_image(&dir.join("target.png"), &scene.target_image)?;
    write_depth(&dir.join("input_depth.png"), &scene.input_depth)?;
    write_depth(&dir.join("target_depth.png"), &scene.target_depth)?;
    write_mask(&dir.join("visibility.png"), w, h, &scene.visibility)?;
    write_json(&dir.join("spec.json"), &scene.spec)?;
    let file = SceneFile {
        input_image: "input.png".into(),
        target_image: "target.png".into(),
        input_pose: scene.spec.input_pose,
        target_pose: scene.spec.target_pose,
        fov_degrees: scene.spec.fov_degrees,
        target_depth: Some("target_depth.png".into()),
        init_depth: None,
        visibility: Some("visibility.png".into()),
    };
    let path = dir.join("scene.json");
    write_json(&path, &file)?;
    Ok(path)
}

/// A fitted sheet with everything needed to render novel views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    /// Relative paths resolve against the fit file's directory.
    pub input_image: PathBuf,
    pub input_pose: CameraPose<f64>,
    pub intrinsics: CameraIntrinsics,
    pub params: SheetParams<f64>,
    pub render: RenderSettings<f64>,
    pub iterations: usize,
    pub best_iteration: usize,
    pub best_loss: f64,
    pub initial_loss: f64,
    pub adam_faults: usize,
}

impl FitFile {
    pub fn load(path: &Path) -> Result<(Self, Image<f64>)> {
        let fit: FitFile = read_json(path)?;
        fit.params.validate()?;
        fit.render.validate()?;
        let image = read_image(&resolve(parent(path), &fit.input_image))?;
        image.ensure_shape(fit.intrinsics.image_width, fit.intrinsics.image_height, 3)?;
        Ok((fit, image))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{gen_scene, SceneSpec};

    #[test]
    fn png_round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Grid::from_fn(5, 4, 3, |r, c, ch| ((r * 5 + c) * 3 + ch) as f64 / 60.0);
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn depth_round_trips_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let depth = Grid::from_fn(6, 3, 1, |r, c, _| if r == 0 && c == 0 { 0.0 } else { 1.0 + 0.125 * (r * 6 + c) as f64 });
        for name in ["d.png", "d.pgm"] {
            let p = dir.path().join(name);
            write_depth(&p, &depth).unwrap();
            assert_eq!(read_depth(&p).unwrap(), depth);
        }
        assert!(write_depth(&dir.path().join("x.png"), &Grid::filled(2, 2, 1, 70.0)).is_err());
    }

    #[test]
    fn pgm_with_comments_and_8_bit_data() {
        let mut bytes = b"P5\n# depth\n2 1\n255\n".to_vec();
        bytes.extend([7u8, 9]);
        let d = parse_pgm(&bytes).unwrap();
        assert_eq!(d.data, vec![0.007, 0.009]);
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n65535\n\0\0").is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mask: Vec<bool> = (0..12).map(|i| i % 5 == 0).collect();
        write_mask(&p, 4, 3, &mask).unwrap();
        assert_eq!(read_mask(&p).unwrap(), (4, 3, mask));
    }

    #[test]
    fn trace_has_the_documented_header_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![
            TraceRow { iteration: 0, total: 1.5, rgb: 1.0, grid_offset: 0.25, laplacian: 0.25, depth: None },
            TraceRow { iteration: 1, total: 1.0, rgb: 0.5, grid_offset: 0.25, laplacian: 0.125, depth: Some(0.125) },
        ];
        write_trace(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iteration,total,rgb,grid_offset,laplacian,depth");
        assert_eq!(read_trace(&p).unwrap(), rows);
    }

    #[test]
    fn generated_scene_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let g = gen_scene(&SceneSpec::preset("step", 2, 16).unwrap()).unwrap();
        let path = write_generated(dir.path(), &g).unwrap();
        let loaded = load_scene(&path).unwrap();
        assert_eq!(loaded.visibility.as_deref(), Some(&g.visibility[..]));
        assert_eq!(loaded.sample.target_pose, g.spec.target_pose);
        let depth = loaded.sample.target_depth.unwrap();
        assert!(depth.data.iter().zip(&g.target_depth.data).all(|(a, b)| (a - b).abs() <= 0.5e-3 + 1e-12));
        assert!(loaded.sample.input_image.data.iter().zip(&g.input_image.data).all(|(a, b)| (a - b).abs() < 0.5 / 255.0 + 1e-12));
    }
}
