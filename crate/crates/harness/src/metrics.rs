//! Image fidelity metrics over masked regions.

use serde::{Deserialize, Serialize};
use worldsheet::Image;

use crate::error::{HarnessError, Result};

pub const PSNR_CAP_DB: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(pred: &Image<f64>, target: &Image<f64>, mask: Option<&[bool]>) -> Result<()> {
    if !pred.same_shape(target) {
        return Err(HarnessError::Invalid(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            pred.width, pred.height, pred.channels, target.width, target.height, target.channels
        )));
    }
    if let Some(m) = mask {
        if m.len() != pred.pixel_count() {
            return Err(HarnessError::Invalid(format!(
                "mask has {} entries for {} pixels",
                m.len(),
                pred.pixel_count()
            )));
        }
        if !m.iter().any(|&v| v) {
            return Err(HarnessError::Invalid("mask selects no pixels".into()));
        }
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over masked pixels and all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &Image<f64>, target: &Image<f64>, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(pred, target, mask)?;
    let ch = pred.channels;
    let (mut sum, mut n) = (0.0, 0usize);
    for p in 0..pred.pixel_count() {
        if mask.is_none_or(|m| m[p]) {
            for c in 0..ch {
                let d = pred.data[p * ch + c] - target.data[p * ch + c];
                sum += d * d;
            }
            n += ch;
        }
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { PSNR_CAP_DB } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB) })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter; taps falling outside the image are dropped and the rest renormalized.
fn filter(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (i, k) in kernel.iter().enumerate() {
                    let (xx, yy) = if horizontal {
                        ((x + i).wrapping_sub(r), y)
                    } else {
                        (x, (y + i).wrapping_sub(r))
                    };
                    if xx < w && yy < h {
                        acc += k * src[yy * w + xx];
                        norm += k;
                    }
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5) over masked window centres, averaged
/// over channels.
pub fn ssim(pred: &Image<f64>, target: &Image<f64>, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(pred, target, mask)?;
    let (w, h, ch) = (pred.width, pred.height, pred.channels);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(HarnessError::Invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let kernel = gaussian_window();
    let (mut total, mut count) = (0.0, 0usize);
    for c in 0..ch {
        let x: Vec<f64> = pred.data.iter().skip(c).step_by(ch).copied().collect();
        let y: Vec<f64> = target.data.iter().skip(c).step_by(ch).copied().collect();
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = filter(&x, w, h, &kernel);
        let my = filter(&y, w, h, &kernel);
        let sxx = filter(&prod(&x, &x), w, h, &kernel);
        let syy = filter(&prod(&y, &y), w, h, &kernel);
        let sxy = filter(&prod(&x, &y), w, h, &kernel);
        for p in 0..w * h {
            if mask.is_some_and(|m| !m[p]) {
                continue;
            }
            let (vx, vy, cov) = (sxx[p] - mx[p] * mx[p], syy[p] - my[p] * my[p], sxy[p] - mx[p] * my[p]);
            total += ((2.0 * mx[p] * my[p] + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx[p] * mx[p] + my[p] * my[p] + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Scores of one region; `None` when the region is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionScores {
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub pixels: usize,
}

/// Scores on the whole image and on its visible / invisible split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub both: RegionScores,
    pub vis: RegionScores,
    pub invis: RegionScores,
}

fn region(pred: &Image<f64>, target: &Image<f64>, mask: &[bool]) -> Result<RegionScores> {
    let pixels = mask.iter().filter(|&&m| m).count();
    if pixels == 0 {
        return Ok(RegionScores { psnr_db: None, ssim: None, pixels });
    }
    Ok(RegionScores { psnr_db: Some(psnr(pred, target, Some(mask))?), ssim: Some(ssim(pred, target, Some(mask))?), pixels })
}

impl MetricsReport {
    /// Without a visibility mask every pixel counts as visible.
    pub fn compute(pred: &Image<f64>, target: &Image<f64>, visible: Option<&[bool]>) -> Result<Self> {
        check_pair(pred, target, None)?;
        let n = pred.pixel_count();
        let vis: Vec<bool> = match visible {
            Some(v) if v.len() != n => {
                return Err(HarnessError::Invalid(format!("visibility mask has {} entries for {n} pixels", v.len())))
            }
            Some(v) => v.to_vec(),
            None => vec![true; n],
        };
        let invis: Vec<bool> = vis.iter().map(|v| !v).collect();
        Ok(MetricsReport {
            both: region(pred, target, &vec![true; n])?,
            vis: region(pred, target, &vis)?,
            invis: region(pred, target, &invis)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use worldsheet::Grid;

    fn checker(n: usize) -> Image<f64> {
        Grid::from_fn(n, n, 3, |r, c, _| if (r / 3 + c / 3) % 2 == 0 { 0.2 } else { 0.8 })
    }

    #[test]
    fn psnr_reference_values() {
        let a = Grid::filled(8, 8, 3, 0.5);
        assert_eq!(psnr(&a, &a, None).unwrap(), 99.0);
        let b = Grid::filled(8, 8, 3, 0.6);
        assert_relative_eq!(psnr(&a, &b, None).unwrap(), 20.0, epsilon = 1e-9);
        let c = Grid::filled(8, 8, 3, 0.0);
        assert_relative_eq!(psnr(&a, &c, None).unwrap(), 6.020599913279624, epsilon = 1e-12);
    }

    #[test]
    fn psnr_respects_the_mask_and_rejects_an_empty_one() {
        let a = Grid::filled(4, 4, 3, 0.5);
        let mut b = a.clone();
        b.data[0] = 0.0;
        let mut mask = vec![true; 16];
        mask[0] = false;
        assert_eq!(psnr(&a, &b, Some(&mask)).unwrap(), 99.0);
        assert!(psnr(&a, &b, Some(&[false; 16])).is_err());
    }

    #[test]
    fn ssim_reference_behaviour() {
        let a = checker(24);
        assert_relative_eq!(ssim(&a, &a, None).unwrap(), 1.0, epsilon = 1e-12);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg, None).unwrap() < 0.0);
        let flat = Grid::filled(24, 24, 3, 0.4);
        let noisy = Grid::from_fn(24, 24, 3, |r, c, ch| 0.4 + 1e-4 * (((r * 7 + c * 13 + ch) % 5) as f64 - 2.0));
        assert!((ssim(&flat, &noisy, None).unwrap() - 1.0).abs() < 0.01);
        assert!(ssim(&checker(8), &checker(8), None).is_err());
    }

    #[test]
    fn regions_partition_the_image() {
        let a = checker(16);
        let b = a.map(|v| v * 0.9);
        let vis: Vec<bool> = (0..256).map(|p| p % 3 != 0).collect();
        let r = MetricsReport::compute(&a, &b, Some(&vis)).unwrap();
        assert_eq!(r.vis.pixels + r.invis.pixels, r.both.pixels);
        let all = MetricsReport::compute(&a, &a, None).unwrap();
        assert_eq!(all.invis.pixels, 0);
        assert_eq!(all.invis.psnr_db, None);
        assert_eq!(all.both.psnr_db, Some(99.0));
    }
}
