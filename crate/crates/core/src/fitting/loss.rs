use serde::{Deserialize, Serialize};

use super::objective::{SceneSample, SheetObjective};
use crate::error::{Error, Result};
use crate::geometry::{Connectivity, SheetParams};
use crate::grid::{Grid, Image};
use crate::raster::RenderSettings;
use crate::scalar::Real;

/// Loss-term weights. The perceptual and refined-image terms have no
/// counterpart here and must stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rgb: f64,
    pub perceptual: f64,
    pub refined_rgb: f64,
    pub refined_perceptual: f64,
    pub grid_offset: f64,
    pub laplacian: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rgb: 8.0,
            perceptual: 0.0,
            refined_rgb: 0.0,
            refined_perceptual: 0.0,
            grid_offset: 0.2,
            laplacian: 1e-4,
            depth: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rgb,
            self.perceptual,
            self.refined_rgb,
            self.refined_perceptual,
            self.grid_offset,
            self.laplacian,
            self.depth,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Configuration("loss weights must be finite and non-negative".into()));
        }
        if self.perceptual != 0.0 || self.refined_rgb != 0.0 || self.refined_perceptual != 0.0 {
            return Err(Error::Configuration(
                "perceptual and refined-image loss weights are not supported and must be 0".into(),
            ));
        }
        Ok(())
    }

    pub fn combine<T: Real>(&self, rgb: T, grid_offset: T, laplacian: T, depth: Option<T>) -> T {
        T::lit(self.rgb) * rgb
            + T::lit(self.grid_offset) * grid_offset
            + T::lit(self.laplacian) * laplacian
            + depth.map_or(T::zero(), |d| T::lit(self.depth) * d)
    }
}

/// Total loss with each unweighted term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub rgb: T,
    pub grid_offset: T,
    pub laplacian: T,
    /// Present when the sample carries a target depth map.
    pub depth: Option<T>,
}

impl<T: Real> LossBreakdown<T> {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// `Σ |pred - target| / (W H)`, summing over channels.
pub fn l1_image_loss<T: Real>(pred: &Image<T>, target: &Image<T>) -> Result<T> {
    if !pred.same_shape(target) {
        return Err(Error::shape(
            format!("{}x{}x{}", target.width, target.height, target.channels),
            format!("{}x{}x{}", pred.width, pred.height, pred.channels),
        ));
    }
    let s: T = pred.data.iter().zip(&target.data).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(s / T::from_usize_lossy(pred.pixel_count()))
}

/// Mean absolute depth difference over `mask`; 0 (with a warning) when the mask is empty.
pub fn depth_l1_loss<T: Real>(rendered: &Grid<T>, gt: &Grid<T>, mask: &[bool]) -> Result<T> {
    if !rendered.same_shape(gt) || rendered.channels != 1 || mask.len() != rendered.pixel_count() {
        return Err(Error::shape(
            format!("matching single-channel depth maps and a {}-entry mask", gt.pixel_count()),
            format!("{}x{}x{} / {}", rendered.width, rendered.height, rendered.channels, mask.len()),
        ));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        log::warn!("depth loss mask is empty; depth term set to 0");
        return Ok(T::zero());
    }
    let s: T = (0..mask.len())
        .filter(|&i| mask[i])
        .map(|i| (rendered.data[i] - gt.data[i]).abs())
        .sum();
    Ok(s / T::from_usize_lossy(n))
}

/// Evaluates the weighted objective of `params` on `sample`.
pub fn total_loss<T: Real>(
    sample: &SceneSample<T>,
    params: &SheetParams<T>,
    weights: &LossWeights,
    settings: &RenderSettings<T>,
    connectivity: Connectivity,
) -> Result<LossBreakdown<T>> {
    let objective = SheetObjective::new(
        sample,
        params.grid_w,
        params.grid_h,
        params.depth_scale,
        connectivity,
        *weights,
        settings,
    )?;
    objective.loss(&params.to_flat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        let a: Grid<f64> = Grid::filled(4, 4, 3, 0.2);
        assert_eq!(l1_image_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|x| x + 0.1);
        assert!((l1_image_loss(&b, &a).unwrap() - 0.3).abs() < 1e-12);
        let z = Grid::zeros(16, 16, 3);
        let mut one = z.clone();
        one.set(3, 4, 1, 1.0);
        assert_eq!(l1_image_loss(&one, &z).unwrap(), 0.00390625);
        assert!(l1_image_loss(&z, &Grid::zeros(8, 16, 3)).is_err());
    }

    #[test]
    fn depth_examples() {
        let gt = Grid::filled(4, 4, 1, 2.0);
        let all = vec![true; 16];
        assert_eq!(depth_l1_loss(&gt, &gt, &all).unwrap(), 0.0);
        let off = gt.map(|z| z + 0.5);
        assert_eq!(depth_l1_loss(&off, &gt, &all).unwrap(), 0.5);
        let half: Vec<bool> = (0..16).map(|i| i % 2 == 0).collect();
        let mut mixed = gt.map(|z| z + 1.0);
        for i in (1..16).step_by(2) {
            mixed.data[i] = 50.0;
        }
        assert_eq!(depth_l1_loss(&mixed, &gt, &half).unwrap(), 1.0);
        assert_eq!(depth_l1_loss(&off, &gt, &[false; 16]).unwrap(), 0.0);
    }

    #[test]
    fn weight_examples() {
        let w = LossWeights::default();
        assert!((w.combine(0.1, 0.0, 0.0, None) - 0.8_f64).abs() < 1e-12);
        assert_eq!(w.combine(0.0_f64, 0.0, 0.0, None), 0.0);
        assert!((w.combine(0.0, 1.0, 0.0, None) - 0.2_f64).abs() < 1e-12);
    }

    #[test]
    fn unsupported_weights_are_rejected() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { perceptual: 2.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { refined_rgb: 8.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { grid_offset: -1.0, ..Default::default() }.validate().is_err());
    }
}
