//! Full-pipeline gradient oracle over randomized synthetic scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use worldsheet::autodiff::{finite_difference_check, GradCheckOptions, GradientReport};
use worldsheet::{Connectivity, CameraPose, DepthScaleConfig, LossWeights, RenderSettings, SheetObjective};

use crate::error::Result;
use crate::scene::{camera_at, gen_scene, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Stable coordinates to check in total.
    pub coordinates: usize,
    pub grid: usize,
    pub image_size: usize,
    /// Coordinates checked per scene before moving to the next one.
    pub per_scene: usize,
    pub max_scenes: usize,
    /// Half-width of the uniform distribution the logits are drawn from.
    pub logit_range: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            coordinates: 200,
            grid: 5,
            image_size: 32,
            per_scene: 40,
            max_scenes: 60,
            logit_range: 0.5,
            step: 1e-3,
            tolerance: 1e-2,
        }
    }
}

const SCENES: [&str; 3] = ["plane", "slanted", "step"];

/// Checks the analytic gradient of the default fitting loss against central differences on
/// random logits, cycling through synthetic scenes with jittered target cameras until
/// `coordinates` coordinates whose discrete state is unchanged by `±step` have been checked.
pub fn pipeline_gradcheck(options: &SuiteOptions) -> Result<GradientReport> {
    let mut report = GradientReport { step: options.step, tolerance: options.tolerance, blocks: Vec::new() };
    let n = options.grid * options.grid;
    for i in 0..options.max_scenes {
        let remaining = options.coordinates.saturating_sub(report.checked());
        if remaining == 0 {
            break;
        }
        let scene_seed = options.seed.wrapping_mul(1000).wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let name = SCENES[i % SCENES.len()];
        let mut spec = SceneSpec::preset(name, scene_seed, options.image_size)?;
        spec.supersample = 2;
        spec.target_pose = CameraPose::yaw(rng.random_range(-0.05..0.05)).compose(&camera_at([
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        ]));
        let sample = gen_scene(&spec)?.sample(false);
        let objective = SheetObjective::new(
            &sample,
            options.grid,
            options.grid,
            DepthScaleConfig::indoor(),
            Connectivity::Four,
            LossWeights::default(),
            &RenderSettings::default(),
        )?;
        let params: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-options.logit_range..options.logit_range)).collect();
        let eval = objective.evaluate(&params, false)?;
        let labels = ["offset_x", "offset_y", "depth"].map(|b| format!("{name}{i}/{b}"));
        let blocks: Vec<(&str, std::ops::Range<usize>)> =
            labels.iter().enumerate().map(|(b, l)| (l.as_str(), b * n..(b + 1) * n)).collect();
        let mut screen = |p: &[f64]| objective.signature(p);
        let part = finite_difference_check(
            |p: &[f64]| objective.loss(p).map(|b| b.total),
            &params,
            &eval.gradient,
            &blocks,
            &GradCheckOptions {
                step: options.step,
                tolerance: options.tolerance,
                samples: remaining.min(options.per_scene),
                seed: scene_seed,
                ..Default::default()
            },
            Some(&mut screen),
        )?;
        log::debug!("scene {i} ({name}): {} checked", part.checked());
        report.merge(part);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_checks_the_requested_count() {
        let opts = SuiteOptions { coordinates: 12, per_scene: 6, image_size: 16, grid: 3, ..Default::default() };
        let r = pipeline_gradcheck(&opts).unwrap();
        assert_eq!(r.checked(), 12);
        assert!(r.fraction_within() >= 0.9, "{}", r.summary_table());
    }
}
