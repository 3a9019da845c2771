#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldsheet::{CameraIntrinsics, CameraPose, Grid, Image, SceneSample};

/// Sum of a few random low-frequency sinusoids, in roughly [0.15, 0.85].
pub fn smooth_image(w: usize, h: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<f64> = (0..9).map(|_| rng.random_range(0.05..0.35)).collect();
    let ph: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    Grid::from_fn(w, h, 3, |r, c, ch| {
        let (r, c) = (r as f64, c as f64);
        0.5 + 0.2 * (r * f[ch] + ph[ch]).sin() * (c * f[3 + ch] + ph[3 + ch]).cos()
            + 0.15 * ((r + c) * f[6 + ch] + ph[6 + ch]).sin()
    })
}

pub fn random_sample(size: usize, seed: u64) -> SceneSample<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    SceneSample {
        input_image: smooth_image(size, size, 2 * seed),
        target_image: smooth_image(size, size, 2 * seed + 1),
        input_pose: CameraPose::identity(),
        target_pose: CameraPose::yaw(rng.random_range(-0.05..0.05)).compose(&CameraPose::from_translation([
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        ])),
        intrinsics: CameraIntrinsics::new(60.0, size, size).unwrap(),
        target_depth: None,
        init_depth: None,
    }
}

pub fn random_logits(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1091);
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(99.0)
    }
}
