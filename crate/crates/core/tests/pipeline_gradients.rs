mod common;

use common::{random_logits, random_sample};
use worldsheet::autodiff::{finite_difference_check, GradCheckOptions};
use worldsheet::fitting::SheetObjective;
use worldsheet::{Connectivity, DepthScaleConfig, LossWeights, RenderSettings};

fn objective(sample: &worldsheet::SceneSample<f64>, g: usize, weights: LossWeights) -> SheetObjective<'_, f64> {
    let settings = RenderSettings { background_color: Some([0.4, 0.5, 0.6]), ..Default::default() };
    SheetObjective::new(
        sample,
        g,
        g,
        DepthScaleConfig::indoor(),
        Connectivity::Eight,
        weights,
        &settings,
    )
    .unwrap()
}

#[test]
fn full_objective_matches_central_differences() {
    let g = 5;
    let n = g * g;
    let (mut checked, mut within) = (0, 0);
    for seed in 0..3 {
        let sample = random_sample(32, seed);
        let obj = objective(&sample, g, LossWeights::default());
        let params = random_logits(3 * n, 0.5, seed);
        let eval = obj.evaluate(&params, false).unwrap();
        let mut screen = |p: &[f64]| obj.signature(p);
        let report = finite_difference_check(
            |p: &[f64]| obj.loss(p).map(|b| b.total),
            &params,
            &eval.gradient,
            &[("offset_x", 0..n), ("offset_y", n..2 * n), ("depth", 2 * n..3 * n)],
            &GradCheckOptions { samples: 30, seed, ..Default::default() },
            Some(&mut screen),
        )
        .unwrap();
        checked += report.checked();
        within += report.within_tolerance();
    }
    assert!(checked >= 40, "only {checked} stable coordinates");
    assert!(within as f64 >= 0.95 * checked as f64, "{within}/{checked} within tolerance");
}

#[test]
fn image_gradient_is_exact_where_residual_signs_are_stable() {
    let sample = random_sample(16, 7);
    let obj = objective(&sample, 4, LossWeights::default());
    let params = random_logits(48, 0.3, 7);
    let eval = obj.evaluate(&params, true).unwrap();
    let img_grad = eval.image_gradient.unwrap();
    let base = sample.input_image.data.clone();
    let mut s2 = sample.clone();
    let h = 1e-6;
    let mut compared = 0;
    for i in (0..base.len()).step_by(37) {
        let mut plus = sample.clone();
        plus.input_image.data[i] += h;
        s2.input_image.data[i] = base[i] - h;
        let lp = objective(&plus, 4, LossWeights::default()).loss(&params).unwrap().total;
        let lm = objective(&s2, 4, LossWeights::default()).loss(&params).unwrap().total;
        s2.input_image.data[i] = base[i];
        let num = (lp - lm) / (2.0 * h);
        let sig_p = objective(&plus, 4, LossWeights::default()).signature(&params).unwrap();
        let sig = obj.signature(&params).unwrap();
        if sig_p != sig {
            continue;
        }
        compared += 1;
        assert!((num - img_grad[i]).abs() < 1e-6, "pixel entry {i}: analytic {} numeric {num}", img_grad[i]);
    }
    assert!(compared > 20);
}

#[test]
fn depth_term_gradient_matches_central_differences() {
    let g = 4;
    let n = g * g;
    let mut sample = random_sample(24, 3);
    let depth = worldsheet::Grid::from_fn(24, 24, 1, |r, c, _| 1.8 + 0.01 * (r + c) as f64);
    sample.target_depth = Some(depth);
    let weights = LossWeights { rgb: 0.0, depth: 1.0, ..Default::default() };
    let obj = objective(&sample, g, weights);
    let params = random_logits(3 * n, 0.4, 3);
    let eval = obj.evaluate(&params, false).unwrap();
    assert!(eval.breakdown.depth.unwrap() > 0.0);
    let mut screen = |p: &[f64]| obj.signature(p);
    let report = finite_difference_check(
        |p: &[f64]| obj.loss(p).map(|b| b.total),
        &params,
        &eval.gradient,
        &[("depth", 2 * n..3 * n)],
        &GradCheckOptions { samples: 16, step: 1e-4, ..Default::default() },
        Some(&mut screen),
    )
    .unwrap();
    assert!(report.checked() >= 5, "{}", report.summary_table());
    assert!(report.fraction_within() >= 0.9, "{}", report.summary_table());
}

#[test]
fn every_recorded_operator_has_an_adjoint_and_pipeline_order_is_fixed() {
    let mut sample = random_sample(16, 1);
    sample.target_depth = Some(worldsheet::Grid::filled(16, 16, 1, 2.0));
    let obj = objective(&sample, 3, LossWeights::default());
    let ops = obj.recorded_ops(&random_logits(27, 0.2, 1)).unwrap();
    let expected = [
        "DecodeSheet",
        "BuildVertices",
        "FragmentAttributes",
        "BlendWeights",
        "FaceFlow",
        "Decompose",
        "Splat",
        "NormalizeFill",
        "TransformVertices",
        "FragmentAttributes",
        "BlendWeights",
        "FaceFlow",
        "Shade",
        "L1ImageLoss",
        "GridOffsetReg",
        "LaplacianReg",
        "RenderDepth",
        "DepthL1",
        "WeightedSum",
    ];
    assert_eq!(ops, expected);
}

#[test]
fn repeated_evaluation_is_bit_identical() {
    let sample = random_sample(24, 5);
    let obj = objective(&sample, 5, LossWeights::default());
    let params = random_logits(75, 0.5, 5);
    let a = obj.evaluate(&params, true).unwrap();
    let b = obj.evaluate(&params, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn regularizer_gradients_alone_match_central_differences() {
    let sample = random_sample(16, 9);
    let weights = LossWeights { rgb: 0.0, grid_offset: 0.2, laplacian: 1.0, ..Default::default() };
    let obj = objective(&sample, 4, weights);
    let params = random_logits(48, 1.0, 9);
    let eval = obj.evaluate(&params, false).unwrap();
    let report = finite_difference_check(
        |p: &[f64]| obj.loss(p).map(|b| b.total),
        &params,
        &eval.gradient,
        &[],
        &GradCheckOptions { samples: 48, ..Default::default() },
        None,
    )
    .unwrap();
    // the Laplacian is piecewise linear; a kink inside ±h is possible but rare
    assert!(report.fraction_within() >= 0.9, "{}", report.summary_table());
}
