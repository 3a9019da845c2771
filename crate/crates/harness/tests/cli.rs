use std::path::Path;
use std::process::{Command, Output};

use worldsheet::FitConfig;
use worldsheet_harness::io::{self, SceneFile};
use worldsheet_harness::scene::camera_at;
use worldsheet_harness::{psnr, TrajectorySpec};

fn worldsheet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_worldsheet")).args(args).output().expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gen(dir: &Path, preset: &str, size: usize) -> std::path::PathBuf {
    let out = worldsheet(&["gen-scene", "--preset", preset, "--seed", "3", "--size", &size.to_string(), "--out", arg(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("scene.json")
}

#[test]
fn eval_of_identical_images_reports_capped_psnr() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "plane", 32);
    let img = dir.path().join("input.png");
    let out = worldsheet(&["eval", "--pred", arg(&img), "--target", arg(&img)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["both"]["psnr_db"], 99.0);
    assert_eq!(report["invis"]["pixels"], 0);
}

#[test]
fn gen_scene_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path(), "step", 32);
    gen(b.path(), "step", 32);
    for name in ["input.png", "target.png", "input_depth.png", "target_depth.png", "visibility.png", "spec.json"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn bad_arguments_exit_with_status_one() {
    let out = worldsheet(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let out = worldsheet(&["gen-scene", "--preset", "teapot", "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("teapot"));

    let out = worldsheet(&["eval", "--pred", "missing.png", "--target", "missing.png"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failed_gradient_check_exits_with_status_two() {
    let out = worldsheet(&["gradcheck", "--coordinates", "10", "--min-fraction", "1.01"]);
    assert_eq!(out.status.code(), Some(2));
    let out = worldsheet(&["gradcheck", "--coordinates", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn fit_render_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = gen(&d.join("scene"), "slanted", 32);
    let config = FitConfig { grid_w: 5, grid_h: 5, iterations: 15, ..Default::default() };
    io::write_json(&d.join("config.json"), &config).unwrap();

    let fit = |name: &str| {
        let out = worldsheet(&[
            "fit",
            "--scene",
            arg(&scene),
            "--config",
            arg(&d.join("config.json")),
            "--out",
            arg(&d.join(name)),
            "--trace",
            arg(&d.join(format!("{name}.csv"))),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(d.join(name)).unwrap()
    };
    assert_eq!(fit("fit_a.json"), fit("fit_b.json"));
    let trace = io::read_trace(&d.join("fit_a.json.csv")).unwrap();
    assert_eq!(trace.len(), 16);

    let scene_file: SceneFile = io::read_json(&scene).unwrap();
    let traj = TrajectorySpec { keyframes: vec![scene_file.input_pose, camera_at([0.1, 0.0, 0.05])], frames_per_segment: vec![3] };
    io::write_json(&d.join("traj.json"), &traj).unwrap();
    let render = |out_dir: &str| {
        let out = worldsheet(&["render", "--fit", arg(&d.join("fit_a.json")), "--traj", arg(&d.join("traj.json")), "--out", arg(&d.join(out_dir))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    render("frames_a");
    render("frames_b");
    for i in 0..4 {
        let name = format!("frame_{i:05}.png");
        assert_eq!(std::fs::read(d.join("frames_a").join(&name)).unwrap(), std::fs::read(d.join("frames_b").join(&name)).unwrap());
    }
    assert!(!d.join("frames_a/frame_00004.png").exists());

    let frame0 = io::read_image(&d.join("frames_a/frame_00000.png")).unwrap();
    let input = io::read_image(&d.join("scene/input.png")).unwrap();
    assert!(psnr(&frame0, &input, None).unwrap() >= 30.0);

    let out = worldsheet(&["export-mesh", "--fit", arg(&d.join("fit_a.json")), "--out", arg(&d.join("mesh.obj"))]);
    assert!(out.status.success());
    let obj = std::fs::read_to_string(d.join("mesh.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 25);
    assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 32);
}

#[test]
fn render_rejects_trajectory_not_starting_at_input_pose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = gen(&d.join("scene"), "plane", 24);
    let config = FitConfig { grid_w: 3, grid_h: 3, iterations: 1, ..Default::default() };
    io::write_json(&d.join("config.json"), &config).unwrap();
    let out = worldsheet(&["fit", "--scene", arg(&scene), "--config", arg(&d.join("config.json")), "--out", arg(&d.join("fit.json"))]);
    assert!(out.status.success());
    let traj = TrajectorySpec { keyframes: vec![camera_at([0.5, 0.0, 0.0]), camera_at([0.0, 0.0, 0.0])], frames_per_segment: vec![1] };
    io::write_json(&d.join("traj.json"), &traj).unwrap();
    let out = worldsheet(&["render", "--fit", arg(&d.join("fit.json")), "--traj", arg(&d.join("traj.json")), "--out", arg(&d.join("f"))]);
    assert_eq!(out.status.code(), Some(1));
}
