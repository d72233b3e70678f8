use std::path::Path;
use std::process::Command;

use nalgebra::Vector2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotmatch::geometry::{rotate_image_quarter, Image};
use rotmatch::tensor::Tensor;
use rotmatch_cli::config::ExperimentConfig;
use rotmatch_cli::plot::{render, series_from_csv, Series};
use rotmatch_cli::viz::{grid, quarter_turns, visualize, Projection};

const TINY: &str = "desc_steps = 3\nmatcher_steps = 3\nbatch_size = 1\nn_keypoints = 16\ndesc_dim = 8\n\
desc_hidden = 8\nn_layers = 2\nwidth = 8\nn_scenes = 2\nimage_size = 48\n\n[eval]\nn_keypoints = 24\n";

fn noise_image(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(w, h, 3);
    img.data.iter_mut().for_each(|v| *v = rng.random::<f64>());
    img
}

// ---- descriptor renderings ----

#[test]
fn projection_rows_are_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let desc = Tensor::randn(&[50, 7], 1.0, &mut rng);
    let p = Projection::fit(&desc).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            let dot: f64 = p.rows[a].iter().zip(&p.rows[b]).map(|(x, y)| x * y).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-9, "{a},{b}: {dot}");
        }
    }
}

#[test]
fn constant_descriptor_renders_identically_when_rotated() {
    let img = noise_image(2, 16, 16);
    let describe = |_: &Image, pts: &[Vector2<f64>]| Ok(Tensor::new(vec![pts.len(), 4], vec![0.5; pts.len() * 4])?);
    let v = visualize(describe, &img, 2, 2).unwrap();
    assert_eq!(v.rotated, rotate_image_quarter(&v.upright, 2));
    assert_eq!(v.discrepancy, 0.0);
}

#[test]
fn pointwise_descriptor_is_rotation_invariant() {
    // A descriptor reading only the colour under the keypoint ignores
    // orientation, so every quarter turn renders consistently.
    let img = noise_image(3, 12, 8);
    let describe = |im: &Image, pts: &[Vector2<f64>]| {
        let mut data = Vec::new();
        for p in pts {
            let px = im.pixel(p.x as usize, p.y as usize);
            data.extend([px[0], px[1], px[2], px[0] * px[1]]);
        }
        Ok(Tensor::new(vec![pts.len(), 4], data)?)
    };
    for turns in 0..4 {
        let v = visualize(describe, &img, turns, 1).unwrap();
        assert!(v.discrepancy < 1e-12, "turns {turns}: {}", v.discrepancy);
    }
    // A position-dependent descriptor is not.
    let by_position = |_: &Image, pts: &[Vector2<f64>]| {
        Ok(Tensor::new(vec![pts.len(), 3], pts.iter().flat_map(|p| [p.x, p.y, p.x * p.y]).collect())?)
    };
    assert!(visualize(by_position, &img, 2, 1).unwrap().discrepancy > 0.1);
}

#[test]
fn grid_and_angle_validation() {
    assert!(grid(10, 10, 3).is_err());
    let (pts, cols, rows) = grid(8, 4, 2).unwrap();
    assert_eq!((cols, rows, pts.len()), (4, 2, 8));
    assert_eq!(pts[0], Vector2::new(1.0, 1.0));
    assert_eq!(quarter_turns(180.0).unwrap(), 2);
    assert_eq!(quarter_turns(-90.0).unwrap(), 3);
    assert!(quarter_turns(45.0).is_err());
}

// ---- plots ----

fn sample_series() -> Vec<Series> {
    series_from_csv(
        "regime,angle,mean_auc20,ci95\nnorot,0,90,3\nnorot,90,20,5\nnorot,180,10,2\nrotmatch,0,80,4\nrotmatch,90,78,4\nrotmatch,180,79,3\n",
    )
    .unwrap()
}

#[test]
fn plot_output_is_deterministic() {
    let s = sample_series();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].label, "norot");
    assert_eq!(s[0].points, vec![(0.0, 90.0), (90.0, 20.0), (180.0, 10.0)]);
    let a = render(&s, 240, 160).unwrap().to_ppm();
    let b = render(&s, 240, 160).unwrap().to_ppm();
    assert_eq!(a, b);
    assert!(a.len() > 240 * 160 * 3);
    let blank = render(&[Series { label: "x".into(), points: vec![(0.0, 0.0)], band: None }], 240, 160).unwrap();
    assert_ne!(blank.to_ppm(), a);
    assert!(render(&[], 240, 160).is_err());
    assert!(series_from_csv("a,b\n1,2\n").is_err());
}

proptest! {
    #[test]
    fn plot_pixels_stay_in_range(ys in proptest::collection::vec(-50.0f64..150.0, 2..8), ci in 0.0f64..40.0) {
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
        let band = Some(vec![ci; pts.len()]);
        let img = render(&[Series { label: "s".into(), points: pts, band }], 120, 90).unwrap();
        prop_assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

// ---- config ----

#[test]
fn experiment_config_parses_both_sections() {
    let cfg = ExperimentConfig::parse(TINY).unwrap();
    assert_eq!(cfg.train.matcher.n_layers, 2);
    assert_eq!(cfg.eval.n_keypoints, 24);
    assert_eq!(cfg.hash(), ExperimentConfig::parse(TINY).unwrap().hash());
    assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
    assert!(ExperimentConfig::parse("[eval]\nbogus = 1\n").is_err());
    assert!(ExperimentConfig::parse("[eval]\ntau = 2.0\n").is_err());
    assert!(ExperimentConfig::parse("width = 7\nheads = 2\n").is_err());
}

// ---- binary ----

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rotmatch"))
}

fn run_ok(args: &[&str], cwd: &Path) {
    let out = bin().args(args).current_dir(cwd).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_and_config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["train", "--regime", "sideways", "--out", "x"]).output().unwrap();
    assert!(!out.status.success());
    std::fs::write(dir.path().join("bad.toml"), "learning_rate = 3\n").unwrap();
    let out = bin()
        .args(["gen-scenes", "--config", "bad.toml", "--out", "s"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin()
        .args(["eval", "--model", "missing", "--scenes", "missing", "--out", "e"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_refuses_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    std::fs::write(d.join("wide.toml"), TINY.replace("width = 8", "width = 16")).unwrap();
    run_ok(&["gen-scenes", "--config", "tiny.toml", "--out", "scenes"], d);
    run_ok(&["train", "--config", "tiny.toml", "--regime", "jointdesc", "--scenes", "scenes", "--out", "model"], d);
    let sidecar = std::fs::read_to_string(d.join("model/model.json")).unwrap();
    assert!(sidecar.contains("jointdesc-rotmatch"));
    let out = bin()
        .args(["eval", "--config", "wide.toml", "--model", "model", "--scenes", "scenes", "--out", "e"])
        .current_dir(d)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
    run_ok(&["eval", "--config", "tiny.toml", "--model", "model", "--scenes", "scenes", "--protocol", "rot90", "--out", "e"], d);
    assert!(d.join("e/rotated-quarter_L2.json").exists());
    assert!(d.join("e/run.json").exists());
}
