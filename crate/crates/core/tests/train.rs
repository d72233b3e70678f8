use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rotmatch::eval::{run_benchmark, EvalConfig, Protocol};
use rotmatch::gradcheck::{compare, STEP};
use rotmatch::pipeline::{assign_scores, DescriptorConfig, MatcherConfig};
use rotmatch::scenes::{build_dataset, SceneConfig};
use rotmatch::tensor::{AdamW, Tape, Tensor};
use rotmatch::train::*;

fn tiny_config(regime: Regime) -> TrainConfig {
    TrainConfig {
        regime,
        desc_steps: 20,
        matcher_steps: 20,
        batch_size: 2,
        lr: 3e-3,
        n_keypoints: 24,
        descriptor: DescriptorConfig {
            channels: [4, 8, 8],
            hidden: 16,
            output_dim: 8,
            ..DescriptorConfig::default()
        },
        matcher: MatcherConfig {
            n_layers: 2,
            width: 8,
            heads: 1,
            desc_dim: 8,
            n_freqs: 2,
        },
        scenes: SceneConfig {
            n_scenes: 4,
            image_size: 48,
            seed: 3,
            ..SceneConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn unit_rows(rows: &[Vec<f64>]) -> Tensor {
    let d = rows[0].len();
    let data = rows
        .iter()
        .flat_map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(move |v| v / n)
        })
        .collect();
    Tensor::new(vec![rows.len(), d], data).unwrap()
}

// ---- losses ----

/// `−½·(log softmax_row + log softmax_col)` at each GT entry, written as
/// plain loops.
fn infonce_oracle(a: &[Vec<f64>], b: &[Vec<f64>], gt: &[(usize, usize)], t: f64) -> f64 {
    let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = |i: usize, j: usize| {
        a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>() / (norm(&a[i]) * norm(&b[j])) / t
    };
    let (n, m) = (a.len(), b.len());
    let mut total = 0.0;
    for &(i, j) in gt {
        let row: f64 = (0..m).map(|k| s(i, k).exp()).sum();
        let col: f64 = (0..n).map(|k| s(k, j).exp()).sum();
        total += (s(i, j) - row.ln()) + (s(i, j) - col.ln());
    }
    -0.5 * total / gt.len() as f64
}

#[test]
fn infonce_floor_for_identical_sets() {
    let rows = vec![
        vec![1.0, 0.2, 0.0],
        vec![0.0, 1.0, -0.3],
        vec![0.4, 0.1, 1.0],
        vec![-1.0, 0.5, 0.5],
    ];
    let t = unit_rows(&rows);
    let gt: Vec<(usize, usize)> = (0..4).map(|i| (i, i)).collect();
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(&t), tape.leaf(&t));
    let loss = descriptor_loss(&mut tape, a, b, &gt).unwrap();
    let oracle = infonce_oracle(&rows, &rows, &gt, INFONCE_TEMPERATURE);
    assert!((tape.scalar(loss) - oracle).abs() < 1e-12, "{} vs {oracle}", tape.scalar(loss));
    // Orthonormal sets reach log(1 + (n−1)·e^{−1/T}).
    let eye = unit_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(&eye), tape.leaf(&eye));
    let gt3: Vec<(usize, usize)> = (0..3).map(|i| (i, i)).collect();
    let loss = descriptor_loss(&mut tape, a, b, &gt3).unwrap();
    let floor = (1.0 + 2.0 * (-1.0 / INFONCE_TEMPERATURE).exp()).ln();
    assert!((tape.scalar(loss) - floor).abs() < 1e-15);
}

#[test]
fn zero_gt_gives_zero_loss_and_gradient() {
    let t = unit_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
    let mut tape = Tape::new();
    let a = tape.leaf(&t);
    let b = tape.leaf(&t);
    let loss = descriptor_loss(&mut tape, a, b, &[]).unwrap();
    assert_eq!(tape.scalar(loss), 0.0);
    tape.backward(loss).unwrap();
    assert!(tape.grad(a).is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    // With no GT only the unmatched term is left; flat scores zero it.
    let mut tape = Tape::new();
    let s = tape.leaf(&Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
    let loss = matcher_loss(&mut tape, s, &[]).unwrap();
    assert!(tape.scalar(loss).abs() < 1e-15);
}

#[test]
fn unmatched_keypoints_are_pushed_towards_flat_rows() {
    // Row 1 and column 1 have no GT partner.
    let gt = [(0, 0)];
    let loss_of = |s: Vec<f64>| {
        let mut tape = Tape::new();
        let v = tape.leaf(&Tensor::new(vec![2, 2], s).unwrap());
        let l = matcher_loss(&mut tape, v, &gt).unwrap();
        tape.scalar(l)
    };
    let flat = loss_of(vec![3.0, 0.0, 0.0, 0.0]);
    let peaked = loss_of(vec![3.0, 0.0, 0.0, 3.0]);
    // Oracle: GT term plus KL(uniform ‖ softmax) of row 1 and column 1.
    let (e3, l2) = (3f64.exp(), 2f64.ln());
    let gt_term = -2.0 * (e3 / (e3 + 1.0)).ln();
    assert!((flat - gt_term).abs() < 1e-12);
    let kl = -0.5 * ((1.0 / (1.0 + e3)).ln() + (e3 / (1.0 + e3)).ln()) - l2;
    assert!((peaked - (gt_term + 2.0 * kl)).abs() < 1e-12, "{peaked}");
    assert!(peaked > flat);
}

#[test]
fn descriptor_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = Tensor::randn(&[5, 4], 0.3, &mut rng);
    let b = Tensor::randn(&[6, 4], 0.3, &mut rng);
    let gt = [(0, 1), (2, 2), (4, 5)];
    let cmp = compare(&[a, b], STEP, |tape, v| descriptor_loss(tape, v[0], v[1], &gt)).unwrap();
    assert!(cmp.relative_error() < 1e-4, "{}", cmp.relative_error());
    let s = Tensor::randn(&[4, 3], 1.0, &mut rng);
    let cmp = compare(&[s], STEP, |tape, v| matcher_loss(tape, v[0], &[(0, 0), (3, 2)])).unwrap();
    assert!(cmp.relative_error() < 1e-4);
}

#[test]
fn matcher_loss_scalar_cases() {
    let n = 3;
    let mut p = vec![0.005 / 2.0; n * n];
    for i in 0..n {
        p[i * n + i] = 0.99;
    }
    let gt: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    assert!((matcher_loss_from_p(&p, n, &gt) + 0.99f64.ln()).abs() < 1e-12);

    // Uniform scores: both softmax factors are 1/4.
    let mut tape = Tape::new();
    let s = tape.leaf(&Tensor::new(vec![4, 4], vec![0.3; 16]).unwrap());
    let loss = matcher_loss(&mut tape, s, &[(0, 0), (1, 2)]).unwrap();
    assert!((tape.scalar(loss) - 16f64.ln()).abs() < 1e-12);
    let a = assign_scores(vec![0.3; 16], 4, 4, 0.1).unwrap();
    assert!((matcher_loss_from_p(&a.p, 4, &[(0, 0)]) - 16f64.ln()).abs() < 1e-12);
}

#[test]
fn matcher_loss_decreases_on_a_fixed_batch() {
    let cfg = tiny_config(Regime::NoRot);
    let data = build_dataset(&cfg.scenes, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let desc = init_descriptor(&cfg).unwrap();
    let mut desc = desc;
    desc.params.set_trainable(false);
    let mut rotations = 0;
    let sample = draw_sample(&data, &cfg, None, &mut rng, &mut rotations).unwrap();
    assert!(!sample.gt.is_empty());
    let mut net = init_matcher(&cfg).unwrap();
    let mut opt = AdamW::new(1e-3, ADAM_BETAS, 0.0);
    let mut losses = Vec::new();
    for step in 1..=51 {
        let mut tape = Tape::new();
        let vars = net.params.bind(&mut tape);
        let loss = matcher_sample_loss(&mut tape, &net, &vars, &desc, &sample).unwrap();
        losses.push(tape.scalar(loss));
        tape.backward(loss).unwrap();
        net.params.write_grads(&tape, &vars);
        opt.step(&mut net.params.tensors_mut(), step).unwrap();
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

// ---- staged training ----

#[test]
fn matcher_stage_leaves_descriptor_untouched() {
    let cfg = tiny_config(Regime::RotMatch);
    let data = build_dataset(&cfg.scenes, 1.0).unwrap();
    let (desc, _) = train_descriptor(&cfg, &data).unwrap();
    assert!(!desc.params.is_trainable());
    let before = desc.params.checksum();
    let (_, _) = train_matcher(&cfg, &desc, &data).unwrap();
    assert_eq!(desc.params.checksum(), before);

    let mut trainable = init_descriptor(&cfg).unwrap();
    trainable.params.set_trainable(true);
    assert!(train_matcher(&cfg, &trainable, &data).is_err());
}

#[test]
fn regimes_rotate_only_where_configured() {
    let expect = [
        (Regime::NoRot, false, false),
        (Regime::RotMatch, false, true),
        (Regime::RotDescMatch, true, true),
        (Regime::JointDescRotMatch, true, true),
    ];
    for (regime, desc_rot, matcher_rot) in expect {
        let cfg = tiny_config(regime);
        let (_, log) = run_regime(&cfg).unwrap();
        assert_eq!(log.descriptor.rotations > 0, desc_rot, "{regime}");
        assert_eq!(log.matcher.rotations > 0, matcher_rot, "{regime}");
        if desc_rot {
            assert_eq!(log.descriptor.rotations, cfg.desc_steps * cfg.batch_size);
        }
        assert_eq!(log.descriptor.rows.len(), cfg.desc_steps);
        assert_eq!(log.matcher.rows.len(), cfg.matcher_steps);
    }
}

#[test]
fn identical_configs_give_identical_checkpoints() {
    let cfg = tiny_config(Regime::RotDescMatch);
    let (m1, l1) = run_regime(&cfg).unwrap();
    let (m2, l2) = run_regime(&cfg).unwrap();
    assert_eq!(m1.descriptor.params.checksum(), m2.descriptor.params.checksum());
    assert_eq!(m1.matcher.params.checksum(), m2.matcher.params.checksum());
    let losses = |l: &TrainLog| l.matcher.rows.iter().map(|r| r.loss).collect::<Vec<_>>();
    assert_eq!(losses(&l1), losses(&l2));
    let mut other = cfg.clone();
    other.seed = 1;
    let (m3, _) = run_regime(&other).unwrap();
    assert_ne!(m1.matcher.params.checksum(), m3.matcher.params.checksum());
}

#[test]
fn training_log_writes_csv() {
    let cfg = tiny_config(Regime::NoRot);
    let (_, log) = run_regime(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("descriptor_log.csv");
    log.descriptor.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("step,loss,wall_time_ms"));
    assert_eq!(text.lines().count(), cfg.desc_steps + 1);
}

#[test]
fn overfits_four_pairs() {
    let cfg = TrainConfig {
        desc_steps: 600,
        matcher_steps: 600,
        batch_size: 4,
        n_keypoints: 32,
        ..tiny_config(Regime::NoRot)
    };
    let cfg = TrainConfig {
        descriptor: DescriptorConfig { output_dim: 16, ..cfg.descriptor.clone() },
        matcher: MatcherConfig { width: 16, desc_dim: 16, ..cfg.matcher.clone() },
        ..cfg
    };
    let data = build_dataset(&cfg.scenes, 1.0).unwrap();
    assert_eq!(data.len(), 4);
    let (model, _) = run_regime_on(&cfg, &data, None).unwrap();
    let eval = EvalConfig {
        n_keypoints: 32,
        ..EvalConfig::default()
    };
    let rep = run_benchmark(&model, &data, Protocol::Upright, 2, &eval).unwrap();
    println!("overfit precision {}", rep.precision3px);
    assert!(rep.precision3px >= 0.95, "precision {}", rep.precision3px);
}

// ---- config ----

#[test]
fn config_text_overrides_defaults() {
    let cfg = TrainConfig::from_text("regime = \"rotmatch\"\nlr = 1e-3\nn_layers = 3\ndesc_dim = 32\n").unwrap();
    assert_eq!(cfg.regime, Regime::RotMatch);
    assert_eq!(cfg.lr, 1e-3);
    assert_eq!(cfg.matcher.n_layers, 3);
    assert_eq!(cfg.matcher.desc_dim, 32);
    assert_eq!(cfg.descriptor.output_dim, 32);
    assert!(TrainConfig::from_text("learning_rate = 1.0").is_err());
    assert!(TrainConfig::from_text("regime = \"sideways\"").is_err());
    assert!(TrainConfig::from_text("data_fraction = 0").is_err());
    for r in Regime::ALL {
        assert_eq!(r.tag().parse::<Regime>().unwrap(), r);
    }
}
