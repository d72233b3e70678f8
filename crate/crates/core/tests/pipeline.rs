use nalgebra::Vector2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotmatch::geometry::Image;
use rotmatch::gradcheck::{compare, STEP};
use rotmatch::pipeline::*;
use rotmatch::scenes::{generate_indexed, SceneConfig};
use rotmatch::tensor::{Tape, Tensor, Var};

fn tiny_desc(rng: &mut ChaCha8Rng) -> DescriptorNet {
    let cfg = DescriptorConfig {
        patch_size: 16,
        channels: [2, 3, 4],
        hidden: 5,
        output_dim: 6,
        in_channels: 3,
    };
    DescriptorNet::new(cfg, rng).unwrap()
}

fn tiny_matcher(rng: &mut ChaCha8Rng, layers: usize, heads: usize) -> MatcherNet {
    let cfg = MatcherConfig {
        n_layers: layers,
        width: 8,
        heads,
        desc_dim: 6,
        n_freqs: 2,
    };
    MatcherNet::new(cfg, rng).unwrap()
}

fn noise_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let mut img = Image::new(w, h, 3);
    img.data.iter_mut().for_each(|v| *v = rng.random::<f64>());
    img
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, w: f64, h: f64) -> Vec<Vector2<f64>> {
    (0..n)
        .map(|_| Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h)))
        .collect()
}

fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let mut t = Tensor::randn(&[n, d], 1.0, rng);
    for i in 0..n {
        let row = &mut t.data_mut()[i * d..(i + 1) * d];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    t
}

// ---- assignment ----

#[test]
fn two_by_two_dual_softmax_oracle() {
    let a = assign_scores(vec![2.0, 0.0, 0.0, 2.0], 2, 2, 0.0).unwrap();
    let e2 = 2f64.exp();
    let expected = (e2 / (e2 + 1.0)).powi(2);
    assert!((a.get(0, 0) - expected).abs() < 1e-12);
    assert!((expected - 0.7758).abs() < 1e-4);
    let pairs: Vec<_> = a.matches.iter().map(|m| (m.i, m.j)).collect();
    assert_eq!(pairs, vec![(0, 0), (1, 1)]);
}

#[test]
fn diagonal_scores_match_diagonally() {
    let n = 5;
    let mut s = vec![0.0; n * n];
    (0..n).for_each(|i| s[i * n + i] = 10.0);
    for tau in [0.0, 0.25, 0.5] {
        let a = assign_scores(s.clone(), n, n, tau).unwrap();
        let pairs: Vec<_> = a.matches.iter().map(|m| (m.i, m.j)).collect();
        assert_eq!(pairs, (0..n).map(|i| (i, i)).collect::<Vec<_>>());
    }
}

fn brute_force(p: &[f64], n: usize, m: usize, tau: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let v = p[i * m + j];
            let row_ok = (0..m).all(|k| k == j || p[i * m + k] < v);
            let col_ok = (0..n).all(|k| k == i || p[k * m + j] < v);
            if row_ok && col_ok && v >= tau {
                out.push((i, j));
            }
        }
    }
    out
}

#[test]
fn matches_equal_exhaustive_mutual_max_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        // Small integer scores force ties in some cases.
        let s: Vec<f64> = (0..n * m)
            .map(|_| {
                if case % 3 == 0 {
                    rng.random_range(0..3) as f64
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
            .collect();
        let tau = rng.random_range(0.0..0.3);
        let a = assign_scores(s, n, m, tau).unwrap();
        let got: Vec<_> = a.matches.iter().map(|x| (x.i, x.j)).collect();
        assert_eq!(got, brute_force(&a.p, n, m, tau), "case {case}");
    }
}

#[test]
fn identical_distinct_descriptors_match_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = random_unit_rows(&mut rng, 12, 16);
    let a = assign(&d, &d, 0.0).unwrap();
    let pairs: Vec<_> = a.matches.iter().map(|m| (m.i, m.j)).collect();
    assert_eq!(pairs, (0..12).map(|i| (i, i)).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn assignment_invariants(n in 1usize..7, m in 1usize..7, seed in 0u64..1000, tau in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..n * m).map(|_| rng.random_range(-4.0..4.0)).collect();
        let a = assign_scores(s, n, m, tau).unwrap();
        for i in 0..n {
            let sum: f64 = (0..m).map(|j| a.row_softmax[i * m + j]).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
        for j in 0..m {
            let sum: f64 = (0..n).map(|i| a.col_softmax[i * m + j]).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
        prop_assert!(a.p.iter().all(|&v| v > 0.0 && v < 1.0 || (n == 1 && m == 1 && v == 1.0)));
        let mut rows = std::collections::HashSet::new();
        let mut cols = std::collections::HashSet::new();
        for x in &a.matches {
            prop_assert!(rows.insert(x.i) && cols.insert(x.j));
            prop_assert!(x.score >= tau);
            prop_assert_eq!(x.score, a.get(x.i, x.j));
        }
    }
}

// ---- descriptor ----

#[test]
fn descriptors_are_unit_norm_and_shared_across_identical_patches() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DescriptorNet::new(DescriptorConfig::default(), &mut rng).unwrap();
    // Two copies of the same 24×24 tile side by side.
    let tile = noise_image(&mut rng, 24, 24);
    let mut img = Image::new(48, 24, 3);
    for y in 0..24 {
        for x in 0..48 {
            let src = tile.pixel(x % 24, y).to_vec();
            img.pixel_mut(x, y).copy_from_slice(&src);
        }
    }
    let pts = vec![Vector2::new(12.0, 12.0), Vector2::new(36.0, 12.0), Vector2::new(5.3, 20.1)];
    let k = net.describe(&img, &pts).unwrap();
    assert_eq!(k.descriptors.shape(), &[3, 64]);
    assert_eq!(k.descriptors.row(0), k.descriptors.row(1));
    assert_ne!(k.descriptors.row(0), k.descriptors.row(2));
    k.validate().unwrap();
}

fn similarity_loss(tape: &mut Tape, da: Var, db: Var) -> rotmatch::Result<Var> {
    let bt = tape.transpose(db);
    let s = tape.matmul(da, bt)?;
    let ls = tape.log_softmax_rows(s)?;
    let sq = tape.mul(ls, ls)?;
    Ok(tape.reduce_mean(sq))
}

#[test]
fn descriptor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = tiny_desc(&mut rng);
    let img_a = noise_image(&mut rng, 20, 20);
    let img_b = noise_image(&mut rng, 20, 20);
    let pa = random_points(&mut rng, 3, 20.0, 20.0);
    let pb = random_points(&mut rng, 3, 20.0, 20.0);
    let inputs: Vec<Tensor> = net.params.entries().iter().map(|(_, t)| t.clone()).collect();
    let cmp = compare(&inputs, STEP, |tape, vars| {
        let da = net.describe_on(tape, vars, &img_a, &pa)?;
        let db = net.describe_on(tape, vars, &img_b, &pb)?;
        similarity_loss(tape, da, db)
    })
    .unwrap();
    assert!(cmp.relative_error() < 1e-4, "{}", cmp.relative_error());
}

// ---- matcher ----

fn run_matcher(net: &MatcherNet, a: &KeypointSet, b: &KeypointSet) -> Vec<(Tensor, Tensor)> {
    net.match_forward(a, b).unwrap()
}

fn permuted(k: &KeypointSet, perm: &[usize]) -> KeypointSet {
    let d = k.descriptors.cols();
    let data: Vec<f64> = perm.iter().flat_map(|&i| k.descriptors.row(i).to_vec()).collect();
    KeypointSet::new(
        perm.iter().map(|&i| k.positions[i]).collect(),
        Tensor::matrix(perm.len(), d, data).unwrap(),
        k.image_size,
    )
    .unwrap()
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> KeypointSet {
    KeypointSet::new(random_points(rng, n, 32.0, 32.0), random_unit_rows(rng, n, d), (32, 32)).unwrap()
}

#[test]
fn matcher_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for heads in [1, 2] {
        let net = tiny_matcher(&mut rng, 3, heads);
        let a = random_set(&mut rng, 6, 6);
        let b = random_set(&mut rng, 5, 6);
        let base = run_matcher(&net, &a, &b);
        let perm = [3, 0, 5, 1, 4, 2];
        let pa = run_matcher(&net, &permuted(&a, &perm), &b);
        let perm_b = [4, 2, 0, 1, 3];
        let pb = run_matcher(&net, &a, &permuted(&b, &perm_b));
        assert_eq!(base.len(), 3);
        for l in 0..3 {
            let w = base[l].0.cols();
            for (r, &src) in perm.iter().enumerate() {
                for c in 0..w {
                    assert!((pa[l].0.get2(r, c) - base[l].0.get2(src, c)).abs() < 1e-12);
                }
            }
            for (x, y) in pa[l].1.data().iter().zip(base[l].1.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (r, &src) in perm_b.iter().enumerate() {
                for c in 0..w {
                    assert!((pb[l].1.get2(r, c) - base[l].1.get2(src, c)).abs() < 1e-12);
                }
            }
            for (x, y) in pb[l].0.data().iter().zip(base[l].0.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn layer_zero_tokens_are_descriptor_plus_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = tiny_matcher(&mut rng, 1, 1);
    let a = random_set(&mut rng, 4, 6);
    let mut tape = Tape::new();
    let vars = net.params.bind(&mut tape);
    let d = tape.leaf(&a.descriptors);
    let input = TokenInput {
        descriptors: d,
        positions: &a.positions,
        size: a.image_size,
    };
    let tok = net.input_tokens(&mut tape, &vars, &input).unwrap();
    let tok = tape.to_tensor(tok);

    let p = net.params.entries();
    let (w_in, b_in, w_pos) = (&p[0].1, &p[1].1, &p[2].1);
    let pe = positional_features(&a.positions, a.image_size, 2);
    for i in 0..4 {
        for c in 0..8 {
            let mut v = b_in.data()[c];
            for k in 0..6 {
                v += a.descriptors.get2(i, k) * w_in.get2(k, c);
            }
            let mut pos = 0.0;
            for k in 0..8 {
                pos += pe[i * 8 + k] * w_pos.get2(k, c);
            }
            assert!((tok.get2(i, c) - (v + pos)).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_keypoint_set_is_a_contract_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = tiny_matcher(&mut rng, 1, 1);
    let a = random_set(&mut rng, 3, 6);
    let empty = KeypointSet::new(vec![], Tensor::zeros(&[0, 6]), (32, 32)).unwrap();
    assert!(net.match_forward(&a, &empty).is_err());
    assert!(net.match_forward_until(&a, &a, 0).is_err());
    assert!(net.match_forward_until(&a, &a, 2).is_err());
}

#[test]
fn full_pipeline_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let desc = tiny_desc(&mut rng);
    let matcher = tiny_matcher(&mut rng, 2, 1);
    let img_a = noise_image(&mut rng, 20, 20);
    let img_b = noise_image(&mut rng, 20, 20);
    let pa = random_points(&mut rng, 4, 20.0, 20.0);
    let pb = random_points(&mut rng, 4, 20.0, 20.0);
    let nd = desc.params.len();
    let inputs: Vec<Tensor> = desc
        .params
        .entries()
        .iter()
        .chain(matcher.params.entries())
        .map(|(_, t)| t.clone())
        .collect();
    let cmp = compare(&inputs, STEP, |tape, vars| {
        let da = desc.describe_on(tape, &vars[..nd], &img_a, &pa)?;
        let db = desc.describe_on(tape, &vars[..nd], &img_b, &pb)?;
        let a = TokenInput {
            descriptors: da,
            positions: &pa,
            size: (20, 20),
        };
        let b = TokenInput {
            descriptors: db,
            positions: &pb,
            size: (20, 20),
        };
        let outs = matcher.forward(tape, &vars[nd..], &a, &b, 2)?;
        let l1 = similarity_loss(tape, outs[0].0, outs[0].1)?;
        let l2 = similarity_loss(tape, outs[1].0, outs[1].1)?;
        tape.add(l1, l2)
    })
    .unwrap();
    assert!(cmp.relative_error() < 1e-4, "{}", cmp.relative_error());
}

// ---- composition ----

fn small_model(rng: &mut ChaCha8Rng) -> Model {
    let descriptor = DescriptorNet::new(
        DescriptorConfig {
            output_dim: 16,
            ..DescriptorConfig::default()
        },
        rng,
    )
    .unwrap();
    let matcher = MatcherNet::new(
        MatcherConfig {
            n_layers: 3,
            width: 16,
            heads: 2,
            desc_dim: 16,
            n_freqs: 8,
        },
        rng,
    )
    .unwrap();
    Model {
        descriptor,
        matcher,
        regime: "norot".into(),
    }
}

#[test]
fn full_depth_early_exit_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = small_model(&mut rng);
    let pair = generate_indexed(
        &SceneConfig {
            image_size: 48,
            ..SceneConfig::default()
        },
        0,
    )
    .unwrap();
    let pa = random_points(&mut rng, 10, 48.0, 48.0);
    let pb = random_points(&mut rng, 10, 48.0, 48.0);
    let full = model.match_pair(&pair, &pa, &pb, 3, 0.0).unwrap();
    let ka = model.descriptor.describe(&pair.image_a, &pa).unwrap();
    let kb = model.descriptor.describe(&pair.image_b, &pb).unwrap();
    let outs = model.matcher.match_forward(&ka, &kb).unwrap();
    let direct = assign(&outs[2].0, &outs[2].1, 0.0).unwrap();
    assert_eq!(
        full.p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        direct.p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(full.matches, direct.matches);
    let early = model.match_pair(&pair, &pa, &pb, 1, 0.0).unwrap();
    let direct1 = assign(&outs[0].0, &outs[0].1, 0.0).unwrap();
    assert_eq!(early.p, direct1.p);
}

#[test]
fn model_checkpoint_round_trips_and_checks_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = small_model(&mut rng);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = Model::load(dir.path()).unwrap();
    assert_eq!(back.regime, "norot");
    assert_eq!(back.descriptor.params.checksum(), model.descriptor.params.checksum());
    assert_eq!(back.matcher.params.checksum(), model.matcher.params.checksum());
    back.check_architecture(&model.descriptor.config, &model.matcher.config).unwrap();
    let other = MatcherConfig {
        n_layers: 4,
        ..model.matcher.config.clone()
    };
    assert!(back.check_architecture(&model.descriptor.config, &other).is_err());

    // Weights of a different shape are rejected on load.
    let mut wrong = small_model(&mut rng);
    wrong.matcher = MatcherNet::new(other, &mut rng).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    wrong.save(dir2.path()).unwrap();
    std::fs::copy(dir.path().join(SIDECAR_FILE), dir2.path().join(SIDECAR_FILE)).unwrap();
    assert!(Model::load(dir2.path()).is_err());
}
