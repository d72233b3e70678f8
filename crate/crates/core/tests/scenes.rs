use nalgebra::{DMatrix, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rotmatch::geometry::Correspondence;
use rotmatch::scenes::*;
use rotmatch::Error;

fn cfg(geometry: GeometryKind, seed: u64) -> SceneConfig {
    SceneConfig {
        n_scenes: 10,
        image_size: 48,
        geometry,
        seed,
        ..SceneConfig::default()
    }
}

#[test]
fn zero_baseline_gives_identity_correspondence() {
    let c = SceneConfig {
        baseline_range: (0.0, 0.0),
        rotation_range_3d: 0.0,
        ..cfg(GeometryKind::Heightfield, 1)
    };
    let pair = identity_pair(&c, 0).unwrap();
    let mut visible = 0;
    for i in 0..48 {
        for j in 0..48 {
            let p = Vector2::new(j as f64 + 0.25, i as f64 + 0.75);
            if let Correspondence::Visible(q) = pair.gt_correspondence(&p) {
                assert!((q - p).norm() < 1e-9);
                visible += 1;
            }
        }
    }
    assert_eq!(visible, 48 * 48);
}

/// Unnormalised DLT over all point pairs, solved by SVD.
fn dlt(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> [f64; 9] {
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (k, (p, q)) in src.iter().zip(dst).enumerate() {
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * k, c)] = r1[c];
            a[(2 * k + 1, c)] = r2[c];
        }
    }
    let svd = (a.transpose() * &a).symmetric_eigen();
    let imin = svd.eigenvalues.imin();
    let h = svd.eigenvectors.column(imin);
    std::array::from_fn(|i| h[i])
}

#[test]
fn plane_correspondences_fit_one_homography() {
    let pair = generate_indexed(&cfg(GeometryKind::Plane, 2), 0).unwrap();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for i in (0..48).step_by(3) {
        for j in (0..48).step_by(3) {
            let p = Vector2::new(j as f64 + 0.5, i as f64 + 0.5);
            if let Some(q) = pair.gt_correspondence(&p).visible() {
                // Normalise to keep the DLT well conditioned.
                src.push(p / 48.0);
                dst.push(q / 48.0);
            }
        }
    }
    let h = dlt(&src, &dst);
    for (p, q) in src.iter().zip(&dst) {
        let w = h[6] * p.x + h[7] * p.y + h[8];
        let u = (h[0] * p.x + h[1] * p.y + h[2]) / w;
        let v = (h[3] * p.x + h[4] * p.y + h[5]) / w;
        assert!((Vector2::new(u, v) - q).norm() * 48.0 < 1e-6);
    }
}

#[test]
fn generation_is_deterministic() {
    let c = cfg(GeometryKind::Heightfield, 3);
    let a = generate_indexed(&c, 4).unwrap();
    let b = generate_indexed(&c, 4).unwrap();
    assert_eq!(a.image_a, b.image_a);
    assert_eq!(a.image_b, b.image_b);
    assert_eq!(
        a.depth_a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.depth_a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.camera_b, b.camera_b);
    let other = generate_indexed(&c, 5).unwrap();
    assert_ne!(a.image_a, other.image_a);
}

#[test]
fn generated_pairs_meet_covisibility_floor() {
    let c = cfg(GeometryKind::Heightfield, 4);
    for i in 0..6 {
        let p = generate_indexed(&c, i).unwrap();
        p.validate().unwrap();
        assert!(covisibility(&p) >= MIN_COVISIBILITY);
    }
}

#[test]
fn unreachable_covisibility_is_a_generation_error() {
    let c = SceneConfig {
        baseline_range: (50.0, 60.0),
        ..cfg(GeometryKind::Plane, 5)
    };
    assert!(matches!(generate_indexed(&c, 0), Err(Error::Generation(_))));
}

#[test]
fn rendered_depth_round_trips_through_projection() {
    let pair = generate_indexed(&cfg(GeometryKind::Heightfield, 6), 0).unwrap();
    let cam = &pair.camera_a;
    for i in 0..48 {
        for j in 0..48 {
            let d = pair.depth_a.get(j, i);
            if d <= 0.0 {
                continue;
            }
            let px = Vector2::new(j as f64 + 0.5, i as f64 + 0.5);
            let x = cam.unproject(&px, d).unwrap();
            let (back, z) = cam.project(&x).unwrap();
            assert!((back - px).norm() < 1e-6 && (z - d).abs() < 1e-6);
            let surface = pair.surface.as_ref().unwrap();
            assert!((x.z - surface.height(x.x, x.y)).abs() < 1e-6);
        }
    }
}

#[test]
fn keypoints_stay_in_bounds() {
    let pair = generate_indexed(&cfg(GeometryKind::Heightfield, 7), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let s = sample_keypoints(&pair, 16, DEFAULT_MATCHED_RATIO, &mut rng).unwrap();
        for p in s.positions_a.iter().chain(&s.positions_b) {
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x < 48.0 && p.y < 48.0);
        }
    }
}

#[test]
fn identity_pair_has_exact_matches_for_half_the_keypoints() {
    let pair = identity_pair(&cfg(GeometryKind::Heightfield, 8), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 64;
    let s = sample_keypoints(&pair, n, 0.5, &mut rng).unwrap();
    assert_eq!(s.positions_a.len(), n);
    assert_eq!(s.positions_b.len(), n);
    let gt = gt_matches(&pair, &s.positions_a, &s.positions_b);
    let exact = gt
        .iter()
        .filter(|&&(i, j)| {
            let q = pair.gt_correspondence(&s.positions_a[i]).visible().unwrap();
            (q - s.positions_b[j]).norm() == 0.0 && (q - s.positions_a[i]).norm() < 1e-9
        })
        .count();
    assert!(exact >= n / 2);
}

#[test]
fn gt_assignment_is_a_partial_permutation() {
    let c = cfg(GeometryKind::Heightfield, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..5 {
        let pair = generate_indexed(&c, i).unwrap();
        let s = sample_keypoints(&pair, 96, 0.5, &mut rng).unwrap();
        let gt = gt_matches(&pair, &s.positions_a, &s.positions_b);
        let mut seen_a = std::collections::HashSet::new();
        let mut seen_b = std::collections::HashSet::new();
        for &(a, b) in &gt {
            assert!(seen_a.insert(a) && seen_b.insert(b));
        }
        for pts in [&s.positions_a, &s.positions_b] {
            for x in 0..pts.len() {
                for y in x + 1..pts.len() {
                    assert!((pts[x] - pts[y]).norm() >= EXCLUSION_RADIUS);
                }
            }
        }
    }
}

#[test]
fn distractor_only_sampling_and_bad_counts() {
    let pair = generate_indexed(&cfg(GeometryKind::Heightfield, 10), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s = sample_keypoints(&pair, 32, 0.0, &mut rng).unwrap();
    assert_eq!(s.positions_a.len(), 32);
    assert!(sample_keypoints(&pair, 1, 0.5, &mut rng).is_err());
    assert!(sample_keypoints(&pair, 48 * 48 + 1, 0.5, &mut rng).is_err());
}

#[test]
fn dataset_fraction_and_directory_round_trip() {
    let c = SceneConfig {
        n_scenes: 10,
        ..cfg(GeometryKind::Heightfield, 11)
    };
    let full = build_dataset(&c, 1.0).unwrap();
    assert_eq!(full.len(), 10);
    let tenth = build_dataset(&c, 0.1).unwrap();
    assert_eq!(tenth.indices, vec![0]);
    assert_eq!(tenth.pairs[0].image_a, full.pairs[0].image_a);
    assert!(build_dataset(&c, 0.0).is_err());
    assert!(build_dataset(&c, 1.5).is_err());

    let dir = tempfile::tempdir().unwrap();
    let half = full.subset(0.5).unwrap();
    let manifest = half.save(dir.path()).unwrap();
    assert_eq!(manifest.scene_count, 5);
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.indices, half.indices);
    assert_eq!(back.config, c);
    for (x, y) in back.pairs.iter().zip(&half.pairs) {
        assert_eq!(x.image_b, y.image_b);
        assert_eq!(x.camera_a, y.camera_a);
    }
}
