use nalgebra::Vector2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, ViewPair};

/// Minimum spacing between two keypoints of the same image, in pixels.
pub const EXCLUSION_RADIUS: f64 = 2.0;
/// Reprojection distance below which a keypoint pair is a positive.
pub const GT_MATCH_THRESHOLD: f64 = 3.0;
pub const DEFAULT_MATCHED_RATIO: f64 = 0.5;

/// Raw keypoint locations for both images of a pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeypointSample {
    pub positions_a: Vec<Vector2<f64>>,
    pub positions_b: Vec<Vector2<f64>>,
}

fn far_enough(existing: &[Vector2<f64>], p: &Vector2<f64>) -> bool {
    existing.iter().all(|q| (q - p).norm() >= EXCLUSION_RADIUS)
}

fn valid_pixels(depth: &DepthMap) -> usize {
    depth.data.iter().filter(|&&d| d > 0.0).count()
}

fn random_in_pixel<R: Rng + ?Sized>(rng: &mut R, w: usize, h: usize) -> Vector2<f64> {
    let col = rng.random_range(0..w);
    let row = rng.random_range(0..h);
    Vector2::new(col as f64 + rng.random::<f64>(), row as f64 + rng.random::<f64>())
}

/// `n` keypoints per image: `matched_ratio · n` are placed in image A where a
/// visible correspondence exists and transferred exactly into B, the rest
/// are uniform distractors on pixels with valid depth. When the co-visible
/// area cannot host all matched points, distractors fill the remainder.
pub fn sample_keypoints<R: Rng + ?Sized>(
    pair: &ViewPair,
    n: usize,
    matched_ratio: f64,
    rng: &mut R,
) -> Result<KeypointSample> {
    if n < 2 {
        return Err(Error::contract("need at least two keypoints per image"));
    }
    if n > valid_pixels(&pair.depth_a) || n > valid_pixels(&pair.depth_b) {
        return Err(Error::contract(format!("{n} keypoints exceed the valid pixels of the pair")));
    }
    let n_matched = ((n as f64) * matched_ratio.clamp(0.0, 1.0)).round() as usize;
    let (wa, ha) = (pair.camera_a.width, pair.camera_a.height);
    let (wb, hb) = (pair.camera_b.width, pair.camera_b.height);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);

    let mut attempts = 0;
    while a.len() < n_matched && attempts < 60 * n {
        attempts += 1;
        let p = random_in_pixel(rng, wa, ha);
        if !far_enough(&a, &p) {
            continue;
        }
        let Some(q) = pair.gt_correspondence(&p).visible() else { continue };
        if !far_enough(&b, &q) {
            continue;
        }
        a.push(p);
        b.push(q);
    }

    for (pts, depth, w, h) in [(&mut a, &pair.depth_a, wa, ha), (&mut b, &pair.depth_b, wb, hb)] {
        let mut attempts = 0;
        while pts.len() < n {
            attempts += 1;
            if attempts > 200 * n {
                return Err(Error::contract("could not place distractor keypoints"));
            }
            let p = random_in_pixel(rng, w, h);
            if depth.at(p.x, p.y) > 0.0 && far_enough(pts, &p) {
                pts.push(p);
            }
        }
    }

    // Shuffle B so that index order carries no match information.
    let mut perm: Vec<usize> = (0..b.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let positions_b = perm.iter().map(|&i| b[i]).collect();
    Ok(KeypointSample {
        positions_a: a,
        positions_b,
    })
}

/// Ground-truth positives: pairs whose reprojection distance is below
/// [`GT_MATCH_THRESHOLD`], resolved greedily by distance so that every
/// keypoint takes part in at most one match. Sorted by A index.
pub fn gt_matches(pair: &ViewPair, positions_a: &[Vector2<f64>], positions_b: &[Vector2<f64>]) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, p) in positions_a.iter().enumerate() {
        let Some(q) = pair.gt_correspondence(p).visible() else { continue };
        for (j, pb) in positions_b.iter().enumerate() {
            let d = (pb - q).norm();
            if d < GT_MATCH_THRESHOLD {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; positions_a.len()];
    let mut used_b = vec![false; positions_b.len()];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}
