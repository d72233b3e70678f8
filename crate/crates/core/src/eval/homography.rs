use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::essential::{apply, hartley, needed_iters, null_vector, RansacConfig};
use crate::geometry::{Surface, ViewPair};

/// Normalised DLT through at least four correspondences.
pub fn homography_dlt(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let (ta, tb) = (hartley(src), hartley(dst));
    let mut rows = Vec::with_capacity(2 * src.len());
    for (p, q) in src.iter().zip(dst) {
        let (a, b) = (apply(&ta, p), apply(&tb, q));
        rows.push([-a.x, -a.y, -1.0, 0.0, 0.0, 0.0, b.x * a.x, b.x * a.y, b.x]);
        rows.push([0.0, 0.0, 0.0, -a.x, -a.y, -1.0, b.y * a.x, b.y * a.y, b.y]);
    }
    let h = null_vector(&rows)?;
    let tb_inv = tb.try_inverse()?;
    let h = tb_inv * Matrix3::from_row_slice(&h) * ta;
    let s = h[(2, 2)];
    if s.abs() < 1e-14 || !s.is_finite() {
        return Some(h / h.norm());
    }
    Some(h / s)
}

pub fn transfer(h: &Matrix3<f64>, p: &Vector2<f64>) -> Option<Vector2<f64>> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    (q.z.abs() > 1e-15).then(|| Vector2::new(q.x / q.z, q.y / q.z))
}

fn reprojection_error(h: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    transfer(h, a).map_or(f64::INFINITY, |q| (q - b).norm())
}

/// Homography RANSAC on pixel correspondences with a pixel threshold.
/// `None` when fewer than four matches are given or no model fits.
pub fn estimate_homography_ransac(
    pts_a: &[Vector2<f64>],
    pts_b: &[Vector2<f64>],
    config: &RansacConfig,
) -> Option<(Matrix3<f64>, Vec<bool>)> {
    let n = pts_a.len();
    if n < 4 || n != pts_b.len() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, Matrix3<f64>)> = None;
    let mut limit = config.max_iters as f64;
    let mut iter = 0;
    while (iter as f64) < limit.min(config.max_iters as f64) {
        iter += 1;
        let idx = sample(&mut rng, n, 4);
        let sa: Vec<_> = idx.iter().map(|k| pts_a[k]).collect();
        let sb: Vec<_> = idx.iter().map(|k| pts_b[k]).collect();
        let Some(h) = homography_dlt(&sa, &sb) else { continue };
        let count = pts_a
            .iter()
            .zip(pts_b)
            .filter(|(a, b)| reprojection_error(&h, a, b) < config.threshold)
            .count();
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, h));
            limit = needed_iters(count as f64 / n as f64, 4, config.confidence);
        }
    }
    let (count, mut h) = best?;
    let mask_of = |h: &Matrix3<f64>| -> Vec<bool> {
        pts_a
            .iter()
            .zip(pts_b)
            .map(|(a, b)| reprojection_error(h, a, b) < config.threshold)
            .collect()
    };
    let mut mask = mask_of(&h);
    if count >= 4 {
        let (ia, ib): (Vec<_>, Vec<_>) = pts_a
            .iter()
            .zip(pts_b)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (*a, *b))
            .unzip();
        if let Some(refined) = homography_dlt(&ia, &ib) {
            let rm = mask_of(&refined);
            if rm.iter().filter(|&&m| m).count() >= count {
                h = refined;
                mask = rm;
            }
        }
    }
    Some((h, mask))
}

/// Mean distance between the four image corners mapped by both homographies.
pub fn corner_error(h_est: &Matrix3<f64>, h_gt: &Matrix3<f64>, width: usize, height: usize) -> f64 {
    let (w, h) = (width as f64, height as f64);
    let corners = [
        Vector2::new(0.0, 0.0),
        Vector2::new(w, 0.0),
        Vector2::new(w, h),
        Vector2::new(0.0, h),
    ];
    corners
        .iter()
        .map(|c| match (transfer(h_est, c), transfer(h_gt, c)) {
            (Some(a), Some(b)) => (a - b).norm(),
            _ => f64::INFINITY,
        })
        .sum::<f64>()
        / 4.0
}

/// Exact A→B homography of a planar scene, `K_b·(R + t·nᵀ/d)·K_a⁻¹`.
pub fn plane_homography(pair: &ViewPair) -> Option<Matrix3<f64>> {
    let Some(Surface::Plane { height }) = pair.surface.as_deref() else {
        return None;
    };
    let (ca, cb) = (&pair.camera_a, &pair.camera_b);
    let r = cb.r * ca.r.transpose();
    let t = cb.t - r * ca.t;
    // Plane z = height written as nᵀ·X_a = d in camera A's frame.
    let n = ca.r * Vector3::z();
    let d = height + n.dot(&ca.t);
    if d.abs() < 1e-15 {
        return None;
    }
    let h = cb.intrinsics() * (r + t * n.transpose() / d) * ca.intrinsics().try_inverse()?;
    Some(h / h[(2, 2)])
}

/// AUC of corner errors with a pixel threshold; same step integration as
/// the pose AUC.
pub fn homography_auc(corner_errors: &[f64], threshold_px: f64) -> f64 {
    super::metrics::auc(corner_errors, threshold_px)
}
