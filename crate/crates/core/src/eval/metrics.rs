use nalgebra::{Matrix3, Vector2, Vector3};

use crate::geometry::{Correspondence, ViewPair};
use crate::pipeline::Match;

/// Angle of the rotation `R_estᵀ·R_gt` and angle between the translation
/// directions up to sign; the larger of the two, in degrees.
pub fn pose_error(r_est: &Matrix3<f64>, t_est: &Vector3<f64>, r_gt: &Matrix3<f64>, t_gt: &Vector3<f64>) -> f64 {
    let cos_r = (((r_est.transpose() * r_gt).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let rot = cos_r.acos().to_degrees();
    let (ne, ng) = (t_est.norm(), t_gt.norm());
    let trans = if ne == 0.0 || ng == 0.0 {
        // A zero baseline carries no direction to compare.
        0.0
    } else {
        (t_est.dot(t_gt).abs() / (ne * ng)).clamp(0.0, 1.0).acos().to_degrees()
    };
    rot.max(trans)
}

/// Area under the recall curve on `[0, threshold]` divided by `threshold`,
/// in percent. `recall(e)` counts errors `≤ e` and is a step function, so
/// the area is exact. Infinite or NaN errors never count as recalled.
pub fn auc(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() || threshold <= 0.0 {
        return 0.0;
    }
    let mut sorted: Vec<f64> = errors.iter().copied().filter(|e| *e <= threshold).collect();
    sorted.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    let mut area = 0.0;
    for (k, e) in sorted.iter().enumerate() {
        let next = sorted.get(k + 1).copied().unwrap_or(threshold);
        area += (k + 1) as f64 / n * (next - e.max(0.0));
    }
    100.0 * area / threshold
}

/// Precision of `matches` against ground-truth transfer. Matches whose A
/// keypoint has no depth or no transfer into B are left out of the
/// denominator; with nothing left to score the precision is 0.
pub fn matching_precision(
    matches: &[Match],
    pair: &ViewPair,
    positions_a: &[Vector2<f64>],
    positions_b: &[Vector2<f64>],
    px_thresh: f64,
) -> f64 {
    let mut scored = 0;
    let mut correct = 0;
    for m in matches {
        match pair.gt_correspondence(&positions_a[m.i]) {
            Correspondence::Visible(q) => {
                scored += 1;
                if (q - positions_b[m.j]).norm() < px_thresh {
                    correct += 1;
                }
            }
            Correspondence::Occluded => scored += 1,
            Correspondence::NoDepth => {}
        }
    }
    if scored == 0 {
        0.0
    } else {
        correct as f64 / scored as f64
    }
}

/// Transfer errors in pixels of every scorable match (occluded ones count
/// as infinitely wrong).
pub fn transfer_errors(
    matches: &[Match],
    pair: &ViewPair,
    positions_a: &[Vector2<f64>],
    positions_b: &[Vector2<f64>],
) -> Vec<f64> {
    matches
        .iter()
        .filter_map(|m| match pair.gt_correspondence(&positions_a[m.i]) {
            Correspondence::Visible(q) => Some((q - positions_b[m.j]).norm()),
            Correspondence::Occluded => Some(f64::INFINITY),
            Correspondence::NoDepth => None,
        })
        .collect()
}

/// Mean over integer thresholds `1..=max_px` of the fraction of errors
/// below the threshold, in percent. Empty input scores 0.
pub fn mean_average_accuracy(errors: &[f64], max_px: usize) -> f64 {
    if errors.is_empty() || max_px == 0 {
        return 0.0;
    }
    let n = errors.len() as f64;
    let total: f64 = (1..=max_px)
        .map(|t| errors.iter().filter(|&&e| e < t as f64).count() as f64 / n)
        .sum();
    100.0 * total / max_px as f64
}

/// Mean and normal-approximation 95% half-width over per-seed values.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}
