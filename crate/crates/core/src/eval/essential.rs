use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Camera;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub max_iters: usize,
    /// Sampson distance threshold, in normalised image coordinates for the
    /// essential matrix and in pixels for homographies.
    pub threshold: f64,
    /// Early termination once an all-inlier sample has been drawn with this
    /// probability.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            threshold: 1e-3,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

/// Iterations needed to draw one clean `sample_size` sample at `confidence`.
pub(crate) fn needed_iters(inlier_ratio: f64, sample_size: usize, confidence: f64) -> f64 {
    let good = inlier_ratio.powi(sample_size as i32);
    if good >= 1.0 {
        return 1.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - good).ln()).ceil()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEstimate {
    pub r: Matrix3<f64>,
    /// Unit direction.
    pub t: Vector3<f64>,
    pub e: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

impl PoseEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Similarity moving the centroid to the origin with mean distance √2.
pub(crate) fn hartley(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

pub(crate) fn apply(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let h = t * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(h.x / h.z, h.y / h.z)
}

/// Right singular vector of the smallest singular value of a `rows × 9`
/// system; rows are zero-padded to at least nine so the full basis exists.
pub(crate) fn null_vector(rows: &[[f64; 9]]) -> Option<[f64; 9]> {
    let n = rows.len().max(9);
    let mut a = DMatrix::zeros(n, 9);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..9 {
            a[(i, j)] = r[j];
        }
    }
    let svd = a.try_svd(false, true, 1e-15, 0)?;
    let v_t = svd.v_t?;
    let k = svd.singular_values.imin();
    let v: [f64; 9] = std::array::from_fn(|j| v_t[(k, j)]);
    v.iter().all(|x| x.is_finite()).then_some(v)
}

/// Nearest matrix with singular values `(1, 1, 0)`.
fn project_essential(e: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = e.try_svd(true, true, 1e-15, 0)?;
    let (u, v_t) = (svd.u?, svd.v_t?);
    Some(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t)
}

/// Normalised eight-point estimate from normalised image coordinates,
/// projected onto the essential manifold. Needs at least eight points.
pub fn eight_point(xa: &[Vector2<f64>], xb: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if xa.len() < 8 || xa.len() != xb.len() {
        return None;
    }
    let (ta, tb) = (hartley(xa), hartley(xb));
    let rows: Vec<[f64; 9]> = xa
        .iter()
        .zip(xb)
        .map(|(p, q)| {
            let (a, b) = (apply(&ta, p), apply(&tb, q));
            [
                b.x * a.x,
                b.x * a.y,
                b.x,
                b.y * a.x,
                b.y * a.y,
                b.y,
                a.x,
                a.y,
                1.0,
            ]
        })
        .collect();
    let h = null_vector(&rows)?;
    let e_n = Matrix3::from_row_slice(&h);
    let e = tb.transpose() * e_n * ta;
    let e = project_essential(&e)?;
    let norm = e.norm();
    (norm > 0.0 && norm.is_finite()).then(|| e / norm * std::f64::consts::SQRT_2)
}

/// First-order geometric distance of a correspondence to `E`.
pub fn sampson_distance(e: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let xa = Vector3::new(a.x, a.y, 1.0);
    let xb = Vector3::new(b.x, b.y, 1.0);
    let ea = e * xa;
    let etb = e.transpose() * xb;
    let num = xb.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num.abs() / den.sqrt()
}

fn inlier_mask(e: &Matrix3<f64>, xa: &[Vector2<f64>], xb: &[Vector2<f64>], thresh: f64) -> Vec<bool> {
    xa.iter().zip(xb).map(|(a, b)| sampson_distance(e, a, b) < thresh).collect()
}

/// Depths `(λa, λb)` with `λb·x̂b ≈ λa·R·x̂a + t` in the least-squares sense.
fn triangulate_depths(r: &Matrix3<f64>, t: &Vector3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> Option<(f64, f64)> {
    let p = r * Vector3::new(a.x, a.y, 1.0);
    let q = Vector3::new(b.x, b.y, 1.0);
    // Normal equations of [p, −q]·[λa, λb]ᵀ = −t.
    let (pp, pq, qq) = (p.dot(&p), p.dot(&q), q.dot(&q));
    let (pt, qt) = (p.dot(t), q.dot(t));
    let det = pp * qq - pq * pq;
    if det.abs() < 1e-14 * pp * qq {
        return None;
    }
    let la = (-pt * qq + pq * qt) / det;
    let lb = (pp * qt - pq * pt) / det;
    Some((la, lb))
}

/// The four `(R, t)` factorisations of `E`, with `t` of unit length.
pub fn decompose_essential(e: &Matrix3<f64>) -> Option<[(Matrix3<f64>, Vector3<f64>); 4]> {
    let svd = e.try_svd(true, true, 1e-15, 0)?;
    let (mut u, mut v_t) = (svd.u?, svd.v_t?);
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into();
    Some([(r1, t), (r1, -t), (r2, t), (r2, -t)])
}

/// Candidate with the most points in front of both cameras.
pub fn disambiguate(
    e: &Matrix3<f64>,
    xa: &[Vector2<f64>],
    xb: &[Vector2<f64>],
    mask: &[bool],
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let cands = decompose_essential(e)?;
    cands
        .into_iter()
        .map(|(r, t)| {
            let front = xa
                .iter()
                .zip(xb)
                .zip(mask)
                .filter(|(_, &m)| m)
                .filter(|((a, b), _)| {
                    triangulate_depths(&r, &t, a, b).is_some_and(|(la, lb)| la > 0.0 && lb > 0.0)
                })
                .count();
            (front, r, t)
        })
        // First maximum wins so ties resolve deterministically.
        .fold(None, |best: Option<(usize, Matrix3<f64>, Vector3<f64>)>, c| match best {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        })
        .map(|(_, r, t)| (r, t))
}

/// Essential-matrix RANSAC on pixel correspondences. `None` is the failure
/// sentinel: fewer than eight matches or no usable model.
pub fn estimate_essential_ransac(
    pts_a: &[Vector2<f64>],
    pts_b: &[Vector2<f64>],
    camera_a: &Camera,
    camera_b: &Camera,
    config: &RansacConfig,
) -> Option<PoseEstimate> {
    let n = pts_a.len();
    if n < 8 || n != pts_b.len() {
        return None;
    }
    let xa: Vec<Vector2<f64>> = pts_a.iter().map(|p| camera_a.normalize(p)).collect();
    let xb: Vec<Vector2<f64>> = pts_b.iter().map(|p| camera_b.normalize(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, Matrix3<f64>)> = None;
    let mut limit = config.max_iters as f64;
    let mut iter = 0;
    let mut sa = Vec::with_capacity(8);
    let mut sb = Vec::with_capacity(8);
    while (iter as f64) < limit.min(config.max_iters as f64) {
        iter += 1;
        sa.clear();
        sb.clear();
        for k in sample(&mut rng, n, 8) {
            sa.push(xa[k]);
            sb.push(xb[k]);
        }
        let Some(e) = eight_point(&sa, &sb) else { continue };
        let count = xa
            .iter()
            .zip(&xb)
            .filter(|(a, b)| sampson_distance(&e, a, b) < config.threshold)
            .count();
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, e));
            limit = needed_iters(count as f64 / n as f64, 8, config.confidence);
        }
    }
    let (count, mut e) = best?;
    let mut mask = inlier_mask(&e, &xa, &xb, config.threshold);
    if count >= 8 {
        let (ia, ib): (Vec<_>, Vec<_>) = xa
            .iter()
            .zip(&xb)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (*a, *b))
            .unzip();
        if let Some(refined) = eight_point(&ia, &ib) {
            let refined_mask = inlier_mask(&refined, &xa, &xb, config.threshold);
            if refined_mask.iter().filter(|&&m| m).count() >= count {
                e = refined;
                mask = refined_mask;
            }
        }
    }
    let (r, t) = disambiguate(&e, &xa, &xb, &mask)?;
    Some(PoseEstimate { r, t, e, inliers: mask })
}

/// `[t]ₓ·R`.
pub fn essential_from_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    t.cross_matrix() * r
}
