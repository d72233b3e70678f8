//! Analytic scene surfaces. A surface answers exact ray casts, which makes
//! it the ground-truth correspondence oracle for a rendered pair.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::Camera;

/// Gaussian bump of a heightfield.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// `z = height` in world coordinates.
    Plane { height: f64 },
    /// `z = base + Σ amplitude · exp(−|p − μ|² / 2σ²)`.
    Heightfield { base: f64, bumps: Vec<Bump> },
}

const MARCH_STEPS: usize = 384;
const BISECT_STEPS: usize = 80;

impl Surface {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match self {
            Surface::Plane { height } => *height,
            Surface::Heightfield { base, bumps } => {
                base + bumps
                    .iter()
                    .map(|b| {
                        let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                        b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                    })
                    .sum::<f64>()
            }
        }
    }

    /// Upper bound on the gradient norm of the height function.
    fn slope_bound(&self) -> f64 {
        match self {
            Surface::Plane { .. } => 0.0,
            Surface::Heightfield { bumps, .. } => bumps
                .iter()
                .map(|b| b.amplitude.abs() / b.sigma * (-0.5f64).exp())
                .sum(),
        }
    }

    fn height_bounds(&self) -> (f64, f64) {
        match self {
            Surface::Plane { height } => (*height, *height),
            Surface::Heightfield { base, bumps } => {
                let lo = base + bumps.iter().map(|b| b.amplitude.min(0.0)).sum::<f64>();
                let hi = base + bumps.iter().map(|b| b.amplitude.max(0.0)).sum::<f64>();
                (lo, hi)
            }
        }
    }

    /// Camera-frame depth of the first surface hit along the ray through
    /// `pixel`, or `None` when the ray misses.
    pub fn cast(&self, camera: &Camera, pixel: &Vector2<f64>) -> Option<f64> {
        let origin = camera.center();
        // World direction scaled so that the parameter equals camera depth.
        let dir = camera.r.transpose() * camera.ray(pixel);
        let f = |s: f64| {
            let p: Vector3<f64> = origin + dir * s;
            p.z - self.height(p.x, p.y)
        };
        if let Surface::Plane { height } = self {
            if dir.z.abs() < 1e-15 {
                return None;
            }
            let s = (height - origin.z) / dir.z;
            return (s > 0.0).then_some(s);
        }
        let (lo, hi) = self.height_bounds();
        if dir.z.abs() < 1e-15 {
            return None;
        }
        // Parameter interval over which the ray lies inside the height slab.
        let (s_hi, s_lo) = ((hi - origin.z) / dir.z, (lo - origin.z) / dir.z);
        let (mut a, b) = (s_hi.min(s_lo).max(1e-9), s_hi.max(s_lo));
        if b <= a {
            return None;
        }
        // |d f / d s| ≤ lip, so a step of |f| / lip cannot pass a root; the
        // uniform step is the floor.
        let lip = dir.z.abs() + self.slope_bound() * dir.x.hypot(dir.y);
        let step = (b - a) / MARCH_STEPS as f64;
        let mut fa = f(a);
        let sign0 = fa.signum();
        if fa == 0.0 {
            return Some(a);
        }
        while a < b {
            let s = (a + step.max(fa.abs() / lip)).min(b);
            let fs = f(s);
            if fs == 0.0 {
                return Some(s);
            }
            if fs.signum() != sign0 {
                let (mut l, mut r) = (a, s);
                for _ in 0..BISECT_STEPS {
                    let m = 0.5 * (l + r);
                    let fm = f(m);
                    if fm == 0.0 {
                        return Some(m);
                    }
                    if fm.signum() == fa.signum() {
                        l = m;
                        fa = fm;
                    } else {
                        r = m;
                    }
                    if r - l <= 1e-15 * r.abs() {
                        break;
                    }
                }
                return Some(0.5 * (l + r));
            }
            a = s;
            fa = fs;
        }
        None
    }
}
