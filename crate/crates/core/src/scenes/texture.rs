//! Procedural albedo defined on the world XY plane.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    Checker,
    ValueNoise,
    Polygons,
}

#[derive(Clone, Debug, PartialEq)]
struct Polygon {
    vertices: Vec<(f64, f64)>,
    color: [f64; 3],
}

/// Albedo function `(x, y) ↦ rgb` for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    kind: TextureKind,
    salt: u64,
    cell: f64,
    colors: [[f64; 3]; 2],
    polygons: Vec<Polygon>,
}

fn mix(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

fn lattice(salt: u64, ix: i64, iy: i64, channel: u64) -> f64 {
    let h = mix(salt ^ mix((ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_add(channel << 48)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(salt: u64, x: f64, y: f64, channel: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let (ix, iy) = (fx as i64, fy as i64);
    let v00 = lattice(salt, ix, iy, channel);
    let v10 = lattice(salt, ix + 1, iy, channel);
    let v01 = lattice(salt, ix, iy + 1, channel);
    let v11 = lattice(salt, ix + 1, iy + 1, channel);
    let a = v00 + (v10 - v00) * tx;
    let b = v01 + (v11 - v01) * tx;
    a + (b - a) * ty
}

fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let n = poly.len();
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
    }
    hit
}

impl Texture {
    /// Draws a texture covering roughly `[-extent, extent]²`.
    pub fn sample<R: Rng + ?Sized>(kind: TextureKind, extent: f64, rng: &mut R) -> Self {
        let mut color = || [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let colors = [color(), color()];
        let salt = rng.random::<u64>();
        let cell = rng.random_range(0.08..0.16);
        let mut polygons = Vec::new();
        if kind == TextureKind::Polygons {
            let count = (90.0 * extent * extent).round() as usize;
            for _ in 0..count {
                let (cx, cy) = (rng.random_range(-extent..extent), rng.random_range(-extent..extent));
                let size = rng.random_range(0.04..0.18);
                let sides = rng.random_range(3..6);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let stretch = rng.random_range(0.4..1.0);
                let vertices = (0..sides)
                    .map(|k| {
                        let a = phase + std::f64::consts::TAU * k as f64 / sides as f64 + rng.random_range(-0.4..0.4);
                        let r = size * rng.random_range(0.6..1.0);
                        (cx + r * a.cos(), cy + stretch * r * a.sin())
                    })
                    .collect();
                polygons.push(Polygon {
                    vertices,
                    color: [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()],
                });
            }
        }
        Self {
            kind,
            salt,
            cell,
            colors,
            polygons,
        }
    }

    pub fn kind(&self) -> TextureKind {
        self.kind
    }

    pub fn color(&self, x: f64, y: f64) -> [f64; 3] {
        match self.kind {
            TextureKind::Checker => {
                let parity = ((x / self.cell).floor() as i64 + (y / self.cell).floor() as i64).rem_euclid(2);
                self.colors[parity as usize]
            }
            TextureKind::ValueNoise => self.noise(x, y),
            TextureKind::Polygons => {
                // Later polygons paint over earlier ones.
                for p in self.polygons.iter().rev() {
                    if inside(&p.vertices, x, y) {
                        return p.color;
                    }
                }
                let n = self.noise(x, y);
                [0.3 + 0.4 * n[0], 0.3 + 0.4 * n[1], 0.3 + 0.4 * n[2]]
            }
        }
    }

    fn noise(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let mut amp = 0.5;
            let mut freq = 1.0 / (2.0 * self.cell);
            let mut total = 0.0;
            for octave in 0..3u64 {
                total += amp;
                *o += amp * value_noise(self.salt.wrapping_add(octave), x * freq, y * freq, c as u64);
                amp *= 0.5;
                freq *= 2.0;
            }
            *o /= total;
        }
        out
    }
}
