//! In-plane rotation augmentation of view pairs.
//!
//! Rotating an image by `α` counter-clockwise moves a continuous pixel `p`
//! to `pixel_map(p)`. The camera is rewritten so that projecting any world
//! point through the new camera equals `pixel_map` applied to its projection
//! through the old one: the in-plane turn is folded into the world-to-camera
//! rotation and the principal point moves with the image.

use nalgebra::{Matrix3, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::pair::ViewPair;
use super::raster::{DepthMap, Image};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationMode {
    QuarterTurn,
    Arbitrary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    Independent,
    Joint,
}

/// Angles (degrees, counter-clockwise) applied to the two images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub mode: RotationMode,
    pub sampling: Sampling,
}

impl RotationSpec {
    pub fn identity() -> Self {
        Self::quarter(0, 0)
    }

    pub fn quarter(alpha_a: u32, alpha_b: u32) -> Self {
        Self {
            alpha_a: alpha_a as f64,
            alpha_b: alpha_b as f64,
            mode: RotationMode::QuarterTurn,
            sampling: if alpha_a == alpha_b { Sampling::Joint } else { Sampling::Independent },
        }
    }

    /// Image A upright, image B turned by `alpha_b`.
    pub fn arbitrary(alpha_a: f64, alpha_b: f64) -> Self {
        Self {
            alpha_a,
            alpha_b,
            mode: RotationMode::Arbitrary,
            sampling: Sampling::Independent,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mode == RotationMode::QuarterTurn && self.alpha_a == 0.0 && self.alpha_b == 0.0
    }
}

/// Quarter-turn angles uniform over {0, 90, 180, 270}; joint sampling draws
/// one angle for both images.
pub fn sample_rotation<R: Rng + ?Sized>(rng: &mut R, sampling: Sampling) -> RotationSpec {
    let a = 90 * rng.random_range(0..4u32);
    let b = match sampling {
        Sampling::Joint => a,
        Sampling::Independent => 90 * rng.random_range(0..4u32),
    };
    RotationSpec {
        alpha_a: a as f64,
        alpha_b: b as f64,
        mode: RotationMode::QuarterTurn,
        sampling,
    }
}

/// Quarter turns as an index in 0..4.
fn quarter_index(alpha: f64) -> Result<usize> {
    let a = alpha.rem_euclid(360.0);
    for k in 0..4 {
        if a == 90.0 * k as f64 {
            return Ok(k);
        }
    }
    Err(Error::contract(format!("{alpha}° is not a quarter turn")))
}

/// Continuous pixel map of one rotated image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PixelMap {
    /// Quarter turn of a `width × height` image; the output frame is resized.
    Quarter { turns: usize, width: f64, height: f64 },
    /// Rotation about the image centre; the frame keeps its size.
    Center { cos: f64, sin: f64, cx: f64, cy: f64 },
}

impl PixelMap {
    pub fn quarter(alpha: f64, width: usize, height: usize) -> Result<Self> {
        Ok(PixelMap::Quarter {
            turns: quarter_index(alpha)?,
            width: width as f64,
            height: height as f64,
        })
    }

    pub fn about_center(alpha: f64, width: usize, height: usize) -> Self {
        let r = alpha.to_radians();
        PixelMap::Center {
            cos: r.cos(),
            sin: r.sin(),
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn for_spec(spec: &RotationSpec, alpha: f64, width: usize, height: usize) -> Result<Self> {
        match spec.mode {
            RotationMode::QuarterTurn => Self::quarter(alpha, width, height),
            RotationMode::Arbitrary => Ok(Self::about_center(alpha, width, height)),
        }
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        match *self {
            PixelMap::Quarter { turns, width, height } => match turns {
                0 => *p,
                1 => Vector2::new(p.y, width - p.x),
                2 => Vector2::new(width - p.x, height - p.y),
                _ => Vector2::new(height - p.y, p.x),
            },
            PixelMap::Center { cos, sin, cx, cy } => {
                let (dx, dy) = (p.x - cx, p.y - cy);
                Vector2::new(cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
            }
        }
    }

    pub fn inverse(&self) -> PixelMap {
        match *self {
            PixelMap::Quarter { turns, width, height } => {
                let (w, h) = if turns % 2 == 1 { (height, width) } else { (width, height) };
                PixelMap::Quarter {
                    turns: (4 - turns) % 4,
                    width: w,
                    height: h,
                }
            }
            PixelMap::Center { cos, sin, cx, cy } => PixelMap::Center { cos, sin: -sin, cx, cy },
        }
    }
}

/// Camera-frame rotation matching an in-plane image turn by `(cos, sin)`.
fn in_plane(cos: f64, sin: f64) -> Matrix3<f64> {
    Matrix3::new(cos, sin, 0.0, -sin, cos, 0.0, 0.0, 0.0, 1.0)
}

const QUARTER_COS_SIN: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];

fn rotate_camera_quarter(cam: &Camera, turns: usize) -> Camera {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (cos, sin) = QUARTER_COS_SIN[turns];
    let rz = in_plane(cos, sin);
    let (fx, fy, cx, cy, width, height) = match turns {
        0 => return cam.clone(),
        1 => (cam.fy, cam.fx, cam.cy, w - cam.cx, cam.height, cam.width),
        2 => (cam.fx, cam.fy, w - cam.cx, h - cam.cy, cam.width, cam.height),
        _ => (cam.fy, cam.fx, h - cam.cy, cam.cx, cam.height, cam.width),
    };
    Camera {
        fx,
        fy,
        cx,
        cy,
        r: rz * cam.r,
        t: rz * cam.t,
        width,
        height,
    }
}

/// Lossless array rotation of an interleaved `w × h × c` raster.
fn rotate_raster_quarter(data: &[f64], w: usize, h: usize, c: usize, turns: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let (nw, nh) = if turns % 2 == 1 { (h, w) } else { (w, h) };
    for ni in 0..nh {
        for nj in 0..nw {
            let (si, sj) = match turns {
                0 => (ni, nj),
                1 => (nj, w - 1 - ni),
                2 => (h - 1 - ni, w - 1 - nj),
                _ => (h - 1 - nj, ni),
            };
            let src = (si * w + sj) * c;
            let dst = (ni * nw + nj) * c;
            out[dst..dst + c].copy_from_slice(&data[src..src + c]);
        }
    }
    out
}

/// Image turned counterclockwise by `turns` quarter turns.
pub fn rotate_image_quarter(img: &Image, turns: usize) -> Image {
    let turns = turns % 4;
    let (width, height) = if turns % 2 == 1 { (img.height, img.width) } else { (img.width, img.height) };
    Image {
        width,
        height,
        channels: img.channels,
        data: rotate_raster_quarter(&img.data, img.width, img.height, img.channels, turns),
    }
}

fn rotate_view_quarter(img: &Image, depth: &DepthMap, cam: &Camera, turns: usize) -> (Image, DepthMap, Camera) {
    let cam2 = rotate_camera_quarter(cam, turns);
    let img2 = Image {
        width: cam2.width,
        height: cam2.height,
        channels: img.channels,
        data: rotate_raster_quarter(&img.data, img.width, img.height, img.channels, turns),
    };
    let depth2 = DepthMap {
        width: cam2.width,
        height: cam2.height,
        data: rotate_raster_quarter(&depth.data, depth.width, depth.height, 1, turns),
    };
    (img2, depth2, cam2)
}

/// Lossless quarter-turn rotation of both views.
pub fn rotate_quarter(pair: &ViewPair, spec: &RotationSpec) -> Result<ViewPair> {
    if spec.mode != RotationMode::QuarterTurn {
        return Err(Error::contract("rotate_quarter needs a quarter-turn spec"));
    }
    let ta = quarter_index(spec.alpha_a)?;
    let tb = quarter_index(spec.alpha_b)?;
    let (image_a, depth_a, camera_a) = rotate_view_quarter(&pair.image_a, &pair.depth_a, &pair.camera_a, ta);
    let (image_b, depth_b, camera_b) = rotate_view_quarter(&pair.image_b, &pair.depth_b, &pair.camera_b, tb);
    Ok(ViewPair {
        image_a,
        image_b,
        depth_a,
        depth_b,
        camera_a,
        camera_b,
        pair_id: pair.pair_id.clone(),
        surface: pair.surface.clone(),
    })
}

/// Arbitrary-angle output plus the inscribed-circle validity masks.
#[derive(Clone, Debug)]
pub struct MaskedPair {
    pub pair: ViewPair,
    pub valid_a: Vec<bool>,
    pub valid_b: Vec<bool>,
}

/// Value written outside the inscribed circle.
pub const FILL_VALUE: f64 = 0.0;

fn rotate_view_arbitrary(
    img: &Image,
    depth: &DepthMap,
    cam: &Camera,
    alpha: f64,
) -> Result<(Image, DepthMap, Camera, Vec<bool>)> {
    if (cam.fx - cam.fy).abs() > 1e-12 * cam.fx {
        return Err(Error::contract("arbitrary rotation requires square pixels (fx == fy)"));
    }
    let (w, h) = (cam.width, cam.height);
    let map = PixelMap::about_center(alpha, w, h);
    let inv = map.inverse();
    let PixelMap::Center { cos, sin, cx: ox, cy: oy } = map else {
        unreachable!("about_center builds a centre map")
    };
    let radius = w.min(h) as f64 / 2.0;
    let mut img2 = Image::new(w, h, img.channels);
    let mut depth2 = DepthMap::new(w, h);
    let mut valid = vec![false; w * h];
    let mut px = vec![0.0; img.channels];
    for i in 0..h {
        for j in 0..w {
            let q = Vector2::new(j as f64 + 0.5, i as f64 + 0.5);
            let inside = (q.x - ox).hypot(q.y - oy) <= radius;
            if !inside {
                img2.pixel_mut(j, i).fill(FILL_VALUE);
                continue;
            }
            valid[i * w + j] = true;
            let p = inv.apply(&q);
            img.sample_bilinear(p.x, p.y, &mut px);
            img2.pixel_mut(j, i).copy_from_slice(&px);
            depth2.data[i * w + j] = depth.at(p.x, p.y);
        }
    }
    let rz = in_plane(cos, sin);
    let c = map.apply(&Vector2::new(cam.cx, cam.cy));
    let cam2 = Camera {
        fx: cam.fx,
        fy: cam.fy,
        cx: c.x,
        cy: c.y,
        r: rz * cam.r,
        t: rz * cam.t,
        width: w,
        height: h,
    };
    Ok((img2, depth2, cam2, valid))
}

/// Resampled rotation about each image centre. Images are bilinear, depth is
/// nearest-neighbour, and both views are cropped to the inscribed circle at
/// every angle (including zero).
pub fn rotate_arbitrary(pair: &ViewPair, spec: &RotationSpec) -> Result<MaskedPair> {
    if spec.mode != RotationMode::Arbitrary {
        return Err(Error::contract("rotate_arbitrary needs an arbitrary-mode spec"));
    }
    let (image_a, depth_a, camera_a, valid_a) =
        rotate_view_arbitrary(&pair.image_a, &pair.depth_a, &pair.camera_a, spec.alpha_a)?;
    let (image_b, depth_b, camera_b, valid_b) =
        rotate_view_arbitrary(&pair.image_b, &pair.depth_b, &pair.camera_b, spec.alpha_b)?;
    Ok(MaskedPair {
        pair: ViewPair {
            image_a,
            image_b,
            depth_a,
            depth_b,
            camera_a,
            camera_b,
            pair_id: pair.pair_id.clone(),
            surface: pair.surface.clone(),
        },
        valid_a,
        valid_b,
    })
}

/// Dispatches on the spec's mode.
pub fn rotate(pair: &ViewPair, spec: &RotationSpec) -> Result<ViewPair> {
    match spec.mode {
        RotationMode::QuarterTurn => rotate_quarter(pair, spec),
        RotationMode::Arbitrary => rotate_arbitrary(pair, spec).map(|m| m.pair),
    }
}

/// Pixel maps of image A and image B under `spec`, using the pair's
/// original image sizes.
pub fn pixel_maps(pair: &ViewPair, spec: &RotationSpec) -> Result<(PixelMap, PixelMap)> {
    Ok((
        PixelMap::for_spec(spec, spec.alpha_a, pair.camera_a.width, pair.camera_a.height)?,
        PixelMap::for_spec(spec, spec.alpha_b, pair.camera_b.width, pair.camera_b.height)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quarter_maps_compose_to_identity() {
        let p = Vector2::new(3.25, 7.5);
        let mut q = p;
        let (mut w, mut h) = (80usize, 60usize);
        for _ in 0..4 {
            q = PixelMap::quarter(90.0, w, h).unwrap().apply(&q);
            std::mem::swap(&mut w, &mut h);
        }
        assert_eq!(q, p);
    }

    #[test]
    fn inverse_undoes_map() {
        for turns in 0..4 {
            let m = PixelMap::quarter(90.0 * turns as f64, 80, 60).unwrap();
            let p = Vector2::new(12.0, 41.5);
            assert_eq!(m.inverse().apply(&m.apply(&p)), p);
        }
        let m = PixelMap::about_center(37.0, 64, 64);
        let p = Vector2::new(12.0, 41.5);
        assert!((m.inverse().apply(&m.apply(&p)) - p).norm() < 1e-12);
    }

    #[test]
    fn non_quarter_angle_is_rejected() {
        assert!(quarter_index(45.0).is_err());
        assert_eq!(quarter_index(-90.0).unwrap(), 3);
    }

    #[test]
    fn joint_sampling_repeats_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let s = sample_rotation(&mut rng, Sampling::Joint);
            assert_eq!(s.alpha_a, s.alpha_b);
        }
    }
}
