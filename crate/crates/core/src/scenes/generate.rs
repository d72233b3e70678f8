use std::sync::Arc;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::texture::{Texture, TextureKind};
use crate::error::{Error, Result};
use crate::geometry::{axis_angle, Bump, Camera, Correspondence, DepthMap, Image, Surface, ViewPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    Plane,
    Heightfield,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_scenes: usize,
    pub image_size: usize,
    pub texture: TextureKind,
    pub geometry: GeometryKind,
    /// Camera baseline as a fraction of the camera height above the surface.
    pub baseline_range: (f64, f64),
    /// Maximum out-of-plane viewpoint change between the two cameras, degrees.
    pub rotation_range_3d: f64,
    /// Focal length as a multiple of the image size.
    pub focal_scale: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_scenes: 200,
            image_size: 128,
            texture: TextureKind::Polygons,
            geometry: GeometryKind::Heightfield,
            baseline_range: (0.1, 0.35),
            rotation_range_3d: 20.0,
            focal_scale: 1.0,
            seed: 0,
        }
    }
}

/// Minimum fraction of image A that must be visible in image B.
pub const MIN_COVISIBILITY: f64 = 0.3;
pub const MAX_ATTEMPTS: usize = 100;

/// Independent RNG stream for one pair of a seeded dataset.
pub fn pair_rng(seed: u64, pair_index: usize) -> ChaCha8Rng {
    let mut s = ChaCha8Rng::seed_from_u64(seed);
    s.set_stream(pair_index as u64 + 1);
    s
}

/// Rotation whose rows are the camera axes expressed in world coordinates,
/// looking along `forward` with image-down close to `down_hint`.
fn look_rotation(forward: Vector3<f64>, down_hint: Vector3<f64>) -> Matrix3<f64> {
    let z = forward.normalize();
    let x = down_hint.cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn camera_at(center: Vector3<f64>, r: Matrix3<f64>, size: usize, focal: f64) -> Camera {
    Camera {
        fx: focal,
        fy: focal,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        r,
        t: -(r * center),
        width: size,
        height: size,
    }
}

fn sample_surface<R: Rng + ?Sized>(kind: GeometryKind, rng: &mut R) -> Surface {
    match kind {
        GeometryKind::Plane => Surface::Plane { height: 0.0 },
        GeometryKind::Heightfield => {
            let n = rng.random_range(6..11);
            let bumps = (0..n)
                .map(|_| Bump {
                    x: rng.random_range(-1.2..1.2),
                    y: rng.random_range(-1.2..1.2),
                    sigma: rng.random_range(0.18..0.45),
                    amplitude: rng.random_range(-0.35..0.35),
                })
                .collect();
            Surface::Heightfield { base: 0.0, bumps }
        }
    }
}

fn sample_cameras<R: Rng + ?Sized>(config: &SceneConfig, rng: &mut R) -> (Camera, Camera) {
    let size = config.image_size;
    let focal = config.focal_scale * size as f64;
    let height = rng.random_range(2.0..2.6);
    let yaw = rng.random_range(-10f64..10.0).to_radians();
    let down = Vector3::new(-yaw.sin(), -yaw.cos(), 0.0);
    let half = config.rotation_range_3d.to_radians() / 2.0;

    let center_a = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), height);
    let tilt_axis = axis_angle(Vector3::z(), rng.random_range(0.0..std::f64::consts::TAU)) * Vector3::x();
    let forward_a = axis_angle(tilt_axis, rng.random_range(0.0..=half)) * -Vector3::z();
    let r_a = look_rotation(forward_a, down);
    let target = center_a + forward_a * (height / -forward_a.z);

    let dir = rng.random_range(0.0..std::f64::consts::TAU);
    let (lo, hi) = config.baseline_range;
    let baseline = height * rng.random_range(lo..=hi.max(lo));
    let center_b = center_a
        + Vector3::new(dir.cos(), dir.sin(), 0.0) * baseline
        + Vector3::new(0.0, 0.0, rng.random_range(-0.15..0.15));
    let jitter = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
    let forward_b = target + jitter - center_b;
    let roll = axis_angle(forward_b, rng.random_range(-half / 2.0..=half / 2.0));
    let r_b = look_rotation(forward_b, roll * down);
    (camera_at(center_a, r_a, size, focal), camera_at(center_b, r_b, size, focal))
}

/// Renders albedo and exact depth by casting one ray per pixel centre.
/// Colours are quantised to 8 bits so that PPM files round-trip exactly.
pub fn render(camera: &Camera, surface: &Surface, texture: &Texture) -> (Image, DepthMap) {
    let (w, h) = (camera.width, camera.height);
    let mut img = Image::new(w, h, 3);
    let mut depth = DepthMap::new(w, h);
    for row in 0..h {
        for col in 0..w {
            let px = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
            let Some(d) = surface.cast(camera, &px) else { continue };
            let p = camera.unproject(&px, d).expect("positive cast depth");
            depth.data[row * w + col] = d;
            let c = texture.color(p.x, p.y);
            for (o, v) in img.pixel_mut(col, row).iter_mut().zip(c) {
                *o = (v * 255.0).round() / 255.0;
            }
        }
    }
    (img, depth)
}

/// Smaller of the two directional overlaps: the fraction of a coarse pixel
/// grid of one image with a visible match in the other.
pub fn covisibility(pair: &ViewPair) -> f64 {
    directional_overlap(pair).min(directional_overlap(&pair.swapped()))
}

fn directional_overlap(pair: &ViewPair) -> f64 {
    let grid = 16;
    let mut hits = 0;
    for i in 0..grid {
        for j in 0..grid {
            let p = Vector2::new(
                (j as f64 + 0.5) * pair.camera_a.width as f64 / grid as f64,
                (i as f64 + 0.5) * pair.camera_a.height as f64 / grid as f64,
            );
            if matches!(pair.gt_correspondence(&p), Correspondence::Visible(_)) {
                hits += 1;
            }
        }
    }
    hits as f64 / (grid * grid) as f64
}

/// Samples cameras until the co-visibility floor is met, then renders.
pub fn generate_pair<R: Rng + ?Sized>(config: &SceneConfig, pair_id: &str, rng: &mut R) -> Result<ViewPair> {
    let surface = Arc::new(sample_surface(config.geometry, rng));
    let texture = Texture::sample(config.texture, 2.0, rng);
    for _ in 0..MAX_ATTEMPTS {
        let (camera_a, camera_b) = sample_cameras(config, rng);
        let probe = ViewPair {
            image_a: Image::new(0, 0, 3),
            image_b: Image::new(0, 0, 3),
            depth_a: DepthMap {
                width: camera_a.width,
                height: camera_a.height,
                data: vec![1.0; camera_a.width * camera_a.height],
            },
            depth_b: DepthMap {
                width: camera_b.width,
                height: camera_b.height,
                data: vec![1.0; camera_b.width * camera_b.height],
            },
            camera_a: camera_a.clone(),
            camera_b: camera_b.clone(),
            pair_id: pair_id.to_string(),
            surface: Some(surface.clone()),
        };
        if covisibility(&probe) < MIN_COVISIBILITY {
            continue;
        }
        let (image_a, depth_a) = render(&camera_a, &surface, &texture);
        let (image_b, depth_b) = render(&camera_b, &surface, &texture);
        return Ok(ViewPair {
            image_a,
            image_b,
            depth_a,
            depth_b,
            camera_a,
            camera_b,
            pair_id: pair_id.to_string(),
            surface: Some(surface),
        });
    }
    Err(Error::Generation(format!(
        "pair {pair_id}: co-visibility below {MIN_COVISIBILITY} after {MAX_ATTEMPTS} attempts"
    )))
}

/// Pair `index` of the dataset described by `config`.
pub fn generate_indexed(config: &SceneConfig, index: usize) -> Result<ViewPair> {
    generate_pair(config, &format!("{:05}", index), &mut pair_rng(config.seed, index))
}

/// Two copies of one rendered view; every pixel corresponds to itself.
pub fn identity_pair(config: &SceneConfig, index: usize) -> Result<ViewPair> {
    let p = generate_indexed(config, index)?;
    Ok(ViewPair {
        image_b: p.image_a.clone(),
        depth_b: p.depth_a.clone(),
        camera_b: p.camera_a.clone(),
        pair_id: format!("{}-identity", p.pair_id),
        ..p
    })
}
