use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera. Pixel coordinates are continuous with the origin at the
/// top-left image corner, so pixel `(col, row)` covers `[col, col+1) × [row, row+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let should_be_eye = self.r.transpose() * self.r - Matrix3::identity();
        if should_be_eye.abs().max() > 1e-9 || (self.r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::contract("camera rotation is not a proper rotation"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::contract("focal lengths must be positive"));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::contract(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    pub fn to_camera_frame(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.r * world + self.t
    }

    /// World point to (pixel, camera-frame depth).
    pub fn project(&self, world: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let p = self.to_camera_frame(world);
        if p.z <= 0.0 {
            return Err(Error::BehindCamera { z: p.z });
        }
        Ok((
            Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy),
            p.z,
        ))
    }

    /// Camera-frame ray through `pixel`, scaled to unit depth.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    /// Pixel normalised by the intrinsics (the first two ray components).
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        let r = self.ray(pixel);
        Vector2::new(r.x, r.y)
    }

    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::InvalidDepth { depth });
        }
        let cam = self.ray(pixel) * depth;
        Ok(self.r.transpose() * (cam - self.t))
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

/// Relative pose taking camera-a coordinates to camera-b coordinates, with
/// the translation reported as a unit direction when nonzero.
pub fn relative_pose(camera_a: &Camera, camera_b: &Camera) -> (Matrix3<f64>, Vector3<f64>) {
    let r_ab = camera_b.r * camera_a.r.transpose();
    let t_ab = camera_b.t - r_ab * camera_a.t;
    let n = t_ab.norm();
    (r_ab, if n > 0.0 { t_ab / n } else { t_ab })
}

/// JSON form used in `cameras.json`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 3×3.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = c.r[(i, j)];
            }
        }
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            r,
            t: [c.t.x, c.t.y, c.t.z],
            width: c.width,
            height: c.height,
        }
    }
}

impl From<&CameraRecord> for Camera {
    fn from(c: &CameraRecord) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            r: Matrix3::from_row_slice(&c.r),
            t: Vector3::from_column_slice(&c.t),
            width: c.width,
            height: c.height,
        }
    }
}

/// Rotation matrix from an axis and an angle in radians.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Angle of a rotation matrix in degrees, clamped against round-off.
pub fn rotation_angle_deg(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}
