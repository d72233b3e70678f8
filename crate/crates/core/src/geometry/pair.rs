use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::camera::{Camera, CameraRecord};
use super::raster::{DepthMap, Image};
use super::surface::Surface;
use crate::error::{Error, Result};
use crate::tensor::checkpoint::write_atomic;

/// Relative depth disagreement beyond which a reprojected point is
/// considered hidden in the other view.
pub const OCCLUSION_TOLERANCE: f64 = 0.02;

/// Two rendered views of one scene with exact ground truth.
#[derive(Clone, Debug)]
pub struct ViewPair {
    pub image_a: Image,
    pub image_b: Image,
    pub depth_a: DepthMap,
    pub depth_b: DepthMap,
    pub camera_a: Camera,
    pub camera_b: Camera,
    pub pair_id: String,
    /// Analytic scene surface, when known. Correspondences then use exact
    /// ray casts instead of depth-map lookups.
    pub surface: Option<Arc<Surface>>,
}

/// Outcome of transferring a pixel from image A to image B.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Correspondence {
    Visible(Vector2<f64>),
    Occluded,
    NoDepth,
}

impl Correspondence {
    pub fn visible(self) -> Option<Vector2<f64>> {
        match self {
            Correspondence::Visible(p) => Some(p),
            _ => None,
        }
    }
}

impl ViewPair {
    pub fn validate(&self) -> Result<()> {
        for (img, depth, cam, side) in [
            (&self.image_a, &self.depth_a, &self.camera_a, "a"),
            (&self.image_b, &self.depth_b, &self.camera_b, "b"),
        ] {
            cam.validate()?;
            if (img.width, img.height) != (cam.width, cam.height)
                || (depth.width, depth.height) != (cam.width, cam.height)
            {
                return Err(Error::contract(format!(
                    "view {side}: image/depth/camera sizes disagree"
                )));
            }
        }
        Ok(())
    }

    /// The same pair seen from B to A.
    pub fn swapped(&self) -> ViewPair {
        ViewPair {
            image_a: self.image_b.clone(),
            image_b: self.image_a.clone(),
            depth_a: self.depth_b.clone(),
            depth_b: self.depth_a.clone(),
            camera_a: self.camera_b.clone(),
            camera_b: self.camera_a.clone(),
            pair_id: format!("{}-swapped", self.pair_id),
            surface: self.surface.clone(),
        }
    }

    fn depth_along(&self, camera: &Camera, depth: &DepthMap, pixel: &Vector2<f64>) -> Option<f64> {
        let stored = depth.at(pixel.x, pixel.y);
        if !(stored > 0.0) {
            return None;
        }
        match &self.surface {
            Some(s) => s.cast(camera, pixel),
            None => Some(stored),
        }
    }

    /// Ground-truth transfer of `pixel_a` into image B.
    ///
    /// Pixels outside image A, without depth at either end, or projecting
    /// outside image B report [`Correspondence::NoDepth`].
    pub fn gt_correspondence(&self, pixel_a: &Vector2<f64>) -> Correspondence {
        if !self.camera_a.contains(pixel_a) {
            return Correspondence::NoDepth;
        }
        let Some(d_a) = self.depth_along(&self.camera_a, &self.depth_a, pixel_a) else {
            return Correspondence::NoDepth;
        };
        let Ok(world) = self.camera_a.unproject(pixel_a, d_a) else {
            return Correspondence::NoDepth;
        };
        let Ok((q, z_b)) = self.camera_b.project(&world) else {
            return Correspondence::NoDepth;
        };
        if !self.camera_b.contains(&q) {
            return Correspondence::NoDepth;
        }
        let Some(observed) = self.depth_along(&self.camera_b, &self.depth_b, &q) else {
            return Correspondence::NoDepth;
        };
        if (z_b - observed).abs() > OCCLUSION_TOLERANCE * observed {
            return Correspondence::Occluded;
        }
        Correspondence::Visible(q)
    }

    /// Writes `image_{a,b}.ppm`, `depth_{a,b}.bin`, `cameras.json` and, when
    /// the surface is known, `surface.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.image_a.save_ppm(&dir.join("image_a.ppm"))?;
        self.image_b.save_ppm(&dir.join("image_b.ppm"))?;
        self.depth_a.save(&dir.join("depth_a.bin"))?;
        self.depth_b.save(&dir.join("depth_b.bin"))?;
        let cams = CamerasFile {
            pair_id: self.pair_id.clone(),
            camera_a: (&self.camera_a).into(),
            camera_b: (&self.camera_b).into(),
        };
        write_atomic(&dir.join("cameras.json"), serde_json::to_string_pretty(&cams)?.as_bytes())?;
        if let Some(s) = &self.surface {
            write_atomic(&dir.join("surface.json"), serde_json::to_string_pretty(s.as_ref())?.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cams_path = dir.join("cameras.json");
        let cams: CamerasFile =
            serde_json::from_slice(&fs::read(&cams_path).map_err(|e| Error::io(&cams_path, e))?)?;
        let surface_path = dir.join("surface.json");
        let surface = if surface_path.exists() {
            let bytes = fs::read(&surface_path).map_err(|e| Error::io(&surface_path, e))?;
            Some(Arc::new(serde_json::from_slice::<Surface>(&bytes)?))
        } else {
            None
        };
        let pair = ViewPair {
            image_a: Image::load_ppm(&dir.join("image_a.ppm"))?,
            image_b: Image::load_ppm(&dir.join("image_b.ppm"))?,
            depth_a: DepthMap::load(&dir.join("depth_a.bin"))?,
            depth_b: DepthMap::load(&dir.join("depth_b.bin"))?,
            camera_a: (&cams.camera_a).into(),
            camera_b: (&cams.camera_b).into(),
            pair_id: cams.pair_id,
            surface,
        };
        pair.validate()?;
        Ok(pair)
    }
}

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    pair_id: String,
    camera_a: CameraRecord,
    camera_b: CameraRecord,
}
