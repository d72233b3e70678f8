//! Pinhole cameras, depth-based ground truth and rotation augmentation.

mod camera;
mod pair;
mod raster;
mod rotation;
mod surface;

pub use camera::{axis_angle, relative_pose, rotation_angle_deg, Camera, CameraRecord};
pub use pair::{Correspondence, ViewPair, OCCLUSION_TOLERANCE};
pub use raster::{DepthMap, Image, DEPTH_MAGIC};
pub use rotation::{
    pixel_maps, rotate, rotate_arbitrary, rotate_image_quarter, rotate_quarter, sample_rotation, MaskedPair, PixelMap, RotationMode,
    RotationSpec, Sampling, FILL_VALUE,
};
pub use surface::{Bump, Surface};
