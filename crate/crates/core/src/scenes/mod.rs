//! Synthetic two-view scenes with exact ground truth.
//!
//! A scene is a textured plane or heightfield seen by two pinhole cameras.
//! Depth comes from ray casting, so correspondences are exact, and every
//! pair draws from its own RNG stream derived from `(seed, index)`.

mod dataset;
mod generate;
mod keypoints;
mod texture;

pub use dataset::{build_dataset, subset_size, Dataset, SceneManifest};
pub use generate::{
    covisibility, generate_indexed, generate_pair, identity_pair, pair_rng, render, GeometryKind, SceneConfig,
    MAX_ATTEMPTS, MIN_COVISIBILITY,
};
pub use keypoints::{
    gt_matches, sample_keypoints, KeypointSample, DEFAULT_MATCHED_RATIO, EXCLUSION_RADIUS, GT_MATCH_THRESHOLD,
};
pub use texture::{Texture, TextureKind};
