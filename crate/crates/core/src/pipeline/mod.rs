//! Descriptor network, attention matcher with early exit, and the
//! dual-softmax assignment head.

mod assign;
mod descriptor;
mod matcher;
mod params;

use std::fs;
use std::path::Path;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use assign::{assign, assign_scores, mutual_matches, AssignmentMatrix, Match, DEFAULT_TAU, SIMILARITY_TEMPERATURE};
pub use descriptor::{DescriptorConfig, DescriptorNet};
pub use matcher::{positional_features, MatcherConfig, MatcherNet, TokenInput};
pub use params::Params;

use crate::error::{Error, Result};
use crate::geometry::ViewPair;
use crate::tensor::checkpoint::write_atomic;
use crate::tensor::Tensor;

/// Keypoint locations of one image with their unit-norm descriptors (or
/// all-zero ones for patches the network does not respond to).
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    pub positions: Vec<Vector2<f64>>,
    /// `n × d`.
    pub descriptors: Tensor,
    pub image_size: (usize, usize),
}

impl KeypointSet {
    pub fn new(positions: Vec<Vector2<f64>>, descriptors: Tensor, image_size: (usize, usize)) -> Result<Self> {
        let s = Self {
            positions,
            descriptors,
            image_size,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.descriptors.shape();
        if shape.len() != 2 || shape[0] != self.positions.len() {
            return Err(Error::Dimension {
                op: "KeypointSet",
                lhs: shape.to_vec(),
                rhs: vec![self.positions.len()],
            });
        }
        let (w, h) = (self.image_size.0 as f64, self.image_size.1 as f64);
        if let Some(p) = self
            .positions
            .iter()
            .find(|p| !(p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h))
        {
            return Err(Error::contract(format!("keypoint ({}, {}) outside {w}×{h}", p.x, p.y)));
        }
        for i in 0..self.len() {
            let norm = self.descriptors.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            // A patch with no network response at all keeps a zero descriptor.
            if (norm - 1.0).abs() > 1e-9 && norm != 0.0 {
                return Err(Error::contract(format!("descriptor {i} has norm {norm}")));
            }
        }
        Ok(())
    }
}

/// Describes both images, runs the matcher up to `stop_layer` and assigns.
pub fn match_pair(
    desc: &DescriptorNet,
    matcher: &MatcherNet,
    pair: &ViewPair,
    positions_a: &[Vector2<f64>],
    positions_b: &[Vector2<f64>],
    stop_layer: usize,
    tau: f64,
) -> Result<AssignmentMatrix> {
    let ka = desc.describe(&pair.image_a, positions_a)?;
    let kb = desc.describe(&pair.image_b, positions_b)?;
    let outs = matcher.match_forward_until(&ka, &kb, stop_layer)?;
    let (da, db) = outs.last().expect("stop_layer ≥ 1 yields one output");
    assign(da, db, tau)
}

/// Architecture and provenance stored next to the weight files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub descriptor: DescriptorConfig,
    pub matcher: MatcherConfig,
    pub regime: String,
    pub descriptor_checksum: String,
    pub matcher_checksum: String,
}

pub const DESCRIPTOR_FILE: &str = "descriptor.rmt";
pub const MATCHER_FILE: &str = "matcher.rmt";
pub const SIDECAR_FILE: &str = "model.json";

/// A trained descriptor and matcher.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub descriptor: DescriptorNet,
    pub matcher: MatcherNet,
    pub regime: String,
}

impl Model {
    pub fn match_pair(
        &self,
        pair: &ViewPair,
        positions_a: &[Vector2<f64>],
        positions_b: &[Vector2<f64>],
        stop_layer: usize,
        tau: f64,
    ) -> Result<AssignmentMatrix> {
        match_pair(&self.descriptor, &self.matcher, pair, positions_a, positions_b, stop_layer, tau)
    }

    pub fn sidecar(&self) -> ModelSidecar {
        ModelSidecar {
            descriptor: self.descriptor.config.clone(),
            matcher: self.matcher.config.clone(),
            regime: self.regime.clone(),
            descriptor_checksum: self.descriptor.params.checksum(),
            matcher_checksum: self.matcher.params.checksum(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.descriptor.params.save(&dir.join(DESCRIPTOR_FILE))?;
        self.matcher.params.save(&dir.join(MATCHER_FILE))?;
        write_atomic(
            &dir.join(SIDECAR_FILE),
            serde_json::to_string_pretty(&self.sidecar())?.as_bytes(),
        )
    }

    /// Rebuilds both networks from the sidecar and loads their weights.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR_FILE);
        let sidecar: ModelSidecar = serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        // Initial values are overwritten; the RNG only shapes the tensors.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut descriptor = DescriptorNet::new(sidecar.descriptor, &mut rng)?;
        let mut matcher = MatcherNet::new(sidecar.matcher, &mut rng)?;
        descriptor.params.load_into(&dir.join(DESCRIPTOR_FILE))?;
        matcher.params.load_into(&dir.join(MATCHER_FILE))?;
        descriptor.params.set_trainable(false);
        matcher.params.set_trainable(false);
        Ok(Self {
            descriptor,
            matcher,
            regime: sidecar.regime,
        })
    }

    /// Errors when the stored architecture differs from the expected one.
    pub fn check_architecture(&self, descriptor: &DescriptorConfig, matcher: &MatcherConfig) -> Result<()> {
        if &self.descriptor.config != descriptor || &self.matcher.config != matcher {
            return Err(Error::Config(format!(
                "checkpoint architecture {:?} / {:?} does not match expected {:?} / {:?}",
                self.descriptor.config, self.matcher.config, descriptor, matcher
            )));
        }
        Ok(())
    }
}
