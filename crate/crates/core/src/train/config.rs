use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Sampling;
use crate::pipeline::{DescriptorConfig, MatcherConfig, DEFAULT_TAU};
use crate::scenes::{GeometryKind, SceneConfig, DEFAULT_MATCHED_RATIO};

/// Where quarter-turn augmentation is applied during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "norot")]
    NoRot,
    #[serde(rename = "rotmatch")]
    RotMatch,
    #[serde(rename = "rotdescmatch")]
    RotDescMatch,
    #[serde(rename = "jointdesc-rotmatch")]
    JointDescRotMatch,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::NoRot,
        Regime::RotMatch,
        Regime::RotDescMatch,
        Regime::JointDescRotMatch,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Regime::NoRot => "norot",
            Regime::RotMatch => "rotmatch",
            Regime::RotDescMatch => "rotdescmatch",
            Regime::JointDescRotMatch => "jointdesc-rotmatch",
        }
    }

    /// Rotation sampling inside the descriptor loop, if any.
    pub fn descriptor_rotation(self) -> Option<Sampling> {
        match self {
            Regime::NoRot | Regime::RotMatch => None,
            Regime::RotDescMatch => Some(Sampling::Independent),
            Regime::JointDescRotMatch => Some(Sampling::Joint),
        }
    }

    /// Rotation sampling inside the matcher loop, if any.
    pub fn matcher_rotation(self) -> Option<Sampling> {
        match self {
            Regime::NoRot => None,
            _ => Some(Sampling::Independent),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub desc_steps: usize,
    pub matcher_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub n_keypoints: usize,
    pub matched_ratio: f64,
    pub tau: f64,
    pub data_fraction: f64,
    pub descriptor: DescriptorConfig,
    pub matcher: MatcherConfig,
    pub scenes: SceneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::NoRot,
            desc_steps: 2000,
            matcher_steps: 4000,
            batch_size: 8,
            lr: 2e-4,
            weight_decay: 0.01,
            seed: 0,
            n_keypoints: 256,
            matched_ratio: DEFAULT_MATCHED_RATIO,
            tau: DEFAULT_TAU,
            data_fraction: 1.0,
            descriptor: DescriptorConfig::default(),
            matcher: MatcherConfig::default(),
            scenes: SceneConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        self.matcher.validate()?;
        if self.matcher.desc_dim != self.descriptor.output_dim {
            return Err(Error::Config(format!(
                "matcher desc_dim {} differs from descriptor output_dim {}",
                self.matcher.desc_dim, self.descriptor.output_dim
            )));
        }
        if self.batch_size == 0 || self.n_keypoints < 2 {
            return Err(Error::Config("batch_size must be ≥ 1 and n_keypoints ≥ 2".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("lr must be positive and weight_decay non-negative".into()));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!("data_fraction {} outside (0, 1]", self.data_fraction)));
        }
        Ok(())
    }

    /// Sets one flat key. The descriptor output size and the matcher input
    /// size move together under `desc_dim`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "regime" => self.regime = v.parse()?,
            "desc_steps" => self.desc_steps = parse(key, v)?,
            "matcher_steps" => self.matcher_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "n_keypoints" => self.n_keypoints = parse(key, v)?,
            "matched_ratio" => self.matched_ratio = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "data_fraction" => self.data_fraction = parse(key, v)?,
            "patch_size" => self.descriptor.patch_size = parse(key, v)?,
            "desc_hidden" => self.descriptor.hidden = parse(key, v)?,
            "desc_dim" => {
                self.descriptor.output_dim = parse(key, v)?;
                self.matcher.desc_dim = self.descriptor.output_dim;
            }
            "n_layers" => self.matcher.n_layers = parse(key, v)?,
            "width" => self.matcher.width = parse(key, v)?,
            "heads" => self.matcher.heads = parse(key, v)?,
            "n_scenes" => self.scenes.n_scenes = parse(key, v)?,
            "image_size" => self.scenes.image_size = parse(key, v)?,
            "scene_seed" => self.scenes.seed = parse(key, v)?,
            "focal_scale" => self.scenes.focal_scale = parse(key, v)?,
            "rotation_range_3d" => self.scenes.rotation_range_3d = parse(key, v)?,
            "baseline_min" => self.scenes.baseline_range.0 = parse(key, v)?,
            "baseline_max" => self.scenes.baseline_range.1 = parse(key, v)?,
            "texture" => {
                self.scenes.texture = serde_json::from_value(serde_json::Value::String(v.to_string()))
                    .map_err(|_| Error::Config(format!("unknown texture {v:?}")))?
            }
            "geometry" => {
                self.scenes.geometry = match v {
                    "plane" => GeometryKind::Plane,
                    "heightfield" => GeometryKind::Heightfield,
                    _ => return Err(Error::Config(format!("unknown geometry {v:?}"))),
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document (TOML syntax, no tables) on top
    /// of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config syntax: {}", e.message())))?;
        self.apply_table(&table)
    }

    /// Applies every scalar entry of a parsed TOML table through [`set`](Self::set).
    pub fn apply_table(&mut self, table: &toml::Table) -> Result<()> {
        for (key, value) in table {
            let s = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                _ => return Err(Error::Config(format!("{key}: nested values are not supported"))),
            };
            self.set(key, &s)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }
}

