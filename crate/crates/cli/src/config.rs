use std::path::Path;

use anyhow::{bail, Context, Result};
use rotmatch::eval::EvalConfig;
use rotmatch::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a run reads from `--config`: training keys at the top level
/// and evaluation keys under `[eval]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn scalar(key: &str, value: &toml::Value) -> Result<f64> {
    match value {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        _ => bail!("eval.{key} must be a number"),
    }
}

fn count(key: &str, value: &toml::Value) -> Result<usize> {
    match value {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => bail!("eval.{key} must be a non-negative integer"),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().context("config syntax")?;
        let mut cfg = Self::default();
        if let Some(eval) = table.remove("eval") {
            let toml::Value::Table(eval) = eval else {
                bail!("[eval] must be a table");
            };
            cfg.apply_eval(&eval)?;
        }
        cfg.train.apply_table(&table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn apply_eval(&mut self, table: &toml::Table) -> Result<()> {
        let e = &mut self.eval;
        for (key, v) in table {
            match key.as_str() {
                "n_keypoints" => e.n_keypoints = count(key, v)?,
                "matched_ratio" => e.matched_ratio = scalar(key, v)?,
                "tau" => e.tau = scalar(key, v)?,
                "ransac_iters" => e.ransac.max_iters = count(key, v)?,
                "ransac_threshold" => e.ransac.threshold = scalar(key, v)?,
                "ransac_confidence" => e.ransac.confidence = scalar(key, v)?,
                "homography_threshold_px" => e.homography_threshold_px = scalar(key, v)?,
                "seed" => e.seed = count(key, v)? as u64,
                _ => bail!("unknown config key eval.{key}"),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let e = &self.eval;
        if e.n_keypoints < 2 {
            bail!("eval.n_keypoints must be at least 2");
        }
        if !(0.0..=1.0).contains(&e.matched_ratio) || !(0.0..=1.0).contains(&e.tau) {
            bail!("eval.matched_ratio and eval.tau must lie in [0, 1]");
        }
        if e.ransac.max_iters == 0 || !(e.ransac.threshold > 0.0) || !(e.homography_threshold_px > 0.0) {
            bail!("RANSAC needs at least one iteration and positive thresholds");
        }
        if !(e.ransac.confidence > 0.0 && e.ransac.confidence < 1.0) {
            bail!("eval.ransac_confidence must lie in (0, 1)");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; equal configs hash equally no
    /// matter how the file was written.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
