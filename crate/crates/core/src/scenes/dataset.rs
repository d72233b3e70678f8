use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::{generate_indexed, SceneConfig};
use crate::error::{Error, Result};
use crate::geometry::ViewPair;
use crate::tensor::checkpoint::write_atomic;

/// Rendered pairs of one scene configuration.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: SceneConfig,
    /// Scene indices held by this handle, ascending.
    pub indices: Vec<usize>,
    pub pairs: Vec<ViewPair>,
}

/// Number of scenes kept for a data fraction in `(0, 1]`.
pub fn subset_size(n_scenes: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("data fraction {fraction} outside (0, 1]")));
    }
    Ok(((n_scenes as f64 * fraction).round() as usize).clamp(1, n_scenes.max(1)))
}

/// The first `round(fraction · n_scenes)` scenes of `config`.
pub fn build_dataset(config: &SceneConfig, fraction: f64) -> Result<Dataset> {
    let k = subset_size(config.n_scenes, fraction)?;
    let indices: Vec<usize> = (0..k).collect();
    let pairs = indices
        .iter()
        .map(|&i| generate_indexed(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: config.clone(),
        indices,
        pairs,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneManifest {
    pub scene_count: usize,
    pub seed: u64,
    pub config: SceneConfig,
    pub pairs: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Deterministic prefix of this dataset.
    pub fn subset(&self, fraction: f64) -> Result<Dataset> {
        let k = subset_size(self.pairs.len(), fraction)?;
        Ok(Dataset {
            config: self.config.clone(),
            indices: self.indices[..k].to_vec(),
            pairs: self.pairs[..k].to_vec(),
        })
    }

    /// One directory per pair plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<SceneManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = Vec::with_capacity(self.pairs.len());
        for (idx, pair) in self.indices.iter().zip(&self.pairs) {
            let name = format!("pair_{idx:05}");
            pair.save(&dir.join(&name))?;
            names.push(name);
        }
        let manifest = SceneManifest {
            scene_count: self.pairs.len(),
            seed: self.config.seed,
            config: self.config.clone(),
            pairs: names,
        };
        write_atomic(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.json");
        let manifest: SceneManifest = serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        let mut indices = Vec::with_capacity(manifest.pairs.len());
        let mut pairs = Vec::with_capacity(manifest.pairs.len());
        for name in &manifest.pairs {
            let idx = name
                .strip_prefix("pair_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format {
                    what: "scene manifest",
                    detail: format!("bad pair entry {name}"),
                })?;
            indices.push(idx);
            pairs.push(ViewPair::load(&dir.join(name))?);
        }
        Ok(Dataset {
            config: manifest.config,
            indices,
            pairs,
        })
    }
}
