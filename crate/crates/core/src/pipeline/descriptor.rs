use std::sync::Arc;

use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Params;
use super::KeypointSet;
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub patch_size: usize,
    /// Output channels of the three stride-2 convolutions.
    pub channels: [usize; 3],
    pub hidden: usize,
    pub output_dim: usize,
    pub in_channels: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            channels: [8, 16, 32],
            hidden: 64,
            output_dim: 64,
            in_channels: 3,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % 8 != 0 {
            return Err(Error::Config(format!("patch size {} is not a positive multiple of 8", self.patch_size)));
        }
        if self.channels.contains(&0) || self.hidden == 0 || self.output_dim == 0 || self.in_channels == 0 {
            return Err(Error::Config("descriptor layer sizes must be positive".into()));
        }
        Ok(())
    }

    fn flat_dim(&self) -> usize {
        let s = self.patch_size / 8;
        s * s * self.channels[2]
    }
}

/// Patch network: three 3×3 stride-2 convolutions with ReLU, two dense
/// layers, then L2 normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorNet {
    pub config: DescriptorConfig,
    pub params: Params,
}

/// im2col gather indices for a 3×3, stride 2, padding 1 convolution over
/// `n` maps of `size × size × ch`, stored as rows of `ch` values.
fn conv_index(n: usize, size: usize, ch: usize) -> Arc<Vec<Option<usize>>> {
    let out = size / 2;
    let mut idx = Vec::with_capacity(n * out * out * 9 * ch);
    for b in 0..n {
        for oy in 0..out {
            for ox in 0..out {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        let ix = (2 * ox + kx) as isize - 1;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < size && (ix as usize) < size;
                        for c in 0..ch {
                            idx.push(
                                inside.then(|| ((b * size + iy as usize) * size + ix as usize) * ch + c),
                            );
                        }
                    }
                }
            }
        }
    }
    Arc::new(idx)
}

impl DescriptorNet {
    pub fn new<R: Rng + ?Sized>(config: DescriptorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = Params::new();
        let mut c_in = config.in_channels;
        for (i, &c) in config.channels.iter().enumerate() {
            params.push_weight(&format!("conv{i}.w"), 9 * c_in, c, rng);
            params.push_const(&format!("conv{i}.b"), c, 0.0);
            c_in = c;
        }
        params.push_weight("fc0.w", config.flat_dim(), config.hidden, rng);
        params.push_const("fc0.b", config.hidden, 0.0);
        params.push_xavier("fc1.w", config.hidden, config.output_dim, rng);
        params.push_const("fc1.b", config.output_dim, 0.0);
        Ok(Self { config, params })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Bilinear `patch_size²` windows centred on each position, zero outside
    /// the image, as rows of `[n · P · P, C]`. Values are shifted to
    /// roughly zero mean.
    pub fn extract_patches(&self, image: &Image, positions: &[Vector2<f64>]) -> Result<Vec<f64>> {
        let c = self.config.in_channels;
        if image.channels != c {
            return Err(Error::contract(format!(
                "descriptor expects {c} channels, image has {}",
                image.channels
            )));
        }
        let p = self.config.patch_size;
        let half = p as f64 / 2.0;
        let mut out = vec![0.0; positions.len() * p * p * c];
        let mut px = vec![0.0; c];
        for (k, pos) in positions.iter().enumerate() {
            for v in 0..p {
                for u in 0..p {
                    image.sample_bilinear(pos.x + u as f64 + 0.5 - half, pos.y + v as f64 + 0.5 - half, &mut px);
                    let base = ((k * p + v) * p + u) * c;
                    for (o, x) in out[base..base + c].iter_mut().zip(&px) {
                        *o = 2.0 * x - 1.0;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Unit-norm descriptors `[n, d]` for patches laid out as produced by
    /// [`Self::extract_patches`]. `vars` are this network's bound parameters.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], patches: Var, n: usize) -> Result<Var> {
        let cfg = &self.config;
        let mut x = patches;
        let mut size = cfg.patch_size;
        let mut ch = cfg.in_channels;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            let out = size / 2;
            let cols = tape.gather(x, conv_index(n, size, ch), &[n * out * out, 9 * ch])?;
            let y = tape.matmul(cols, vars[2 * i])?;
            let y = tape.add_bias(y, vars[2 * i + 1])?;
            x = tape.relu(y);
            size = out;
            ch = c_out;
        }
        let x = tape.reshape(x, &[n, cfg.flat_dim()])?;
        let h = tape.matmul(x, vars[6])?;
        let h = tape.add_bias(h, vars[7])?;
        let h = tape.relu(h);
        let d = tape.matmul(h, vars[8])?;
        let d = tape.add_bias(d, vars[9])?;
        Ok(tape.l2_normalize_rows(d))
    }

    /// Records patch extraction and the network on `tape`.
    pub fn describe_on(&self, tape: &mut Tape, vars: &[Var], image: &Image, positions: &[Vector2<f64>]) -> Result<Var> {
        let n = positions.len();
        let p = self.config.patch_size;
        let patches = self.extract_patches(image, positions)?;
        let x = tape.constant(vec![n * p * p, self.config.in_channels], patches)?;
        self.forward(tape, vars, x, n)
    }

    pub fn describe(&self, image: &Image, positions: &[Vector2<f64>]) -> Result<KeypointSet> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let d = self.describe_on(&mut tape, &vars, image, positions)?;
        KeypointSet::new(positions.to_vec(), tape.to_tensor(d), (image.width, image.height))
    }
}
