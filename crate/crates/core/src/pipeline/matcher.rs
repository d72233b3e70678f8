use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Params;
use super::KeypointSet;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    pub n_layers: usize,
    pub width: usize,
    pub heads: usize,
    pub desc_dim: usize,
    /// Sinusoid frequencies per coordinate axis.
    pub n_freqs: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            n_layers: 6,
            width: 64,
            heads: 1,
            desc_dim: 64,
            n_freqs: 8,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.width == 0 || self.desc_dim == 0 || self.n_freqs == 0 {
            return Err(Error::Config("matcher sizes must be positive".into()));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    fn pe_dim(&self) -> usize {
        4 * self.n_freqs
    }
}

/// Sinusoidal features of positions normalised to `[-1, 1]` per image:
/// `sin, cos` of `π·2^(k/2)·x` and the same for `y`, for each frequency `k`.
pub fn positional_features(positions: &[Vector2<f64>], size: (usize, usize), n_freqs: usize) -> Vec<f64> {
    let (w, h) = (size.0 as f64, size.1 as f64);
    let mut out = Vec::with_capacity(positions.len() * 4 * n_freqs);
    for p in positions {
        let (x, y) = (2.0 * p.x / w - 1.0, 2.0 * p.y / h - 1.0);
        for k in 0..n_freqs {
            let f = std::f64::consts::PI * 2f64.powf(k as f64 / 2.0);
            out.extend([(f * x).sin(), (f * x).cos(), (f * y).sin(), (f * y).cos()]);
        }
    }
    out
}

/// One image's inputs as recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TokenInput<'a> {
    pub descriptors: Var,
    pub positions: &'a [Vector2<f64>],
    pub size: (usize, usize),
}

struct Attn {
    q: Var,
    k: Var,
    v: Var,
    o: Var,
}

struct Norm {
    gain: Var,
    bias: Var,
}

struct Block {
    norm_self: Norm,
    attn_self: Attn,
    norm_cross: Norm,
    attn_cross: Attn,
    norm_ff: Norm,
    ff_w0: Var,
    ff_b0: Var,
    ff_w1: Var,
    ff_b1: Var,
}

struct Bound {
    w_in: Var,
    b_in: Var,
    w_pos: Var,
    blocks: Vec<Block>,
    norm_out: Norm,
    w_out: Var,
}

/// Attention matcher: `L` blocks of self-attention, cross-attention and a
/// feed-forward layer, each pre-normalised with a residual connection. A
/// shared output projection gives refined descriptors after every block.
#[derive(Clone, Debug, PartialEq)]
pub struct MatcherNet {
    pub config: MatcherConfig,
    pub params: Params,
}

impl MatcherNet {
    pub fn new<R: Rng + ?Sized>(config: MatcherConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let mut p = Params::new();
        p.push_xavier("in.w", config.desc_dim, w, rng);
        p.push_const("in.b", w, 0.0);
        p.push_xavier("pos.w", config.pe_dim(), w, rng);
        for l in 0..config.n_layers {
            for part in ["self", "cross"] {
                p.push_const(&format!("l{l}.{part}.norm.g"), w, 1.0);
                p.push_const(&format!("l{l}.{part}.norm.b"), w, 0.0);
                for m in ["q", "k", "v", "o"] {
                    p.push_xavier(&format!("l{l}.{part}.{m}"), w, w, rng);
                }
            }
            p.push_const(&format!("l{l}.ff.norm.g"), w, 1.0);
            p.push_const(&format!("l{l}.ff.norm.b"), w, 0.0);
            p.push_weight(&format!("l{l}.ff.w0"), w, 2 * w, rng);
            p.push_const(&format!("l{l}.ff.b0"), 2 * w, 0.0);
            p.push_xavier(&format!("l{l}.ff.w1"), 2 * w, w, rng);
            p.push_const(&format!("l{l}.ff.b1"), w, 0.0);
        }
        p.push_const("out.norm.g", w, 1.0);
        p.push_const("out.norm.b", w, 0.0);
        p.push_xavier("out.w", w, w, rng);
        Ok(Self { config, params: p })
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn unpack(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.params.len() {
            return Err(Error::contract(format!(
                "matcher expects {} parameter vars, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked above");
        let w_in = next();
        let b_in = next();
        let w_pos = next();
        let mut blocks = Vec::with_capacity(self.config.n_layers);
        for _ in 0..self.config.n_layers {
            let mut half = || {
                let norm = Norm {
                    gain: next(),
                    bias: next(),
                };
                let attn = Attn {
                    q: next(),
                    k: next(),
                    v: next(),
                    o: next(),
                };
                (norm, attn)
            };
            let (norm_self, attn_self) = half();
            let (norm_cross, attn_cross) = half();
            blocks.push(Block {
                norm_self,
                attn_self,
                norm_cross,
                attn_cross,
                norm_ff: Norm {
                    gain: next(),
                    bias: next(),
                },
                ff_w0: next(),
                ff_b0: next(),
                ff_w1: next(),
                ff_b1: next(),
            });
        }
        let norm_out = Norm {
            gain: next(),
            bias: next(),
        };
        let w_out = next();
        Ok(Bound {
            w_in,
            b_in,
            w_pos,
            blocks,
            norm_out,
            w_out,
        })
    }

    fn norm(tape: &mut Tape, x: Var, n: &Norm) -> Result<Var> {
        let y = tape.layer_norm(x);
        let y = tape.mul_bias(y, n.gain)?;
        tape.add_bias(y, n.bias)
    }

    fn attention(&self, tape: &mut Tape, xq: Var, xkv: Var, a: &Attn) -> Result<Var> {
        let q = tape.matmul(xq, a.q)?;
        let k = tape.matmul(xkv, a.k)?;
        let v = tape.matmul(xkv, a.v)?;
        let heads = self.config.heads;
        let dh = self.config.width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, (h + 1) * dh)?,
                    tape.slice_cols(k, h * dh, (h + 1) * dh)?,
                    tape.slice_cols(v, h * dh, (h + 1) * dh)?,
                )
            };
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let att = tape.softmax_rows(s)?;
            outs.push(tape.matmul(att, vh)?);
        }
        let o = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        tape.matmul(o, a.o)
    }

    fn tokens(&self, tape: &mut Tape, b: &Bound, input: &TokenInput) -> Result<Var> {
        let n = input.positions.len();
        if n == 0 {
            return Err(Error::contract("matcher needs at least one keypoint per image"));
        }
        let (rows, cols) = tape.dims(input.descriptors);
        if rows != n || cols != self.config.desc_dim {
            return Err(Error::Dimension {
                op: "match_forward",
                lhs: vec![rows, cols],
                rhs: vec![n, self.config.desc_dim],
            });
        }
        let pe = positional_features(input.positions, input.size, self.config.n_freqs);
        let pe = tape.constant(vec![n, self.config.pe_dim()], pe)?;
        let x = tape.matmul(input.descriptors, b.w_in)?;
        let x = tape.add_bias(x, b.b_in)?;
        let pos = tape.matmul(pe, b.w_pos)?;
        tape.add(x, pos)
    }

    /// Layer-0 tokens: projected descriptor plus positional embedding.
    pub fn input_tokens(&self, tape: &mut Tape, vars: &[Var], input: &TokenInput) -> Result<Var> {
        let b = self.unpack(vars)?;
        self.tokens(tape, &b, input)
    }

    fn project(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        // The 1/width^(1/4) factor on both sides keeps S = d̃ₐ·d̃ᵦᵀ at the
        // scale of a 1/sqrt(width) attention logit.
        let y = Self::norm(tape, x, &b.norm_out)?;
        let y = tape.matmul(y, b.w_out)?;
        Ok(tape.scale(y, (self.config.width as f64).powf(-0.25)))
    }

    /// Refined descriptors `(d̃_a, d̃_b)` after each of the first
    /// `stop_layer` blocks.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        a: &TokenInput,
        b: &TokenInput,
        stop_layer: usize,
    ) -> Result<Vec<(Var, Var)>> {
        if stop_layer == 0 || stop_layer > self.config.n_layers {
            return Err(Error::contract(format!(
                "stop layer {stop_layer} outside 1..={}",
                self.config.n_layers
            )));
        }
        let bound = self.unpack(vars)?;
        let mut xa = self.tokens(tape, &bound, a)?;
        let mut xb = self.tokens(tape, &bound, b)?;
        let mut outs = Vec::with_capacity(stop_layer);
        for blk in &bound.blocks[..stop_layer] {
            let na = Self::norm(tape, xa, &blk.norm_self)?;
            let nb = Self::norm(tape, xb, &blk.norm_self)?;
            let da = self.attention(tape, na, na, &blk.attn_self)?;
            let db = self.attention(tape, nb, nb, &blk.attn_self)?;
            xa = tape.add(xa, da)?;
            xb = tape.add(xb, db)?;

            let na = Self::norm(tape, xa, &blk.norm_cross)?;
            let nb = Self::norm(tape, xb, &blk.norm_cross)?;
            let da = self.attention(tape, na, nb, &blk.attn_cross)?;
            let db = self.attention(tape, nb, na, &blk.attn_cross)?;
            xa = tape.add(xa, da)?;
            xb = tape.add(xb, db)?;

            for x in [&mut xa, &mut xb] {
                let h = Self::norm(tape, *x, &blk.norm_ff)?;
                let h = tape.matmul(h, blk.ff_w0)?;
                let h = tape.add_bias(h, blk.ff_b0)?;
                let h = tape.relu(h);
                let h = tape.matmul(h, blk.ff_w1)?;
                let h = tape.add_bias(h, blk.ff_b1)?;
                *x = tape.add(*x, h)?;
            }
            let oa = self.project(tape, &bound, xa)?;
            let ob = self.project(tape, &bound, xb)?;
            outs.push((oa, ob));
        }
        Ok(outs)
    }

    /// Runs on frozen values and returns `(d̃_a, d̃_b)` per layer.
    pub fn match_forward(&self, kps_a: &KeypointSet, kps_b: &KeypointSet) -> Result<Vec<(Tensor, Tensor)>> {
        self.match_forward_until(kps_a, kps_b, self.config.n_layers)
    }

    pub fn match_forward_until(
        &self,
        kps_a: &KeypointSet,
        kps_b: &KeypointSet,
        stop_layer: usize,
    ) -> Result<Vec<(Tensor, Tensor)>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let da = tape.leaf(&kps_a.descriptors);
        let db = tape.leaf(&kps_b.descriptors);
        let a = TokenInput {
            descriptors: da,
            positions: &kps_a.positions,
            size: kps_a.image_size,
        };
        let b = TokenInput {
            descriptors: db,
            positions: &kps_b.positions,
            size: kps_b.image_size,
        };
        let outs = self.forward(&mut tape, &vars, &a, &b, stop_layer)?;
        Ok(outs.into_iter().map(|(x, y)| (tape.to_tensor(x), tape.to_tensor(y))).collect())
    }
}
