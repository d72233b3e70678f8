//! Staged training: the descriptor first, then the matcher on top of the
//! frozen descriptor, with quarter-turn augmentation placed per regime.

mod config;
mod loss;

use std::borrow::Cow;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{Regime, TrainConfig};
pub use loss::{descriptor_loss, matcher_loss, matcher_loss_from_p, similarity, INFONCE_TEMPERATURE};

use crate::error::{Error, Result};
use crate::geometry::{rotate, sample_rotation, Sampling, ViewPair};
use crate::pipeline::{DescriptorNet, MatcherNet, Model, TokenInput};
use crate::scenes::{build_dataset, gt_matches, sample_keypoints, Dataset, KeypointSample};
use crate::tensor::{AdamW, Tape, Var};

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);

const STREAM_DESC_DATA: u64 = 1;
const STREAM_MATCHER_DATA: u64 = 2;
const STREAM_DESC_INIT: u64 = 3;
const STREAM_MATCHER_INIT: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_time_ms: u64,
}

/// Per-step losses of one training stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageLog {
    pub rows: Vec<LogRow>,
    /// Number of rotation ops applied to training samples.
    pub rotations: usize,
}

impl StageLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
            what: "training log",
            detail: e.to_string(),
        })?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Format {
                what: "training log",
                detail: e.to_string(),
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub descriptor: StageLog,
    pub matcher: StageLog,
}

/// One augmented training pair with its keypoints and GT matches.
pub struct Sample<'a> {
    pub pair: Cow<'a, ViewPair>,
    pub keypoints: KeypointSample,
    pub gt: Vec<(usize, usize)>,
}

/// Draws a pair, rotates it when `rotation` is set, then samples keypoints
/// in the rotated frames so they look exactly like inference inputs.
pub fn draw_sample<'a, R: Rng + ?Sized>(
    dataset: &'a Dataset,
    config: &TrainConfig,
    rotation: Option<Sampling>,
    rng: &mut R,
    rotations: &mut usize,
) -> Result<Sample<'a>> {
    if dataset.is_empty() {
        return Err(Error::contract("training dataset is empty"));
    }
    let base = &dataset.pairs[rng.random_range(0..dataset.len())];
    let pair = match rotation {
        Some(sampling) => {
            *rotations += 1;
            Cow::Owned(rotate(base, &sample_rotation(rng, sampling))?)
        }
        None => Cow::Borrowed(base),
    };
    let keypoints = sample_keypoints(&pair, config.n_keypoints, config.matched_ratio, rng)?;
    let gt = gt_matches(&pair, &keypoints.positions_a, &keypoints.positions_b);
    Ok(Sample { pair, keypoints, gt })
}

fn mean(tape: &mut Tape, losses: &[Var]) -> Result<Var> {
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, 1.0 / losses.len() as f64))
}

fn check_finite(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, loss })
    }
}

fn elapsed_ms(start: &Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Fresh descriptor for `config`, initialised from the config seed.
pub fn init_descriptor(config: &TrainConfig) -> Result<DescriptorNet> {
    DescriptorNet::new(config.descriptor.clone(), &mut stream(config.seed, STREAM_DESC_INIT))
}

pub fn init_matcher(config: &TrainConfig) -> Result<MatcherNet> {
    MatcherNet::new(config.matcher.clone(), &mut stream(config.seed, STREAM_MATCHER_INIT))
}

/// `desc_steps` AdamW steps of symmetric InfoNCE. The returned network is
/// frozen.
pub fn train_descriptor(config: &TrainConfig, dataset: &Dataset) -> Result<(DescriptorNet, StageLog)> {
    config.validate()?;
    let mut net = init_descriptor(config)?;
    let mut rng = stream(config.seed, STREAM_DESC_DATA);
    let mut opt = AdamW::new(config.lr, ADAM_BETAS, config.weight_decay);
    let mut log = StageLog::default();
    let rotation = config.regime.descriptor_rotation();
    let start = Instant::now();
    for step in 1..=config.desc_steps {
        let mut tape = Tape::new();
        let vars = net.params.bind(&mut tape);
        let mut losses = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let s = draw_sample(dataset, config, rotation, &mut rng, &mut log.rotations)?;
            let da = net.describe_on(&mut tape, &vars, &s.pair.image_a, &s.keypoints.positions_a)?;
            let db = net.describe_on(&mut tape, &vars, &s.pair.image_b, &s.keypoints.positions_b)?;
            losses.push(descriptor_loss(&mut tape, da, db, &s.gt)?);
        }
        let total = mean(&mut tape, &losses)?;
        let value = tape.scalar(total);
        check_finite(step, value)?;
        tape.backward(total)?;
        net.params.write_grads(&tape, &vars);
        opt.step(&mut net.params.tensors_mut(), step as u64)?;
        log.rows.push(LogRow {
            step,
            loss: value,
            wall_time_ms: elapsed_ms(&start),
        });
    }
    net.params.set_trainable(false);
    Ok((net, log))
}

/// Matcher loss of one sample averaged over every layer's output, so that
/// each stopping layer is trained to match.
pub fn matcher_sample_loss(
    tape: &mut Tape,
    matcher: &MatcherNet,
    vars: &[Var],
    desc: &DescriptorNet,
    sample: &Sample,
) -> Result<Var> {
    let ka = desc.describe(&sample.pair.image_a, &sample.keypoints.positions_a)?;
    let kb = desc.describe(&sample.pair.image_b, &sample.keypoints.positions_b)?;
    let a = TokenInput {
        descriptors: tape.leaf(&ka.descriptors),
        positions: &ka.positions,
        size: ka.image_size,
    };
    let b = TokenInput {
        descriptors: tape.leaf(&kb.descriptors),
        positions: &kb.positions,
        size: kb.image_size,
    };
    let outs = matcher.forward(tape, vars, &a, &b, matcher.n_layers())?;
    let mut layer_losses = Vec::with_capacity(outs.len());
    for (da, db) in outs {
        let s = similarity(tape, da, db)?;
        layer_losses.push(matcher_loss(tape, s, &sample.gt)?);
    }
    mean(tape, &layer_losses)
}

/// `matcher_steps` AdamW steps of the matcher loss on top of a frozen
/// descriptor.
pub fn train_matcher(config: &TrainConfig, desc: &DescriptorNet, dataset: &Dataset) -> Result<(MatcherNet, StageLog)> {
    config.validate()?;
    if desc.params.is_trainable() {
        return Err(Error::contract("descriptor must be frozen before matcher training"));
    }
    if desc.config != config.descriptor {
        return Err(Error::Config("descriptor architecture differs from the training config".into()));
    }
    let mut net = init_matcher(config)?;
    let mut rng = stream(config.seed, STREAM_MATCHER_DATA);
    let mut opt = AdamW::new(config.lr, ADAM_BETAS, config.weight_decay);
    let mut log = StageLog::default();
    let rotation = config.regime.matcher_rotation();
    let start = Instant::now();
    for step in 1..=config.matcher_steps {
        let mut tape = Tape::new();
        let vars = net.params.bind(&mut tape);
        let mut losses = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let s = draw_sample(dataset, config, rotation, &mut rng, &mut log.rotations)?;
            losses.push(matcher_sample_loss(&mut tape, &net, &vars, desc, &s)?);
        }
        let total = mean(&mut tape, &losses)?;
        let value = tape.scalar(total);
        check_finite(step, value)?;
        tape.backward(total)?;
        net.params.write_grads(&tape, &vars);
        opt.step(&mut net.params.tensors_mut(), step as u64)?;
        log.rows.push(LogRow {
            step,
            loss: value,
            wall_time_ms: elapsed_ms(&start),
        });
    }
    net.params.set_trainable(false);
    Ok((net, log))
}

/// The full staged recipe for `config.regime` on a prepared dataset.
/// A previously trained descriptor can be passed in when it was produced by
/// an identical descriptor stage.
pub fn run_regime_on(
    config: &TrainConfig,
    dataset: &Dataset,
    descriptor: Option<(DescriptorNet, StageLog)>,
) -> Result<(Model, TrainLog)> {
    let (descriptor, desc_log) = match descriptor {
        Some(d) => d,
        None => train_descriptor(config, dataset)?,
    };
    let (matcher, matcher_log) = train_matcher(config, &descriptor, dataset)?;
    Ok((
        Model {
            descriptor,
            matcher,
            regime: config.regime.tag().to_string(),
        },
        TrainLog {
            descriptor: desc_log,
            matcher: matcher_log,
        },
    ))
}

/// Builds the training scenes and runs [`run_regime_on`].
pub fn run_regime(config: &TrainConfig) -> Result<(Model, TrainLog)> {
    config.validate()?;
    let dataset = build_dataset(&config.scenes, config.data_fraction)?;
    run_regime_on(config, &dataset, None)
}

/// True when two configs run identical descriptor stages, so one trained
/// descriptor can serve both.
pub fn same_descriptor_stage(a: &TrainConfig, b: &TrainConfig) -> bool {
    a.regime.descriptor_rotation() == b.regime.descriptor_rotation()
        && a.desc_steps == b.desc_steps
        && a.batch_size == b.batch_size
        && a.lr == b.lr
        && a.weight_decay == b.weight_decay
        && a.seed == b.seed
        && a.n_keypoints == b.n_keypoints
        && a.matched_ratio == b.matched_ratio
        && a.data_fraction == b.data_fraction
        && a.descriptor == b.descriptor
        && a.scenes == b.scenes
}
