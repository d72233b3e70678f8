//! Relative-pose, matching and homography metrics, evaluation protocols,
//! and the stopping-layer and rotation-angle sweeps.

mod essential;
mod homography;
mod metrics;

use std::borrow::Cow;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use essential::{
    decompose_essential, disambiguate, eight_point, essential_from_pose, estimate_essential_ransac,
    sampson_distance, PoseEstimate, RansacConfig,
};
pub use homography::{
    corner_error, estimate_homography_ransac, homography_auc, homography_dlt, plane_homography, transfer,
};
pub use metrics::{auc, matching_precision, mean_average_accuracy, mean_ci95, pose_error, transfer_errors};

use crate::error::{Error, Result};
use crate::geometry::{relative_pose, rotate, rotate_arbitrary, sample_rotation, RotationMode, RotationSpec, Sampling, ViewPair};
use crate::pipeline::{assign, Model, DEFAULT_TAU};
use crate::scenes::{sample_keypoints, Dataset, DEFAULT_MATCHED_RATIO};
use crate::tensor::checkpoint::write_atomic;

/// How evaluation pairs are rotated before matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Protocol {
    Upright,
    /// Independent quarter turns per image, drawn per pair from the
    /// evaluation seed.
    RotatedQuarter,
    /// Image A upright, image B rotated by a fixed angle in degrees about
    /// its centre, both cropped to the inscribed circle.
    FixedAngle(f64),
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Upright => f.write_str("upright"),
            Protocol::RotatedQuarter => f.write_str("rotated-quarter"),
            Protocol::FixedAngle(a) => write!(f, "fixed-angle:{a}"),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    /// Accepts `upright`, `rotated-quarter` (or `rot90`), and
    /// `fixed-angle:<deg>` (or `angle:<deg>`).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upright" => return Ok(Protocol::Upright),
            "rotated-quarter" | "rot90" => return Ok(Protocol::RotatedQuarter),
            _ => {}
        }
        let deg = s
            .strip_prefix("fixed-angle:")
            .or_else(|| s.strip_prefix("angle:"))
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}")))?;
        let a: f64 = deg
            .parse()
            .map_err(|_| Error::Config(format!("bad protocol angle {deg:?}")))?;
        if !a.is_finite() {
            return Err(Error::Config(format!("bad protocol angle {deg:?}")));
        }
        Ok(Protocol::FixedAngle(a))
    }
}

impl Serialize for Protocol {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Protocol {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_keypoints: usize,
    pub matched_ratio: f64,
    pub tau: f64,
    pub ransac: RansacConfig,
    pub homography_threshold_px: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_keypoints: 512,
            matched_ratio: DEFAULT_MATCHED_RATIO,
            tau: DEFAULT_TAU,
            ransac: RansacConfig::default(),
            homography_threshold_px: 3.0,
            seed: 0,
        }
    }
}

fn pair_stream(seed: u64, index: usize, offset: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(2 * index as u64 + offset);
    r
}

/// Rotation applied to evaluation pair `index` under `protocol`.
pub fn protocol_rotation(protocol: Protocol, seed: u64, index: usize) -> RotationSpec {
    match protocol {
        Protocol::Upright => RotationSpec::identity(),
        Protocol::RotatedQuarter => sample_rotation(&mut pair_stream(seed, index, 1), Sampling::Independent),
        Protocol::FixedAngle(a) => RotationSpec::arbitrary(0.0, a),
    }
}

/// Applies a rotation; the identity leaves the pair untouched.
pub fn apply_rotation<'a>(pair: &'a ViewPair, spec: &RotationSpec) -> Result<Cow<'a, ViewPair>> {
    if spec.is_identity() {
        return Ok(Cow::Borrowed(pair));
    }
    Ok(Cow::Owned(match spec.mode {
        RotationMode::QuarterTurn => rotate(pair, spec)?,
        RotationMode::Arbitrary => rotate_arbitrary(pair, spec)?.pair,
    }))
}

/// Outcome of one pair at one stopping layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub n_matches: usize,
    pub n_inliers: usize,
    /// `None` when pose estimation failed; counts as an infinite error.
    pub pose_error_deg: Option<f64>,
    pub precision3px: f64,
    pub maa5: f64,
    pub maa10: f64,
    /// Mean corner error for planar scenes.
    pub homography_error_px: Option<f64>,
}

impl PairRecord {
    pub fn pose_error(&self) -> f64 {
        self.pose_error_deg.unwrap_or(f64::INFINITY)
    }
}

/// Evaluates one pair at each of `layers` from a single forward pass.
pub fn evaluate_pair(
    model: &Model,
    pair: &ViewPair,
    spec: &RotationSpec,
    config: &EvalConfig,
    index: usize,
    layers: &[usize],
) -> Result<Vec<PairRecord>> {
    let deepest = layers.iter().copied().max().ok_or_else(|| Error::contract("no stopping layer requested"))?;
    let pair = apply_rotation(pair, spec)?;
    let mut rng = pair_stream(config.seed, index, 2);
    let kps = sample_keypoints(&pair, config.n_keypoints, config.matched_ratio, &mut rng)?;
    let ka = model.descriptor.describe(&pair.image_a, &kps.positions_a)?;
    let kb = model.descriptor.describe(&pair.image_b, &kps.positions_b)?;
    let outs = model.matcher.match_forward_until(&ka, &kb, deepest)?;
    let (r_gt, t_gt) = relative_pose(&pair.camera_a, &pair.camera_b);
    let h_gt = plane_homography(&pair);
    let ransac = RansacConfig {
        seed: config.ransac.seed.wrapping_add(index as u64),
        ..config.ransac
    };
    let hransac = RansacConfig {
        threshold: config.homography_threshold_px,
        ..ransac
    };
    layers
        .iter()
        .map(|&l| {
            let (da, db) = &outs[l - 1];
            let a = assign(da, db, config.tau)?;
            let pa: Vec<Vector2<f64>> = a.matches.iter().map(|m| kps.positions_a[m.i]).collect();
            let pb: Vec<Vector2<f64>> = a.matches.iter().map(|m| kps.positions_b[m.j]).collect();
            let est = estimate_essential_ransac(&pa, &pb, &pair.camera_a, &pair.camera_b, &ransac);
            let errs = transfer_errors(&a.matches, &pair, &kps.positions_a, &kps.positions_b);
            let homography_error_px = h_gt.map(|h_gt| {
                estimate_homography_ransac(&pa, &pb, &hransac).map_or(f64::INFINITY, |(h, _)| {
                    corner_error(&h, &h_gt, pair.camera_a.width, pair.camera_a.height)
                })
            });
            Ok(PairRecord {
                pair_id: pair.pair_id.clone(),
                alpha_a: spec.alpha_a,
                alpha_b: spec.alpha_b,
                n_matches: a.matches.len(),
                n_inliers: est.as_ref().map_or(0, |e| e.inlier_count()),
                pose_error_deg: est.map(|e| pose_error(&e.r, &e.t, &r_gt, &t_gt)),
                precision3px: matching_precision(&a.matches, &pair, &kps.positions_a, &kps.positions_b, 3.0),
                maa5: mean_average_accuracy(&errs, 5),
                maa10: mean_average_accuracy(&errs, 10),
                homography_error_px,
            })
        })
        .collect()
}

/// Aggregate metrics of one (regime, protocol, stopping layer) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub regime: String,
    pub protocol: Protocol,
    pub stop_layer: usize,
    pub n_pairs: usize,
    pub auc5: f64,
    pub auc10: f64,
    pub auc20: f64,
    pub maa5: f64,
    pub maa10: f64,
    pub precision3px: f64,
    pub failures: usize,
    /// Pairs without a single predicted match.
    pub zero_match_pairs: usize,
    /// Only for datasets where every pair is planar.
    pub homography_auc10: Option<f64>,
    pub seed: u64,
    pub eval: EvalConfig,
    pub pairs: Vec<PairRecord>,
}

impl MetricReport {
    pub fn from_records(regime: &str, protocol: Protocol, stop_layer: usize, config: &EvalConfig, pairs: Vec<PairRecord>) -> Self {
        let errors: Vec<f64> = pairs.iter().map(PairRecord::pose_error).collect();
        let n = pairs.len().max(1) as f64;
        let mean = |f: fn(&PairRecord) -> f64| pairs.iter().map(f).sum::<f64>() / n;
        let homography_auc10 = pairs
            .iter()
            .map(|p| p.homography_error_px)
            .collect::<Option<Vec<f64>>>()
            .filter(|v| !v.is_empty())
            .map(|v| homography_auc(&v, 10.0));
        Self {
            regime: regime.to_string(),
            protocol,
            stop_layer,
            n_pairs: pairs.len(),
            auc5: auc(&errors, 5.0),
            auc10: auc(&errors, 10.0),
            auc20: auc(&errors, 20.0),
            maa5: mean(|p| p.maa5),
            maa10: mean(|p| p.maa10),
            precision3px: mean(|p| p.precision3px),
            failures: pairs.iter().filter(|p| p.pose_error_deg.is_none()).count(),
            zero_match_pairs: pairs.iter().filter(|p| p.n_matches == 0).count(),
            homography_auc10,
            seed: config.seed,
            eval: config.clone(),
            pairs,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<stem>.json` and the per-pair `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(format!("{stem}.json")), self.to_json()?.as_bytes())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.pairs {
            w.serialize(p).map_err(|e| Error::Format {
                what: "per-pair CSV",
                detail: e.to_string(),
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format {
            what: "per-pair CSV",
            detail: e.to_string(),
        })?;
        write_atomic(&dir.join(format!("{stem}.csv")), &bytes)
    }
}

fn evaluate_all(
    model: &Model,
    dataset: &Dataset,
    protocol: Protocol,
    config: &EvalConfig,
    layers: &[usize],
) -> Result<Vec<Vec<PairRecord>>> {
    // Rows: pairs; columns: layers.
    dataset
        .pairs
        .par_iter()
        .enumerate()
        .map(|(k, pair)| {
            let spec = protocol_rotation(protocol, config.seed, k);
            evaluate_pair(model, pair, &spec, config, k, layers)
        })
        .collect()
}

/// Full pipeline on every pair at one stopping layer.
pub fn run_benchmark(
    model: &Model,
    dataset: &Dataset,
    protocol: Protocol,
    stop_layer: usize,
    config: &EvalConfig,
) -> Result<MetricReport> {
    let rows = evaluate_all(model, dataset, protocol, config, &[stop_layer])?;
    let records = rows.into_iter().map(|mut r| r.remove(0)).collect();
    Ok(MetricReport::from_records(&model.regime, protocol, stop_layer, config, records))
}

/// One report per stopping layer `1..=L` and protocol.
pub fn sweep_layers(model: &Model, dataset: &Dataset, protocols: &[Protocol], config: &EvalConfig) -> Result<Vec<MetricReport>> {
    let layers: Vec<usize> = (1..=model.matcher.n_layers()).collect();
    let mut out = Vec::new();
    for &protocol in protocols {
        let rows = evaluate_all(model, dataset, protocol, config, &layers)?;
        for (li, &l) in layers.iter().enumerate() {
            let records = rows.iter().map(|r| r[li].clone()).collect();
            out.push(MetricReport::from_records(&model.regime, protocol, l, config, records));
        }
    }
    Ok(out)
}

/// Curve data of a layer sweep: one row per report.
pub fn layer_curve_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from("regime,protocol,stop_layer,auc5,auc10,auc20,precision3px,failures\n");
    for r in reports {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.regime, r.protocol, r.stop_layer, r.auc5, r.auc10, r.auc20, r.precision3px, r.failures
        ));
    }
    s
}

/// AUC@20 at one angle, across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnglePoint {
    pub angle: f64,
    pub per_seed_auc20: Vec<f64>,
    pub mean_auc20: f64,
    pub ci95: f64,
}

/// The default sweep `0, 15, …, 360`.
pub fn default_angles() -> Vec<f64> {
    (0..=24).map(|k| 15.0 * k as f64).collect()
}

/// Fixed-angle protocol at every angle for each per-seed model, at the full
/// depth of each matcher.
pub fn sweep_angles(models: &[Model], dataset: &Dataset, angles: &[f64], config: &EvalConfig) -> Result<Vec<AnglePoint>> {
    if models.is_empty() {
        return Err(Error::contract("angle sweep needs at least one model"));
    }
    angles
        .iter()
        .map(|&angle| {
            let per_seed = models
                .iter()
                .map(|m| Ok(run_benchmark(m, dataset, Protocol::FixedAngle(angle), m.matcher.n_layers(), config)?.auc20))
                .collect::<Result<Vec<f64>>>()?;
            let (mean_auc20, ci95) = mean_ci95(&per_seed);
            Ok(AnglePoint {
                angle,
                per_seed_auc20: per_seed,
                mean_auc20,
                ci95,
            })
        })
        .collect()
}

pub fn angle_curve_csv(regime: &str, points: &[AnglePoint]) -> String {
    let mut s = String::from("regime,angle,mean_auc20,ci95\n");
    for p in points {
        s.push_str(&format!("{regime},{},{},{}\n", p.angle, p.mean_auc20, p.ci95));
    }
    s
}
