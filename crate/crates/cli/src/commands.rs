use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rotmatch::eval::{
    angle_curve_csv, default_angles, layer_curve_csv, mean_ci95, run_benchmark, sweep_angles, sweep_layers,
    MetricReport, Protocol,
};
use rotmatch::geometry::Image;
use rotmatch::pipeline::{Model, DESCRIPTOR_FILE, MATCHER_FILE, SIDECAR_FILE};
use rotmatch::scenes::{build_dataset, Dataset};
use rotmatch::tensor::checkpoint::write_atomic;
use rotmatch::train::{run_regime_on, Regime};

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::{plot, viz};

#[derive(Debug, Parser)]
#[command(name = "rotmatch", version, about = "Rotation-augmented sparse matching experiments")]
pub struct Cli {
    /// Worker threads for per-pair evaluation (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a seeded set of synthetic view pairs.
    GenScenes(GenScenes),
    /// Train descriptor then matcher for one regime.
    Train(Train),
    /// Evaluate a trained model on a scene set.
    Eval(Eval),
    /// Evaluate every stopping layer under the upright and rotated protocols.
    SweepLayers(Sweep),
    /// Evaluate fixed rotation angles of the second image.
    SweepAngles(SweepAngles),
    /// Train at data fractions 0.1 and 1.0 and compare upright and rotated AUC.
    AblateData(AblateData),
    /// Render dense descriptors of an image and of its rotated copy.
    VizDesc(VizDesc),
    /// Draw sweep curves from CSV files into PPM images.
    Plot(Plot),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenScenes {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n_scenes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Train {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub data_fraction: Option<f64>,
    /// Training scenes written by gen-scenes; generated from the config otherwise.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, default_value = "upright", value_parser = parse_protocol)]
    pub protocol: Protocol,
    /// Defaults to the full matcher depth.
    #[arg(long)]
    pub stop_layer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Sweep {
    #[command(flatten)]
    pub common: Common,
    /// One model directory per training seed.
    #[arg(long, required = true, num_args = 1..)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub scenes: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepAngles {
    #[command(flatten)]
    pub sweep: Sweep,
    /// Comma-separated degrees; defaults to 0, 15, …, 360.
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct AblateData {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<Regime>,
    /// Held-out evaluation scenes.
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0])]
    pub fractions: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct VizDesc {
    #[arg(long)]
    pub model: PathBuf,
    /// PPM image; its sides must be multiples of the cell size.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 180.0)]
    pub angle: f64,
    #[arg(long, default_value_t = 2)]
    pub cell: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Plot {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 480)]
    pub width: usize,
    #[arg(long, default_value_t = 320)]
    pub height: usize,
}

pub fn parse_regime(s: &str) -> Result<Regime, String> {
    let tag = if s == "jointdesc" { "jointdesc-rotmatch" } else { s };
    tag.parse().map_err(|e: rotmatch::Error| e.to_string())
}

pub fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|e: rotmatch::Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn start_manifest(common: &Common, cfg: &ExperimentConfig, seed: u64) -> Result<RunManifest> {
    let mut m = RunManifest::start(std::env::args().collect(), cfg.hash(), seed);
    if let Some(p) = &common.config {
        m.consume(p)?;
    }
    Ok(m)
}

fn load_model(dir: &Path, manifest: &mut RunManifest) -> Result<Model> {
    let model = Model::load(dir).with_context(|| format!("loading model from {}", dir.display()))?;
    for f in [SIDECAR_FILE, DESCRIPTOR_FILE, MATCHER_FILE] {
        manifest.consume(&dir.join(f))?;
    }
    Ok(model)
}

/// Refuses a checkpoint whose architecture differs from an explicit config.
fn check_model(model: &Model, common: &Common, cfg: &ExperimentConfig) -> Result<()> {
    if common.config.is_some() {
        model
            .check_architecture(&cfg.train.descriptor, &cfg.train.matcher)
            .context("checkpoint does not match the config")?;
    }
    Ok(())
}

fn load_scenes(dir: &Path, manifest: &mut RunManifest) -> Result<Dataset> {
    let data = Dataset::load(dir).with_context(|| format!("loading scenes from {}", dir.display()))?;
    manifest.consume(&dir.join("manifest.json"))?;
    Ok(data)
}

fn write(path: &Path, bytes: &[u8], manifest: &mut RunManifest) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, bytes)?;
    manifest.produce(path)
}

fn report_stem(protocol: Protocol, layer: usize) -> String {
    format!("{}_L{layer}", protocol.to_string().replace(':', "_"))
}

fn save_report(report: &MetricReport, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let stem = report_stem(report.protocol, report.stop_layer);
    report.save(dir, &stem)?;
    manifest.produce(&dir.join(format!("{stem}.json")))?;
    manifest.produce(&dir.join(format!("{stem}.csv")))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        // Fails only if a pool already exists, which a fresh process never has.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenScenes(c) => gen_scenes(c),
        Command::Train(c) => train(c),
        Command::Eval(c) => eval(c),
        Command::SweepLayers(c) => sweep_layers_cmd(c),
        Command::SweepAngles(c) => sweep_angles_cmd(c),
        Command::AblateData(c) => ablate_data(c),
        Command::VizDesc(c) => viz_desc(c),
        Command::Plot(c) => plot_cmd(c),
    }
}

fn gen_scenes(c: GenScenes) -> Result<()> {
    let mut cfg = load_config(c.common.config.as_deref())?;
    if let Some(s) = c.common.seed {
        cfg.train.scenes.seed = s;
    }
    if let Some(n) = c.n_scenes {
        cfg.train.scenes.n_scenes = n;
    }
    let mut m = start_manifest(&c.common, &cfg, cfg.train.scenes.seed)?;
    let data = build_dataset(&cfg.train.scenes, 1.0)?;
    data.save(&c.common.out)?;
    m.produce(&c.common.out.join("manifest.json"))?;
    m.finish(&c.common.out)?;
    eprintln!("wrote {} pairs to {}", data.len(), c.common.out.display());
    Ok(())
}

fn train(c: Train) -> Result<()> {
    let mut cfg = load_config(c.common.config.as_deref())?;
    if let Some(r) = c.regime {
        cfg.train.regime = r;
    }
    if let Some(s) = c.common.seed {
        cfg.train.seed = s;
    }
    if let Some(f) = c.data_fraction {
        cfg.train.data_fraction = f;
    }
    let mut m = start_manifest(&c.common, &cfg, cfg.train.seed)?;
    let data = match &c.scenes {
        Some(dir) => {
            let full = load_scenes(dir, &mut m)?;
            cfg.train.scenes = full.config.clone();
            full.subset(cfg.train.data_fraction)?
        }
        None => build_dataset(&cfg.train.scenes, cfg.train.data_fraction)?,
    };
    cfg.validate()?;
    m.config_hash = cfg.hash();
    let (model, log) = run_regime_on(&cfg.train, &data, None)?;
    let out = &c.common.out;
    model.save(out)?;
    for f in [SIDECAR_FILE, DESCRIPTOR_FILE, MATCHER_FILE] {
        m.produce(&out.join(f))?;
    }
    for (name, stage) in [("descriptor_log.csv", &log.descriptor), ("matcher_log.csv", &log.matcher)] {
        stage.write_csv(&out.join(name))?;
        m.produce(&out.join(name))?;
    }
    write(&out.join("config.json"), serde_json::to_string_pretty(&cfg)?.as_bytes(), &mut m)?;
    m.finish(out)?;
    eprintln!(
        "trained {} on {} pairs: descriptor loss {:.4}, matcher loss {:.4}",
        cfg.train.regime,
        data.len(),
        log.descriptor.final_loss().unwrap_or(f64::NAN),
        log.matcher.final_loss().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn eval(c: Eval) -> Result<()> {
    let mut cfg = load_config(c.common.config.as_deref())?;
    if let Some(s) = c.common.seed {
        cfg.eval.seed = s;
    }
    let mut m = start_manifest(&c.common, &cfg, cfg.eval.seed)?;
    let model = load_model(&c.model, &mut m)?;
    check_model(&model, &c.common, &cfg)?;
    let data = load_scenes(&c.scenes, &mut m)?;
    let layer = c.stop_layer.unwrap_or(model.matcher.n_layers());
    let report = run_benchmark(&model, &data, c.protocol, layer, &cfg.eval)?;
    save_report(&report, &c.common.out, &mut m)?;
    m.finish(&c.common.out)?;
    println!(
        "{} {} L{}: AUC@5/10/20 {:.2}/{:.2}/{:.2}, precision {:.3}, failures {}",
        report.regime, report.protocol, layer, report.auc5, report.auc10, report.auc20, report.precision3px, report.failures
    );
    Ok(())
}

fn load_models(dirs: &[PathBuf], common: &Common, cfg: &ExperimentConfig, m: &mut RunManifest) -> Result<Vec<Model>> {
    let models = dirs
        .iter()
        .map(|d| {
            let model = load_model(d, m)?;
            check_model(&model, common, cfg)?;
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    if models.iter().any(|x| x.regime != models[0].regime) {
        bail!("all models of a sweep must share one regime");
    }
    Ok(models)
}

/// Mean and 95% half-width of AUC@20 across seeds, per protocol and layer.
pub fn aggregate_layer_curve(per_seed: &[Vec<MetricReport>]) -> String {
    let mut cells: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    for reports in per_seed {
        for r in reports {
            cells
                .entry((r.regime.clone(), r.protocol.to_string(), r.stop_layer))
                .or_default()
                .push(r.auc20);
        }
    }
    let mut s = String::from("regime,protocol,stop_layer,mean_auc20,ci95\n");
    for ((regime, protocol, layer), v) in cells {
        let (mean, ci) = mean_ci95(&v);
        s.push_str(&format!("{regime},{protocol},{layer},{mean},{ci}\n"));
    }
    s
}

fn sweep_layers_cmd(c: Sweep) -> Result<()> {
    let mut cfg = load_config(c.common.config.as_deref())?;
    if let Some(s) = c.common.seed {
        cfg.eval.seed = s;
    }
    let mut m = start_manifest(&c.common, &cfg, cfg.eval.seed)?;
    let models = load_models(&c.model, &c.common, &cfg, &mut m)?;
    let data = load_scenes(&c.scenes, &mut m)?;
    let mut all = Vec::new();
    for (k, model) in models.iter().enumerate() {
        let reports = sweep_layers(model, &data, &[Protocol::Upright, Protocol::RotatedQuarter], &cfg.eval)?;
        let dir = c.common.out.join(format!("model{k}"));
        for r in &reports {
            save_report(r, &dir, &mut m)?;
        }
        write(&dir.join("layer_curve.csv"), layer_curve_csv(&reports).as_bytes(), &mut m)?;
        all.push(reports);
    }
    let curve = aggregate_layer_curve(&all);
    write(&c.common.out.join("layer_curve.csv"), curve.as_bytes(), &mut m)?;
    m.finish(&c.common.out)?;
    print!("{curve}");
    Ok(())
}

fn sweep_angles_cmd(c: SweepAngles) -> Result<()> {
    let common = &c.sweep.common;
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.eval.seed = s;
    }
    let mut m = start_manifest(common, &cfg, cfg.eval.seed)?;
    let models = load_models(&c.sweep.model, common, &cfg, &mut m)?;
    let data = load_scenes(&c.sweep.scenes, &mut m)?;
    let angles = c.angles.clone().unwrap_or_else(default_angles);
    let points = sweep_angles(&models, &data, &angles, &cfg.eval)?;
    let csv = angle_curve_csv(&models[0].regime, &points);
    write(&common.out.join("angle_curve.csv"), csv.as_bytes(), &mut m)?;
    write(&common.out.join("angle_curve.json"), serde_json::to_string_pretty(&points)?.as_bytes(), &mut m)?;
    m.finish(&common.out)?;
    print!("{csv}");
    Ok(())
}

fn ablate_data(c: AblateData) -> Result<()> {
    let mut cfg = load_config(c.common.config.as_deref())?;
    if let Some(r) = c.regime {
        cfg.train.regime = r;
    }
    let base_seed = c.common.seed.unwrap_or(cfg.train.seed);
    if c.seeds == 0 || c.fractions.is_empty() {
        bail!("need at least one seed and one data fraction");
    }
    let mut m = start_manifest(&c.common, &cfg, base_seed)?;
    let test = load_scenes(&c.scenes, &mut m)?;
    let full = build_dataset(&cfg.train.scenes, 1.0)?;
    let mut csv = String::from("fraction,seed,upright_auc20,rotated_auc20\n");
    let mut summary: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for &fraction in &c.fractions {
        let data = full.subset(fraction)?;
        let (mut up, mut rot) = (Vec::new(), Vec::new());
        for s in 0..c.seeds {
            let mut tc = cfg.train.clone();
            tc.seed = base_seed + s;
            tc.data_fraction = fraction;
            let (model, _) = run_regime_on(&tc, &data, None)?;
            let l = model.matcher.n_layers();
            let u = run_benchmark(&model, &test, Protocol::Upright, l, &cfg.eval)?.auc20;
            let r = run_benchmark(&model, &test, Protocol::RotatedQuarter, l, &cfg.eval)?.auc20;
            csv.push_str(&format!("{fraction},{},{u},{r}\n", tc.seed));
            up.push(u);
            rot.push(r);
        }
        summary.push((fraction, up, rot));
    }
    let mut table = String::from("fraction,mean_upright_auc20,mean_rotated_auc20,delta_upright,delta_rotated\n");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (bu, br) = (mean(&summary[0].1), mean(&summary[0].2));
    for (f, up, rot) in &summary {
        let (u, r) = (mean(up), mean(rot));
        table.push_str(&format!("{f},{u},{r},{},{}\n", u - bu, r - br));
    }
    write(&c.common.out.join("ablation_runs.csv"), csv.as_bytes(), &mut m)?;
    write(&c.common.out.join("ablation.csv"), table.as_bytes(), &mut m)?;
    m.finish(&c.common.out)?;
    print!("{table}");
    Ok(())
}

fn viz_desc(c: VizDesc) -> Result<()> {
    let cfg = ExperimentConfig::default();
    let mut m = RunManifest::start(std::env::args().collect(), cfg.hash(), 0);
    let model = load_model(&c.model, &mut m)?;
    let image = Image::load_ppm(&c.image)?;
    m.consume(&c.image)?;
    let turns = viz::quarter_turns(c.angle)?;
    let describe = |img: &Image, pts: &[nalgebra::Vector2<f64>]| Ok(model.descriptor.describe(img, pts)?.descriptors);
    let v = viz::visualize(describe, &image, turns, c.cell)?;
    write(&c.out.join("upright.ppm"), &v.upright.to_ppm(), &mut m)?;
    write(&c.out.join("rotated.ppm"), &v.rotated.to_ppm(), &mut m)?;
    let summary = serde_json::json!({ "angle": c.angle, "cell": c.cell, "discrepancy": v.discrepancy });
    write(&c.out.join("discrepancy.json"), serde_json::to_string_pretty(&summary)?.as_bytes(), &mut m)?;
    m.finish(&c.out)?;
    println!("discrepancy {:.6}", v.discrepancy);
    Ok(())
}

fn plot_cmd(c: Plot) -> Result<()> {
    let cfg = ExperimentConfig::default();
    let mut m = RunManifest::start(std::env::args().collect(), cfg.hash(), 0);
    let mut series = Vec::new();
    for p in &c.input {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        series.extend(plot::series_from_csv(&text).with_context(|| format!("in {}", p.display()))?);
        m.consume(p)?;
    }
    let img = plot::render(&series, c.width, c.height)?;
    write(&c.out, &img.to_ppm(), &mut m)?;
    let legend: String = series
        .iter()
        .enumerate()
        .map(|(k, s)| format!("{k}: {}\n", s.label))
        .collect();
    let dir = c.out.parent().map(Path::to_path_buf).unwrap_or_default();
    write(&c.out.with_extension("legend.txt"), legend.as_bytes(), &mut m)?;
    m.finish(&dir)?;
    Ok(())
}
