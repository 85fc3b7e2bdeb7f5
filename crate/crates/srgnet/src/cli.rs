//! Command-line front end. Every subcommand reads files, runs one pipeline
//! stage and writes files; [`run`] is the whole program minus process exit.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use srgnet_core::config::RunConfig;
use srgnet_core::eval;
use srgnet_core::fixtures;
use srgnet_core::kmeans::{kmeans, pipeline_features, KmeansOptions};
use srgnet_core::model::SrgNet;
use srgnet_core::normals::estimate_normals;
use srgnet_core::sampling::downsample;
use srgnet_core::spatial::knn_graph;
use srgnet_core::srg;
use srgnet_core::train::{self, TrainOutcome};
use srgnet_core::{LabelMap, PointCloud};

use crate::config_file;
use crate::error::{Error, Result};
use crate::io::{self, Palette};
use crate::model_file;
use crate::report::{self, Manifest, Metrics};

#[derive(Debug, Parser)]
#[command(name = "srgnet", version, about = "Unsupervised point-cloud part segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep `downsample_n` points of a cloud.
    Downsample(DownsampleArgs),
    /// Estimate normals and write `x y z nx ny nz` rows.
    Normals(NormalsArgs),
    /// Region-growing pre-segmentation.
    Srg(SrgArgs),
    /// K-means baseline over centered positions and normals.
    Kmeans(KmeansArgs),
    /// Self-train the network against region-growing clusters.
    Train(TrainArgs),
    /// Label a cloud with a trained network.
    Infer(InferArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Downsample, normals, region growing, training and export in one run.
    Pipeline(PipelineArgs),
    /// Write a synthetic fixture cloud with its ground-truth labels.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Overrides `rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            config_file::apply_file(&mut c, path)?;
        }
        for pair in &self.sets {
            config_file::apply_override(&mut c, pair)?;
        }
        if let Some(seed) = self.seed {
            c.rng_seed = seed;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output cloud, written as XYZ(N) text.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct NormalsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Neighbors per point; overrides `knn_k`.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SrgArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub ply: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct KmeansArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub ply: Option<PathBuf>,
    /// Cluster count; defaults to the region-growing target.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Pre-computed region-growing labels; region growing runs when absent.
    #[arg(long)]
    pub srg_labels: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub ply: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub ply: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth labels for scoring.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Time this many inference passes (after one warm-up) into the
    /// metrics. Off by default so reruns stay byte-identical.
    #[arg(long)]
    pub latency_reps: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Sphere head, cylinder body, rounded box base.
    Figure,
    /// Two half-planes meeting at 90°.
    Dihedral,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: FixtureKind,
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// OBJ output with `v` and `vn` records.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Downsample(_) => "downsample",
            Self::Normals(_) => "normals",
            Self::Srg(_) => "srg",
            Self::Kmeans(_) => "kmeans",
            Self::Train(_) => "train",
            Self::Infer(_) => "infer",
            Self::Eval(_) => "eval",
            Self::Pipeline(_) => "pipeline",
            Self::Synth(_) => "synth",
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Downsample(a) => cmd_downsample(&a),
        Command::Normals(a) => cmd_normals(&a),
        Command::Srg(a) => cmd_srg(&a),
        Command::Kmeans(a) => cmd_kmeans(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

/// The cloud itself when it carries normals, otherwise a copy with PCA
/// normals over a `k`-neighbor graph.
pub fn ensure_normals(cloud: PointCloud, k: usize) -> Result<PointCloud> {
    if cloud.has_normals() {
        return Ok(cloud);
    }
    let graph = knn_graph(&cloud, k)?;
    Ok(estimate_normals(&cloud, &graph)?.cloud)
}

pub fn run_srg(cloud: &PointCloud, config: &RunConfig) -> Result<LabelMap> {
    let graph = knn_graph(cloud, config.knn_k)?;
    let params = config.srg_settings().resolve(&graph)?;
    Ok(srg::segment(cloud, &graph, &params)?)
}

pub fn run_kmeans(cloud: &PointCloud, k: usize, seed: u64) -> Result<LabelMap> {
    let features = pipeline_features(cloud)?;
    let result = kmeans(&features, 6, &KmeansOptions::new(k, seed))?;
    Ok(result.labels.compact())
}

pub fn run_train(cloud: &PointCloud, clusters: &LabelMap, config: &RunConfig) -> Result<TrainOutcome> {
    Ok(train::train(cloud, clusters, &config.model, &config.train_config())?)
}

fn write_ply(cloud: &PointCloud, labels: &LabelMap, path: &Path) -> Result<()> {
    io::export_ply_colored(cloud, labels, &Palette::with_len(labels.k()), path)
}

fn write_manifest(manifest: &Manifest, config: &RunConfig, path: &Path) -> Result<()> {
    io::write_text(path, &manifest.render(config))
}

pub fn cmd_downsample(a: &DownsampleArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let cloud = io::load_cloud(&a.input)?;
    let out = downsample(&cloud, config.downsample_n, config.downsample_method, config.rng_seed)?;
    io::write_xyz(&out, &a.output)
}

pub fn cmd_normals(a: &NormalsArgs) -> Result<()> {
    let mut config = a.config.resolve()?;
    if let Some(k) = a.k {
        config.knn_k = k;
    }
    let cloud = io::load_cloud(&a.input)?.without_normals();
    let graph = knn_graph(&cloud, config.knn_k)?;
    io::write_xyz(&estimate_normals(&cloud, &graph)?.cloud, &a.output)
}

pub fn cmd_srg(a: &SrgArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let cloud = ensure_normals(io::load_cloud(&a.input)?, config.knn_k)?;
    let labels = run_srg(&cloud, &config)?;
    io::write_labels(&labels, &a.labels)?;
    if let Some(ply) = &a.ply {
        write_ply(&cloud, &labels, ply)?;
    }
    Ok(())
}

pub fn cmd_kmeans(a: &KmeansArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let k = a.k.or(config.srg.target_k).unwrap_or(srg::DEFAULT_TARGET_K);
    let cloud = ensure_normals(io::load_cloud(&a.input)?, config.knn_k)?;
    let labels = run_kmeans(&cloud, k, config.rng_seed)?;
    io::write_labels(&labels, &a.labels)?;
    if let Some(ply) = &a.ply {
        write_ply(&cloud, &labels, ply)?;
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let cloud = ensure_normals(io::load_cloud(&a.input)?, config.knn_k)?;
    let clusters = match &a.srg_labels {
        Some(path) => io::read_labels(path)?,
        None => run_srg(&cloud, &config)?,
    };
    let out = run_train(&cloud, &clusters, &config)?;
    model_file::save(&out.net, &a.model)?;
    io::write_labels(&out.labels, &a.labels)?;
    if let Some(path) = &a.history {
        io::write_text(path, &report::history_csv(&out.history))?;
    }
    if let Some(ply) = &a.ply {
        write_ply(&cloud, &out.labels, ply)?;
    }
    Ok(())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let net = model_file::load(&a.model)?;
    let cloud = ensure_normals(io::load_cloud(&a.input)?, config.knn_k)?;
    let labels = train::infer(&net, &cloud)?;
    io::write_labels(&labels, &a.labels)?;
    if let Some(ply) = &a.ply {
        write_ply(&cloud, &labels, ply)?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let pred = io::read_labels(&a.pred)?;
    let gt = io::read_labels(&a.gt)?;
    let score = eval::miou(&pred, &gt)?;
    let metrics = Metrics::new(pred.len(), pred.num_distinct(), &config).with_score(&score);
    io::write_text(&a.output, &metrics.to_json())
}

/// File names inside a pipeline run directory.
pub mod outputs {
    pub const CLOUD: &str = "cloud.xyz";
    pub const SRG_LABELS: &str = "srg_labels.txt";
    pub const SRG_PLY: &str = "srg.ply";
    pub const MODEL: &str = "model.srgnet";
    pub const LABELS: &str = "labels.txt";
    pub const PLY: &str = "segmentation.ply";
    pub const HISTORY: &str = "history.csv";
    pub const METRICS: &str = "metrics.json";
    pub const CONFIG: &str = "config.txt";
    pub const MANIFEST: &str = "manifest.txt";
}

pub fn cmd_pipeline(a: &PipelineArgs) -> Result<()> {
    let config = a.config.resolve()?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let out = |name: &str| a.out_dir.join(name);
    let mut manifest = Manifest::new("pipeline");
    manifest.input(&a.input)?;
    let gt = match &a.gt {
        Some(path) => {
            manifest.input(path)?;
            Some(io::read_labels(path)?)
        }
        None => None,
    };

    let raw = io::load_cloud(&a.input)?;
    let keep = srgnet_core::sampling::downsample_indices(
        &raw,
        config.downsample_n,
        config.downsample_method,
        config.rng_seed,
    )?;
    let cloud = ensure_normals(raw.select(&keep)?, config.knn_k)?;
    let gt = match gt {
        Some(g) => {
            g.check(raw.len())?;
            Some(LabelMap::from_labels(keep.iter().map(|&i| g.get(i)).collect()))
        }
        None => None,
    };
    io::write_xyz(&cloud, &out(outputs::CLOUD))?;

    let clusters = run_srg(&cloud, &config)?;
    io::write_labels(&clusters, &out(outputs::SRG_LABELS))?;
    write_ply(&cloud, &clusters, &out(outputs::SRG_PLY))?;

    let trained = run_train(&cloud, &clusters, &config)?;
    model_file::save(&trained.net, &out(outputs::MODEL))?;
    io::write_labels(&trained.labels, &out(outputs::LABELS))?;
    write_ply(&cloud, &trained.labels, &out(outputs::PLY))?;
    io::write_text(&out(outputs::HISTORY), &report::history_csv(&trained.history))?;
    io::write_text(&out(outputs::CONFIG), &config_file::render(&config))?;

    let mut metrics = Metrics::new(cloud.len(), trained.labels.num_distinct(), &config);
    if let Some(gt) = &gt {
        metrics = metrics.with_score(&eval::miou(&trained.labels, gt)?);
        metrics.srg_miou = Some(eval::miou(&clusters, gt)?.miou);
    }
    if let Some(reps) = a.latency_reps {
        metrics.latency_ms = Some(latency_of(&trained.net, &cloud, reps)?);
    }
    io::write_text(&out(outputs::METRICS), &metrics.to_json())?;

    manifest.note("points_in", raw.len());
    manifest.note("points_used", cloud.len());
    manifest.note("srg_clusters", clusters.num_distinct());
    manifest.note("iterations_run", trained.history.len());
    manifest.note("warmup_iterations", trained.history.warmup_iterations);
    manifest.note("stop", report::stop_reason(&trained.history.stop));
    manifest.outputs = [
        outputs::CLOUD,
        outputs::SRG_LABELS,
        outputs::SRG_PLY,
        outputs::MODEL,
        outputs::LABELS,
        outputs::PLY,
        outputs::HISTORY,
        outputs::CONFIG,
        outputs::METRICS,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    write_manifest(&manifest, &config, &out(outputs::MANIFEST))
}

/// Full inference on one cloud: graph construction, covariance features,
/// forward pass and argmax.
fn latency_of(net: &SrgNet, cloud: &PointCloud, reps: usize) -> Result<report::Latency> {
    let mut failure = None;
    let timing = report::latency(
        || {
            if let Err(e) = train::infer(net, cloud) {
                failure = Some(e);
            }
        },
        reps,
    )?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(timing),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let (cloud, truth) = match a.kind {
        FixtureKind::Figure => fixtures::three_part_figure(a.n, a.seed),
        FixtureKind::Dihedral => fixtures::dihedral(a.n, a.seed),
    };
    io::write_text(&a.output, &io::format_obj(&cloud))?;
    io::write_labels(&truth, &a.gt)
}

/// `error kind=<kind> command=<name>: <message>` on one line.
pub fn error_line(command: &str, e: &Error) -> String {
    let message = e.to_string().replace(['\n', '\r'], " ");
    format!("error kind={} command={command}: {message}", e.kind())
}
