//! Command-line interface. Each subcommand is a plain function so it can be
//! driven from tests without spawning a process.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::io::{self, BitDepth};
use crate::lut::{self, FusionWeights, Lut3D};
use crate::metrics::{format_psnr, MetricReport};
use crate::predictor::FcInit;
use crate::regularizers::RegConfig;
use crate::trainer::{self, AdaptiveModel, AugmentConfig, TrainConfig};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "lutforge", version, about = "Train and apply image-adaptive 3D LUTs")]
pub struct Cli {
    /// Worker threads for LUT application (defaults to all cores).
    #[arg(long, global = true, env = "LUTFORGE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train basis LUTs and the weight predictor on paired images.
    Train(TrainArgs),
    /// Enhance one image with a trained model.
    Apply(ApplyArgs),
    /// Report mean PSNR, SSIM and ΔE over a dataset.
    Eval(EvalArgs),
    /// Write the fused LUT for given weights or a reference image.
    ExportCube(ExportArgs),
    /// Measure LUT application throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Manifest of `input<TAB>target` lines.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 3)]
    pub luts: usize,
    #[arg(long, default_value_t = lut::DEFAULT_LATTICE)]
    pub lattice: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda_s: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda_m: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub no_augment: bool,
    /// Train the basis LUTs alone with every weight fixed at 1.
    #[arg(long)]
    pub no_predictor: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Bypass the predictor with explicit fusion weights.
    #[arg(long, value_delimiter = ',')]
    pub fixed_weights: Option<Vec<f32>>,
    /// Output bit depth; defaults to the input's.
    #[arg(long, value_parser = parse_depth)]
    pub bit_depth: Option<BitDepth>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', conflicts_with = "image", required_unless_present = "image")]
    pub weights: Option<Vec<f32>>,
    /// Reference image whose predicted weights are used.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value = "lutforge")]
    pub title: String,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = lut::DEFAULT_LATTICE)]
    pub lattice: usize,
    #[arg(long, default_value_t = 3840)]
    pub width: usize,
    #[arg(long, default_value_t = 2160)]
    pub height: usize,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
}

fn parse_depth(s: &str) -> std::result::Result<BitDepth, String> {
    match s {
        "8" => Ok(BitDepth::Eight),
        "16" => Ok(BitDepth::Sixteen),
        _ => Err(format!("bit depth must be 8 or 16, got {s}")),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let threads = pool.current_num_threads();
    pool.install(|| match cli.command {
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            println!("trained {} steps; final mean over training set:", s.steps);
            print_report(&s.report);
            println!("checkpoint: {}", s.checkpoint.display());
            Ok(())
        }
        Command::Apply(a) => cmd_apply(&a),
        Command::Eval(a) => {
            let (r, n) = cmd_eval(&a)?;
            println!("{n} image pairs");
            print_report(&r);
            Ok(())
        }
        Command::ExportCube(a) => cmd_export_cube(&a),
        Command::Bench(a) => {
            let r = bench_apply(a.lattice, a.width, a.height, threads, a.iterations)?;
            println!(
                "{}x{} lattice {} threads {}: {:.2} ms/frame, {:.1} Mpix/s",
                r.width, r.height, a.lattice, r.threads, r.ms_per_frame, r.mpix_per_s
            );
            Ok(())
        }
    })
}

fn print_report(r: &MetricReport) {
    println!("PSNR {} dB  SSIM {:.4}  dE {:.3}", format_psnr(r.psnr), r.ssim, r.delta_e);
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub report: MetricReport,
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainSummary> {
    let samples = io::load_dataset(&a.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut model = if a.no_predictor {
        AdaptiveModel::without_predictor(a.luts, a.lattice)?
    } else {
        AdaptiveModel::new(a.luts, a.lattice, FcInit::Zero, &mut rng)?
    };
    let config = TrainConfig {
        learning_rate: a.lr,
        reg: RegConfig { lambda_s: a.lambda_s, lambda_m: a.lambda_m },
        epochs: a.epochs,
        max_steps: a.max_steps,
        seed: a.seed,
        augment: if a.no_augment { AugmentConfig::disabled() } else { AugmentConfig::default() },
        checkpoint_dir: Some(a.out.clone()),
        ..TrainConfig::default()
    };
    config.validate()?;
    let report = trainer::train(&mut model, &samples, &config)?;
    let checkpoint = a.out.join("model.ckpt");
    io::write_checkpoint(&checkpoint, &model, Some(&report.adam))?;
    trainer::write_history_csv(&report.history, BufWriter::new(File::create(a.out.join("metrics.csv"))?))?;
    let reports = samples
        .iter()
        .map(|s| MetricReport::compute(&model.enhance(&s.input)?.clamped(), &s.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainSummary { steps: report.steps(), checkpoint, report: MetricReport::mean(&reports).expect("dataset is non-empty") })
}

fn load_model(path: &Path) -> Result<AdaptiveModel<f32>> {
    Ok(io::read_checkpoint(path)?.0)
}

fn weights_or_predict(model: &AdaptiveModel<f32>, fixed: Option<&[f32]>, image: &ImageBuffer<f32>) -> Result<FusionWeights<f32>> {
    match fixed {
        Some(w) => {
            if w.len() != model.num_luts() {
                return Err(Error::WeightCountMismatch { expected: model.num_luts(), found: w.len() });
            }
            FusionWeights::new(w.to_vec())
        }
        None => model.weights_for(image),
    }
}

pub fn apply_image(model: &AdaptiveModel<f32>, image: &ImageBuffer<f32>, fixed: Option<&[f32]>) -> Result<ImageBuffer<f32>> {
    let w = weights_or_predict(model, fixed, image)?;
    model.apply_adaptive(image, &w)
}

pub fn cmd_apply(a: &ApplyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (image, depth) = io::read_image(&a.input)?;
    let out = apply_image(&model, &image, a.fixed_weights.as_deref())?;
    io::write_image(&out, &a.output, a.bit_depth.unwrap_or(depth))
}

/// Mean metrics over the manifest; predictions are quantized to each
/// target's bit depth first, as a written output file would be.
pub fn cmd_eval(a: &EvalArgs) -> Result<(MetricReport, usize)> {
    let model = load_model(&a.model)?;
    let pairs = io::read_manifest(&a.data)?;
    let mut reports = Vec::with_capacity(pairs.len());
    for (input, target) in &pairs {
        let (x, _) = io::read_image(input)?;
        let (y, depth) = io::read_image(target)?;
        let q = depth.quantize(&model.enhance(&x)?);
        reports.push(MetricReport::compute(&q, &y)?);
    }
    let mean = MetricReport::mean(&reports).ok_or(Error::EmptyDataset)?;
    Ok((mean, reports.len()))
}

pub fn export_lut(model: &AdaptiveModel<f32>, weights: Option<&[f32]>, image: Option<&Path>) -> Result<Lut3D<f32>> {
    let w = match (weights, image) {
        (Some(w), _) => weights_or_predict(model, Some(w), &ImageBuffer::filled(1, 1, [0.0; 3])?)?,
        (None, Some(p)) => model.weights_for(&io::read_image(p)?.0)?,
        (None, None) => return Err(Error::Config("export needs --weights or --image".into())),
    };
    model.fused(&w)
}

pub fn cmd_export_cube(a: &ExportArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let lut = export_lut(&model, a.weights.as_deref(), a.image.as_deref())?;
    io::write_cube_file(&lut, &a.title, &a.output)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub threads: usize,
    pub ms_per_frame: f64,
    pub mpix_per_s: f64,
}

/// A fixed non-trivial LUT for benchmarking.
pub fn bench_lut(lattice: usize) -> Result<Lut3D<f32>> {
    let s = 1.0 / (lattice - 1).max(1) as f32;
    Lut3D::from_fn(lattice, |i, j, k| {
        let (r, g, b) = (i as f32 * s, j as f32 * s, k as f32 * s);
        [r.powf(0.8), 0.2 * r + 0.7 * g + 0.1 * b, b * b]
    })
}

/// Times [`lut::apply`] on a `width × height` frame using a dedicated pool
/// of `threads` workers; reports the best of `iterations` runs.
pub fn bench_apply(lattice: usize, width: usize, height: usize, threads: usize, iterations: usize) -> Result<BenchReport> {
    let lut = bench_lut(lattice)?;
    let frame = ImageBuffer::from_fn(width, height, |x, y| {
        let u = x as f32 / width.max(2) as f32;
        let v = y as f32 / height.max(2) as f32;
        [u, v, (u + v) * 0.5]
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut best = f64::INFINITY;
    pool.install(|| {
        std::hint::black_box(lut::apply(&lut, &frame));
        for _ in 0..iterations.max(1) {
            let t = Instant::now();
            std::hint::black_box(lut::apply(&lut, &frame));
            best = best.min(t.elapsed().as_secs_f64());
        }
    });
    let ms = best * 1e3;
    Ok(BenchReport { width, height, threads, ms_per_frame: ms, mpix_per_s: (width * height) as f64 / best / 1e6 })
}
