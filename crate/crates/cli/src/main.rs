use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use textborder::annotations::{AnnotationFormat, DetectionFormat};
use textborder::eval::Protocol;
use textborder::pipeline::{
    run_augment, run_decode, run_evaluate, run_labels, run_losscheck, run_simulate, run_synth, PipelineConfig,
    PipelineError,
};

/// Text detection with border semantics: augmentation, label maps, oracle
/// predictions, decoding and evaluation.
#[derive(Parser, Debug)]
#[command(name = "textborder", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset of rendered scenes with MSRA ground truth.
    Synth {
        /// Number of images.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Write augmented copies of every dataset image.
    Augment {
        /// Copies per image.
        #[arg(long, short = 'n')]
        count: Option<usize>,
        /// Also apply a random rescale and 512×512 crop.
        #[arg(long)]
        crop: bool,
    },
    /// Rasterize ground truth into label maps (FMAP files).
    Labels,
    /// Turn label maps into noisy oracle predictions.
    Simulate,
    /// Decode predicted maps into detection files.
    Decode {
        /// Also write overlay PNGs with border maps and boxes.
        #[arg(long)]
        overlays: bool,
    },
    /// Score detections against ground truth.
    Evaluate {
        /// Comma-separated IoU thresholds for an f-score sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
    },
    /// Check loss gradients against finite differences.
    Losscheck {
        /// Number of random fixtures.
        #[arg(long)]
        fixtures: Option<usize>,
        /// Side length of each fixture map.
        #[arg(long)]
        size: Option<usize>,
    },
}

/// Options shared by all subcommands; each overrides the config file.
#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory (images with ground truth).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Ground-truth format: msra, icdar13 or icdar17.
    #[arg(long, global = true)]
    format: Option<AnnotationFormat>,
    /// Input directory: maps for simulate/decode, detections for evaluate.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Map stride: 1, 2 or 4.
    #[arg(long, global = true)]
    stride: Option<u32>,
    /// IoU threshold of the non-maximum suppression.
    #[arg(long, global = true)]
    nms_iou: Option<f64>,
    #[arg(long, global = true)]
    noise_sigma_score: Option<f64>,
    /// Distance-channel noise, in pixels.
    #[arg(long, global = true)]
    noise_sigma_dist: Option<f64>,
    /// Fraction of score pixels zeroed per channel.
    #[arg(long, global = true)]
    noise_dropout: Option<f64>,
    /// Evaluation protocol: msra, icdar13 or icdar17.
    #[arg(long, global = true)]
    protocol: Option<Protocol>,
    #[arg(long, global = true)]
    iou_threshold: Option<f64>,
    /// Detection file layout: msra or quad.
    #[arg(long, global = true)]
    detection_format: Option<DetectionFormat>,
    /// Drop difficult boxes instead of treating them as don't-care.
    #[arg(long, global = true)]
    exclude_difficult: bool,
    /// Decode without the border maps.
    #[arg(long, global = true)]
    no_borders: bool,
    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let a = &cli.common;
    let mut cfg = match &a.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.dataset, a.dataset.clone());
    set(&mut cfg.format, a.format);
    if a.input.is_some() {
        cfg.input = a.input.clone();
    }
    set(&mut cfg.output, a.out.clone());
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.jobs, a.jobs);
    set(&mut cfg.decoder.stride, a.stride);
    set(&mut cfg.decoder.nms_iou, a.nms_iou);
    set(&mut cfg.noise.sigma_score, a.noise_sigma_score);
    set(&mut cfg.noise.sigma_dist, a.noise_sigma_dist);
    set(&mut cfg.noise.dropout, a.noise_dropout);
    set(&mut cfg.protocol, a.protocol);
    set(&mut cfg.iou_threshold, a.iou_threshold);
    set(&mut cfg.detection_format, a.detection_format);
    if a.exclude_difficult {
        cfg.keep_difficult = false;
    }
    if a.no_borders {
        cfg.decoder.use_borders = false;
    }
    match &cli.command {
        Cmd::Synth { count } => set(&mut cfg.synth_count, *count),
        Cmd::Augment { count, crop } => {
            set(&mut cfg.augment_count, *count);
            cfg.crop |= crop;
        }
        Cmd::Decode { overlays } => cfg.overlays |= overlays,
        Cmd::Evaluate { sweep } if !sweep.is_empty() => cfg.sweep = sweep.clone(),
        Cmd::Losscheck { fixtures, size } => {
            set(&mut cfg.loss_fixtures, *fixtures);
            set(&mut cfg.loss_size, *size);
        }
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    let out = cfg.output.display();
    match cli.command {
        Cmd::Synth { .. } => {
            let entries = run_synth(&cfg)?;
            println!("wrote {} images to {out}", entries.len());
        }
        Cmd::Augment { .. } => {
            let entries = run_augment(&cfg)?;
            println!("wrote {} augmented images to {out}", entries.len());
        }
        Cmd::Labels => {
            let entries = run_labels(&cfg)?;
            println!("wrote {} label maps to {out}", entries.len());
        }
        Cmd::Simulate => {
            let entries = run_simulate(&cfg)?;
            println!("wrote {} prediction maps to {out}", entries.len());
        }
        Cmd::Decode { .. } => {
            let entries = run_decode(&cfg)?;
            let boxes: usize = entries.iter().map(|e| e.boxes).sum();
            println!("decoded {boxes} boxes from {} maps into {out}", entries.len());
        }
        Cmd::Evaluate { .. } => {
            let report = run_evaluate(&cfg).context("evaluation incomplete")?;
            print!("{}", report.to_table());
        }
        Cmd::Losscheck { .. } => {
            let r = run_losscheck(&cfg)?;
            println!(
                "gradient check passed on {} fixtures: dice {:.2e}, iou {:.2e}, decomposition {:.2e}",
                r.fixtures, r.dice_max_rel_error, r.iou_max_rel_error, r.decomposition_max_abs_error
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_usage);
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
