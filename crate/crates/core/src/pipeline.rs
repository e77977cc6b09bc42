//! Batch commands over directories of images, annotations and maps.
//!
//! A dataset directory holds images (`.png`, `.jpg`, `.jpeg`) with ground
//! truth beside them, found by trying `<stem>.gt`, `gt_<stem>.txt` and
//! `<stem>.txt` in that order. Inputs are processed in file-name order and
//! every random stream is derived from the configured seed and the input's
//! position, so outputs do not depend on the worker count. All files are
//! written atomically; the only wall-clock value written anywhere is the
//! `created_unix` field of each command's manifest.

use std::fs;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use image::{ImageFormat, Rgb, RgbImage};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    parse_annotations, parse_detections, write_detections, write_tabs_msra, AnnotatedImage, AnnotationFormat,
    DetectionFormat, ParseOptions,
};
use crate::augment::{augment_image, random_resize_crop, SampleWindow, DEFAULT_AUGMENT_COUNT};
use crate::decoder::{binarize, decode, oracle_predict, DecodeParams, NoiseSpec, PredictionMaps};
use crate::eval::{evaluate, iou_sweep, EvalImage, MatchReport, Protocol, DEFAULT_ANGLE_THRESHOLD};
use crate::fmap::{self, write_atomic};
use crate::geometry::DetectionBox;
use crate::labels::{rasterize_labels, LabelMaps, MAP_CHANNELS};
use crate::losses::{gradient_check, GradientCheckReport};
use crate::synth::{random_annotated_image, render_scene, SceneSpec};

/// Slack used when warning about annotations that leave the image.
const BOUNDS_SLACK: f64 = 20.0;
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
const BORDER_COLORS: [[u8; 3]; 4] = [[230, 50, 50], [50, 110, 230], [240, 200, 30], [160, 60, 200]];
const BOX_COLOR: [u8; 3] = [20, 220, 60];
/// Background for overlays of maps with no matching image.
const PAD_BACKGROUND: u8 = 40;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad configuration or arguments.
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// Some inputs could not be processed; each was logged.
    #[error("{failed} of {total} inputs failed")]
    Inputs { failed: usize, total: usize },
    #[error("gradient check failed: {0}")]
    Check(String),
}

impl PipelineError {
    pub fn is_usage(&self) -> bool {
        matches!(self, Self::Config(_))
    }
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Synth,
    Augment,
    Labels,
    Simulate,
    Decode,
    Evaluate,
    Losscheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Synth => "synth",
            Self::Augment => "augment",
            Self::Labels => "labels",
            Self::Simulate => "simulate",
            Self::Decode => "decode",
            Self::Evaluate => "evaluate",
            Self::Losscheck => "losscheck",
        }
    }
}

/// Settings for every command. Unused fields are ignored by a command, so
/// one file can describe a whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Images with ground truth.
    pub dataset: PathBuf,
    pub format: AnnotationFormat,
    pub keep_difficult: bool,
    /// Map directory for `simulate` and `decode`, detection directory for
    /// `evaluate`.
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub augment_count: usize,
    /// Follow each augmentation with a random rescale and fixed-size crop.
    pub crop: bool,
    pub noise: NoiseSpec,
    /// Decoder settings. `decoder.stride` is also the label stride.
    pub decoder: DecodeParams,
    pub detection_format: DetectionFormat,
    /// Write overlay PNGs when decoding.
    pub overlays: bool,
    pub protocol: Protocol,
    pub iou_threshold: f64,
    /// Extra thresholds for an f-score sweep, written next to the report.
    pub sweep: Vec<f64>,
    pub synth_count: usize,
    pub scene: SceneSpec,
    pub loss_fixtures: usize,
    pub loss_size: usize,
    pub loss_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("."),
            format: AnnotationFormat::Msra,
            keep_difficult: true,
            input: None,
            output: PathBuf::from("out"),
            seed: 0,
            jobs: 0,
            augment_count: DEFAULT_AUGMENT_COUNT,
            crop: false,
            noise: NoiseSpec::default(),
            decoder: DecodeParams::default(),
            detection_format: DetectionFormat::Msra,
            overlays: false,
            protocol: Protocol::Msra,
            iou_threshold: 0.5,
            sweep: Vec::new(),
            synth_count: 10,
            scene: SceneSpec::default(),
            loss_fixtures: 100,
            loss_size: 16,
            loss_tolerance: 1e-4,
        }
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), PipelineError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(config_error(format!("{what} directory {} does not exist", path.display())))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("invalid config {}: {e}", path.display())))
    }

    fn input_dir(&self, what: &str) -> Result<&Path, PipelineError> {
        let dir = self
            .input
            .as_deref()
            .ok_or_else(|| config_error(format!("no {what} directory given (set `input`)")))?;
        require_dir(dir, what)?;
        Ok(dir)
    }

    /// Checks the values and paths `command` relies on.
    pub fn validate(&self, command: Command) -> Result<(), PipelineError> {
        let d = &self.decoder;
        if ![1, 2, 4].contains(&d.stride) {
            return Err(config_error(format!("stride must be 1, 2 or 4, got {}", d.stride)));
        }
        if !(0.0..=1.0).contains(&d.nms_iou) {
            return Err(config_error(format!("nms IoU must lie in [0, 1], got {}", d.nms_iou)));
        }
        let n = &self.noise;
        if !(n.sigma_score >= 0.0 && n.sigma_dist >= 0.0 && (0.0..=1.0).contains(&n.dropout)) {
            return Err(config_error(
                "noise sigmas must be non-negative and dropout must lie in [0, 1]",
            ));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(config_error(format!("IoU threshold must lie in (0, 1], got {}", self.iou_threshold)));
        }
        match command {
            Command::Synth if self.synth_count == 0 => Err(config_error("count must be ≥1")),
            Command::Synth => Ok(()),
            Command::Augment if self.augment_count == 0 => Err(config_error("count must be ≥1")),
            Command::Augment | Command::Labels => require_dir(&self.dataset, "dataset"),
            Command::Simulate => self.input_dir("label map").map(|_| ()),
            Command::Decode => self.input_dir("prediction map").map(|_| ()),
            Command::Evaluate => {
                require_dir(&self.dataset, "dataset")?;
                self.input_dir("detection").map(|_| ())
            }
            Command::Losscheck if self.loss_fixtures == 0 || self.loss_size == 0 => {
                Err(config_error("count must be ≥1"))
            }
            Command::Losscheck => Ok(()),
        }
    }
}

/// An input that could not be processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub input: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest<E> {
    pub command: Command,
    pub version: String,
    /// Seconds since the Unix epoch when the manifest was written.
    pub created_unix: u64,
    pub seed: u64,
    pub config: PipelineConfig,
    pub entries: Vec<E>,
    pub failures: Vec<Failure>,
}

pub fn manifest_path(out: &Path, command: Command) -> PathBuf {
    out.join(format!("manifest_{}.json", command.name()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(io_error(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    write_atomic(path, text.as_bytes()).map_err(io_error(path))
}

fn write_png(path: &Path, img: &RgbImage) -> Result<(), String> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    write_atomic(path, &buf).map_err(|e| e.to_string())
}

/// Writes the manifest, then turns per-input failures into an error.
fn finish<E: Serialize>(
    cfg: &PipelineConfig,
    command: Command,
    results: Vec<(String, Result<E, String>)>,
) -> Result<Vec<E>, PipelineError> {
    let total = results.len();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (input, result) in results {
        match result {
            Ok(e) => entries.push(e),
            Err(error) => {
                log::error!("{input}: {error}");
                failures.push(Failure { input, error });
            }
        }
    }
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix,
        seed: cfg.seed,
        config: cfg.clone(),
        entries,
        failures,
    };
    write_json(&manifest_path(&cfg.output, command), &manifest)?;
    if manifest.failures.is_empty() {
        Ok(manifest.entries)
    } else {
        Err(PipelineError::Inputs {
            failed: manifest.failures.len(),
            total,
        })
    }
}

/// Seed for the `index`-th input: one ChaCha stream per input.
pub fn input_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>, PipelineError>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| config_error(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()))
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Regular files in `dir` with one of `exts`, sorted by name.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_error(dir))? {
        let path = entry.map_err(io_error(dir))?.path();
        if path.is_file() && has_extension(&path, exts) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// First existing ground-truth file for `image`.
pub fn find_ground_truth(image: &Path) -> Option<PathBuf> {
    let dir = image.parent().unwrap_or(Path::new("."));
    let s = stem(image);
    [format!("{s}.gt"), format!("gt_{s}.txt"), format!("{s}.txt")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// Reads an image's size and its ground truth. The image pixels are not
/// decoded.
pub fn load_annotated(image: &Path, format: AnnotationFormat, keep_difficult: bool) -> Result<AnnotatedImage, String> {
    let (width, height) = image::image_dimensions(image).map_err(|e| format!("unreadable image: {e}"))?;
    let gt_path = find_ground_truth(image).ok_or("no ground-truth file found")?;
    let text = fs::read_to_string(&gt_path).map_err(|e| format!("{}: {e}", gt_path.display()))?;
    let (tabs, warnings) = parse_annotations(&text, format, &ParseOptions { keep_difficult })
        .map_err(|e| format!("{}: {e}", gt_path.display()))?;
    for w in warnings {
        log::warn!("{}:{}: skipped quadrilateral: {}", gt_path.display(), w.line, w.reason);
    }
    let img = AnnotatedImage {
        image_path: PathBuf::from(file_name(image)),
        width,
        height,
        tabs,
    };
    if let Err(e) = img.check_bounds(BOUNDS_SLACK) {
        log::warn!("{}: {e}", gt_path.display());
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEntry {
    pub image: String,
    pub annotations: String,
    pub tabs: usize,
}

/// Writes `synth_count` rendered scenes with MSRA ground truth.
pub fn run_synth(cfg: &PipelineConfig) -> Result<Vec<SynthEntry>, PipelineError> {
    cfg.validate(Command::Synth)?;
    fs::create_dir_all(&cfg.output).map_err(io_error(&cfg.output))?;
    let indices: Vec<usize> = (0..cfg.synth_count).collect();
    let results = par_map(cfg.jobs, &indices, |_, &i| {
        let name = format!("synth_{i:03}");
        let mut rng = ChaCha8Rng::seed_from_u64(input_seed(cfg.seed, i));
        let scene = random_annotated_image(&cfg.scene, &format!("{name}.png"), &mut rng);
        let pixels = render_scene(&scene, &mut rng);
        let result = (|| {
            write_png(&cfg.output.join(format!("{name}.png")), &pixels)?;
            write_atomic(&cfg.output.join(format!("{name}.gt")), write_tabs_msra(&scene.tabs).as_bytes())
                .map_err(|e| e.to_string())?;
            Ok(SynthEntry {
                image: format!("{name}.png"),
                annotations: format!("{name}.gt"),
                tabs: scene.tabs.len(),
            })
        })();
        (name, result)
    })?;
    finish(cfg, Command::Synth, results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub scale: f64,
    pub offset: (u32, u32),
    pub padding: (u32, u32),
    pub dropped_partial: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentEntry {
    pub source: String,
    pub image: String,
    pub annotations: String,
    /// Seed of the source image's augmentation stream.
    pub seed: u64,
    pub index: usize,
    pub windows: Vec<SampleWindow>,
    pub crop: Option<CropRecord>,
}

fn augment_one(cfg: &PipelineConfig, position: usize, path: &Path) -> Result<Vec<AugmentEntry>, String> {
    let img = load_annotated(path, cfg.format, cfg.keep_difficult)?;
    let pixels = image::open(path).map_err(|e| format!("unreadable image: {e}"))?.to_rgb8();
    let seed = input_seed(cfg.seed, position);
    let outputs = augment_image(&img, &pixels, cfg.augment_count, seed).map_err(|e| e.to_string())?;
    let digits = (cfg.augment_count - 1).max(1).to_string().len().max(2);
    let s = stem(path);
    outputs
        .into_iter()
        .map(|aug| {
            let index = aug.provenance.index;
            let name = format!("{s}_aug{index:0digits$}");
            let (pixels, tabs, crop) = if cfg.crop {
                let augmented = AnnotatedImage {
                    tabs: aug.tabs,
                    ..img.clone()
                };
                let mut rng = ChaCha8Rng::seed_from_u64(input_seed(seed, index));
                let c = random_resize_crop(&augmented, &aug.pixels, &mut rng).map_err(|e| e.to_string())?;
                let record = CropRecord {
                    scale: c.scale,
                    offset: c.offset,
                    padding: c.padding,
                    dropped_partial: c.dropped_partial,
                    fallback: c.fallback,
                };
                (c.pixels, c.image.tabs, Some(record))
            } else {
                (aug.pixels, aug.tabs, None)
            };
            write_png(&cfg.output.join(format!("{name}.png")), &pixels)?;
            write_atomic(&cfg.output.join(format!("{name}.gt")), write_tabs_msra(&tabs).as_bytes())
                .map_err(|e| e.to_string())?;
            Ok(AugmentEntry {
                source: aug.provenance.source,
                image: format!("{name}.png"),
                annotations: format!("{name}.gt"),
                seed,
                index,
                windows: aug.windows,
                crop,
            })
        })
        .collect()
}

/// Writes `augment_count` augmented copies of every dataset image, with
/// MSRA-format ground truth.
pub fn run_augment(cfg: &PipelineConfig) -> Result<Vec<AugmentEntry>, PipelineError> {
    cfg.validate(Command::Augment)?;
    fs::create_dir_all(&cfg.output).map_err(io_error(&cfg.output))?;
    let images = list_files(&cfg.dataset, &IMAGE_EXTENSIONS)?;
    let results = par_map(cfg.jobs, &images, |i, path| (file_name(path), augment_one(cfg, i, path)))?;
    let mut flat = Vec::new();
    for (input, result) in results {
        match result {
            Ok(entries) => flat.extend(entries.into_iter().map(|e| (input.clone(), Ok(e)))),
            Err(e) => flat.push((input, Err(e))),
        }
    }
    finish(cfg, Command::Augment, flat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub source: String,
    pub maps: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Seed of the oracle noise, for simulated predictions.
    pub seed: Option<u64>,
}

/// Label stack for writing: the validity channel is only kept when some
/// pixel is a don't-care pixel.
fn label_array(labels: &LabelMaps) -> ndarray::Array3<f32> {
    let all = labels.to_array();
    if labels.validity.iter().all(|&v| v == 1.0) {
        all.slice(ndarray::s![..MAP_CHANNELS, .., ..]).to_owned()
    } else {
        all
    }
}

/// Writes one label FMAP per dataset image.
pub fn run_labels(cfg: &PipelineConfig) -> Result<Vec<MapEntry>, PipelineError> {
    cfg.validate(Command::Labels)?;
    fs::create_dir_all(&cfg.output).map_err(io_error(&cfg.output))?;
    let images = list_files(&cfg.dataset, &IMAGE_EXTENSIONS)?;
    let results = par_map(cfg.jobs, &images, |_, path| {
        let result = (|| {
            let img = load_annotated(path, cfg.format, cfg.keep_difficult)?;
            let labels = rasterize_labels(&img, cfg.decoder.stride).map_err(|e| e.to_string())?;
            let array = label_array(&labels);
            let name = format!("{}.fmap", stem(path));
            fmap::write_file(&cfg.output.join(&name), &array).map_err(|e| e.to_string())?;
            let (channels, height, width) = array.dim();
            Ok(MapEntry {
                source: file_name(path),
                maps: name,
                height,
                width,
                channels,
                seed: None,
            })
        })();
        (file_name(path), result)
    })?;
    finish(cfg, Command::Labels, results)
}

/// Turns every label FMAP in `input` into a noisy oracle prediction.
pub fn run_simulate(cfg: &PipelineConfig) -> Result<Vec<MapEntry>, PipelineError> {
    cfg.validate(Command::Simulate)?;
    fs::create_dir_all(&cfg.output).map_err(io_error(&cfg.output))?;
    let maps = list_files(cfg.input_dir("label map")?, &["fmap"])?;
    let results = par_map(cfg.jobs, &maps, |i, path| {
        let result = (|| {
            let labels = LabelMaps::from_array(&fmap::read_file(path).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let seed = input_seed(cfg.seed, i);
            let preds = oracle_predict(&labels, &cfg.noise, &mut ChaCha8Rng::seed_from_u64(seed));
            let name = file_name(path);
            let array = preds.to_array();
            fmap::write_file(&cfg.output.join(&name), &array).map_err(|e| e.to_string())?;
            let (channels, height, width) = array.dim();
            Ok(MapEntry {
                source: name.clone(),
                maps: name,
                height,
                width,
                channels,
                seed: Some(seed),
            })
        })();
        (file_name(path), result)
    })?;
    finish(cfg, Command::Simulate, results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeEntry {
    pub source: String,
    pub detections: String,
    pub overlay: Option<String>,
    pub boxes: usize,
}

/// Reads predicted maps; a 10-channel label stack is read as a perfect
/// prediction.
fn read_prediction_maps(path: &Path) -> Result<PredictionMaps, String> {
    let array = fmap::read_file(path).map_err(|e| e.to_string())?;
    if array.dim().0 == MAP_CHANNELS {
        PredictionMaps::from_array(&array).map_err(|e| e.to_string())
    } else {
        let labels = LabelMaps::from_array(&array).map_err(|e| e.to_string())?;
        Ok(PredictionMaps::from_labels(&labels))
    }
}

fn find_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

fn blend(px: &mut Rgb<u8>, color: [u8; 3], alpha: f64) {
    for (c, &t) in px.0.iter_mut().zip(&color) {
        *c = (f64::from(*c) * (1.0 - alpha) + f64::from(t) * alpha).round() as u8;
    }
}

fn draw_segment(img: &mut RgbImage, a: crate::geometry::Point, b: crate::geometry::Point, color: [u8; 3]) {
    let steps = (a.distance(b).ceil() as usize).max(1) * 2;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let (x, y) = (a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
        if x >= 0.0 && y >= 0.0 && x < f64::from(img.width()) && y < f64::from(img.height()) {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

/// Border maps tinted in four colors over the image, with the detected
/// boxes outlined on top.
pub fn render_overlay(base: &RgbImage, preds: &PredictionMaps, boxes: &[DetectionBox], stride: u32) -> RgbImage {
    let mut out = base.clone();
    let s = stride.max(1);
    for (map, color) in preds.borders.iter().zip(BORDER_COLORS) {
        for ((r, c), &on) in binarize(map).indexed_iter() {
            if !on {
                continue;
            }
            for y in (r as u32 * s)..((r as u32 + 1) * s).min(out.height()) {
                for x in (c as u32 * s)..((c as u32 + 1) * s).min(out.width()) {
                    blend(out.get_pixel_mut(x, y), color, 0.55);
                }
            }
        }
    }
    for b in boxes {
        let corners = b.rect.corners();
        for k in 0..4 {
            draw_segment(&mut out, corners[k], corners[(k + 1) % 4], BOX_COLOR);
        }
    }
    out
}

fn decode_one(cfg: &PipelineConfig, path: &Path) -> Result<DecodeEntry, String> {
    let preds = read_prediction_maps(path)?;
    if !preds.is_finite() {
        return Err("maps contain non-finite values".into());
    }
    let boxes = decode(&preds, &cfg.decoder);
    let s = stem(path);
    let detections = format!("{s}.txt");
    write_atomic(
        &cfg.output.join(&detections),
        write_detections(&boxes, cfg.detection_format).as_bytes(),
    )
    .map_err(|e| e.to_string())?;
    let overlay = if cfg.overlays {
        let base = match find_image(&cfg.dataset, &s) {
            Some(p) => image::open(&p).map_err(|e| format!("unreadable image: {e}"))?.to_rgb8(),
            None => {
                let (h, w) = preds.dim();
                let st = cfg.decoder.stride;
                RgbImage::from_pixel(w as u32 * st, h as u32 * st, Rgb([PAD_BACKGROUND; 3]))
            }
        };
        let name = format!("{s}_overlay.png");
        write_png(
            &cfg.output.join(&name),
            &render_overlay(&base, &preds, &boxes, cfg.decoder.stride),
        )?;
        Some(name)
    } else {
        None
    };
    Ok(DecodeEntry {
        source: file_name(path),
        detections,
        overlay,
        boxes: boxes.len(),
    })
}

/// Decodes every prediction FMAP in `input` into a detection file.
pub fn run_decode(cfg: &PipelineConfig) -> Result<Vec<DecodeEntry>, PipelineError> {
    cfg.validate(Command::Decode)?;
    fs::create_dir_all(&cfg.output).map_err(io_error(&cfg.output))?;
    let maps = list_files(cfg.input_dir("prediction map")?, &["fmap"])?;
    let results = par_map(cfg.jobs, &maps, |_, path| (file_name(path), decode_one(cfg, path)))?;
    finish(cfg, Command::Decode, results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateEntry {
    pub image: String,
    pub detections: Option<String>,
    pub gt: usize,
    pub det: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub iou_threshold: f64,
    pub f_score: f64,
}

fn load_eval_image(cfg: &PipelineConfig, det_dir: &Path, path: &Path) -> Result<(EvalImage, EvaluateEntry), String> {
    let img = load_annotated(path, cfg.format, cfg.keep_difficult)?;
    let det_path = det_dir.join(format!("{}.txt", stem(path)));
    let det = if det_path.is_file() {
        let text = fs::read_to_string(&det_path).map_err(|e| format!("{}: {e}", det_path.display()))?;
        parse_detections(&text, cfg.detection_format).map_err(|e| format!("{}: {e}", det_path.display()))?
    } else {
        log::warn!("{}: no detection file, counting as empty", file_name(path));
        Vec::new()
    };
    let entry = EvaluateEntry {
        image: file_name(path),
        detections: det_path.is_file().then(|| file_name(&det_path)),
        gt: img.tabs.len(),
        det: det.len(),
    };
    Ok((
        EvalImage {
            name: entry.image.clone(),
            gt: img.tabs,
            det,
        },
        entry,
    ))
}

/// Scores the detections in `input` against the dataset ground truth and
/// writes `report.json` and `report.txt` (plus `sweep.json` when asked).
pub fn run_evaluate(cfg: &PipelineConfig) -> Result<MatchReport, PipelineError> {
    cfg.validate(Command::Evaluate)?;
    fs::create_dir_all(&cfg.output).map_err(io_error(&cfg.output))?;
    let det_dir = cfg.input_dir("detection")?;
    let images = list_files(&cfg.dataset, &IMAGE_EXTENSIONS)?;
    let loaded = par_map(cfg.jobs, &images, |_, path| (file_name(path), load_eval_image(cfg, det_dir, path)))?;
    let mut corpus = Vec::new();
    let results = loaded
        .into_iter()
        .map(|(name, r)| {
            let r = r.map(|(img, entry)| {
                corpus.push(img);
                entry
            });
            (name, r)
        })
        .collect();
    let finished = finish(cfg, Command::Evaluate, results);
    let report = evaluate(&corpus, cfg.protocol, cfg.iou_threshold);
    write_json(&cfg.output.join("report.json"), &report)?;
    write_text(&cfg.output.join("report.txt"), &report.to_table())?;
    if !cfg.sweep.is_empty() {
        let angle = (cfg.protocol == Protocol::Msra).then_some(DEFAULT_ANGLE_THRESHOLD);
        let sweep: Vec<SweepPoint> = iou_sweep(&corpus, &cfg.sweep, angle)
            .into_iter()
            .map(|(iou_threshold, f_score)| SweepPoint { iou_threshold, f_score })
            .collect();
        write_json(&cfg.output.join("sweep.json"), &sweep)?;
    }
    finished.map(|_| report)
}

/// Runs the loss gradient check and writes `losscheck.json`. Fails when
/// any error exceeds `loss_tolerance`.
pub fn run_losscheck(cfg: &PipelineConfig) -> Result<GradientCheckReport, PipelineError> {
    cfg.validate(Command::Losscheck)?;
    fs::create_dir_all(&cfg.output).map_err(io_error(&cfg.output))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = gradient_check(&mut rng, cfg.loss_fixtures, cfg.loss_size);
    write_json(&cfg.output.join("losscheck.json"), &report)?;
    finish::<GradientCheckReport>(cfg, Command::Losscheck, vec![("losscheck".into(), Ok(report.clone()))])?;
    if report.passed(cfg.loss_tolerance) {
        Ok(report)
    } else {
        Err(PipelineError::Check(format!(
            "dice {:.3e}, iou {:.3e}, decomposition {:.3e} (tolerance {:.1e})",
            report.dice_max_rel_error,
            report.iou_max_rel_error,
            report.decomposition_max_abs_error,
            cfg.loss_tolerance
        )))
    }
}
