//! Training-data augmentation.
//!
//! [`augment_image`] replaces every TAB by a randomly sampled sub-window of
//! itself and inpaints the rest of the TAB, turning one annotated image into
//! many. [`random_resize_crop`] rescales an image and cuts a fixed-size
//! crop that never slices through a TAB.

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{AnnotatedImage, Tab};
use crate::geometry::{rect_intersection_area, Point, RotatedRect};

/// Fraction of the TAB length trimmed from each end of the center line
/// before sampling window centers.
pub const CENTER_LINE_SHRINK: f64 = 0.1;
/// Shortest window, as a fraction of the TAB length.
pub const MIN_WINDOW_FRACTION: f64 = 0.2;
pub const DEFAULT_AUGMENT_COUNT: usize = 20;
pub const DEFAULT_SMOOTHING_PASSES: usize = 8;
pub const CROP_SIZE: u32 = 512;
pub const RESIZE_SCALES: [f64; 4] = [0.5, 1.0, 2.0, 3.0];
pub const MAX_CROP_ATTEMPTS: usize = 1000;
pub const PAD_GRAY: u8 = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("count must be ≥1")]
    InvalidCount,
    #[error("mask is {mask:?} but image is {image:?}")]
    MaskShape {
        mask: (usize, usize),
        image: (usize, usize),
    },
    #[error("mask covers the entire image; nothing to inpaint from")]
    FullMask,
    #[error("image is {found:?} but annotations say {expected:?}")]
    ImageSize {
        expected: (u32, u32),
        found: (u32, u32),
    },
}

/// A sub-window of a TAB: same width and orientation, shorter length,
/// centered on the TAB's center line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub parent: RotatedRect,
    pub center: Point,
    pub length: f64,
}

impl SampleWindow {
    /// Signed offset of the window center along the parent's length axis.
    pub fn offset(&self) -> f64 {
        self.parent.to_local(self.center).0
    }

    /// Distance from the window center to the nearer end of the parent.
    pub fn end_distance(&self) -> f64 {
        self.parent.length() / 2.0 - self.offset().abs()
    }

    pub fn rect(&self) -> RotatedRect {
        RotatedRect::new(self.center, self.length, self.parent.width(), self.parent.angle())
            .expect("window length is at least 0.2 L > 0")
    }
}

/// Draws a window center uniformly on the parent's center line with
/// `0.1 L` trimmed from both ends, then a length uniformly in
/// `[0.2 L, 2 d]`, where `d` is the distance to the nearer end.
pub fn sample_window<R: Rng>(tab: &RotatedRect, rng: &mut R) -> SampleWindow {
    let l = tab.length();
    let half_span = l / 2.0 - CENTER_LINE_SHRINK * l;
    let t = -half_span + 2.0 * half_span * rng.gen::<f64>();
    let d = l / 2.0 - t.abs();
    let lo = MIN_WINDOW_FRACTION * l;
    // 2d >= 0.2 L always; max() only guards against rounding.
    let hi = (2.0 * d).max(lo);
    let length = lo + (hi - lo) * rng.gen::<f64>();
    SampleWindow {
        parent: *tab,
        center: tab.from_local(t, 0.0),
        length,
    }
}

fn neighbours(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    [
        (y.wrapping_sub(1), x),
        (y + 1, x),
        (y, x.wrapping_sub(1)),
        (y, x + 1),
    ]
    .into_iter()
    .filter(move |&(ny, nx)| ny < h && nx < w)
}

/// Diffusion fill of the masked pixels (`mask[[y, x]]` is true for pixels
/// to replace).
///
/// Pixels are filled layer by layer from the mask boundary inwards, each
/// taking the mean of its already-known 4-neighbours, then `smoothing`
/// Jacobi passes average every masked pixel over all its 4-neighbours.
/// Unmasked pixels are copied unchanged.
pub fn inpaint_region(image: &RgbImage, mask: &Array2<bool>, smoothing: usize) -> Result<RgbImage, AugmentError> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if mask.dim() != (h, w) {
        return Err(AugmentError::MaskShape {
            mask: mask.dim(),
            image: (h, w),
        });
    }
    let masked = mask.iter().filter(|&&m| m).count();
    if masked == 0 {
        return Ok(image.clone());
    }
    if masked == w * h {
        return Err(AugmentError::FullMask);
    }

    let mut values = Array2::from_shape_fn((h, w), |(y, x)| {
        let p = image.get_pixel(x as u32, y as u32).0;
        [f32::from(p[0]), f32::from(p[1]), f32::from(p[2])]
    });
    let mut known = mask.mapv(|m| !m);
    let mut remaining = masked;
    while remaining > 0 {
        let mut layer = Vec::new();
        for ((y, x), &m) in mask.indexed_iter() {
            if !m || known[[y, x]] {
                continue;
            }
            let (mut sum, mut n) = ([0.0f32; 3], 0);
            for (ny, nx) in neighbours(y, x, h, w) {
                if known[[ny, nx]] {
                    let v = values[[ny, nx]];
                    for k in 0..3 {
                        sum[k] += v[k];
                    }
                    n += 1;
                }
            }
            if n > 0 {
                layer.push(((y, x), sum.map(|s| s / n as f32)));
            }
        }
        debug_assert!(!layer.is_empty(), "a non-full mask always has a boundary");
        remaining -= layer.len();
        for (idx, v) in layer {
            values[idx] = v;
            known[idx] = true;
        }
    }

    let targets: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    for _ in 0..smoothing {
        let next: Vec<[f32; 3]> = targets
            .iter()
            .map(|&(y, x)| {
                let (mut sum, mut n) = ([0.0f32; 3], 0);
                for nb in neighbours(y, x, h, w) {
                    let v = values[nb];
                    for k in 0..3 {
                        sum[k] += v[k];
                    }
                    n += 1;
                }
                sum.map(|s| s / n as f32)
            })
            .collect();
        for (&idx, v) in targets.iter().zip(next) {
            values[idx] = v;
        }
    }

    let mut out = image.clone();
    for &(y, x) in &targets {
        let v = values[[y, x]].map(|c| c.round().clamp(0.0, 255.0) as u8);
        out.put_pixel(x as u32, y as u32, Rgb(v));
    }
    Ok(out)
}

/// Where an augmented image came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// Seed of the RNG stream that produced the whole batch.
    pub seed: u64,
    /// Position within the batch.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedImage {
    pub pixels: RgbImage,
    /// One replacement per source TAB, in source order.
    pub tabs: Vec<Tab>,
    pub windows: Vec<SampleWindow>,
    pub provenance: Provenance,
}

fn pixel_mask<'a>(
    dims: (usize, usize),
    rects: impl IntoIterator<Item = &'a RotatedRect>,
    mut set: impl FnMut(&mut bool),
    mask: &mut Array2<bool>,
) {
    let (h, w) = dims;
    for rect in rects {
        let (lo, hi) = rect.bounds();
        let x0 = lo.x.floor().max(0.0) as usize;
        let y0 = lo.y.floor().max(0.0) as usize;
        let x1 = (hi.x.ceil().max(0.0) as usize).min(w);
        let y1 = (hi.y.ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if rect.contains(Point::new(x as f64 + 0.5, y as f64 + 0.5), 0.0) {
                    set(&mut mask[[y, x]]);
                }
            }
        }
    }
}

/// Produces `n` augmented copies of an image. In each, every TAB is
/// replaced by one [`SampleWindow`] of itself; the part of the TAB outside
/// the window (and outside every other window) is inpainted.
///
/// Output depends only on the inputs and `seed`.
pub fn augment_image(
    img: &AnnotatedImage,
    pixels: &RgbImage,
    n: usize,
    seed: u64,
) -> Result<Vec<AugmentedImage>, AugmentError> {
    if n == 0 {
        return Err(AugmentError::InvalidCount);
    }
    if pixels.dimensions() != (img.width, img.height) {
        return Err(AugmentError::ImageSize {
            expected: (img.width, img.height),
            found: pixels.dimensions(),
        });
    }
    let dims = (pixels.height() as usize, pixels.width() as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = img.image_path.display().to_string();
    (0..n)
        .map(|index| {
            let windows: Vec<SampleWindow> = img.tabs.iter().map(|t| sample_window(&t.rect, &mut rng)).collect();
            let rects: Vec<RotatedRect> = windows.iter().map(SampleWindow::rect).collect();
            let mut mask = Array2::from_elem(dims, false);
            pixel_mask(dims, img.tabs.iter().map(|t| &t.rect), |m| *m = true, &mut mask);
            pixel_mask(dims, &rects, |m| *m = false, &mut mask);
            let out = inpaint_region(pixels, &mask, DEFAULT_SMOOTHING_PASSES)?;
            let tabs = img
                .tabs
                .iter()
                .zip(&rects)
                .map(|(t, r)| Tab {
                    rect: *r,
                    difficult: t.difficult,
                    transcription: None,
                    granularity: t.granularity,
                })
                .collect();
            Ok(AugmentedImage {
                pixels: out,
                tabs,
                windows,
                provenance: Provenance {
                    source: source.clone(),
                    seed,
                    index,
                },
            })
        })
        .collect()
}

/// Uniform pick from [`RESIZE_SCALES`].
pub fn choose_scale<R: Rng>(rng: &mut R) -> f64 {
    RESIZE_SCALES[rng.gen_range(0..RESIZE_SCALES.len())]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropResult {
    /// Annotations in crop coordinates; `width`/`height` are the crop size.
    pub image: AnnotatedImage,
    pub pixels: RgbImage,
    pub scale: f64,
    /// Top-left corner of the crop in the scaled (and padded) image.
    pub offset: (u32, u32),
    /// Gray padding added to the right and bottom of the scaled image.
    pub padding: (u32, u32),
    /// TABs dropped because the fallback crop cut through them.
    pub dropped_partial: usize,
    pub fallback: bool,
}

fn crop_rect(x0: u32, y0: u32) -> RotatedRect {
    let s = f64::from(CROP_SIZE);
    RotatedRect::from_ltrb(f64::from(x0), f64::from(y0), f64::from(x0) + s, f64::from(y0) + s).expect("positive size")
}

fn fully_inside(rect: &RotatedRect, crop: &RotatedRect) -> bool {
    rect.corners().iter().all(|&c| crop.contains(c, 1e-9))
}

fn fully_outside(rect: &RotatedRect, crop: &RotatedRect) -> bool {
    rect_intersection_area(rect, crop) < 1e-9
}

/// Rescales by a ratio drawn from [`RESIZE_SCALES`] and cuts a
/// `CROP_SIZE²` crop that leaves every TAB either whole or absent.
///
/// Images smaller than the crop after scaling are padded with gray on the
/// right and bottom. If no clean crop turns up in [`MAX_CROP_ATTEMPTS`]
/// draws, the crop is centered on a random TAB and the TABs it cuts are
/// dropped.
pub fn random_resize_crop<R: Rng>(
    img: &AnnotatedImage,
    pixels: &RgbImage,
    rng: &mut R,
) -> Result<CropResult, AugmentError> {
    if pixels.dimensions() != (img.width, img.height) {
        return Err(AugmentError::ImageSize {
            expected: (img.width, img.height),
            found: pixels.dimensions(),
        });
    }
    let scale = choose_scale(rng);
    let sw = ((f64::from(img.width) * scale).round() as u32).max(1);
    let sh = ((f64::from(img.height) * scale).round() as u32).max(1);
    let scaled = if scale == 1.0 {
        pixels.clone()
    } else {
        imageops::resize(pixels, sw, sh, FilterType::Triangle)
    };
    let (cw, ch) = (sw.max(CROP_SIZE), sh.max(CROP_SIZE));
    let padding = (cw - sw, ch - sh);
    let mut canvas = RgbImage::from_pixel(cw, ch, Rgb([PAD_GRAY; 3]));
    imageops::replace(&mut canvas, &scaled, 0, 0);
    let tabs: Vec<Tab> = img
        .tabs
        .iter()
        .map(|t| Tab {
            rect: t.rect.scale(scale),
            ..t.clone()
        })
        .collect();

    let clean = |x0: u32, y0: u32| {
        let crop = crop_rect(x0, y0);
        tabs.iter()
            .all(|t| fully_inside(&t.rect, &crop) || fully_outside(&t.rect, &crop))
    };
    let mut chosen = None;
    for _ in 0..MAX_CROP_ATTEMPTS {
        let x0 = rng.gen_range(0..=cw - CROP_SIZE);
        let y0 = rng.gen_range(0..=ch - CROP_SIZE);
        if clean(x0, y0) {
            chosen = Some((x0, y0));
            break;
        }
    }
    let fallback = chosen.is_none();
    let (x0, y0) = chosen.unwrap_or_else(|| {
        let anchor = tabs[rng.gen_range(0..tabs.len())].rect.center();
        let place = |c: f64, limit: u32| (c - f64::from(CROP_SIZE) / 2.0).round().clamp(0.0, f64::from(limit)) as u32;
        (place(anchor.x, cw - CROP_SIZE), place(anchor.y, ch - CROP_SIZE))
    });

    let crop = crop_rect(x0, y0);
    let mut kept = Vec::new();
    let mut dropped_partial = 0;
    for t in &tabs {
        if fully_inside(&t.rect, &crop) {
            kept.push(Tab {
                rect: t.rect.translate(-f64::from(x0), -f64::from(y0)),
                ..t.clone()
            });
        } else if !fully_outside(&t.rect, &crop) {
            dropped_partial += 1;
        }
    }
    if dropped_partial > 0 {
        log::warn!(
            "{}: no clean crop in {MAX_CROP_ATTEMPTS} attempts; dropped {dropped_partial} cut TABs",
            img.image_path.display()
        );
    }
    let pixels = imageops::crop_imm(&canvas, x0, y0, CROP_SIZE, CROP_SIZE).to_image();
    Ok(CropResult {
        image: AnnotatedImage {
            image_path: img.image_path.clone(),
            width: CROP_SIZE,
            height: CROP_SIZE,
            tabs: kept,
        },
        pixels,
        scale,
        offset: (x0, y0),
        padding,
        dropped_partial,
        fallback,
    })
}
