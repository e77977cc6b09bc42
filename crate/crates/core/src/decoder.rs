//! Box decoding from predicted maps, and a noisy oracle predictor that
//! stands in for a trained network.
//!
//! Decoding: threshold every score map at its mean, cut text lines apart
//! with the long-border maps, find the pixels near each line's two ends
//! through the short-border maps, regress a box from each end and combine
//! the left vertices of one with the right vertices of the other.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use crate::geometry::DetectionBox;
use crate::fmap::{self, FmapError};
use crate::geometry::{component_orientation, min_area_rect, rotated_nms, Point, RotatedRect};
use crate::labels::{pixel_center, LabelMaps, MAP_CHANNELS};

/// Text, border and distance maps as produced by a detector.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps {
    pub text: Array2<f32>,
    /// Long-top, long-bottom, short-left, short-right.
    pub borders: [Array2<f32>; 4],
    /// Distances to the upper, lower, left and right sides, in image pixels.
    pub regression: [Array2<f32>; 4],
}

impl PredictionMaps {
    pub fn zeros(height: usize, width: usize) -> Self {
        let z = || Array2::zeros((height, width));
        Self {
            text: z(),
            borders: std::array::from_fn(|_| z()),
            regression: std::array::from_fn(|_| z()),
        }
    }

    /// The label stack read as a perfect prediction.
    pub fn from_labels(labels: &LabelMaps) -> Self {
        Self {
            text: labels.text.clone(),
            borders: labels.borders.clone(),
            regression: labels.regression.clone(),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.text.dim()
    }

    pub fn is_finite(&self) -> bool {
        std::iter::once(&self.text)
            .chain(&self.borders)
            .chain(&self.regression)
            .all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn to_array(&self) -> Array3<f32> {
        let (h, w) = self.dim();
        let channels: Vec<&Array2<f32>> = std::iter::once(&self.text)
            .chain(&self.borders)
            .chain(&self.regression)
            .collect();
        Array3::from_shape_fn((MAP_CHANNELS, h, w), |(c, y, x)| channels[c][[y, x]])
    }

    pub fn from_array(maps: &Array3<f32>) -> Result<Self, FmapError> {
        let (c, _, _) = maps.dim();
        if c != MAP_CHANNELS {
            return Err(FmapError::ChannelMismatch {
                expected: MAP_CHANNELS.to_string(),
                found: c,
            });
        }
        let ch = |i: usize| maps.index_axis(ndarray::Axis(0), i).to_owned();
        Ok(Self {
            text: ch(0),
            borders: std::array::from_fn(|i| ch(1 + i)),
            regression: std::array::from_fn(|i| ch(5 + i)),
        })
    }
}

pub fn write_predictions(preds: &PredictionMaps, path: &Path) -> Result<(), FmapError> {
    fmap::write_file(path, &preds.to_array())
}

pub fn read_predictions(path: &Path) -> Result<PredictionMaps, FmapError> {
    PredictionMaps::from_array(&fmap::read_file(path)?)
}

/// Where box regression draws its pixels from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionSource {
    /// Pixels near the two ends of each line, found through the short borders.
    #[default]
    EndPixels,
    /// Pixels in a band across the middle of each line.
    CenterPixels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub nms_iou: f64,
    /// Minimum component area in image pixels.
    pub min_area: f64,
    /// Isolated 4-connected groups smaller than this (image pixels) are
    /// cleared from every thresholded map before delineation.
    pub speck_size: f64,
    pub stride: u32,
    /// Use the border maps. When off, lines are not cut apart and every
    /// component pixel regresses the box.
    pub use_borders: bool,
    /// Keep boxes built from a single end. Off reproduces the strict
    /// algorithm, which only emits merged boxes.
    pub keep_singletons: bool,
    /// End-pixel search radius as a fraction of the component's width.
    pub dilation: f64,
    pub regression_source: RegressionSource,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            nms_iou: 0.3,
            min_area: 10.0,
            speck_size: 30.0,
            stride: 1,
            use_borders: true,
            keep_singletons: true,
            dilation: 0.2,
            regression_source: RegressionSource::EndPixels,
        }
    }
}

impl DecodeParams {
    fn to_map_pixels(&self, area: f64) -> usize {
        let s = f64::from(self.stride.max(1));
        (area / (s * s)).ceil().max(0.0) as usize
    }

    /// Minimum component size in map pixels.
    pub fn min_map_area(&self) -> usize {
        self.to_map_pixels(self.min_area)
    }

    /// Speck size in map pixels.
    pub fn map_speck_size(&self) -> usize {
        self.to_map_pixels(self.speck_size)
    }
}

pub type Pixel = (usize, usize);

/// One delineated text line.
#[derive(Debug, Clone, PartialEq)]
pub struct TextComponent {
    pub pixels: Vec<Pixel>,
    pub left: Vec<Pixel>,
    pub right: Vec<Pixel>,
    /// Reading direction, pointing from the left end to the right end.
    pub angle: f64,
}

/// `true` where the score is strictly above the map mean.
pub fn binarize(map: &Array2<f32>) -> Array2<bool> {
    if map.is_empty() {
        return Array2::from_elem(map.dim(), false);
    }
    let mean = map.iter().map(|&v| f64::from(v)).sum::<f64>() / map.len() as f64;
    map.mapv(|v| f64::from(v) > mean)
}

/// 8-connected components in row-major discovery order; pixels within a
/// component are in BFS order.
pub fn connected_components(mask: &Array2<bool>) -> Vec<Vec<Pixel>> {
    let (h, w) = mask.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            if !mask[[r, c]] || seen[[r, c]] {
                continue;
            }
            seen[[r, c]] = true;
            queue.push_back((r, c));
            let mut comp = Vec::new();
            while let Some((y, x)) = queue.pop_front() {
                comp.push((y, x));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (ny, nx) = (y as isize + dy, x as isize + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask[[ny, nx]] && !seen[[ny, nx]] {
                            seen[[ny, nx]] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// 4-connected components of `mask`.
fn components4(mask: &Array2<bool>) -> Vec<Vec<Pixel>> {
    let (h, w) = mask.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in mask.indexed_iter().filter(|(_, &m)| m).map(|(i, _)| i) {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some((y, x)) = stack.pop() {
            comp.push((y, x));
            let neighbours = [
                (y.wrapping_sub(1), x),
                (y + 1, x),
                (y, x.wrapping_sub(1)),
                (y, x + 1),
            ];
            for n in neighbours {
                if n.0 < h && n.1 < w && mask[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Clears 4-connected groups of fewer than `min_size` set pixels.
pub fn remove_specks(mask: &mut Array2<bool>, min_size: usize) {
    if min_size <= 1 {
        return;
    }
    for comp in components4(mask) {
        if comp.len() < min_size {
            for p in comp {
                mask[p] = false;
            }
        }
    }
}

/// Components of `text & !(long_top | long_bottom)` with at least
/// `min_area` pixels.
pub fn delineate(
    text: &Array2<bool>,
    long_top: &Array2<bool>,
    long_bottom: &Array2<bool>,
    min_area: usize,
) -> Vec<Vec<Pixel>> {
    let mask = Array2::from_shape_fn(text.dim(), |idx| text[idx] && !long_top[idx] && !long_bottom[idx]);
    connected_components(&mask)
        .into_iter()
        .filter(|c| c.len() >= min_area)
        .collect()
}

fn centers(pixels: &[Pixel], stride: u32) -> Vec<Point> {
    pixels.iter().map(|&(r, c)| pixel_center(r, c, stride)).collect()
}

fn mean_point(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    points.iter().fold(Point::default(), |a, &p| a + p) * (1.0 / n)
}

fn direction(angle: f64) -> (Point, Point) {
    let (s, c) = angle.sin_cos();
    (Point::new(c, s), Point::new(-s, c))
}

/// Extent of the component across `angle`, in image pixels.
fn minor_extent(points: &[Point], angle: f64, stride: u32) -> f64 {
    let (_, v) = direction(angle);
    let (lo, hi) = points
        .iter()
        .map(|p| p.dot(v))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    hi - lo + f64::from(stride)
}

/// Component pixels dilated by a disk of `radius` map pixels.
fn dilate(pixels: &[Pixel], dims: (usize, usize), radius: f64) -> Vec<Pixel> {
    let mut mark = Array2::from_elem(dims, false);
    let r = radius.max(0.0);
    let ri = r.floor() as isize;
    let r2 = r * r;
    for &(y, x) in pixels {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if (dy * dy + dx * dx) as f64 > r2 {
                    continue;
                }
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < dims.0 && (nx as usize) < dims.1 {
                    mark[[ny as usize, nx as usize]] = true;
                }
            }
        }
    }
    mark.indexed_iter().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Text pixels of the dilated component lying in the short-left and
/// short-right border regions.
pub fn end_pixels(
    component: &[Pixel],
    text: &Array2<bool>,
    short_left: &Array2<bool>,
    short_right: &Array2<bool>,
    radius: f64,
) -> (Vec<Pixel>, Vec<Pixel>) {
    let grown = dilate(component, text.dim(), radius);
    let pick = |band: &Array2<bool>| grown.iter().copied().filter(|&p| text[p] && band[p]).collect();
    (pick(short_left), pick(short_right))
}

/// When the end pixels fall into several separate pieces (two touching
/// words on one line), keep the piece lying furthest towards `sign · u`.
fn outermost_group(pixels: Vec<Pixel>, dims: (usize, usize), u: Point, sign: f64, stride: u32) -> Vec<Pixel> {
    if pixels.len() < 2 {
        return pixels;
    }
    let mut mask = Array2::from_elem(dims, false);
    for &p in &pixels {
        mask[p] = true;
    }
    let groups = connected_components(&mask);
    if groups.len() == 1 {
        return pixels;
    }
    log::debug!("end pixels split into {} groups; keeping the outermost", groups.len());
    groups
        .into_iter()
        .max_by(|a, b| {
            let pa = mean_point(&centers(a, stride)).dot(u) * sign;
            let pb = mean_point(&centers(b, stride)).dot(u) * sign;
            pa.total_cmp(&pb)
        })
        .expect("at least two groups")
}

/// Corners of the box a single pixel regresses, ordered
/// `[left-upper, right-upper, right-lower, left-lower]` in the frame of
/// `angle`. `None` when the distances describe no box.
pub fn pixel_corners(p: Point, distances: [f64; 4], angle: f64) -> Option<[Point; 4]> {
    let [up, down, left, right] = distances;
    if !distances.iter().all(|d| d.is_finite()) || up + down <= 0.0 || left + right <= 0.0 {
        return None;
    }
    let (u, v) = direction(angle);
    Some([
        p - u * left - v * up,
        p + u * right - v * up,
        p + u * right + v * down,
        p - u * left + v * down,
    ])
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Regresses one box per pixel and aggregates by the coordinate-wise median
/// of each corner. Corner order as in [`pixel_corners`].
pub fn regress_end(pixels: &[Pixel], regression: &[Array2<f32>; 4], angle: f64, stride: u32) -> Option<[Point; 4]> {
    let boxes: Vec<[Point; 4]> = pixels
        .iter()
        .filter_map(|&(r, c)| {
            let d = std::array::from_fn(|k| f64::from(regression[k][[r, c]]));
            pixel_corners(pixel_center(r, c, stride), d, angle)
        })
        .collect();
    if boxes.is_empty() {
        return None;
    }
    Some(std::array::from_fn(|k| {
        let mut xs: Vec<f64> = boxes.iter().map(|b| b[k].x).collect();
        let mut ys: Vec<f64> = boxes.iter().map(|b| b[k].y).collect();
        Point::new(median(&mut xs), median(&mut ys))
    }))
}

/// Left vertices from the left-end box, right vertices from the right-end
/// box, fitted with a minimum-area rectangle. A single available end is used
/// on its own.
pub fn merge_ends(left: Option<[Point; 4]>, right: Option<[Point; 4]>) -> Option<RotatedRect> {
    let points: Vec<Point> = match (left, right) {
        (Some(l), Some(r)) => vec![l[0], r[1], r[2], l[3]],
        (Some(q), None) | (None, Some(q)) => q.to_vec(),
        (None, None) => return None,
    };
    min_area_rect(&points).ok()
}

/// Sign of the correlation between position along `u` and the regressed
/// left-minus-right distance; positive when `u` points left to right.
fn regression_direction(pixels: &[Pixel], regression: &[Array2<f32>; 4], u: Point, stride: u32) -> f64 {
    let pts = centers(pixels, stride);
    let mean = mean_point(&pts).dot(u);
    pixels
        .iter()
        .zip(&pts)
        .map(|(&p, pt)| (pt.dot(u) - mean) * f64::from(regression[2][p] - regression[3][p]))
        .sum()
}

struct Binarized {
    text: Array2<bool>,
    borders: [Array2<bool>; 4],
}

fn binarize_all(preds: &PredictionMaps, speck: usize) -> Binarized {
    let clean = |m: &Array2<f32>| {
        let mut b = binarize(m);
        remove_specks(&mut b, speck);
        b
    };
    Binarized {
        text: clean(&preds.text),
        borders: std::array::from_fn(|i| clean(&preds.borders[i])),
    }
}

/// Delineates text lines and locates their end pixels.
pub fn text_components(preds: &PredictionMaps, params: &DecodeParams) -> Vec<TextComponent> {
    let bin = binarize_all(preds, params.map_speck_size());
    components_from(&bin, preds, params)
}

fn components_from(bin: &Binarized, preds: &PredictionMaps, params: &DecodeParams) -> Vec<TextComponent> {
    let dims = preds.dim();
    let stride = params.stride.max(1);
    let none = Array2::from_elem(dims, false);
    let (top, bottom) = if params.use_borders {
        (&bin.borders[0], &bin.borders[1])
    } else {
        (&none, &none)
    };
    let mut out = Vec::new();
    for pixels in delineate(&bin.text, top, bottom, params.min_map_area()) {
        let pts = centers(&pixels, stride);
        let Ok(angle) = component_orientation(&pts) else {
            continue;
        };
        let (u, _) = direction(angle);
        let (mut left, mut right) = if params.use_borders {
            let radius = params.dilation * minor_extent(&pts, angle, stride) / f64::from(stride);
            end_pixels(&pixels, &bin.text, &bin.borders[2], &bin.borders[3], radius)
        } else {
            (Vec::new(), Vec::new())
        };
        // The principal axis is only defined modulo π; orient it so that it
        // runs from the left end to the right end.
        let centroid = mean_point(&pts).dot(u);
        let proj = |set: &[Pixel]| mean_point(&centers(set, stride)).dot(u);
        let reversed = match (left.is_empty(), right.is_empty()) {
            (false, false) => proj(&left) > proj(&right),
            (false, true) => proj(&left) > centroid,
            (true, false) => proj(&right) < centroid,
            (true, true) => regression_direction(&pixels, &preds.regression, u, stride) < 0.0,
        };
        let angle = if reversed { angle + std::f64::consts::PI } else { angle };
        let (u, _) = direction(angle);
        left = outermost_group(left, dims, u, -1.0, stride);
        right = outermost_group(right, dims, u, 1.0, stride);
        out.push(TextComponent {
            pixels,
            left,
            right,
            angle,
        });
    }
    out
}

fn center_band(component: &TextComponent, stride: u32) -> Vec<Pixel> {
    let pts = centers(&component.pixels, stride);
    let (u, _) = direction(component.angle);
    let mid = mean_point(&pts).dot(u);
    let half = minor_extent(&pts, component.angle, stride) / 2.0;
    component
        .pixels
        .iter()
        .zip(&pts)
        .filter(|(_, p)| (p.dot(u) - mid).abs() <= half)
        .map(|(&px, _)| px)
        .collect()
}

fn component_box(component: &TextComponent, preds: &PredictionMaps, params: &DecodeParams) -> Option<RotatedRect> {
    let stride = params.stride.max(1);
    let reg = &preds.regression;
    if !params.use_borders {
        let q = regress_end(&component.pixels, reg, component.angle, stride)?;
        return min_area_rect(&q).ok();
    }
    match params.regression_source {
        RegressionSource::CenterPixels => {
            if component.left.is_empty() && component.right.is_empty() {
                return None;
            }
            let q = regress_end(&center_band(component, stride), reg, component.angle, stride)?;
            min_area_rect(&q).ok()
        }
        RegressionSource::EndPixels => {
            let l = regress_end(&component.left, reg, component.angle, stride);
            let r = regress_end(&component.right, reg, component.angle, stride);
            if (l.is_none() || r.is_none()) && !params.keep_singletons {
                return None;
            }
            merge_ends(l, r)
        }
    }
}

/// Full decoding: threshold, delineate, regress each line from its ends,
/// score by mean text score, suppress overlaps.
pub fn decode(preds: &PredictionMaps, params: &DecodeParams) -> Vec<DetectionBox> {
    let boxes: Vec<DetectionBox> = text_components(preds, params)
        .iter()
        .filter_map(|comp| {
            let rect = component_box(comp, preds, params)?;
            let score = comp.pixels.iter().map(|&p| f64::from(preds.text[p])).sum::<f64>()
                / comp.pixels.len() as f64;
            Some(DetectionBox::new(rect, score))
        })
        .collect();
    rotated_nms(&boxes, params.nms_iou)
}

/// Corruption applied by [`oracle_predict`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub sigma_score: f64,
    /// Standard deviation of the distance noise, in pixels.
    pub sigma_dist: f64,
    /// Fraction of score pixels zeroed, independently per channel.
    pub dropout: f64,
    /// Box-blur radius (in map pixels) applied to the score channels.
    pub blur_radius: usize,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self {
            sigma_score: 0.0,
            sigma_dist: 0.0,
            dropout: 0.0,
            blur_radius: 1,
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::clean()
    }
}

/// Mean over the in-bounds part of each `(2r+1)²` window.
pub fn box_blur(map: &Array2<f32>, radius: usize) -> Array2<f32> {
    if radius == 0 {
        return map.clone();
    }
    let (h, w) = map.dim();
    // Summed-area table with a zero border.
    let mut sat = Array2::<f64>::zeros((h + 1, w + 1));
    for r in 0..h {
        for c in 0..w {
            sat[[r + 1, c + 1]] = f64::from(map[[r, c]]) + sat[[r, c + 1]] + sat[[r + 1, c]] - sat[[r, c]];
        }
    }
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius + 1).min(h));
        let (c0, c1) = (c.saturating_sub(radius), (c + radius + 1).min(w));
        let sum = sat[[r1, c1]] - sat[[r0, c1]] - sat[[r1, c0]] + sat[[r0, c0]];
        (sum / ((r1 - r0) * (c1 - c0)) as f64) as f32
    })
}

fn corrupt_scores<R: Rng>(map: &Array2<f32>, noise: &NoiseSpec, rng: &mut R) -> Array2<f32> {
    let mut out = box_blur(map, noise.blur_radius);
    let normal = (noise.sigma_score > 0.0).then(|| Normal::new(0.0, noise.sigma_score).expect("finite sigma"));
    let dropout = noise.dropout.clamp(0.0, 1.0);
    for v in out.iter_mut() {
        let mut x = f64::from(*v);
        if let Some(n) = &normal {
            x += n.sample(rng);
        }
        x = x.clamp(0.0, 1.0);
        if dropout > 0.0 && rng.gen::<f64>() < dropout {
            x = 0.0;
        }
        *v = x as f32;
    }
    out
}

/// Synthetic predictions from a label stack: score channels are blurred,
/// perturbed, clamped and randomly erased; distance channels get Gaussian
/// noise. Deterministic for a given RNG state.
pub fn oracle_predict<R: Rng>(labels: &LabelMaps, noise: &NoiseSpec, rng: &mut R) -> PredictionMaps {
    let text = corrupt_scores(&labels.text, noise, rng);
    let borders = std::array::from_fn(|i| corrupt_scores(&labels.borders[i], noise, rng));
    let normal = (noise.sigma_dist > 0.0).then(|| Normal::new(0.0, noise.sigma_dist).expect("finite sigma"));
    let regression = std::array::from_fn(|i| {
        let mut m = labels.regression[i].clone();
        if let Some(n) = &normal {
            m.mapv_inplace(|v| (f64::from(v) + n.sample(rng)) as f32);
        }
        m
    });
    PredictionMaps {
        text,
        borders,
        regression,
    }
}
