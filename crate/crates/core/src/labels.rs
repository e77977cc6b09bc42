//! Ground-truth label maps: the text region, four semantics-aware border
//! segments per TAB, and four per-pixel distances to the TAB sides.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{AnnotatedImage, Tab};
use crate::fmap::{self, FmapError};
use crate::geometry::{Point, RotatedRect};

/// Width of a long-edge border segment, as a fraction of the TAB width.
pub const LONG_BORDER_WIDTH: f64 = 0.2;
/// Extent of a short-edge border segment across the TAB, as a fraction of
/// the TAB width. It fills the gap between the two long segments.
pub const SHORT_BORDER_SPAN: f64 = 0.8;
/// Extent of a short-edge border segment along the TAB, as a fraction of the
/// TAB width.
pub const SHORT_BORDER_DEPTH: f64 = 1.0;

/// Channel count of a label or prediction stack without the validity mask.
pub const MAP_CHANNELS: usize = 9;

pub const SUPPORTED_STRIDES: [u32; 3] = [1, 2, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BorderSide {
    LongTop,
    LongBottom,
    ShortLeft,
    ShortRight,
}

impl BorderSide {
    pub const ALL: [BorderSide; 4] = [
        BorderSide::LongTop,
        BorderSide::LongBottom,
        BorderSide::ShortLeft,
        BorderSide::ShortRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// The four border rectangles of one TAB. They inherit its angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BorderSegments {
    pub long_top: RotatedRect,
    pub long_bottom: RotatedRect,
    pub short_left: RotatedRect,
    pub short_right: RotatedRect,
}

impl BorderSegments {
    pub fn get(&self, side: BorderSide) -> &RotatedRect {
        match side {
            BorderSide::LongTop => &self.long_top,
            BorderSide::LongBottom => &self.long_bottom,
            BorderSide::ShortLeft => &self.short_left,
            BorderSide::ShortRight => &self.short_right,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (BorderSide, &RotatedRect)> {
        BorderSide::ALL.into_iter().map(move |s| (s, self.get(s)))
    }
}

/// Long segments straddle the long edges (length `L`, width `0.2 W`); short
/// segments straddle the short edges (extent `W` along the TAB, `0.8 W`
/// across it).
pub fn extract_border_segments(tab: &RotatedRect) -> BorderSegments {
    let (l, w, angle) = (tab.length(), tab.width(), tab.angle());
    let make = |along: f64, across: f64, length: f64, width: f64| {
        RotatedRect::new(tab.from_local(along, across), length, width, angle)
            .expect("segment dimensions are positive for a valid TAB")
    };
    let long_w = LONG_BORDER_WIDTH * w;
    let short_l = SHORT_BORDER_DEPTH * w;
    let short_w = SHORT_BORDER_SPAN * w;
    BorderSegments {
        long_top: make(0.0, -w / 2.0, l, long_w),
        long_bottom: make(0.0, w / 2.0, l, long_w),
        short_left: make(-l / 2.0, 0.0, short_l, short_w),
        short_right: make(l / 2.0, 0.0, short_l, short_w),
    }
}

/// Center of map pixel `(row, col)` in image coordinates.
pub fn pixel_center(row: usize, col: usize, stride: u32) -> Point {
    let s = stride as f64;
    Point::new((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
}

/// Perpendicular distances from `p` to the upper, lower, left and right
/// sides of `rect`, measured in its own frame.
pub fn side_distances(rect: &RotatedRect, p: Point) -> [f64; 4] {
    let (a, b) = rect.to_local(p);
    let (hl, hw) = (rect.length() / 2.0, rect.width() / 2.0);
    [hw + b, hw - b, hl + a, hl - a]
}

/// Reconstructs a box from a pixel position, its four side distances
/// (upper, lower, left, right) and an orientation. Returns `None` when the
/// distances don't describe a box with positive extent.
pub fn box_from_distances(p: Point, distances: [f64; 4], angle: f64) -> Option<RotatedRect> {
    let [up, down, left, right] = distances;
    let (s, c) = angle.sin_cos();
    let u = Point::new(c, s);
    let v = Point::new(-s, c);
    let center = p + u * ((right - left) / 2.0) + v * ((down - up) / 2.0);
    RotatedRect::new(center, left + right, up + down, angle).ok()
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("unsupported stride {0}; expected 1, 2 or 4")]
    InvalidStride(u32),
    #[error(transparent)]
    Fmap(#[from] FmapError),
}

/// The nine label channels plus a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMaps {
    pub text: Array2<f32>,
    /// Indexed by [`BorderSide::index`].
    pub borders: [Array2<f32>; 4],
    /// Distances to the upper, lower, left and right sides, in image pixels.
    pub regression: [Array2<f32>; 4],
    /// Zero inside difficult (don't-care) TABs.
    pub validity: Array2<f32>,
}

impl LabelMaps {
    pub fn zeros(height: usize, width: usize) -> Self {
        let z = || Array2::<f32>::zeros((height, width));
        Self {
            text: z(),
            borders: [z(), z(), z(), z()],
            regression: [z(), z(), z(), z()],
            validity: Array2::ones((height, width)),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.text.dim()
    }

    /// Stacks channels in FMAP order; the validity mask is the tenth channel.
    pub fn to_array(&self) -> Array3<f32> {
        let mut views = vec![self.text.view()];
        views.extend(self.borders.iter().map(|m| m.view()));
        views.extend(self.regression.iter().map(|m| m.view()));
        views.push(self.validity.view());
        ndarray::stack(Axis(0), &views).expect("all channels share one shape")
    }

    /// Accepts 9 channels (validity defaults to all ones) or 10.
    pub fn from_array(maps: &Array3<f32>) -> Result<Self, FmapError> {
        let (c, h, w) = maps.dim();
        if c != MAP_CHANNELS && c != MAP_CHANNELS + 1 {
            return Err(FmapError::ChannelMismatch {
                expected: "9 or 10".into(),
                found: c,
            });
        }
        let ch = |k: usize| maps.index_axis(Axis(0), k).to_owned();
        Ok(Self {
            text: ch(0),
            borders: [ch(1), ch(2), ch(3), ch(4)],
            regression: [ch(5), ch(6), ch(7), ch(8)],
            validity: if c == MAP_CHANNELS + 1 {
                ch(9)
            } else {
                Array2::ones((h, w))
            },
        })
    }
}

pub fn write_maps(maps: &LabelMaps, path: &Path) -> Result<(), FmapError> {
    fmap::write_file(path, &maps.to_array())
}

pub fn read_maps(path: &Path) -> Result<LabelMaps, FmapError> {
    LabelMaps::from_array(&fmap::read_file(path)?)
}

pub fn map_size(width: u32, height: u32, stride: u32) -> (usize, usize) {
    (height.div_ceil(stride) as usize, width.div_ceil(stride) as usize)
}

/// Visits every map pixel whose center lies inside `rect`.
fn for_each_pixel_in(
    rect: &RotatedRect,
    dims: (usize, usize),
    stride: u32,
    mut f: impl FnMut(usize, usize, Point),
) {
    let (lo, hi) = rect.bounds();
    let s = stride as f64;
    let (h, w) = dims;
    let col_lo = ((lo.x / s - 0.5).ceil().max(0.0)) as usize;
    let row_lo = ((lo.y / s - 0.5).ceil().max(0.0)) as usize;
    let col_hi = (hi.x / s - 0.5).floor();
    let row_hi = (hi.y / s - 0.5).floor();
    if col_hi < 0.0 || row_hi < 0.0 {
        return;
    }
    let col_hi = (col_hi as usize).min(w.saturating_sub(1));
    let row_hi = (row_hi as usize).min(h.saturating_sub(1));
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let p = pixel_center(row, col, stride);
            if rect.contains(p, 0.0) {
                f(row, col, p);
            }
        }
    }
}

/// Rasterizes the label stack at `1/stride` resolution.
///
/// Pixels inside several TABs take their regression targets from the TAB
/// whose center is nearest (lowest index on exact ties). Difficult TABs
/// contribute nothing except zeros in the validity mask.
pub fn rasterize_labels(img: &AnnotatedImage, stride: u32) -> Result<LabelMaps, LabelError> {
    if !SUPPORTED_STRIDES.contains(&stride) {
        return Err(LabelError::InvalidStride(stride));
    }
    let dims = map_size(img.width, img.height, stride);
    Ok(rasterize_tabs(&img.tabs, dims, stride))
}

pub(crate) fn rasterize_tabs(tabs: &[Tab], dims: (usize, usize), stride: u32) -> LabelMaps {
    let mut maps = LabelMaps::zeros(dims.0, dims.1);
    if dims.0 == 0 || dims.1 == 0 {
        return maps;
    }
    let mut owner_dist = Array2::<f64>::from_elem(dims, f64::INFINITY);

    for tab in tabs {
        let rect = &tab.rect;
        if tab.difficult {
            for_each_pixel_in(rect, dims, stride, |r, c, _| maps.validity[[r, c]] = 0.0);
            continue;
        }
        let center = rect.center();
        for_each_pixel_in(rect, dims, stride, |r, c, p| {
            maps.text[[r, c]] = 1.0;
            let d = (p - center).norm();
            if d < owner_dist[[r, c]] {
                owner_dist[[r, c]] = d;
                for (channel, value) in maps.regression.iter_mut().zip(side_distances(rect, p)) {
                    channel[[r, c]] = value as f32;
                }
            }
        });
        for (side, seg) in extract_border_segments(rect).iter() {
            let channel = &mut maps.borders[side.index()];
            for_each_pixel_in(seg, dims, stride, |r, c, _| channel[[r, c]] = 1.0);
        }
    }
    maps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rect(cx: f64, cy: f64, l: f64, w: f64, a: f64) -> RotatedRect {
        RotatedRect::new(Point::new(cx, cy), l, w, a).unwrap()
    }

    fn image(tabs: Vec<Tab>, width: u32, height: u32) -> AnnotatedImage {
        AnnotatedImage {
            image_path: "fixture.png".into(),
            width,
            height,
            tabs,
        }
    }

    fn close(a: Point, b: Point) -> bool {
        a.distance(b) < 1e-9
    }

    #[test]
    fn axis_aligned_segments() {
        let seg = extract_border_segments(&rect(0.0, 0.0, 100.0, 20.0, 0.0));
        assert!(close(seg.long_top.center(), Point::new(0.0, -10.0)));
        assert!(close(seg.long_bottom.center(), Point::new(0.0, 10.0)));
        assert!(close(seg.short_left.center(), Point::new(-50.0, 0.0)));
        assert!(close(seg.short_right.center(), Point::new(50.0, 0.0)));
        for long in [seg.long_top, seg.long_bottom] {
            assert_eq!((long.length(), long.width()), (100.0, 4.0));
            assert!((long.area() - 400.0).abs() < 1e-9);
        }
        for short in [seg.short_left, seg.short_right] {
            assert_eq!((short.length(), short.width()), (20.0, 16.0));
            assert!((short.area() - 320.0).abs() < 1e-9);
        }
    }

    #[test]
    fn segments_rotate_with_the_tab() {
        let base = extract_border_segments(&rect(0.0, 0.0, 100.0, 20.0, 0.0));
        let turned = extract_border_segments(&rect(0.0, 0.0, 100.0, 20.0, PI / 6.0));
        for side in BorderSide::ALL {
            let expect = base.get(side).rotate_about(Point::default(), PI / 6.0);
            let got = turned.get(side);
            assert!(close(expect.center(), got.center()), "{side:?}");
            assert!((expect.angle() - got.angle()).abs() < 1e-12);
            assert_eq!(expect.length(), got.length());
            assert_eq!(expect.width(), got.width());
        }
    }

    #[test]
    fn short_segments_fill_gap_between_long_segments() {
        let w = 20.0;
        let seg = extract_border_segments(&rect(0.0, 0.0, 100.0, w, 0.0));
        let inner_gap = (seg.long_bottom.center().y - seg.long_bottom.width() / 2.0)
            - (seg.long_top.center().y + seg.long_top.width() / 2.0);
        assert!((inner_gap - seg.short_left.width()).abs() < 1e-12);
    }

    #[test]
    fn center_pixel_distances() {
        let tab = Tab::new(rect(50.5, 30.5, 60.0, 16.0, 0.4));
        let maps = rasterize_labels(&image(vec![tab], 100, 64), 1).unwrap();
        let d: Vec<f32> = maps.regression.iter().map(|m| m[[30, 50]]).collect();
        assert!((d[0] - 8.0).abs() < 1e-5 && (d[1] - 8.0).abs() < 1e-5);
        assert!((d[2] - 30.0).abs() < 1e-5 && (d[3] - 30.0).abs() < 1e-5);
    }

    #[test]
    fn empty_annotations_give_zero_maps() {
        let maps = rasterize_labels(&image(vec![], 40, 30), 1).unwrap();
        assert!(maps.text.iter().all(|&v| v == 0.0));
        assert!(maps.borders.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert!(maps.regression.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert!(maps.validity.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn stride_controls_resolution() {
        let img = image(vec![Tab::new(rect(50.0, 50.0, 40.0, 10.0, 0.0))], 101, 66);
        assert_eq!(rasterize_labels(&img, 1).unwrap().dim(), (66, 101));
        assert_eq!(rasterize_labels(&img, 2).unwrap().dim(), (33, 51));
        assert_eq!(rasterize_labels(&img, 4).unwrap().dim(), (17, 26));
        assert!(matches!(rasterize_labels(&img, 3), Err(LabelError::InvalidStride(3))));
    }

    #[test]
    fn difficult_tabs_only_touch_validity() {
        let mut tab = Tab::new(rect(30.0, 20.0, 40.0, 10.0, 0.0));
        tab.difficult = true;
        let maps = rasterize_labels(&image(vec![tab], 64, 40), 1).unwrap();
        assert!(maps.text.iter().all(|&v| v == 0.0));
        assert!(maps.borders.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert_eq!(maps.validity[[20, 30]], 0.0);
        assert_eq!(maps.validity[[2, 2]], 1.0);
    }

    /// Independent containment test via edge cross products.
    fn inside_by_edges(corners: &[Point; 4], p: Point) -> bool {
        (0..4).all(|i| {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            (b - a).cross(p - a) >= -1e-9
        })
    }

    fn point_line_distance(a: Point, b: Point, p: Point) -> f64 {
        (b - a).cross(p - a).abs() / (b - a).norm()
    }

    #[test]
    fn regression_matches_point_to_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let tabs: Vec<Tab> = (0..rng.gen_range(1..5))
                .map(|_| {
                    Tab::new(rect(
                        rng.gen_range(20.0..100.0),
                        rng.gen_range(20.0..100.0),
                        rng.gen_range(20.0..80.0),
                        rng.gen_range(6.0..20.0),
                        rng.gen_range(-PI..PI),
                    ))
                })
                .collect();
            let maps = rasterize_labels(&image(tabs.clone(), 120, 120), 1).unwrap();
            for ((r, c), &t) in maps.text.indexed_iter() {
                let p = pixel_center(r, c, 1);
                let owner = tabs
                    .iter()
                    .filter(|t| inside_by_edges(&t.rect.corners(), p))
                    .min_by(|a, b| {
                        (p - a.rect.center()).norm().total_cmp(&(p - b.rect.center()).norm())
                    });
                let Some(owner) = owner else {
                    assert_eq!(t, 0.0);
                    continue;
                };
                assert_eq!(t, 1.0);
                let k = owner.rect.corners();
                // Sides: upper k0-k1, lower k3-k2, left k0-k3, right k1-k2.
                let oracle = [
                    point_line_distance(k[0], k[1], p),
                    point_line_distance(k[3], k[2], p),
                    point_line_distance(k[0], k[3], p),
                    point_line_distance(k[1], k[2], p),
                ];
                for (ch, want) in maps.regression.iter().zip(oracle) {
                    assert!((ch[[r, c]] as f64 - want).abs() < 0.5);
                }
            }
        }
    }

    #[test]
    fn regression_sums_and_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let r = rect(
                rng.gen_range(40.0..60.0),
                rng.gen_range(40.0..60.0),
                rng.gen_range(20.0..60.0),
                rng.gen_range(8.0..20.0),
                rng.gen_range(-PI..PI),
            );
            let maps = rasterize_labels(&image(vec![Tab::new(r)], 100, 100), 1).unwrap();
            for ((row, col), &t) in maps.text.indexed_iter() {
                let d: Vec<f64> = maps.regression.iter().map(|m| m[[row, col]] as f64).collect();
                if t == 0.0 {
                    assert!(d.iter().all(|&v| v == 0.0));
                    continue;
                }
                assert!((d[0] + d[1] - r.width()).abs() <= 1.0);
                assert!((d[2] + d[3] - r.length()).abs() <= 1.0);
                let rebuilt =
                    box_from_distances(pixel_center(row, col, 1), [d[0], d[1], d[2], d[3]], r.angle())
                        .unwrap();
                assert!(iou(&rebuilt, &r) >= 0.99);
            }
        }
    }

    #[test]
    fn border_pixels_lie_in_their_segments() {
        let r = rect(50.0, 40.0, 60.0, 20.0, 0.3);
        let segs = extract_border_segments(&r);
        let maps = rasterize_labels(&image(vec![Tab::new(r)], 100, 80), 1).unwrap();
        for side in BorderSide::ALL {
            let mut count = 0;
            for ((row, col), &v) in maps.borders[side.index()].indexed_iter() {
                if v == 1.0 {
                    count += 1;
                    assert!(segs.get(side).contains(pixel_center(row, col, 1), 1e-9));
                }
            }
            assert!(count > 0);
        }
    }

    #[test]
    fn overlapping_tabs_use_nearest_center() {
        let a = rect(30.0, 20.0, 40.0, 10.0, 0.0);
        let b = rect(50.0, 20.0, 40.0, 10.0, 0.0);
        let maps = rasterize_labels(&image(vec![Tab::new(a), Tab::new(b)], 80, 40), 1).unwrap();
        // Pixel center x = 35.5 is nearer a (30) than b (50).
        assert!((maps.regression[2][[20, 35]] - 25.5).abs() < 1e-5);
        // x = 45.5 is nearer b.
        assert!((maps.regression[2][[20, 45]] - 15.5).abs() < 1e-5);
    }

    #[test]
    fn integer_translation_shifts_every_channel() {
        let r = rect(40.3, 30.7, 50.0, 14.0, 0.6);
        let m0 = rasterize_labels(&image(vec![Tab::new(r)], 100, 80), 1).unwrap().to_array();
        let m1 = rasterize_labels(&image(vec![Tab::new(r.translate(7.0, 5.0))], 100, 80), 1)
            .unwrap()
            .to_array();
        for c in 0..9 {
            for y in 0..70 {
                for x in 0..90 {
                    assert_eq!(m0[[c, y, x]], m1[[c, y + 5, x + 7]], "channel {c}");
                }
            }
        }
    }

    #[test]
    fn quarter_turn_of_canvas_turns_every_channel() {
        use crate::synth::{random_scene, SceneSpec};
        let n = 128usize;
        let spec = SceneSpec {
            width: n as u32,
            height: n as u32,
            max_tabs: 5,
            tab_width: (8.0, 20.0),
            ..SceneSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pivot = Point::new(n as f64 / 2.0, n as f64 / 2.0);
        for _ in 0..10 {
            let rects = random_scene(&spec, &mut rng);
            let tabs = |f: &dyn Fn(&RotatedRect) -> RotatedRect| rects.iter().map(|r| Tab::new(f(r))).collect();
            let a = rasterize_labels(&image(tabs(&|r| *r), n as u32, n as u32), 1).unwrap();
            let b = rasterize_labels(&image(tabs(&|r| r.rotate_about(pivot, PI / 2.0)), n as u32, n as u32), 1).unwrap();
            // Side labels swap with the angle wrap, so compare unions and sums.
            let features = |m: &LabelMaps, r: usize, c: usize| {
                [
                    m.text[[r, c]],
                    m.borders[0][[r, c]].max(m.borders[1][[r, c]]),
                    m.borders[2][[r, c]].max(m.borders[3][[r, c]]),
                    (m.regression[0][[r, c]] + m.regression[1][[r, c]]).round(),
                    (m.regression[2][[r, c]] + m.regression[3][[r, c]]).round(),
                ]
            };
            let mut agree = 0;
            for r in 0..n {
                for c in 0..n {
                    agree += usize::from(features(&a, r, c) == features(&b, c, n - 1 - r));
                }
            }
            let fraction = agree as f64 / (n * n) as f64;
            assert!(fraction >= 0.99, "{fraction}");
        }
    }

    #[test]
    fn label_stack_round_trips_through_fmap() {
        let r = rect(40.0, 30.0, 50.0, 14.0, 0.6);
        let mut tab = Tab::new(rect(80.0, 60.0, 20.0, 8.0, 0.0));
        tab.difficult = true;
        let maps = rasterize_labels(&image(vec![Tab::new(r), tab], 100, 80), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("maps.fmap");
        write_maps(&maps, &path).unwrap();
        assert_eq!(read_maps(&path).unwrap(), maps);

        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_maps(&path), Err(FmapError::BadMagic(_))));

        let three = Array3::<f32>::zeros((3, 4, 4));
        fmap::write_file(&path, &three).unwrap();
        assert!(matches!(read_maps(&path), Err(FmapError::ChannelMismatch { found: 3, .. })));
    }
}
