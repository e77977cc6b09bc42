//! Random text-box scenes and crude renderings of them, for fixtures and
//! end-to-end runs without a real dataset.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotatedImage, Granularity, Tab};
use crate::geometry::{rect_intersection_area, Point, RotatedRect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub min_tabs: usize,
    pub max_tabs: usize,
    /// Range of TAB widths (short side), in pixels.
    pub tab_width: (f64, f64),
    /// Range of length / width ratios.
    pub aspect: (f64, f64),
    pub min_length: f64,
    /// Minimum clearance between TABs and from the image edge.
    pub clearance: f64,
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 320,
            min_tabs: 1,
            max_tabs: 8,
            tab_width: (8.0, 28.0),
            aspect: (1.5, 8.0),
            min_length: 20.0,
            clearance: 4.0,
            max_attempts: 200,
        }
    }
}

fn sample<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Draws a TAB count uniformly from `min_tabs..=max_tabs` and places that
/// many non-overlapping rotated boxes by rejection. May return fewer when
/// the image fills up.
pub fn random_scene<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Vec<RotatedRect> {
    let target = rng.gen_range(spec.min_tabs..=spec.max_tabs.max(spec.min_tabs));
    let (iw, ih) = (f64::from(spec.width), f64::from(spec.height));
    let c = spec.clearance;
    let mut placed: Vec<RotatedRect> = Vec::new();
    let mut grown: Vec<RotatedRect> = Vec::new();
    for _ in 0..target {
        for _ in 0..spec.max_attempts {
            let w = sample(rng, spec.tab_width);
            let l = (w * sample(rng, spec.aspect)).max(spec.min_length).max(w);
            let angle = sample(rng, (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2));
            let center = Point::new(sample(rng, (0.0, iw)), sample(rng, (0.0, ih)));
            let Ok(rect) = RotatedRect::new(center, l, w, angle) else {
                continue;
            };
            let (lo, hi) = rect.bounds();
            if lo.x < c || lo.y < c || hi.x > iw - c || hi.y > ih - c {
                continue;
            }
            let halo = RotatedRect::new(center, l + c, w + c, angle).expect("positive dimensions");
            if grown.iter().any(|g| rect_intersection_area(g, &halo) > 0.0) {
                continue;
            }
            placed.push(rect);
            grown.push(halo);
            break;
        }
    }
    placed
}

pub fn random_annotated_image<R: Rng>(spec: &SceneSpec, name: &str, rng: &mut R) -> AnnotatedImage {
    let tabs = random_scene(spec, rng)
        .into_iter()
        .map(|rect| Tab {
            granularity: Granularity::Line,
            ..Tab::new(rect)
        })
        .collect();
    AnnotatedImage {
        image_path: name.into(),
        width: spec.width,
        height: spec.height,
        tabs,
    }
}

/// Paints a smooth background and, inside each TAB, dark glyph-like bars
/// along the reading direction.
pub fn render_scene<R: Rng>(img: &AnnotatedImage, rng: &mut R) -> RgbImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(150.0..230.0));
    let slope: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-40.0..40.0));
    let (w, h) = (img.width.max(1), img.height.max(1));
    let mut out = RgbImage::from_fn(w, h, |x, y| {
        let t = (f64::from(x) / f64::from(w) + f64::from(y) / f64::from(h)) / 2.0;
        Rgb(std::array::from_fn(|k| (base[k] + slope[k] * t).clamp(0.0, 255.0) as u8))
    });
    for tab in &img.tabs {
        let ink: [u8; 3] = std::array::from_fn(|_| rng.gen_range(10..90));
        let pitch = tab.rect.width() * rng.gen_range(0.4..0.7);
        let (lo, hi) = tab.rect.bounds();
        let x0 = lo.x.floor().max(0.0) as u32;
        let y0 = lo.y.floor().max(0.0) as u32;
        let x1 = (hi.x.ceil().max(0.0) as u32).min(w);
        let y1 = (hi.y.ceil().max(0.0) as u32).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let p = Point::new(f64::from(x) + 0.5, f64::from(y) + 0.5);
                if !tab.rect.contains(p, 0.0) {
                    continue;
                }
                let (along, across) = tab.rect.to_local(p);
                let glyph = (along / pitch).rem_euclid(1.0) < 0.6;
                let inner = across.abs() < 0.35 * tab.rect.width();
                if glyph && inner {
                    out.put_pixel(x, y, Rgb(ink));
                }
            }
        }
    }
    out
}
