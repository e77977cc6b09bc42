//! Detection evaluation.
//!
//! Two protocols: greedy one-to-one matching of rotated boxes by IoU (with
//! an optional orientation constraint), and the Wolf–Jolion area-overlap
//! protocol used by ICDAR 2013, which also credits split (one-to-many) and
//! merged (many-to-one) detections.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::Tab;
use crate::geometry::{iou, orientation_difference, rect_intersection_area, DetectionBox};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ANGLE_THRESHOLD: f64 = std::f64::consts::PI / 8.0;
pub const DEFAULT_AREA_RECALL: f64 = 0.8;
pub const DEFAULT_AREA_PRECISION: f64 = 0.4;
/// Credit given to every participant of a split or merged match.
pub const FRAGMENTATION_SCORE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One-to-one IoU matching with an orientation constraint.
    Msra,
    /// Area-overlap matching with split/merge credit.
    Icdar13,
    /// One-to-one IoU matching without an orientation constraint.
    Icdar17,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "msra" => Ok(Self::Msra),
            "icdar13" => Ok(Self::Icdar13),
            "icdar17" => Ok(Self::Icdar17),
            other => Err(format!("unknown protocol {other:?} (expected msra, icdar13 or icdar17)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchKind {
    OneToOne,
    OneToMany,
    ManyToOne,
}

/// One matched (GT, detection) pair. Members of a split or merged group
/// appear as several pairs sharing the same kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt: usize,
    pub det: usize,
    pub kind: MatchKind,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMatch {
    pub name: String,
    pub matches: Vec<MatchPair>,
    /// Summed recall credit over countable GT boxes.
    pub gt_credit: f64,
    /// Summed precision credit over countable detections.
    pub det_credit: f64,
    pub countable_gt: usize,
    pub countable_det: usize,
}

impl ImageMatch {
    pub fn recall(&self) -> f64 {
        ratio(self.gt_credit, self.countable_gt)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.det_credit, self.countable_det)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub protocol: Protocol,
    /// IoU threshold for one-to-one protocols.
    pub iou_threshold: Option<f64>,
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    pub images: Vec<ImageMatch>,
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl MatchReport {
    fn from_images(protocol: Protocol, iou_threshold: Option<f64>, images: Vec<ImageMatch>) -> Self {
        let gt_credit: f64 = images.iter().map(|m| m.gt_credit).sum();
        let det_credit: f64 = images.iter().map(|m| m.det_credit).sum();
        let gt: usize = images.iter().map(|m| m.countable_gt).sum();
        let det: usize = images.iter().map(|m| m.countable_det).sum();
        let recall = ratio(gt_credit, gt);
        let precision = ratio(det_credit, det);
        Self {
            protocol,
            iou_threshold,
            recall,
            precision,
            f_score: f_score(precision, recall),
            images,
        }
    }

    /// Plain-text R/P/F table, percentages with one decimal.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let threshold = self.iou_threshold.map_or("-".to_string(), |t| format!("{t:.2}"));
        let _ = writeln!(out, "{:<10} {:>5} {:>6} {:>6} {:>6}", "Protocol", "IoU", "R", "P", "F");
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>6.1} {:>6.1} {:>6.1}",
            format!("{:?}", self.protocol).to_lowercase(),
            threshold,
            100.0 * self.recall,
            100.0 * self.precision,
            100.0 * self.f_score
        );
        out
    }
}

/// One image's ground truth and detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalImage {
    pub name: String,
    pub gt: Vec<Tab>,
    pub det: Vec<DetectionBox>,
}

/// Greedy one-to-one matching for a single image.
///
/// Candidate pairs need IoU above `iou_t` and, when `angle_t` is given, a
/// long-axis orientation difference below it. Pairs are taken by descending
/// IoU, ties broken by GT then detection index. Detections matched to a
/// difficult GT, or left unmatched but overlapping one by more than `iou_t`,
/// are ignored.
pub fn match_image_one_to_one(gt: &[Tab], det: &[DetectionBox], iou_t: f64, angle_t: Option<f64>) -> ImageMatch {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut overlaps = vec![vec![0.0; det.len()]; gt.len()];
    for (g, tab) in gt.iter().enumerate() {
        let g_angle = tab.rect.with_long_axis().angle();
        for (d, db) in det.iter().enumerate() {
            let v = iou(&tab.rect, &db.rect);
            overlaps[g][d] = v;
            let aligned =
                angle_t.map_or(true, |t| orientation_difference(g_angle, db.rect.with_long_axis().angle()) < t);
            if v > iou_t && aligned {
                candidates.push((v, g, d));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut gt_used = vec![false; gt.len()];
    let mut det_used = vec![false; det.len()];
    let mut ignored = vec![false; det.len()];
    let mut matches = Vec::new();
    for (v, g, d) in candidates {
        if gt_used[g] || det_used[d] {
            continue;
        }
        gt_used[g] = true;
        det_used[d] = true;
        if gt[g].difficult {
            ignored[d] = true;
        } else {
            matches.push(MatchPair {
                gt: g,
                det: d,
                kind: MatchKind::OneToOne,
                iou: v,
            });
        }
    }
    for d in 0..det.len() {
        if !det_used[d] && gt.iter().enumerate().any(|(g, t)| t.difficult && overlaps[g][d] > iou_t) {
            ignored[d] = true;
        }
    }
    let credit = matches.len() as f64;
    ImageMatch {
        name: String::new(),
        matches,
        gt_credit: credit,
        det_credit: credit,
        countable_gt: gt.iter().filter(|t| !t.difficult).count(),
        countable_det: ignored.iter().filter(|&&i| !i).count(),
    }
}

/// Wolf–Jolion matching for a single image, with area-recall threshold
/// `t_r` and area-precision threshold `t_p`.
///
/// One-to-one matches score 1.0; every GT and detection taking part in a
/// split or merge with at least two partners scores [`FRAGMENTATION_SCORE`].
/// Detections covered by a difficult GT beyond `t_p` are ignored.
pub fn match_image_icdar13(gt: &[Tab], det: &[DetectionBox], t_r: f64, t_p: f64) -> ImageMatch {
    let (ng, nd) = (gt.len(), det.len());
    let mut rec = vec![vec![0.0; nd]; ng];
    let mut prec = vec![vec![0.0; nd]; ng];
    for (g, tab) in gt.iter().enumerate() {
        for (d, db) in det.iter().enumerate() {
            let inter = rect_intersection_area(&tab.rect, &db.rect);
            rec[g][d] = inter / tab.rect.area();
            prec[g][d] = inter / db.rect.area();
        }
    }
    let gt_care: Vec<bool> = gt.iter().map(|t| !t.difficult).collect();
    let det_care: Vec<bool> = (0..nd)
        .map(|d| !(0..ng).any(|g| !gt_care[g] && prec[g][d] > t_p))
        .collect();

    let mut gt_done = vec![false; ng];
    let mut det_done = vec![false; nd];
    let mut matches = Vec::new();
    let (mut gt_credit, mut det_credit) = (0.0, 0.0);
    let strong = |g: usize, d: usize| rec[g][d] >= t_r && prec[g][d] >= t_p;
    let pair_iou = |g: usize, d: usize| iou(&gt[g].rect, &det[d].rect);

    for g in (0..ng).filter(|&g| gt_care[g]) {
        for d in (0..nd).filter(|&d| det_care[d]) {
            if gt_done[g] || det_done[d] || !strong(g, d) {
                continue;
            }
            let row = (0..nd).filter(|&j| det_care[j] && strong(g, j)).count();
            let col = (0..ng).filter(|&i| gt_care[i] && strong(i, d)).count();
            if row == 1 && col == 1 {
                gt_done[g] = true;
                det_done[d] = true;
                gt_credit += 1.0;
                det_credit += 1.0;
                matches.push(MatchPair {
                    gt: g,
                    det: d,
                    kind: MatchKind::OneToOne,
                    iou: pair_iou(g, d),
                });
            }
        }
    }

    // Split detections: several detections, each mostly inside one GT, that
    // together cover it.
    for g in (0..ng).filter(|&g| gt_care[g]) {
        if gt_done[g] {
            continue;
        }
        let parts: Vec<usize> = (0..nd)
            .filter(|&d| det_care[d] && !det_done[d] && prec[g][d] >= t_p)
            .collect();
        let covered: f64 = parts.iter().map(|&d| rec[g][d]).sum();
        if parts.is_empty() || covered < t_r {
            continue;
        }
        let (score, kind) = if parts.len() == 1 {
            (1.0, MatchKind::OneToOne)
        } else {
            (FRAGMENTATION_SCORE, MatchKind::OneToMany)
        };
        gt_done[g] = true;
        gt_credit += score;
        for &d in &parts {
            det_done[d] = true;
            det_credit += score;
            matches.push(MatchPair {
                gt: g,
                det: d,
                kind,
                iou: pair_iou(g, d),
            });
        }
    }

    // Merged detections: one detection covering several GTs.
    for d in (0..nd).filter(|&d| det_care[d]) {
        if det_done[d] {
            continue;
        }
        let parts: Vec<usize> = (0..ng)
            .filter(|&g| gt_care[g] && !gt_done[g] && rec[g][d] >= t_r)
            .collect();
        let covered: f64 = parts.iter().map(|&g| prec[g][d]).sum();
        if parts.is_empty() || covered < t_p {
            continue;
        }
        let (score, kind) = if parts.len() == 1 {
            (1.0, MatchKind::OneToOne)
        } else {
            (FRAGMENTATION_SCORE, MatchKind::ManyToOne)
        };
        det_done[d] = true;
        det_credit += score;
        for &g in &parts {
            gt_done[g] = true;
            gt_credit += score;
            matches.push(MatchPair {
                gt: g,
                det: d,
                kind,
                iou: pair_iou(g, d),
            });
        }
    }

    ImageMatch {
        name: String::new(),
        matches,
        gt_credit,
        det_credit,
        countable_gt: gt_care.iter().filter(|&&c| c).count(),
        countable_det: det_care.iter().filter(|&&c| c).count(),
    }
}

fn named(mut m: ImageMatch, img: &EvalImage) -> ImageMatch {
    m.name = img.name.clone();
    m
}

/// Corpus-level one-to-one evaluation.
pub fn match_one_to_one(corpus: &[EvalImage], iou_t: f64, angle_t: Option<f64>) -> MatchReport {
    let images = corpus
        .par_iter()
        .map(|img| named(match_image_one_to_one(&img.gt, &img.det, iou_t, angle_t), img))
        .collect();
    let protocol = if angle_t.is_some() {
        Protocol::Msra
    } else {
        Protocol::Icdar17
    };
    MatchReport::from_images(protocol, Some(iou_t), images)
}

/// Corpus-level ICDAR 2013 evaluation.
pub fn match_icdar13(corpus: &[EvalImage], t_r: f64, t_p: f64) -> MatchReport {
    let images = corpus
        .par_iter()
        .map(|img| named(match_image_icdar13(&img.gt, &img.det, t_r, t_p), img))
        .collect();
    MatchReport::from_images(Protocol::Icdar13, None, images)
}

/// Evaluates under a protocol's default constraints; `iou_t` applies to the
/// one-to-one protocols.
pub fn evaluate(corpus: &[EvalImage], protocol: Protocol, iou_t: f64) -> MatchReport {
    match protocol {
        Protocol::Msra => match_one_to_one(corpus, iou_t, Some(DEFAULT_ANGLE_THRESHOLD)),
        Protocol::Icdar17 => match_one_to_one(corpus, iou_t, None),
        Protocol::Icdar13 => match_icdar13(corpus, DEFAULT_AREA_RECALL, DEFAULT_AREA_PRECISION),
    }
}

/// One-to-one f-score at each threshold.
pub fn iou_sweep(corpus: &[EvalImage], thresholds: &[f64], angle_t: Option<f64>) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| (t, match_one_to_one(corpus, t, angle_t).f_score))
        .collect()
}
