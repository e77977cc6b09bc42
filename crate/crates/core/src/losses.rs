//! Training losses: soft Dice for the text and border maps, the UnitBox IoU
//! loss for the four distance channels, and the weighted multi-task sum.
//!
//! Every loss comes with an analytic gradient with respect to the
//! prediction. [`gradient_check`] compares those against central finite
//! differences.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::PredictionMaps;
use crate::labels::LabelMaps;

/// Added to the Dice denominator.
pub const DICE_EPSILON: f64 = 1e-6;
/// Non-positive predicted distances are clamped to this value.
pub const MIN_PREDICTED_DISTANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("loss weights must be non-negative and finite")]
    InvalidWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub loc: f64,
    pub brd: f64,
}

impl LossWeights {
    pub fn new(loc: f64, brd: f64) -> Result<Self, LossError> {
        if !(loc >= 0.0 && brd >= 0.0 && loc.is_finite() && brd.is_finite()) {
            return Err(LossError::InvalidWeight);
        }
        Ok(Self { loc, brd })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { loc: 1.0, brd: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossOptions {
    /// Drop pixels labelled as any border from the text-classification term.
    pub mask_borders_in_cls: bool,
    pub with_gradients: bool,
}

/// Gradients of the total loss with respect to each prediction channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub text: Array2<f64>,
    pub borders: [Array2<f64>; 4],
    pub regression: [Array2<f64>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
    pub brd: f64,
    /// Predicted distances that had to be clamped to [`MIN_PREDICTED_DISTANCE`].
    pub clamped_predictions: usize,
    pub gradients: Option<LossGradients>,
}

fn check_shape(a: (usize, usize), b: (usize, usize)) -> Result<(), LossError> {
    if a != b {
        return Err(LossError::ShapeMismatch(a, b));
    }
    Ok(())
}

struct DiceSums {
    inter: f64,
    denom: f64,
}

fn dice_sums<G, P>(g: &ArrayView2<G>, p: &ArrayView2<P>, mask: Option<&ArrayView2<f32>>) -> Result<DiceSums, LossError>
where
    G: Copy + Into<f64>,
    P: Copy + Into<f64>,
{
    check_shape(g.dim(), p.dim())?;
    if let Some(m) = mask {
        check_shape(g.dim(), m.dim())?;
    }
    let (mut inter, mut sg, mut sp) = (0.0, 0.0, 0.0);
    for ((idx, &gv), &pv) in g.indexed_iter().zip(p.iter()) {
        let w = mask.map_or(1.0, |m| m[idx] as f64);
        let (gv, pv) = (gv.into() * w, pv.into() * w);
        inter += gv * pv;
        sg += gv;
        sp += pv;
    }
    Ok(DiceSums {
        inter,
        denom: sg + sp + DICE_EPSILON,
    })
}

/// Soft Dice coefficient `2 Σ g·p / (Σ g + Σ p + ε)`.
pub fn dice_coefficient<G, P>(g: &ArrayView2<G>, p: &ArrayView2<P>) -> Result<f64, LossError>
where
    G: Copy + Into<f64>,
    P: Copy + Into<f64>,
{
    let s = dice_sums(g, p, None)?;
    Ok(2.0 * s.inter / s.denom)
}

/// `1 - dice_coefficient(g, p)`.
pub fn dice_loss<G, P>(g: &ArrayView2<G>, p: &ArrayView2<P>) -> Result<f64, LossError>
where
    G: Copy + Into<f64>,
    P: Copy + Into<f64>,
{
    Ok(1.0 - dice_coefficient(g, p)?)
}

/// Dice loss restricted by a per-pixel weight mask, with its gradient with
/// respect to `p`.
pub fn dice_loss_with_grad<G, P>(
    g: &ArrayView2<G>,
    p: &ArrayView2<P>,
    mask: Option<&ArrayView2<f32>>,
) -> Result<(f64, Array2<f64>), LossError>
where
    G: Copy + Into<f64>,
    P: Copy + Into<f64>,
{
    let s = dice_sums(g, p, mask)?;
    let d2 = s.denom * s.denom;
    let grad = Array2::from_shape_fn(g.dim(), |idx| {
        let w = mask.map_or(1.0, |m| m[idx] as f64);
        -2.0 * w * (w * g[idx].into() * s.denom - s.inter) / d2
    });
    Ok((1.0 - 2.0 * s.inter / s.denom, grad))
}

/// Per-pixel IoU loss `-ln(IoU)` between the boxes implied by two sets of
/// (upper, lower, left, right) distances. Predicted distances must be
/// positive; see [`iou_loss_with_grad`] for the clamping variant.
pub fn iou_loss(gt: [f64; 4], pred: [f64; 4]) -> f64 {
    iou_loss_with_grad(gt, pred).0
}

/// Returns the loss, its gradient with respect to `pred`, and how many
/// predicted distances were clamped.
pub fn iou_loss_with_grad(gt: [f64; 4], pred: [f64; 4]) -> (f64, [f64; 4], usize) {
    let gt = gt.map(|d| d.max(0.0));
    let clamped = pred.iter().filter(|x| !(**x > 0.0)).count();
    let mut active = [true; 4];
    let mut p = pred;
    for (v, a) in p.iter_mut().zip(active.iter_mut()) {
        if !(*v > MIN_PREDICTED_DISTANCE) {
            *v = MIN_PREDICTED_DISTANCE;
            *a = false;
        }
    }

    let [gu, gd, gl, gr] = gt;
    let [pu, pd, pl, pr] = p;
    let ih = pu.min(gu) + pd.min(gd);
    let iw = pl.min(gl) + pr.min(gr);
    let inter = ih * iw;
    let area_gt = (gu + gd) * (gl + gr);
    let area_pred = (pu + pd) * (pl + pr);
    let union = area_gt + area_pred - inter;
    let loss = union.ln() - inter.ln();

    let mut grad = [0.0; 4];
    for k in 0..4 {
        if !active[k] {
            continue;
        }
        let vertical = k < 2;
        let d_area_pred = if vertical { pl + pr } else { pu + pd };
        let d_inter = if p[k] < gt[k] {
            if vertical {
                iw
            } else {
                ih
            }
        } else {
            0.0
        };
        grad[k] = (d_area_pred - d_inter) / union - d_inter / inter;
    }
    (loss, grad, clamped)
}

/// Mean IoU loss over text pixels, gradients per regression channel, and
/// the number of clamped predictions.
pub fn localization_loss(
    text: &ArrayView2<f32>,
    gt: &[Array2<f32>; 4],
    pred: &[Array2<f32>; 4],
) -> Result<(f64, [Array2<f64>; 4], usize), LossError> {
    let dim = text.dim();
    for m in gt.iter().chain(pred.iter()) {
        check_shape(dim, m.dim())?;
    }
    let mut grads: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros(dim));
    let count = text.iter().filter(|&&t| t > 0.5).count();
    if count == 0 {
        return Ok((0.0, grads, 0));
    }
    let n = count as f64;
    let (mut sum, mut clamped) = (0.0, 0);
    for (idx, &t) in text.indexed_iter() {
        if t <= 0.5 {
            continue;
        }
        let g = std::array::from_fn(|k| gt[k][idx] as f64);
        let p = std::array::from_fn(|k| pred[k][idx] as f64);
        let (l, dg, c) = iou_loss_with_grad(g, p);
        sum += l;
        clamped += c;
        for k in 0..4 {
            grads[k][idx] = dg[k] / n;
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} non-positive predicted distances");
    }
    Ok((sum / n, grads, clamped))
}

fn cls_mask(labels: &LabelMaps, options: &LossOptions) -> Array2<f32> {
    let mut mask = labels.validity.clone();
    if options.mask_borders_in_cls {
        for b in &labels.borders {
            Zip::from(&mut mask).and(b).for_each(|m, &v| {
                if v > 0.5 {
                    *m = 0.0;
                }
            });
        }
    }
    mask
}

/// `total = cls + λ_loc·loc + λ_brd·brd`, where `cls` is the masked Dice loss
/// of the text channel, `brd` the mean Dice loss of the four border channels
/// and `loc` the mean IoU loss over text pixels.
pub fn total_loss(
    labels: &LabelMaps,
    preds: &PredictionMaps,
    weights: &LossWeights,
    options: &LossOptions,
) -> Result<LossReport, LossError> {
    check_shape(labels.dim(), preds.dim())?;
    let mask = cls_mask(labels, options);
    let (cls, cls_grad) = dice_loss_with_grad(&labels.text.view(), &preds.text.view(), Some(&mask.view()))?;

    let mut brd = 0.0;
    let mut brd_grads: Vec<Array2<f64>> = Vec::with_capacity(4);
    for (g, p) in labels.borders.iter().zip(&preds.borders) {
        let (l, grad) = dice_loss_with_grad(&g.view(), &p.view(), None)?;
        brd += l / 4.0;
        brd_grads.push(grad * (weights.brd / 4.0));
    }

    let (loc, loc_grads, clamped) =
        localization_loss(&labels.text.view(), &labels.regression, &preds.regression)?;

    let total = cls + weights.loc * loc + weights.brd * brd;
    let gradients = options.with_gradients.then(|| LossGradients {
        text: cls_grad,
        borders: brd_grads.try_into().expect("four border channels"),
        regression: loc_grads.map(|g| g * weights.loc),
    });
    Ok(LossReport {
        total,
        cls,
        loc,
        brd,
        clamped_predictions: clamped,
        gradients,
    })
}

/// Finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub fixtures: usize,
    pub size: usize,
    pub step: f64,
    pub dice_max_rel_error: f64,
    pub iou_max_rel_error: f64,
    /// Largest `|total - (cls + λ_loc·loc + λ_brd·brd)|` seen.
    pub decomposition_max_abs_error: f64,
}

impl GradientCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.dice_max_rel_error < tolerance
            && self.iou_max_rel_error < tolerance
            && self.decomposition_max_abs_error <= 1e-12
    }
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central_difference(x: &mut [f64], i: usize, h: f64, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Checks the analytic Dice and IoU-loss gradients against central finite
/// differences on `fixtures` random `size × size` maps, and checks the
/// multi-task decomposition on each.
pub fn gradient_check<R: Rng>(rng: &mut R, fixtures: usize, size: usize) -> GradientCheckReport {
    let dim = (size, size);
    let mut report = GradientCheckReport {
        fixtures,
        size,
        step: FD_STEP,
        dice_max_rel_error: 0.0,
        iou_max_rel_error: 0.0,
        decomposition_max_abs_error: 0.0,
    };
    for _ in 0..fixtures {
        // Dice with a random soft target, prediction and weight mask.
        let g = Array2::from_shape_fn(dim, |_| rng.gen_range(0.0..1.0f64));
        let mask = Array2::from_shape_fn(dim, |_| if rng.gen_bool(0.8) { 1.0f32 } else { 0.0 });
        let mut p: Vec<f64> = (0..size * size).map(|_| rng.gen_range(0.05..0.95)).collect();
        let p_arr = Array2::from_shape_vec(dim, p.clone()).expect("shape");
        let (_, analytic) =
            dice_loss_with_grad(&g.view(), &p_arr.view(), Some(&mask.view())).expect("shapes agree");
        let mut f = |x: &[f64]| {
            let arr = Array2::from_shape_vec(dim, x.to_vec()).expect("shape");
            dice_loss_with_grad(&g.view(), &arr.view(), Some(&mask.view()))
                .expect("shapes agree")
                .0
        };
        let numeric: Vec<f64> = (0..p.len())
            .map(|i| central_difference(&mut p, i, FD_STEP, &mut f))
            .collect();
        let analytic: Vec<f64> = analytic.iter().copied().collect();
        report.dice_max_rel_error = report.dice_max_rel_error.max(relative_error(&analytic, &numeric));

        // IoU loss over every pixel; keep predictions away from the kinks at
        // pred == gt.
        let gt: Vec<[f64; 4]> = (0..size * size)
            .map(|_| std::array::from_fn(|_| rng.gen_range(1.0..30.0)))
            .collect();
        let mut pred: Vec<f64> = gt
            .iter()
            .flat_map(|g| {
                g.map(|v| {
                    let offset: f64 = rng.gen_range(0.05..0.6);
                    if rng.gen_bool(0.5) {
                        v * (1.0 + offset)
                    } else {
                        v * (1.0 - offset)
                    }
                })
            })
            .collect();
        let n = gt.len() as f64;
        let mut mean_loss = |x: &[f64]| {
            gt.iter()
                .enumerate()
                .map(|(i, g)| iou_loss(*g, [x[4 * i], x[4 * i + 1], x[4 * i + 2], x[4 * i + 3]]))
                .sum::<f64>()
                / n
        };
        let analytic: Vec<f64> = gt
            .iter()
            .enumerate()
            .flat_map(|(i, g)| {
                let p = [pred[4 * i], pred[4 * i + 1], pred[4 * i + 2], pred[4 * i + 3]];
                iou_loss_with_grad(*g, p).1.map(|d| d / n)
            })
            .collect();
        let numeric: Vec<f64> = (0..pred.len())
            .map(|i| central_difference(&mut pred, i, FD_STEP, &mut mean_loss))
            .collect();
        report.iou_max_rel_error = report.iou_max_rel_error.max(relative_error(&analytic, &numeric));

        // Decomposition identity on random label/prediction stacks.
        let labels = random_labels(rng, dim);
        let preds = random_predictions(rng, dim);
        let weights = LossWeights::new(rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)).expect("valid");
        let r = total_loss(&labels, &preds, &weights, &LossOptions::default()).expect("shapes agree");
        let err = (r.total - (r.cls + weights.loc * r.loc + weights.brd * r.brd)).abs();
        report.decomposition_max_abs_error = report.decomposition_max_abs_error.max(err);
    }
    report
}

fn random_labels<R: Rng>(rng: &mut R, dim: (usize, usize)) -> LabelMaps {
    let mut maps = LabelMaps::zeros(dim.0, dim.1);
    maps.text.mapv_inplace(|_| f32::from(rng.gen_bool(0.5)));
    for b in &mut maps.borders {
        b.mapv_inplace(|_| f32::from(rng.gen_bool(0.2)));
    }
    for r in &mut maps.regression {
        r.mapv_inplace(|_| rng.gen_range(0.5..20.0));
    }
    maps
}

fn random_predictions<R: Rng>(rng: &mut R, dim: (usize, usize)) -> PredictionMaps {
    let mut preds = PredictionMaps::zeros(dim.0, dim.1);
    preds.text.mapv_inplace(|_| rng.gen_range(0.0..1.0));
    for b in &mut preds.borders {
        b.mapv_inplace(|_| rng.gen_range(0.0..1.0));
    }
    for r in &mut preds.regression {
        r.mapv_inplace(|_| rng.gen_range(0.5..20.0));
    }
    preds
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dice_identity_disjoint_half() {
        let g = array![[1.0f32, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]];
        assert!((dice_coefficient(&g.view(), &g.view()).unwrap() - 1.0).abs() < 1e-6);
        let disjoint = array![[0.0f32, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0]];
        assert_eq!(dice_coefficient(&g.view(), &disjoint.view()).unwrap(), 0.0);
        let half = array![[0.0f32, 1.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0]];
        assert!((dice_coefficient(&g.view(), &half.view()).unwrap() - 0.5).abs() < 1e-6);
        assert!((dice_loss(&g.view(), &g.view()).unwrap()).abs() < 1e-6);
        assert!((dice_loss(&g.view(), &disjoint.view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dice_shape_mismatch() {
        let a = Array2::<f32>::zeros((2, 3));
        let b = Array2::<f32>::zeros((3, 2));
        assert!(matches!(
            dice_coefficient(&a.view(), &b.view()),
            Err(LossError::ShapeMismatch(..))
        ));
    }

    #[test]
    fn iou_loss_examples() {
        let gt = [4.0, 6.0, 10.0, 30.0];
        assert!(iou_loss(gt, gt).abs() < 1e-15);
        let halved = gt.map(|d| d / 2.0);
        assert!((iou_loss(gt, halved) - 4f64.ln()).abs() < 1e-12);
    }

    /// Direct construction of the two boxes around a pixel at the origin.
    fn geometric_iou(gt: [f64; 4], pred: [f64; 4]) -> f64 {
        let boxes = [gt, pred].map(|[u, d, l, r]| (-l, -u, r, d));
        let (a, b) = (boxes[0], boxes[1]);
        let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
        let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
        let inter = iw * ih;
        let area = |x: (f64, f64, f64, f64)| (x.2 - x.0) * (x.3 - x.1);
        inter / (area(a) + area(b) - inter)
    }

    #[test]
    fn iou_loss_matches_geometric_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let gt: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.1..50.0));
            let pred: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.1..50.0));
            let want = -geometric_iou(gt, pred).ln();
            assert!((iou_loss(gt, pred) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn non_positive_predictions_are_clamped_and_counted() {
        let (l, grad, clamped) = iou_loss_with_grad([5.0; 4], [-1.0, 0.0, 5.0, 5.0]);
        assert!(l.is_finite() && l > 0.0);
        assert_eq!(clamped, 2);
        assert_eq!(grad[0], 0.0);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let report = gradient_check(&mut rng, 5, 16);
        assert!(report.passed(1e-4), "{report:?}");
    }

    fn fixture_labels() -> LabelMaps {
        use crate::annotations::{AnnotatedImage, Tab};
        use crate::geometry::{Point, RotatedRect};
        let tabs = vec![
            Tab::new(RotatedRect::new(Point::new(30.0, 20.0), 40.0, 12.0, 0.2).unwrap()),
            Tab::new(RotatedRect::new(Point::new(40.0, 45.0), 50.0, 10.0, -0.1).unwrap()),
        ];
        let img = AnnotatedImage {
            image_path: "x.png".into(),
            width: 80,
            height: 64,
            tabs,
        };
        crate::labels::rasterize_labels(&img, 1).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let labels = fixture_labels();
        let preds = PredictionMaps::from_labels(&labels);
        let r = total_loss(&labels, &preds, &LossWeights::default(), &LossOptions::default()).unwrap();
        assert!(r.total.abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn weights_act_linearly() {
        let labels = fixture_labels();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let preds = random_predictions(&mut rng, labels.dim());
        let opts = LossOptions::default();
        let t = |loc: f64, brd: f64| {
            total_loss(&labels, &preds, &LossWeights::new(loc, brd).unwrap(), &opts)
                .unwrap()
                .total
        };
        let zero = total_loss(&labels, &preds, &LossWeights::new(0.0, 0.0).unwrap(), &opts).unwrap();
        assert_eq!(zero.total, zero.cls);
        assert!(((t(2.0, 0.0) - t(0.0, 0.0)) - 2.0 * (t(1.0, 0.0) - t(0.0, 0.0))).abs() < 1e-12);
        assert!(((t(0.0, 2.0) - t(0.0, 0.0)) - 2.0 * (t(0.0, 1.0) - t(0.0, 0.0))).abs() < 1e-12);
        assert!(LossWeights::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn total_gradient_matches_finite_differences_on_text_channel() {
        let labels = fixture_labels();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut preds = random_predictions(&mut rng, labels.dim());
        let opts = LossOptions {
            with_gradients: true,
            ..Default::default()
        };
        let w = LossWeights::default();
        let grads = total_loss(&labels, &preds, &w, &opts).unwrap().gradients.unwrap();
        // f32 storage limits the step; spot-check a few pixels.
        let h = 1e-2f32;
        for &(r, c) in &[(20usize, 30usize), (45, 40), (5, 5)] {
            let orig = preds.text[[r, c]];
            preds.text[[r, c]] = orig + h;
            let plus = total_loss(&labels, &preds, &w, &opts).unwrap().total;
            preds.text[[r, c]] = orig - h;
            let minus = total_loss(&labels, &preds, &w, &opts).unwrap().total;
            preds.text[[r, c]] = orig;
            let fd = (plus - minus) / (2.0 * h as f64);
            assert!((fd - grads.text[[r, c]]).abs() < 1e-4 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn border_masking_changes_only_cls() {
        let labels = fixture_labels();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let preds = random_predictions(&mut rng, labels.dim());
        let w = LossWeights::default();
        let plain = total_loss(&labels, &preds, &w, &LossOptions::default()).unwrap();
        let masked = total_loss(
            &labels,
            &preds,
            &w,
            &LossOptions {
                mask_borders_in_cls: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(plain.cls, masked.cls);
        assert_eq!(plain.loc, masked.loc);
        assert_eq!(plain.brd, masked.brd);
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bounded(
            g in proptest::collection::vec(0.0f32..=1.0, 36),
            p in proptest::collection::vec(0.0f32..=1.0, 36),
        ) {
            let g = Array2::from_shape_vec((6, 6), g).unwrap();
            let p = Array2::from_shape_vec((6, 6), p).unwrap();
            let a = dice_coefficient(&g.view(), &p.view()).unwrap();
            let b = dice_coefficient(&p.view(), &g.view()).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn dice_monotone_in_overlap(n in 4usize..40, k in 0usize..40) {
            // Two masks of n pixels on a 1×80 strip with overlap k ≤ n.
            let k = k.min(n);
            let g = Array2::from_shape_fn((1, 80), |(_, x)| f32::from(x < n));
            let shifted = |ov: usize| Array2::from_shape_fn((1, 80), |(_, x)| f32::from(x + ov >= n && x + ov < 2 * n));
            let d1 = dice_coefficient(&g.view(), &shifted(k).view()).unwrap();
            let d0 = dice_coefficient(&g.view(), &shifted(k.saturating_sub(1)).view()).unwrap();
            prop_assert!(d1 >= d0);
        }

        #[test]
        fn iou_loss_non_negative_zero_iff_equal(
            gt in proptest::array::uniform4(0.5f64..40.0),
            pred in proptest::array::uniform4(0.5f64..40.0),
        ) {
            let l = iou_loss(gt, pred);
            prop_assert!(l >= -1e-15);
            prop_assert!(iou_loss(gt, gt).abs() < 1e-15);
            if gt != pred {
                prop_assert!(l > 0.0);
            }
        }
    }
}
