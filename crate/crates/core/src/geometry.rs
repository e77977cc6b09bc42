//! Rotated rectangles, convex quadrilaterals and the operations the rest of
//! the crate builds on: convex clipping, IoU, rotated NMS and principal-axis
//! orientation of pixel sets.
//!
//! Coordinates are image pixels (`x` right, `y` down). Angles are measured as
//! `atan2(dy, dx)` in those coordinates, so a positive angle turns `+x`
//! towards `+y`. With this convention the corner order produced by
//! [`RotatedRect::corners`] has positive shoelace area.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Polygons with less area than this are rejected as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rectangle dimensions must be positive and finite (length {length}, width {width})")]
    InvalidDimensions { length: f64, width: f64 },
    #[error("non-finite coordinate or angle")]
    NonFinite,
    #[error("degenerate polygon (area {0:e})")]
    Degenerate(f64),
    #[error("polygon is self-intersecting")]
    SelfIntersecting,
    #[error("polygon is not convex")]
    NonConvex,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    /// Rotates the point by `angle` about `pivot`.
    pub fn rotate_about(self, pivot: Point, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        let d = self - pivot;
        pivot + Point::new(c * d.x - s * d.y, s * d.x + c * d.y)
    }

    fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Maps any angle onto the half-open interval `[-π/2, π/2)`.
///
/// A rectangle rotated by `π` is the same rectangle, so this loses nothing
/// geometrically; only the reading direction becomes ambiguous.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = (angle + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if a >= FRAC_PI_2 {
        a -= PI;
    }
    if a < -FRAC_PI_2 {
        a = -FRAC_PI_2;
    }
    a
}

/// Smallest absolute difference between two undirected line orientations.
pub fn orientation_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// A rectangle of `length` along the reading direction (`angle`) and `width`
/// across it, centered at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    center: Point,
    length: f64,
    width: f64,
    angle: f64,
}

impl RotatedRect {
    pub fn new(center: Point, length: f64, width: f64, angle: f64) -> Result<Self, GeometryError> {
        if !center.is_finite() || !angle.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
            return Err(GeometryError::InvalidDimensions { length, width });
        }
        Ok(Self {
            center,
            length,
            width,
            angle: normalize_angle(angle),
        })
    }

    /// Axis-aligned rectangle from its left, top, right and bottom edges.
    pub fn from_ltrb(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, GeometryError> {
        Self::new(
            Point::new((left + right) / 2.0, (top + bottom) / 2.0),
            right - left,
            bottom - top,
            0.0,
        )
    }

    /// Rebuilds a rectangle from corners in the order produced by
    /// [`RotatedRect::corners`]. The first edge defines length and angle.
    pub fn from_corners(corners: &[Point; 4]) -> Result<Self, GeometryError> {
        let center = corners.iter().fold(Point::default(), |acc, &p| acc + p) * 0.25;
        let along = corners[1] - corners[0];
        let across = corners[2] - corners[1];
        Self::new(center, along.norm(), across.norm(), along.y.atan2(along.x))
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Unit vectors along the length (`u`) and across the width (`v`).
    pub fn axes(&self) -> (Point, Point) {
        let (s, c) = self.angle.sin_cos();
        (Point::new(c, s), Point::new(-s, c))
    }

    /// Corners in order: `-u-v`, `+u-v`, `+u+v`, `-u+v`. For an axis-aligned
    /// rectangle that is top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [Point; 4] {
        let (u, v) = self.axes();
        let hu = u * (self.length / 2.0);
        let hv = v * (self.width / 2.0);
        let c = self.center;
        [c - hu - hv, c + hu - hv, c + hu + hv, c - hu + hv]
    }

    /// Coordinates of `p` in the rectangle frame: `(along u, along v)`
    /// relative to the center.
    pub fn to_local(&self, p: Point) -> (f64, f64) {
        let (u, v) = self.axes();
        let d = p - self.center;
        (d.dot(u), d.dot(v))
    }

    pub fn from_local(&self, along: f64, across: f64) -> Point {
        let (u, v) = self.axes();
        self.center + u * along + v * across
    }

    /// Closed containment test with a tolerance in pixels.
    pub fn contains(&self, p: Point, tolerance: f64) -> bool {
        let (a, b) = self.to_local(p);
        a.abs() <= self.length / 2.0 + tolerance && b.abs() <= self.width / 2.0 + tolerance
    }

    /// Same rectangle, described so that `length >= width`.
    pub fn with_long_axis(&self) -> Self {
        if self.width > self.length {
            Self {
                center: self.center,
                length: self.width,
                width: self.length,
                angle: normalize_angle(self.angle + FRAC_PI_2),
            }
        } else {
            *self
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            center: self.center + Point::new(dx, dy),
            ..*self
        }
    }

    pub fn rotate_about(&self, pivot: Point, angle: f64) -> Self {
        Self {
            center: self.center.rotate_about(pivot, angle),
            angle: normalize_angle(self.angle + angle),
            ..*self
        }
    }

    /// Uniform scaling about the image origin.
    pub fn scale(&self, factor: f64) -> Self {
        Self {
            center: self.center * factor,
            length: self.length * factor,
            width: self.width * factor,
            angle: self.angle,
        }
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        bounds_of(&self.corners())
    }

    /// Total order on the parameters; used to canonicalize argument order.
    fn total_cmp(&self, other: &Self) -> Ordering {
        self.center
            .x
            .total_cmp(&other.center.x)
            .then(self.center.y.total_cmp(&other.center.y))
            .then(self.length.total_cmp(&other.length))
            .then(self.width.total_cmp(&other.width))
            .then(self.angle.total_cmp(&other.angle))
    }
}

fn bounds_of(points: &[Point]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// Shoelace area, positive for the orientation used throughout this crate.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    acc / 2.0
}

/// A simple quadrilateral with vertices stored in positive orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    points: [Point; 4],
}

impl Quad {
    /// Validates simplicity and non-degeneracy; reverses the vertex order if
    /// needed so that the signed area is positive.
    pub fn new(mut points: [Point; 4]) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if segments_cross(points[0], points[1], points[2], points[3])
            || segments_cross(points[1], points[2], points[3], points[0])
        {
            return Err(GeometryError::SelfIntersecting);
        }
        let area = signed_area(&points);
        if area.abs() < DEGENERATE_AREA {
            return Err(GeometryError::Degenerate(area.abs()));
        }
        if area < 0.0 {
            points.reverse();
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point; 4] {
        &self.points
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn is_convex(&self) -> bool {
        is_convex(&self.points)
    }
}

impl From<&RotatedRect> for Quad {
    fn from(rect: &RotatedRect) -> Self {
        Quad {
            points: rect.corners(),
        }
    }
}

/// Proper crossing of segments `ab` and `cd` (shared endpoints don't count).
fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// True when every turn has the same sign (collinear vertices allowed).
pub fn is_convex(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let scale = poly.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let eps = 1e-12 * scale * scale;
    let mut sign = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let turn = (b - a).cross(c - b);
        if turn.abs() <= eps {
            continue;
        }
        if sign == 0.0 {
            sign = turn.signum();
        } else if turn.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

/// Convex hull by monotone chain, positive orientation, no collinear points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if (b - a).cross(p - a) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Clips the convex `subject` against the convex `clip` polygon
/// (Sutherland-Hodgman). Both must have positive orientation.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b - a;
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_side = edge.cross(cur - a);
            let prev_side = edge.cross(prev - a);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(line_intersection(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(line_intersection(prev, cur, prev_side, cur_side));
            }
        }
    }
    output
}

fn line_intersection(p: Point, q: Point, side_p: f64, side_q: f64) -> Point {
    let t = side_p / (side_p - side_q);
    p + (q - p) * t
}

/// Intersection area of two convex polygons in positive orientation.
pub fn convex_intersection_area(a: &[Point], b: &[Point]) -> f64 {
    signed_area(&clip_convex(a, b)).max(0.0)
}

/// Area of `a ∩ b` for two convex quadrilaterals.
pub fn polygon_intersection_area(a: &Quad, b: &Quad) -> Result<f64, GeometryError> {
    for q in [a, b] {
        let area = q.area();
        if area < DEGENERATE_AREA {
            return Err(GeometryError::Degenerate(area));
        }
        if !q.is_convex() {
            return Err(GeometryError::NonConvex);
        }
    }
    Ok(convex_intersection_area(&a.points, &b.points))
}

/// Intersection area of two rotated rectangles.
pub fn rect_intersection_area(a: &RotatedRect, b: &RotatedRect) -> f64 {
    // Clip in a fixed argument order so the result is exactly symmetric.
    let (first, second) = match a.total_cmp(b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let (lo_a, hi_a) = first.bounds();
    let (lo_b, hi_b) = second.bounds();
    if lo_a.x >= hi_b.x || lo_b.x >= hi_a.x || lo_a.y >= hi_b.y || lo_b.y >= hi_a.y {
        return 0.0;
    }
    convex_intersection_area(&first.corners(), &second.corners())
}

/// Intersection over union of two rotated rectangles, in `[0, 1]`.
pub fn iou(a: &RotatedRect, b: &RotatedRect) -> f64 {
    let inter = rect_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum-area enclosing rectangle of a point set. The returned rectangle
/// has `length >= width`.
pub fn min_area_rect(points: &[Point]) -> Result<RotatedRect, GeometryError> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(GeometryError::TooFewPoints {
            needed: 3,
            got: hull.len(),
        });
    }
    let area = signed_area(&hull);
    if area < DEGENERATE_AREA {
        return Err(GeometryError::Degenerate(area));
    }
    // The optimum has one side collinear with a hull edge.
    let mut best: Option<(f64, RotatedRect)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        let dir = edge * (1.0 / edge.norm());
        let normal = Point::new(-dir.y, dir.x);
        let (mut u_lo, mut u_hi, mut v_lo, mut v_hi) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for p in &hull {
            let u = p.dot(dir);
            let v = p.dot(normal);
            u_lo = u_lo.min(u);
            u_hi = u_hi.max(u);
            v_lo = v_lo.min(v);
            v_hi = v_hi.max(v);
        }
        let area = (u_hi - u_lo) * (v_hi - v_lo);
        if best.as_ref().map_or(true, |(a, _)| area < *a) {
            let center = dir * ((u_lo + u_hi) / 2.0) + normal * ((v_lo + v_hi) / 2.0);
            let rect = RotatedRect::new(center, u_hi - u_lo, v_hi - v_lo, dir.y.atan2(dir.x))?;
            best = Some((area, rect));
        }
    }
    Ok(best.expect("hull has at least three edges").1.with_long_axis())
}

/// A rotated box with a confidence score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub rect: RotatedRect,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn new(rect: RotatedRect, confidence: f64) -> Self {
        Self {
            rect,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }
}

/// Greedy non-maximum suppression by descending confidence. Ties keep input
/// order. Survivors are returned in the order they were accepted.
pub fn rotated_nms(boxes: &[DetectionBox], iou_threshold: f64) -> Vec<DetectionBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .confidence
            .total_cmp(&boxes[i].confidence)
            .then(i.cmp(&j))
    });
    let mut kept: Vec<DetectionBox> = Vec::new();
    for i in order {
        let candidate = boxes[i];
        if kept
            .iter()
            .all(|k| iou(&k.rect, &candidate.rect) <= iou_threshold)
        {
            kept.push(candidate);
        }
    }
    kept
}

/// Principal-axis angle of a point set from its second moments, normalized
/// to `[-π/2, π/2)`.
///
/// Nearly collinear sets use the direction of the segment between the two
/// extreme points along the principal axis.
pub fn component_orientation(points: &[Point]) -> Result<f64, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Point::default(), |acc, &p| acc + p) * (1.0 / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = *p - mean;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);

    let half_trace = (sxx + syy) / 2.0;
    let spread = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    let minor = half_trace - spread;
    let major = half_trace + spread;
    if major > 0.0 && minor <= 1e-9 * major {
        let dir = Point::new(angle.cos(), angle.sin());
        let by_projection = |a: &&Point, b: &&Point| a.dot(dir).total_cmp(&b.dot(dir));
        let lo = points.iter().min_by(by_projection).expect("non-empty");
        let hi = points.iter().max_by(by_projection).expect("non-empty");
        let seg = *hi - *lo;
        if seg.norm() > 0.0 {
            return Ok(normalize_angle(seg.y.atan2(seg.x)));
        }
    }
    Ok(normalize_angle(angle))
}
