//! Ground-truth parsers for the MSRA-TD500, ICDAR2013 and ICDAR2017
//! (quadrilateral) text formats, and writers for detection output.
//!
//! All parsers accept LF or CRLF line endings and an optional UTF-8 BOM.
//! Blank lines are skipped but still counted for error line numbers.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{min_area_rect, DetectionBox, GeometryError, Point, Quad, RotatedRect};

/// Transcription used by the ICDAR datasets to mark unreadable text.
pub const DIFFICULT_MARKER: &str = "###";

/// How far (in pixels) annotation corners may fall outside the image.
pub const DEFAULT_BOUNDS_SLACK: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Geometry {
        line: usize,
        #[source]
        source: GeometryError,
    },
}

impl ParseError {
    fn malformed(line: usize, message: impl Into<String>) -> Self {
        ParseError::Malformed {
            line,
            message: message.into(),
        }
    }

    pub fn line(&self) -> usize {
        match self {
            ParseError::Malformed { line, .. } | ParseError::Geometry { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Word,
    Line,
    #[default]
    Unknown,
}

/// A text annotation box: one annotated word or text line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tab {
    pub rect: RotatedRect,
    pub difficult: bool,
    pub transcription: Option<String>,
    pub granularity: Granularity,
}

impl Tab {
    pub fn new(rect: RotatedRect) -> Self {
        Self {
            rect,
            difficult: false,
            transcription: None,
            granularity: Granularity::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub tabs: Vec<Tab>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("annotation {index} extends beyond the image by more than {slack} px")]
pub struct OutOfBounds {
    pub index: usize,
    pub slack: f64,
}

impl AnnotatedImage {
    /// Checks that every TAB corner lies inside the image expanded by `slack`.
    pub fn check_bounds(&self, slack: f64) -> Result<(), OutOfBounds> {
        let (w, h) = (self.width as f64, self.height as f64);
        for (index, tab) in self.tabs.iter().enumerate() {
            let inside = tab.rect.corners().iter().all(|p| {
                p.x >= -slack && p.y >= -slack && p.x <= w + slack && p.y <= h + slack
            });
            if !inside {
                return Err(OutOfBounds { index, slack });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationFormat {
    Msra,
    Icdar13,
    Icdar17,
}

impl FromStr for AnnotationFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "msra" => Ok(Self::Msra),
            "icdar13" => Ok(Self::Icdar13),
            "icdar17" => Ok(Self::Icdar17),
            other => Err(format!("unknown annotation format '{other}'")),
        }
    }
}

/// Output layout for detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionFormat {
    /// `index 0 x y w h angle confidence`
    Msra,
    /// `x1,y1,x2,y2,x3,y3,x4,y4,confidence`
    Quad,
}

impl FromStr for DetectionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "msra" => Ok(Self::Msra),
            "quad" => Ok(Self::Quad),
            other => Err(format!("unknown detection format '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Keep difficult boxes (as don't-care regions) instead of dropping them.
    pub keep_difficult: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            keep_difficult: true,
        }
    }
}

/// A quadrilateral that was skipped during parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadWarning {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadParse {
    pub tabs: Vec<Tab>,
    pub warnings: Vec<QuadWarning>,
}

/// Yields `(1-based line number, trimmed line)` for every non-blank line.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_num<T: FromStr>(line: usize, field: &str, name: &str) -> Result<T, ParseError> {
    field
        .trim()
        .parse()
        .map_err(|_| ParseError::malformed(line, format!("invalid {name} '{}'", field.trim())))
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    s.strip_prefix('"')
        .and_then(|t| t.strip_suffix('"'))
        .unwrap_or(s)
}

/// Parses MSRA-TD500 `.gt` text: `index difficulty x y w h angle` per line,
/// where `(x, y)` is the top-left of the unrotated box and `angle` (radians)
/// rotates it about its center. A trailing eighth field is ignored.
pub fn parse_msra(text: &str) -> Result<Vec<Tab>, ParseError> {
    let mut tabs = Vec::new();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 7 && fields.len() != 8 {
            return Err(ParseError::malformed(
                line,
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        let _index: i64 = parse_num(line, fields[0], "index")?;
        let difficulty: i64 = parse_num(line, fields[1], "difficulty")?;
        let x: f64 = parse_num(line, fields[2], "x")?;
        let y: f64 = parse_num(line, fields[3], "y")?;
        let w: f64 = parse_num(line, fields[4], "width")?;
        let h: f64 = parse_num(line, fields[5], "height")?;
        let angle: f64 = parse_num(line, fields[6], "angle")?;
        let rect = RotatedRect::new(Point::new(x + w / 2.0, y + h / 2.0), w, h, angle)
            .map_err(|source| ParseError::Geometry { line, source })?;
        tabs.push(Tab {
            rect: rect.with_long_axis(),
            difficult: difficulty != 0,
            transcription: None,
            granularity: Granularity::Line,
        });
    }
    Ok(tabs)
}

/// Splits off the next numeric token, skipping leading commas and spaces.
fn next_token(rest: &str) -> (&str, &str) {
    let rest = rest.trim_start_matches(|c: char| c == ',' || c.is_whitespace());
    let end = rest
        .find(|c: char| c == ',' || c.is_whitespace())
        .unwrap_or(rest.len());
    (&rest[..end], &rest[end..])
}

/// Parses ICDAR2013 ground truth: `left, top, right, bottom, "transcription"`.
/// Whitespace-separated variants (as in the test split) are accepted too.
pub fn parse_icdar13(text: &str) -> Result<Vec<Tab>, ParseError> {
    let mut tabs = Vec::new();
    for (line, content) in content_lines(text) {
        let mut rest = content;
        let mut coords = [0.0f64; 4];
        for (slot, name) in coords.iter_mut().zip(["left", "top", "right", "bottom"]) {
            let (token, tail) = next_token(rest);
            if token.is_empty() {
                return Err(ParseError::malformed(line, format!("missing {name}")));
            }
            *slot = parse_num(line, token, name)?;
            rest = tail;
        }
        let [left, top, right, bottom] = coords;
        let transcription = strip_quotes(
            rest.trim_start_matches(|c: char| c == ',' || c.is_whitespace()),
        );
        let rect = RotatedRect::from_ltrb(left, top, right, bottom)
            .map_err(|source| ParseError::Geometry { line, source })?;
        tabs.push(Tab {
            rect,
            difficult: transcription == DIFFICULT_MARKER,
            transcription: (!transcription.is_empty()).then(|| transcription.to_string()),
            granularity: Granularity::Word,
        });
    }
    Ok(tabs)
}

fn parse_quad_points(line: usize, fields: &[&str]) -> Result<[Point; 4], ParseError> {
    let mut pts = [Point::default(); 4];
    for (i, p) in pts.iter_mut().enumerate() {
        p.x = parse_num(line, fields[2 * i], "coordinate")?;
        p.y = parse_num(line, fields[2 * i + 1], "coordinate")?;
    }
    Ok(pts)
}

/// Parses ICDAR2017 quadrilaterals: eight coordinates, then optionally a
/// script and a transcription (which may itself contain commas). A single
/// trailing field is taken as the transcription. Each quad is collapsed to
/// its minimum-area rotated rectangle; non-convex or self-intersecting quads
/// are skipped and reported in [`QuadParse::warnings`].
pub fn parse_icdar17_quad(text: &str) -> Result<QuadParse, ParseError> {
    let mut out = QuadParse::default();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.splitn(10, ',').collect();
        if fields.len() < 8 {
            return Err(ParseError::malformed(
                line,
                format!("expected 8 coordinates, found {} fields", fields.len()),
            ));
        }
        let pts = parse_quad_points(line, &fields)?;
        let transcription = match fields.len() {
            9 => Some(strip_quotes(fields[8])),
            10 => Some(strip_quotes(fields[9])),
            _ => None,
        }
        .filter(|t| !t.is_empty());

        let quad = match Quad::new(pts) {
            Ok(q) if q.is_convex() => q,
            Ok(_) => {
                log::warn!("line {line}: skipping non-convex quadrilateral");
                out.warnings.push(QuadWarning {
                    line,
                    reason: GeometryError::NonConvex.to_string(),
                });
                continue;
            }
            Err(e) => {
                log::warn!("line {line}: skipping quadrilateral: {e}");
                out.warnings.push(QuadWarning {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let rect = min_area_rect(quad.points())
            .map_err(|source| ParseError::Geometry { line, source })?;
        out.tabs.push(Tab {
            rect,
            difficult: transcription == Some(DIFFICULT_MARKER),
            transcription: transcription.map(str::to_string),
            granularity: Granularity::Unknown,
        });
    }
    Ok(out)
}

/// Parses any supported ground-truth format, returning TABs and skipped-quad
/// warnings (always empty for the rectangle formats).
pub fn parse_annotations(
    text: &str,
    format: AnnotationFormat,
    options: &ParseOptions,
) -> Result<(Vec<Tab>, Vec<QuadWarning>), ParseError> {
    let (mut tabs, warnings) = match format {
        AnnotationFormat::Msra => (parse_msra(text)?, Vec::new()),
        AnnotationFormat::Icdar13 => (parse_icdar13(text)?, Vec::new()),
        AnnotationFormat::Icdar17 => {
            let parsed = parse_icdar17_quad(text)?;
            (parsed.tabs, parsed.warnings)
        }
    };
    if !options.keep_difficult {
        tabs.retain(|t| !t.difficult);
    }
    Ok((tabs, warnings))
}

fn msra_fields(rect: &RotatedRect) -> [f64; 5] {
    let c = rect.center();
    [
        c.x - rect.length() / 2.0,
        c.y - rect.width() / 2.0,
        rect.length(),
        rect.width(),
        rect.angle(),
    ]
}

/// Serializes TABs in the MSRA `.gt` layout (difficulty flag preserved).
pub fn write_tabs_msra(tabs: &[Tab]) -> String {
    let mut out = String::new();
    for (i, tab) in tabs.iter().enumerate() {
        let [x, y, w, h, a] = msra_fields(&tab.rect);
        let _ = writeln!(
            out,
            "{i} {} {x:.6} {y:.6} {w:.6} {h:.6} {a:.6}",
            u8::from(tab.difficult)
        );
    }
    out
}

/// Serializes detections. Geometry survives a parse round trip to well
/// within 1e-3 px; the confidence is appended as the last field.
pub fn write_detections(boxes: &[DetectionBox], format: DetectionFormat) -> String {
    let mut out = String::new();
    for (i, det) in boxes.iter().enumerate() {
        match format {
            DetectionFormat::Msra => {
                let [x, y, w, h, a] = msra_fields(&det.rect);
                let _ = writeln!(
                    out,
                    "{i} 0 {x:.6} {y:.6} {w:.6} {h:.6} {a:.6} {:.6}",
                    det.confidence
                );
            }
            DetectionFormat::Quad => {
                for p in det.rect.corners() {
                    let _ = write!(out, "{:.6},{:.6},", p.x, p.y);
                }
                let _ = writeln!(out, "{:.6}", det.confidence);
            }
        }
    }
    out
}

/// Reads detections written by [`write_detections`]. A missing confidence
/// defaults to 1.
pub fn parse_detections(text: &str, format: DetectionFormat) -> Result<Vec<DetectionBox>, ParseError> {
    let mut out = Vec::new();
    match format {
        DetectionFormat::Msra => {
            let tabs = parse_msra(text)?;
            let scores = content_lines(text).map(|(line, content)| {
                content
                    .split_whitespace()
                    .nth(7)
                    .map_or(Ok(1.0), |s| parse_num::<f64>(line, s, "confidence"))
            });
            for (tab, score) in tabs.into_iter().zip(scores) {
                out.push(DetectionBox::new(tab.rect, score?));
            }
        }
        DetectionFormat::Quad => {
            for (line, content) in content_lines(text) {
                let fields: Vec<&str> = content.split(',').collect();
                if fields.len() < 8 {
                    return Err(ParseError::malformed(line, "expected 8 coordinates"));
                }
                let pts = parse_quad_points(line, &fields)?;
                let confidence = match fields.get(8) {
                    Some(s) => parse_num(line, s, "confidence")?,
                    None => 1.0,
                };
                let rect = min_area_rect(&pts)
                    .map_err(|source| ParseError::Geometry { line, source })?;
                out.push(DetectionBox::new(rect, confidence));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou, orientation_difference};

    #[test]
    fn msra_example_line() {
        let tabs = parse_msra("0 0 10 20 100 30 0").unwrap();
        assert_eq!(tabs.len(), 1);
        let r = tabs[0].rect;
        assert_eq!(r.center(), Point::new(60.0, 35.0));
        assert_eq!((r.length(), r.width(), r.angle()), (100.0, 30.0, 0.0));
        assert!(!tabs[0].difficult);
    }

    #[test]
    fn msra_empty_and_malformed() {
        assert!(parse_msra("").unwrap().is_empty());
        assert!(parse_msra("\u{feff}\r\n\r\n").unwrap().is_empty());
        let err = parse_msra("0 0 10 20 100").unwrap_err();
        assert_eq!(err.line(), 1);
        let err = parse_msra("0 1 1 1 5 5 0\n0 0 a 20 100 30 0\n").unwrap_err();
        assert_eq!(err.line(), 2);
    }

    #[test]
    fn msra_difficult_and_crlf() {
        let tabs = parse_msra("0 1 0 0 50 10 0.2\r\n1 0 5 5 40 10 -0.3\r\n").unwrap();
        assert_eq!(tabs.len(), 2);
        assert!(tabs[0].difficult);
        assert!(!tabs[1].difficult);
        assert!((tabs[1].rect.angle() + 0.3).abs() < 1e-12);
    }

    #[test]
    fn msra_tall_box_uses_long_axis() {
        let tabs = parse_msra("0 0 0 0 10 80 0").unwrap();
        assert_eq!(tabs[0].rect.length(), 80.0);
        assert_eq!(tabs[0].rect.width(), 10.0);
    }

    #[test]
    fn icdar13_valid_empty_malformed() {
        let tabs = parse_icdar13("38, 43, 920, 215, \"Tiredness\"\n").unwrap();
        assert_eq!(tabs.len(), 1);
        let r = tabs[0].rect;
        assert_eq!(r.center(), Point::new(479.0, 129.0));
        assert_eq!((r.length(), r.width(), r.angle()), (882.0, 172.0, 0.0));
        assert_eq!(tabs[0].transcription.as_deref(), Some("Tiredness"));
        assert_eq!(tabs[0].granularity, Granularity::Word);

        assert!(parse_icdar13("").unwrap().is_empty());
        assert_eq!(parse_icdar13("1, 2, x, 4, \"a\"").unwrap_err().line(), 1);
        assert!(parse_icdar13("10, 2, 5, 4, \"a\"").is_err());
    }

    #[test]
    fn icdar13_space_separated_with_commas_in_text() {
        let tabs = parse_icdar13("158 128 411 181 \"Foot, path\"").unwrap();
        assert_eq!(tabs[0].transcription.as_deref(), Some("Foot, path"));
        assert_eq!(tabs[0].rect.length(), 253.0);
    }

    #[test]
    fn icdar17_rectangle_round_trip() {
        let text = "10,20,110,20,110,50,10,50,Latin,hello\n";
        let parsed = parse_icdar17_quad(text).unwrap();
        assert!(parsed.warnings.is_empty());
        let r = parsed.tabs[0].rect;
        assert!((r.center().x - 60.0).abs() < 1e-12);
        assert!((r.center().y - 35.0).abs() < 1e-12);
        assert!((r.length() - 100.0).abs() < 1e-12);
        assert!((r.width() - 30.0).abs() < 1e-12);
        assert!(r.angle().abs() < 1e-12);
        assert_eq!(parsed.tabs[0].transcription.as_deref(), Some("hello"));
    }

    #[test]
    fn icdar17_difficult_marker() {
        let parsed = parse_icdar17_quad("0,0,10,0,10,5,0,5,Chinese,###").unwrap();
        assert!(parsed.tabs[0].difficult);
        let parsed = parse_icdar17_quad("0,0,10,0,10,5,0,5,###").unwrap();
        assert!(parsed.tabs[0].difficult);
        let parsed = parse_icdar17_quad("0,0,10,0,10,5,0,5,Latin,a,b").unwrap();
        assert_eq!(parsed.tabs[0].transcription.as_deref(), Some("a,b"));
    }

    #[test]
    fn icdar17_bad_quads_are_skipped() {
        let text = "0,0,10,10,10,0,0,10,Latin,bowtie\n0,0,40,0,10,10,0,40,Latin,dart\n0,0,4,0,4,4,0,4,Latin,ok\n";
        let parsed = parse_icdar17_quad(text).unwrap();
        assert_eq!(parsed.tabs.len(), 1);
        assert_eq!(parsed.warnings.len(), 2);
        assert_eq!(parsed.warnings[0].line, 1);
        assert_eq!(parsed.warnings[1].line, 2);
        assert!(parse_icdar17_quad("1,2,3").is_err());
    }

    #[test]
    fn keep_difficult_flag() {
        let text = "0 1 0 0 50 10 0\n1 0 0 20 50 10 0\n";
        let (all, _) = parse_annotations(text, AnnotationFormat::Msra, &ParseOptions::default()).unwrap();
        assert_eq!(all.len(), 2);
        let opts = ParseOptions { keep_difficult: false };
        let (kept, _) = parse_annotations(text, AnnotationFormat::Msra, &opts).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn detections_round_trip_both_formats() {
        let boxes = vec![
            DetectionBox::new(RotatedRect::new(Point::new(40.5, 17.25), 60.0, 12.0, 0.4).unwrap(), 0.75),
            DetectionBox::new(RotatedRect::new(Point::new(200.0, 90.0), 33.3, 9.1, -1.2).unwrap(), 1.0),
        ];
        for format in [DetectionFormat::Msra, DetectionFormat::Quad] {
            let back = parse_detections(&write_detections(&boxes, format), format).unwrap();
            assert_eq!(back.len(), 2);
            for (a, b) in boxes.iter().zip(&back) {
                // Corner order may be rotated; compare as sets.
                let ca = a.rect.corners();
                let cb = b.rect.corners();
                for p in ca {
                    let nearest = cb.iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min);
                    assert!(nearest < 1e-3, "{format:?}: {nearest}");
                }
                assert!((a.confidence - b.confidence).abs() < 1e-6);
                assert!(iou(&a.rect, &b.rect) > 0.9999);
            }
        }
    }

    #[test]
    fn bounds_check_with_slack() {
        let mut img = AnnotatedImage {
            image_path: "a.png".into(),
            width: 100,
            height: 50,
            tabs: parse_msra("0 0 -10 0 50 10 0").unwrap(),
        };
        assert!(img.check_bounds(DEFAULT_BOUNDS_SLACK).is_ok());
        img.tabs = parse_msra("0 0 -30 0 50 10 0").unwrap();
        assert_eq!(img.check_bounds(DEFAULT_BOUNDS_SLACK).unwrap_err().index, 0);
    }

    #[test]
    fn icdar13_lines() {
        let tabs = parse_icdar13("38, 43, 920, 215, \"Tiredness\"\n275 264 876 367 \"kills\"\n1, 2, 30, 12, \"###\"").unwrap();
        assert_eq!(tabs.len(), 3);
        let r = tabs[0].rect;
        assert_eq!(r.center(), Point::new(479.0, 129.0));
        assert_eq!((r.length(), r.width(), r.angle()), (882.0, 172.0, 0.0));
        assert_eq!(tabs[0].transcription.as_deref(), Some("Tiredness"));
        assert_eq!(tabs[0].granularity, Granularity::Word);
        assert_eq!(tabs[1].transcription.as_deref(), Some("kills"));
        assert!(tabs[2].difficult && !tabs[0].difficult);
        assert!(parse_icdar13("").unwrap().is_empty());
        assert_eq!(parse_icdar13("1, 2, 3, 4\n1, 2, x, 4").unwrap_err().line(), 2);
    }

    #[test]
    fn icdar13_tall_word_keeps_horizontal_length() {
        let tabs = parse_icdar13("0, 0, 10, 40, \"I\"").unwrap();
        assert_eq!(tabs[0].rect.angle(), 0.0);
        assert_eq!(tabs[0].rect.corners()[1], Point::new(10.0, 0.0));
    }

    #[test]
    fn icdar17_rectangle_and_difficult() {
        let text = "10,10,110,10,110,40,10,40,Latin,hello\n0,0,20,0,20,10,0,10,Chinese,###\n";
        let parsed = parse_icdar17_quad(text).unwrap();
        assert!(parsed.warnings.is_empty());
        let r = parsed.tabs[0].rect;
        assert!(r.center().distance(Point::new(60.0, 25.0)) < 1e-9);
        assert!((r.length() - 100.0).abs() < 1e-9 && (r.width() - 30.0).abs() < 1e-9);
        assert!(orientation_difference(r.angle(), 0.0) < 1e-9);
        assert_eq!(parsed.tabs[0].transcription.as_deref(), Some("hello"));
        assert!(parsed.tabs[1].difficult && !parsed.tabs[0].difficult);
    }

    #[test]
    fn icdar17_skips_bad_quads_with_warnings() {
        let text = "0,0,10,0,0,10,10,10,Latin,bowtie\n0,0,10,0,3,3,0,10,Latin,dent\n0,0,10,0,10,5,0,5,Latin,ok";
        let parsed = parse_icdar17_quad(text).unwrap();
        assert_eq!(parsed.tabs.len(), 1);
        assert_eq!(parsed.warnings.iter().map(|w| w.line).collect::<Vec<_>>(), vec![1, 2]);
        assert!(parse_icdar17_quad("1,2,3").is_err());
    }

    /// Smallest bounding-box area over all directions: coarse scan, then
    /// ternary search around the best sample.
    fn smallest_box_area(pts: &[Point]) -> f64 {
        let area = |t: f64| {
            let (d, n) = (Point::new(t.cos(), t.sin()), Point::new(-t.sin(), t.cos()));
            let span = |dir: Point| {
                let proj = pts.iter().map(|p| p.dot(dir));
                proj.clone().fold(f64::NEG_INFINITY, f64::max) - proj.fold(f64::INFINITY, f64::min)
            };
            span(d) * span(n)
        };
        let step = 1e-3;
        let best = (0..(std::f64::consts::FRAC_PI_2 / step) as usize + 1)
            .map(|k| k as f64 * step)
            .min_by(|a, b| area(*a).total_cmp(&area(*b)))
            .unwrap();
        let (mut lo, mut hi) = (best - 2.0 * step, best + 2.0 * step);
        for _ in 0..200 {
            let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
            if area(m1) < area(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        area((lo + hi) / 2.0)
    }

    mod props {
        use super::*;
        use crate::geometry::Quad;
        use proptest::prelude::*;

        /// Convex quads: four points at increasing angles around a center.
        fn arb_convex_quad() -> impl Strategy<Value = [Point; 4]> {
            (
                proptest::array::uniform4((0.2..1.3f64, 5.0..60.0f64)),
                0.0..6.28f64,
                (0.0..300.0f64, 0.0..300.0f64),
            )
                .prop_map(|(parts, start, (cx, cy))| {
                    let mut angle = start;
                    parts.map(|(gap, radius)| {
                        angle += gap;
                        Point::new(cx + radius * angle.cos(), cy + radius * angle.sin())
                    })
                })
                .prop_filter("convex", |pts| Quad::new(*pts).is_ok_and(|q| q.is_convex()))
        }

        fn arb_tab() -> impl Strategy<Value = Tab> {
            (0.0..500.0f64, 0.0..500.0f64, 2.0..200.0f64, 2.0..200.0f64, -1.57..1.57f64, any::<bool>())
                .prop_map(|(x, y, l, w, a, difficult)| Tab {
                    difficult,
                    ..Tab::new(RotatedRect::new(Point::new(x, y), l, w, a).unwrap())
                })
        }

        proptest! {
            #[test]
            fn quad_rect_matches_direction_search(pts in arb_convex_quad()) {
                let line: Vec<String> = pts.iter().map(|p| format!("{:.17},{:.17}", p.x, p.y)).collect();
                let parsed = parse_icdar17_quad(&format!("{},Latin,x", line.join(","))).unwrap();
                prop_assert_eq!(parsed.tabs.len(), 1);
                let rect = parsed.tabs[0].rect;
                let oracle = smallest_box_area(&pts);
                prop_assert!((rect.area() - oracle).abs() <= 1e-6 * oracle, "{} vs {}", rect.area(), oracle);
                let quad_area = Quad::new(pts).unwrap().area();
                let (lo, hi) = (
                    pts.iter().fold(Point::new(f64::INFINITY, f64::INFINITY), |a, p| Point::new(a.x.min(p.x), a.y.min(p.y))),
                    pts.iter().fold(Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, p| Point::new(a.x.max(p.x), a.y.max(p.y))),
                );
                prop_assert!(rect.area() >= quad_area - 1e-9);
                prop_assert!(rect.area() <= (hi.x - lo.x) * (hi.y - lo.y) + 1e-9);
            }

            #[test]
            fn msra_round_trip(tabs in proptest::collection::vec(arb_tab(), 0..6)) {
                let back = parse_msra(&write_tabs_msra(&tabs)).unwrap();
                prop_assert_eq!(back.len(), tabs.len());
                for (a, b) in tabs.iter().zip(&back) {
                    prop_assert_eq!(a.difficult, b.difficult);
                    for p in a.rect.corners() {
                        let nearest = b.rect.corners().iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min);
                        prop_assert!(nearest < 1e-3);
                    }
                }
            }

            #[test]
            fn detection_round_trip(tabs in proptest::collection::vec(arb_tab(), 0..6), conf in 0.0..1.0f64) {
                let boxes: Vec<DetectionBox> = tabs.iter().map(|t| DetectionBox::new(t.rect, conf)).collect();
                for format in [DetectionFormat::Msra, DetectionFormat::Quad] {
                    let back = parse_detections(&write_detections(&boxes, format), format).unwrap();
                    prop_assert_eq!(back.len(), boxes.len());
                    for (a, b) in boxes.iter().zip(&back) {
                        for p in a.rect.corners() {
                            let nearest = b.rect.corners().iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min);
                            prop_assert!(nearest < 1e-3);
                        }
                    }
                }
            }
        }
    }
}
