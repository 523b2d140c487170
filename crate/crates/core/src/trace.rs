//! Grounded reasoning traces: `<think>…</think><rethink>…</rethink><answer>…`
//! with integer box quadruplets interleaved in the text.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const RETHINK_OPEN: &str = "<rethink>";
pub const RETHINK_CLOSE: &str = "</rethink>";
pub const ANSWER_MARKER: &str = "<answer>";

/// Replacement token used when coordinates are hidden from a reader.
pub const REGION_TOKEN: &str = "[REGION]";

/// Axis-aligned pixel rectangle, origin top-left.
///
/// Constructed through [`BoundingBox::new`], which swaps inverted corners so
/// that `x1 <= x2` and `y1 <= y2` always hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 4]", into = "[i32; 4]")]
pub struct BoundingBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl BoundingBox {
    pub fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Self {
        Self {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    pub fn width(&self) -> i64 {
        i64::from(self.x2) - i64::from(self.x1)
    }

    pub fn height(&self) -> i64 {
        i64::from(self.y2) - i64::from(self.y1)
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    /// Zero-area boxes are kept by the parser but flagged here.
    pub fn is_degenerate(&self) -> bool {
        self.area() == 0
    }

    /// Intersects the box with `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: u32, height: u32) -> Self {
        let w = i32::try_from(width).unwrap_or(i32::MAX);
        let h = i32::try_from(height).unwrap_or(i32::MAX);
        Self {
            x1: self.x1.clamp(0, w),
            y1: self.y1.clamp(0, h),
            x2: self.x2.clamp(0, w),
            y2: self.y2.clamp(0, h),
        }
    }

    pub fn as_array(&self) -> [i32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl From<[i32; 4]> for BoundingBox {
    fn from(q: [i32; 4]) -> Self {
        Self::new(q[0], q[1], q[2], q[3])
    }
}

impl From<BoundingBox> for [i32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

/// A box together with the byte range of `raw_text` it was read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxMatch {
    pub bbox: BoundingBox,
    pub span: Range<usize>,
}

/// Result of scanning text for quadruplets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoxExtraction {
    pub boxes: Vec<BoxMatch>,
    /// Candidates skipped because a coordinate does not fit in 32 bits.
    pub overflowed: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPairReport {
    pub think_pair_ok: bool,
    pub rethink_pair_ok: bool,
    pub pairs_ordered_ok: bool,
    pub answer_marker_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedTrace {
    pub raw_text: String,
    pub think_segment: Option<String>,
    pub rethink_segment: Option<String>,
    pub answer_segment: Option<String>,
    pub boxes: Vec<BoxMatch>,
    pub token_report: TokenPairReport,
}

impl GroundedTrace {
    pub fn box_count(&self) -> usize {
        self.boxes.len()
    }

    pub fn bboxes(&self) -> Vec<BoundingBox> {
        self.boxes.iter().map(|m| m.bbox).collect()
    }

    /// The answer text, or `""` when no `<answer>` marker was emitted.
    pub fn answer_or_empty(&self) -> &str {
        self.answer_segment.as_deref().unwrap_or("")
    }
}

fn quadruplet_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"(-?[0-9]+)";
        let quad = format!(r"{num}\s*,\s*{num}\s*,\s*{num}\s*,\s*{num}");
        // Bracketed alternatives come first so that, at a given start, the
        // match covering the brackets wins.
        let pattern = format!(r"\(\s*{quad}\s*\)|\[\s*{quad}\s*\]|{quad}");
        Regex::new(&pattern).expect("static quadruplet pattern")
    })
}

/// Scans `text` for integer quadruplets, bare or wrapped in `(…)` / `[…]`.
pub fn extract_boxes_with_diagnostics(text: &str) -> BoxExtraction {
    let mut out = BoxExtraction::default();
    for caps in quadruplet_regex().captures_iter(text) {
        let whole = caps.get(0).expect("group 0 always present");
        // Exactly one alternative participates; its four groups are the
        // only ones set.
        let mut values = [0i32; 4];
        let mut n = 0;
        let mut overflow = false;
        for group in caps.iter().skip(1).flatten() {
            match group.as_str().parse::<i32>() {
                Ok(v) => values[n] = v,
                Err(_) => overflow = true,
            }
            n += 1;
        }
        debug_assert_eq!(n, 4);
        if overflow {
            out.overflowed += 1;
            continue;
        }
        out.boxes.push(BoxMatch {
            bbox: BoundingBox::from(values),
            span: whole.range(),
        });
    }
    out
}

pub fn extract_boxes(text: &str) -> Vec<BoxMatch> {
    extract_boxes_with_diagnostics(text).boxes
}

fn single_pair(text: &str, open: &str, close: &str) -> Option<(usize, usize)> {
    if text.matches(open).count() != 1 || text.matches(close).count() != 1 {
        return None;
    }
    let o = text.find(open)?;
    let c = text.find(close)?;
    (o < c).then_some((o, c))
}

pub fn detect_token_pairs(text: &str) -> TokenPairReport {
    let think = single_pair(text, THINK_OPEN, THINK_CLOSE);
    let rethink = single_pair(text, RETHINK_OPEN, RETHINK_CLOSE);
    let pairs_ordered_ok = match (think, rethink) {
        (Some((_, think_close)), Some((rethink_open, _))) => think_close < rethink_open,
        _ => false,
    };
    TokenPairReport {
        think_pair_ok: think.is_some(),
        rethink_pair_ok: rethink.is_some(),
        pairs_ordered_ok,
        answer_marker_present: text.contains(ANSWER_MARKER),
    }
}

fn segment_between(text: &str, open: &str, close: &str) -> Option<String> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some(text[start..start + len].trim().to_string())
}

/// Parses model output into its segments. Never fails: structural problems
/// surface through [`TokenPairReport`].
pub fn parse_trace(text: &str) -> GroundedTrace {
    let answer_segment = text
        .find(ANSWER_MARKER)
        .map(|i| text[i + ANSWER_MARKER.len()..].trim().to_string());
    GroundedTrace {
        raw_text: text.to_string(),
        think_segment: segment_between(text, THINK_OPEN, THINK_CLOSE),
        rethink_segment: segment_between(text, RETHINK_OPEN, RETHINK_CLOSE),
        answer_segment,
        boxes: extract_boxes(text),
        token_report: detect_token_pairs(text),
    }
}

/// Replaces every extracted quadruplet (brackets included) with `[REGION]`.
pub fn mask_coordinates(text: &str) -> String {
    let boxes = extract_boxes(text);
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for m in &boxes {
        out.push_str(&text[cursor..m.span.start]);
        out.push_str(REGION_TOKEN);
        cursor = m.span.end;
    }
    out.push_str(&text[cursor..]);
    out
}
