//! Grounding IoU over box unions, box overlays, and the cross-modal
//! correlation harness.
//!
//! Boxes are continuous rectangles: `(0, 0, 10, 10)` has area 100 and covers
//! pixels `[0, 10) × [0, 10)`.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::judge::{ImageChoiceJudge, JudgeError};
use crate::prompts::render_correlation_prompt;
use crate::trace::{mask_coordinates, BoundingBox, GroundedTrace};

/// Number of repeated correlation passes over a dataset.
pub const CORRELATION_REPEATS: usize = 3;
/// Negatives smaller than this fraction of the image are re-sampled.
pub const NEGATIVE_MIN_AREA_FRACTION: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("grounding IoU needs at least one ground-truth box")]
    EmptyGroundTruth,
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("no correlation trials to aggregate")]
    NoTrials,
    #[error("record {0} has {1} trials, expected {2}")]
    TrialCount(String, usize, usize),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height)
    }
}

pub fn clamp_boxes(boxes: &[BoundingBox], dims: ImageDims) -> Vec<BoundingBox> {
    boxes
        .iter()
        .map(|b| b.clamp_to(dims.width, dims.height))
        .collect()
}

/// Exact union area by a coordinate-compressed sweep over x.
pub fn union_area_exact(boxes: &[BoundingBox]) -> i64 {
    let boxes: Vec<&BoundingBox> = boxes.iter().filter(|b| !b.is_degenerate()).collect();
    if boxes.is_empty() {
        return 0;
    }
    let mut xs: Vec<i32> = boxes.iter().flat_map(|b| [b.x1, b.x2]).collect();
    xs.sort_unstable();
    xs.dedup();
    let mut area = 0i64;
    let mut spans: Vec<(i32, i32)> = Vec::with_capacity(boxes.len());
    for slab in xs.windows(2) {
        let (left, right) = (slab[0], slab[1]);
        spans.clear();
        spans.extend(
            boxes
                .iter()
                .filter(|b| b.x1 <= left && b.x2 >= right)
                .map(|b| (b.y1, b.y2)),
        );
        if spans.is_empty() {
            continue;
        }
        spans.sort_unstable();
        let mut covered = 0i64;
        let (mut lo, mut hi) = spans[0];
        for &(a, b) in &spans[1..] {
            if a > hi {
                covered += i64::from(hi) - i64::from(lo);
                lo = a;
                hi = b;
            } else {
                hi = hi.max(b);
            }
        }
        covered += i64::from(hi) - i64::from(lo);
        area += covered * (i64::from(right) - i64::from(left));
    }
    area
}

pub fn union_area(boxes: &[BoundingBox]) -> f64 {
    union_area_exact(boxes) as f64
}

/// IoU between the union of `pred` and the union of `gt`, after clamping both
/// to the image.
pub fn grounding_iou(
    pred: &[BoundingBox],
    gt: &[BoundingBox],
    dims: ImageDims,
) -> Result<f64, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let pred = clamp_boxes(pred, dims);
    let gt = clamp_boxes(gt, dims);
    let a = union_area_exact(&pred);
    let b = union_area_exact(&gt);
    let all: Vec<BoundingBox> = pred.iter().chain(&gt).copied().collect();
    let union = union_area_exact(&all);
    if union == 0 {
        return Ok(0.0);
    }
    let inter = a + b - union;
    Ok(inter as f64 / union as f64)
}

/// `n` boxes with uniformly drawn corners, re-drawn while smaller than 1% of
/// the image.
pub fn sample_negative_boxes<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    dims: ImageDims,
) -> Vec<BoundingBox> {
    let floor = NEGATIVE_MIN_AREA_FRACTION * dims.area();
    let w = i32::try_from(dims.width).unwrap_or(i32::MAX);
    let h = i32::try_from(dims.height).unwrap_or(i32::MAX);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let b = BoundingBox::new(
            rng.random_range(0..=w),
            rng.random_range(0..=h),
            rng.random_range(0..=w),
            rng.random_range(0..=h),
        );
        if b.area() as f64 >= floor {
            out.push(b);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub stroke_width: u32,
    pub color: [u8; 3],
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            stroke_width: 3,
            color: [255, 0, 0],
        }
    }
}

/// Draws each box's outline as an inner band of `stroke_width` pixels.
pub fn render_overlay(
    image: &RgbImage,
    boxes: &[BoundingBox],
    style: &OverlayStyle,
) -> Result<RgbImage, MetricsError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(MetricsError::EmptyImage);
    }
    let mut out = image.clone();
    let stroke = i64::from(style.stroke_width.max(1));
    let color = Rgb(style.color);
    for b in boxes {
        let b = b.clamp_to(image.width(), image.height());
        let (x1, y1, x2, y2) = (
            i64::from(b.x1),
            i64::from(b.y1),
            i64::from(b.x2),
            i64::from(b.y2),
        );
        for y in y1..y2 {
            for x in x1..x2 {
                let on_band =
                    x < x1 + stroke || x >= x2 - stroke || y < y1 + stroke || y >= y2 - stroke;
                if on_band {
                    out.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialOutcome {
    /// 1 when the judge picked the overlay of the trace's own boxes.
    Hit(u8),
    /// The trace had no boxes.
    Skipped,
}

/// One correlation trial: positive overlay vs. an equal number of random
/// negatives, order decided by a fair coin.
pub fn correlation_trial<R: Rng + ?Sized>(
    trace: &GroundedTrace,
    image: &RgbImage,
    judge: &dyn ImageChoiceJudge,
    rng: &mut R,
    style: &OverlayStyle,
) -> Result<TrialOutcome, MetricsError> {
    if trace.boxes.is_empty() {
        return Ok(TrialOutcome::Skipped);
    }
    let dims = ImageDims::new(image.width(), image.height());
    let positive_boxes = clamp_boxes(&trace.bboxes(), dims);
    let negative_boxes = sample_negative_boxes(rng, positive_boxes.len(), dims);
    let positive = render_overlay(image, &positive_boxes, style)?;
    let negative = render_overlay(image, &negative_boxes, style)?;
    let positive_slot: u8 = if rng.random_bool(0.5) { 1 } else { 0 };
    let images = if positive_slot == 0 {
        [&positive, &negative]
    } else {
        [&negative, &positive]
    };
    let prompt = render_correlation_prompt(&mask_coordinates(&trace.raw_text));
    let choice = judge.choose_image(&prompt, images)?;
    Ok(TrialOutcome::Hit(u8::from(choice == positive_slot)))
}

/// Per-sample evaluation line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    /// Judge score in `[0, 1]`; absent when accuracy was not requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub giou: Option<f64>,
    #[serde(default)]
    pub correlation_hits: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std across repeats of the per-repeat dataset means.
/// Records without trials (skipped traces) are ignored.
pub fn aggregate_correlation(
    records: &[EvalRecord],
    repeats: usize,
) -> Result<CorrelationSummary, MetricsError> {
    let with_trials: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| !r.correlation_hits.is_empty())
        .collect();
    if with_trials.is_empty() || repeats == 0 {
        return Err(MetricsError::NoTrials);
    }
    for r in &with_trials {
        if r.correlation_hits.len() != repeats {
            return Err(MetricsError::TrialCount(
                r.sample_id.clone(),
                r.correlation_hits.len(),
                repeats,
            ));
        }
    }
    let n = with_trials.len() as f64;
    let means: Vec<f64> = (0..repeats)
        .map(|k| {
            with_trials
                .iter()
                .map(|r| f64::from(r.correlation_hits[k]))
                .sum::<f64>()
                / n
        })
        .collect();
    let mean = means.iter().sum::<f64>() / repeats as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / repeats as f64;
    Ok(CorrelationSummary {
        mean,
        std: var.sqrt(),
    })
}

/// Mean of per-repeat means when only those are known.
pub fn summarize_repeat_means(means: &[f64]) -> Result<CorrelationSummary, MetricsError> {
    if means.is_empty() {
        return Err(MetricsError::NoTrials);
    }
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / k;
    Ok(CorrelationSummary {
        mean,
        std: var.sqrt(),
    })
}
