//! Browser bindings for a few grit-core operations.
//!
//! Each export has a plain Rust twin so it can be tested off the browser.

use grit_core::grpo::{clipped_surrogate, group_advantages, GrpoConfig};
use grit_core::judge::RuleJudge;
use grit_core::metrics::{grounding_iou, render_overlay, ImageDims, OverlayStyle};
use grit_core::reward::{total_reward, AnswerKey};
use grit_core::trace::{extract_boxes, mask_coordinates, BoundingBox};
use grit_core::{parse_trace, RewardBreakdown, RewardConfig};
use image::RgbImage;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest canvas side the grounding demo will allocate.
pub const MAX_SIDE: u32 = 2048;

pub const GT_COLOR: [u8; 3] = [0, 160, 0];
pub const PRED_COLOR: [u8; 3] = [220, 0, 0];
const BACKGROUND: [u8; 3] = [245, 245, 245];

#[derive(Debug, Clone, Serialize)]
pub struct ScoredTrace {
    pub breakdown: RewardBreakdown,
    pub boxes: Vec<[i32; 4]>,
    pub masked: String,
    pub answer: Option<String>,
}

/// Scores a trace with the rule judge.
pub fn score(
    text: &str,
    gt_answer: &str,
    gt_count: Option<u32>,
    counting: bool,
) -> Result<ScoredTrace, String> {
    let trace = parse_trace(text);
    let config = RewardConfig {
        counting_reward_enabled: counting,
        ..RewardConfig::default()
    };
    let key = AnswerKey {
        question: "",
        answer: gt_answer,
        gt_count,
    };
    let breakdown = total_reward(&trace, &key, &config, &RuleJudge).map_err(|e| e.to_string())?;
    Ok(ScoredTrace {
        breakdown,
        boxes: trace.boxes.iter().map(|m| m.bbox.as_array()).collect(),
        masked: mask_coordinates(text),
        answer: trace.answer_segment.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingView {
    pub iou: f64,
    pub width: u32,
    pub height: u32,
    pub pred: Vec<BoundingBox>,
    pub gt: Vec<BoundingBox>,
    /// Row-major RGBA, ready for `ImageData`.
    pub rgba: Vec<u8>,
}

/// Reads boxes out of both texts, computes IoU and draws them on a blank canvas.
pub fn grounding(
    pred_text: &str,
    gt_text: &str,
    width: u32,
    height: u32,
) -> Result<GroundingView, String> {
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(format!(
            "canvas must be between 1 and {MAX_SIDE} pixels on each side"
        ));
    }
    let pred: Vec<BoundingBox> = extract_boxes(pred_text)
        .into_iter()
        .map(|m| m.bbox)
        .collect();
    let gt: Vec<BoundingBox> = extract_boxes(gt_text).into_iter().map(|m| m.bbox).collect();
    let iou =
        grounding_iou(&pred, &gt, ImageDims::new(width, height)).map_err(|e| e.to_string())?;
    let blank = RgbImage::from_pixel(width, height, image::Rgb(BACKGROUND));
    let style = |color| OverlayStyle {
        stroke_width: 2,
        color,
    };
    let img = render_overlay(&blank, &gt, &style(GT_COLOR)).map_err(|e| e.to_string())?;
    let img = render_overlay(&img, &pred, &style(PRED_COLOR)).map_err(|e| e.to_string())?;
    let rgba = img.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect();
    Ok(GroundingView {
        iou,
        width,
        height,
        pred,
        gt,
        rgba,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SurrogateCurve {
    pub advantages: Vec<f64>,
    pub ratios: Vec<f64>,
    /// One row per completion, sampled at `ratios`.
    pub surrogate: Vec<Vec<f64>>,
}

/// Group advantages for `rewards` and the clipped surrogate of each over
/// ratios in `[0, 2]`.
pub fn surrogate_curve(
    rewards: &[f64],
    epsilon: f64,
    points: usize,
) -> Result<SurrogateCurve, String> {
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err("rewards must be finite".into());
    }
    let cfg = GrpoConfig {
        epsilon,
        ..GrpoConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    if points < 2 {
        return Err("need at least two points".into());
    }
    let advantages = group_advantages(rewards, cfg.delta).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = (0..points)
        .map(|i| 2.0 * i as f64 / (points - 1) as f64)
        .collect();
    let surrogate = advantages
        .iter()
        .map(|&a| {
            ratios
                .iter()
                .map(|&r| clipped_surrogate(r, a, epsilon))
                .collect()
        })
        .collect();
    Ok(SurrogateCurve {
        advantages,
        ratios,
        surrogate,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON breakdown of a trace. A negative `gt_count` means no count.
#[wasm_bindgen(js_name = scoreTrace)]
pub fn score_trace(
    text: &str,
    gt_answer: &str,
    gt_count: i32,
    counting: bool,
) -> Result<String, JsError> {
    let count = u32::try_from(gt_count).ok();
    let scored = score(text, gt_answer, count, counting).map_err(|e| JsError::new(&e))?;
    to_json(&scored)
}

#[wasm_bindgen]
pub struct Grounding {
    view: GroundingView,
}

#[wasm_bindgen]
impl Grounding {
    #[wasm_bindgen(getter)]
    pub fn iou(&self) -> f64 {
        self.view.iou
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.view.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.view.height
    }

    #[wasm_bindgen(getter, js_name = predCount)]
    pub fn pred_count(&self) -> usize {
        self.view.pred.len()
    }

    #[wasm_bindgen(getter, js_name = gtCount)]
    pub fn gt_count(&self) -> usize {
        self.view.gt.len()
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.view.rgba.clone()
    }
}

#[wasm_bindgen(js_name = groundingOverlay)]
pub fn grounding_overlay(
    pred_text: &str,
    gt_text: &str,
    width: u32,
    height: u32,
) -> Result<Grounding, JsError> {
    grounding(pred_text, gt_text, width, height)
        .map(|view| Grounding { view })
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = surrogateCurve)]
pub fn surrogate_curve_json(
    rewards: &[f64],
    epsilon: f64,
    points: usize,
) -> Result<String, JsError> {
    let curve = surrogate_curve(rewards, epsilon, points).map_err(|e| JsError::new(&e))?;
    to_json(&curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_toggle_drops_the_count_term() {
        let text = "<think>a (1,1,5,5)</think><rethink>two</rethink><answer>2";
        let on = score(text, "2", Some(1), true).unwrap();
        let off = score(text, "2", Some(1), false).unwrap();
        assert_eq!(on.breakdown.r_count, Some(0.5));
        assert_eq!(off.breakdown.r_count, None);
        assert!((on.breakdown.total - off.breakdown.total - 0.5).abs() < 1e-12);
        assert_eq!(on.boxes, vec![[1, 1, 5, 5]]);
        assert_eq!(on.answer.as_deref(), Some("2"));
    }

    #[test]
    fn overlay_pixels_carry_both_colours() {
        let v = grounding("(0,0,10,10)", "(5,5,15,15)", 20, 20).unwrap();
        assert!((v.iou - 25.0 / 175.0).abs() < 1e-12);
        assert_eq!(v.rgba.len(), 20 * 20 * 4);
        let px = |x: usize, y: usize| &v.rgba[(y * 20 + x) * 4..(y * 20 + x) * 4 + 4];
        assert_eq!(
            px(0, 0),
            &[PRED_COLOR[0], PRED_COLOR[1], PRED_COLOR[2], 255]
        );
        assert_eq!(px(14, 14), &[GT_COLOR[0], GT_COLOR[1], GT_COLOR[2], 255]);
        assert_eq!(
            px(19, 0),
            &[BACKGROUND[0], BACKGROUND[1], BACKGROUND[2], 255]
        );
    }

    #[test]
    fn grounding_rejects_bad_input() {
        assert!(grounding("(0,0,1,1)", "no boxes", 10, 10).is_err());
        assert!(grounding("(0,0,1,1)", "(0,0,1,1)", 0, 10).is_err());
        assert!(grounding("(0,0,1,1)", "(0,0,1,1)", MAX_SIDE + 1, 10).is_err());
    }

    #[test]
    fn surrogate_is_flat_outside_the_trust_region() {
        let c = surrogate_curve(&[1.0, 0.0], 0.2, 21).unwrap();
        assert_eq!(c.ratios.len(), 21);
        assert!((c.advantages[0] - 1.0).abs() < 1e-6);
        let pos = &c.surrogate[0];
        let neg = &c.surrogate[1];
        for (i, &r) in c.ratios.iter().enumerate() {
            let a = c.advantages[0];
            assert!((pos[i] - r.min(1.2) * a).abs() < 1e-12);
            assert!((neg[i] - r.max(0.8) * c.advantages[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_rejects_bad_input() {
        assert!(surrogate_curve(&[1.0], 0.2, 10).is_err());
        assert!(surrogate_curve(&[1.0, f64::NAN], 0.2, 10).is_err());
        assert!(surrogate_curve(&[1.0, 0.0], 0.2, 1).is_err());
        assert!(surrogate_curve(&[1.0, 0.0], -0.1, 10).is_err());
    }
}
