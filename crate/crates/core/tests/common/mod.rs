#![allow(dead_code)]

use grit_core::grpo::{
    grpo_gradient, grpo_objective, importance_ratios, Completion, CompletionGroup, GrpoConfig,
    StdKind, TabularPolicy,
};
use grit_core::judge::{ImageChoiceJudge, JudgeError};
use grit_core::metrics::{render_overlay, ImageDims, OverlayStyle};
use grit_core::trace::extract_boxes;
use grit_core::BoundingBox;
use image::{Rgb, RgbImage};
use rand::Rng;

pub const ZEBRA: &str = include_str!("../../fixtures/zebra_fig4a.txt");

/// Covered-pixel counts `(|A ∩ B|, |A ∪ B|)` by testing every pixel centre.
pub fn pixel_oracle(pred: &[BoundingBox], gt: &[BoundingBox], dims: ImageDims) -> (i64, i64) {
    let inside = |bs: &[BoundingBox], x: i32, y: i32| {
        bs.iter()
            .any(|b| b.x1 <= x && x < b.x2 && b.y1 <= y && y < b.y2)
    };
    let (mut inter, mut union) = (0, 0);
    for y in 0..dims.height as i32 {
        for x in 0..dims.width as i32 {
            let (a, b) = (inside(pred, x, y), inside(gt, x, y));
            inter += i64::from(a && b);
            union += i64::from(a || b);
        }
    }
    (inter, union)
}

pub fn oracle_iou(pred: &[BoundingBox], gt: &[BoundingBox], dims: ImageDims) -> f64 {
    let (inter, union) = pixel_oracle(pred, gt, dims);
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn random_box<R: Rng>(rng: &mut R, lo: i32, hi: i32) -> BoundingBox {
    BoundingBox::new(
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    )
}

pub struct GradInstance {
    pub group: CompletionGroup,
    pub policy: TabularPolicy,
    pub old: TabularPolicy,
    pub reference: TabularPolicy,
    pub config: GrpoConfig,
}

fn random_policy<R: Rng>(rng: &mut R, states: usize, vocab: usize, scale: f64) -> TabularPolicy {
    let logits = (0..states * vocab)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    TabularPolicy::from_logits(states, vocab, logits).expect("consistent shape")
}

/// Small random instance with `policy` a perturbation of `old`, redrawn until
/// no ratio sits within `margin` of a clip boundary.
pub fn random_grad_instance<R: Rng>(rng: &mut R, beta: f64, margin: f64) -> GradInstance {
    let epsilon = 0.2;
    loop {
        let states = rng.random_range(1..=4);
        let vocab = rng.random_range(2..=5);
        let old = random_policy(rng, states, vocab, 1.0);
        let mut policy = old.clone();
        for l in policy.logits_mut() {
            *l += rng.random_range(-0.15..0.15);
        }
        let reference = random_policy(rng, states, vocab, 1.0);
        let completions: Vec<Completion> = (0..4)
            .map(|_| {
                let len = rng.random_range(1..=4);
                Completion {
                    tokens: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
                    states: (0..len).map(|_| rng.random_range(0..states)).collect(),
                }
            })
            .collect();
        let rewards: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..3.1)).collect();
        let Ok(group) = CompletionGroup::new("g", completions, rewards, 1e-8, StdKind::Population)
        else {
            continue;
        };
        let ratios = importance_ratios(&group, &policy, &old).unwrap();
        let near_kink = ratios
            .iter()
            .any(|r| (r - (1.0 - epsilon)).abs() < margin || (r - (1.0 + epsilon)).abs() < margin);
        if near_kink {
            continue;
        }
        let config = GrpoConfig {
            epsilon,
            beta,
            ..GrpoConfig::default()
        };
        return GradInstance {
            group,
            policy,
            old,
            reference,
            config,
        };
    }
}

/// Largest relative error between the analytic gradient and central finite
/// differences. Entries smaller than `floor` are compared on that scale.
pub fn gradient_rel_error(inst: &GradInstance, h: f64, floor: f64) -> f64 {
    let analytic = grpo_gradient(
        &inst.group,
        &inst.policy,
        &inst.old,
        &inst.reference,
        &inst.config,
    )
    .unwrap();
    let objective = |p: &TabularPolicy| {
        grpo_objective(&inst.group, p, &inst.old, &inst.reference, &inst.config).unwrap()
    };
    let mut worst: f64 = 0.0;
    for i in 0..inst.policy.logits().len() {
        let mut plus = inst.policy.clone();
        plus.logits_mut()[i] += h;
        let mut minus = inst.policy.clone();
        minus.logits_mut()[i] -= h;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
        let a = analytic.values[i];
        let scale = a.abs().max(fd.abs()).max(floor);
        worst = worst.max((a - fd).abs() / scale);
    }
    worst
}

/// Random bytes decoded lossily, so every draw is a valid `&str`.
pub fn random_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let len = rng.random_range(0..=max_len);
    let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Text drawn from pieces that exercise the box and tag grammar.
pub fn random_structured_text<R: Rng>(rng: &mut R, max_pieces: usize) -> String {
    const PIECES: &[&str] = &[
        "<think>",
        "</think>",
        "<rethink>",
        "</rethink>",
        "<answer>",
        "(",
        ")",
        "[",
        "]",
        ",",
        ", ",
        "-",
        " ",
        "\n",
        "0",
        "7",
        "12",
        "99999999999",
        "-3",
        "zebra",
        "é",
        "\u{0}",
        "(5, 6, 1, 2)",
        "[40,30,10,20]",
        "8, 9, 10, 11",
        "1, 2, 3",
        "(-4, 0, 3, 3)",
        "(2147483648, 0, 1, 1)",
    ];
    let n = rng.random_range(0..=max_pieces);
    (0..n)
        .map(|_| PIECES[rng.random_range(0..PIECES.len())])
        .collect()
}

pub fn white(w: u32, h: u32) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb([255, 255, 255]))
}

/// Ignores the images and always answers "Image 0".
pub struct AlwaysFirst;

impl ImageChoiceJudge for AlwaysFirst {
    fn choose_image(&self, _prompt: &str, _images: [&RgbImage; 2]) -> Result<u8, JudgeError> {
        Ok(0)
    }
}

/// Knows the true boxes and picks the image that matches their rendering.
pub struct Geometric {
    pub base: RgbImage,
    pub boxes: Vec<BoundingBox>,
}

impl ImageChoiceJudge for Geometric {
    fn choose_image(&self, prompt: &str, images: [&RgbImage; 2]) -> Result<u8, JudgeError> {
        assert!(
            extract_boxes(prompt).is_empty(),
            "coordinates leaked: {prompt}"
        );
        let expected = render_overlay(&self.base, &self.boxes, &OverlayStyle::default()).unwrap();
        Ok(if *images[0] == expected { 0 } else { 1 })
    }
}
