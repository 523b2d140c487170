//! Corpus jobs: `score` and `eval`. Records are processed in parallel and
//! emitted in input order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use grit_core::judge::{AnswerJudge, ImageChoiceJudge, JudgeError};
use grit_core::metrics::{
    aggregate_correlation, correlation_trial, grounding_iou, EvalRecord, MetricsError,
    OverlayStyle, TrialOutcome,
};
use grit_core::records::{
    EvalSummary, ReportLine, SampleRecord, ScoreLine, ScoreSummary, TraceRecord,
};
use grit_core::reward::{total_reward, RewardError};
use grit_core::{parse_trace, RewardConfig};
use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Lines to write plus the number of per-record failures among them.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOutput<L> {
    pub lines: Vec<L>,
    pub errors: usize,
}

fn index_samples(samples: &[SampleRecord]) -> Result<HashMap<&str, &SampleRecord>> {
    let mut map = HashMap::with_capacity(samples.len());
    for s in samples {
        if map.insert(s.id.as_str(), s).is_some() {
            bail!("duplicate sample id {:?} in samples file", s.id);
        }
    }
    Ok(map)
}

/// Credential failures repeat on every record, so they end the run.
fn fatal_judge_error(e: &JudgeError) -> bool {
    matches!(e, JudgeError::Auth(_))
}

pub fn cmd_score(
    samples: &[SampleRecord],
    traces: &[TraceRecord],
    reward: &RewardConfig,
    judge: &dyn AnswerJudge,
) -> Result<CorpusOutput<ScoreLine>> {
    let by_id = index_samples(samples)?;
    let results: Vec<Result<ScoreLine, JudgeError>> = traces
        .par_iter()
        .map(|t| {
            let error = |error: String| ScoreLine::Error {
                trace_id: t.id.clone(),
                sample_id: t.sample_id.clone(),
                error,
            };
            let Some(sample) = by_id.get(t.sample_id.as_str()) else {
                return Ok(error(format!("unknown sample_id {:?}", t.sample_id)));
            };
            match total_reward(&parse_trace(&t.text), &sample.answer_key(), reward, judge) {
                Ok(reward) => Ok(ScoreLine::Score {
                    trace_id: t.id.clone(),
                    sample_id: t.sample_id.clone(),
                    reward,
                }),
                Err(RewardError::Judge(e)) if fatal_judge_error(&e) => Err(e),
                Err(e) => Ok(error(e.to_string())),
            }
        })
        .collect();

    let mut lines = Vec::with_capacity(results.len() + 1);
    for r in results {
        lines.push(r?);
    }
    let scored: Vec<_> = lines
        .iter()
        .filter_map(|l| match l {
            ScoreLine::Score { reward, .. } => Some(reward),
            _ => None,
        })
        .collect();
    let errors = lines.len() - scored.len();
    let mean = |f: &dyn Fn(&grit_core::RewardBreakdown) -> f64| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|r| f(r)).sum::<f64>() / scored.len() as f64
        }
    };
    let counts: Vec<f64> = scored.iter().filter_map(|r| r.r_count).collect();
    let summary = ScoreSummary {
        count: scored.len(),
        errors,
        mean_r_format: mean(&|r| r.r_format),
        mean_r_count: (!counts.is_empty())
            .then(|| counts.iter().sum::<f64>() / counts.len() as f64),
        mean_r_ans: mean(&|r| r.r_ans),
        mean_total: mean(&|r| r.total),
    };
    lines.push(ScoreLine::Summary(summary));
    Ok(CorpusOutput { lines, errors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricSet {
    pub acc: bool,
    pub giou: bool,
    pub correlation: bool,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub metrics: MetricSet,
    pub repeats: usize,
    pub seed: u64,
    pub style: OverlayStyle,
    /// Relative `image_path`s resolve against this directory.
    pub image_root: PathBuf,
}

fn load_image(sample: &SampleRecord, root: &Path) -> Result<RgbImage, String> {
    match &sample.image_path {
        Some(p) => {
            let path = root.join(p);
            image::open(&path)
                .map(|img| img.to_rgb8())
                .map_err(|e| format!("loading {}: {e}", path.display()))
        }
        None if sample.image_width == 0 || sample.image_height == 0 => {
            Err("sample declares a zero-sized image".into())
        }
        None => Ok(RgbImage::from_pixel(
            sample.image_width,
            sample.image_height,
            Rgb([255, 255, 255]),
        )),
    }
}

enum EvalFailure {
    Record(String),
    Fatal(JudgeError),
}

impl From<JudgeError> for EvalFailure {
    fn from(e: JudgeError) -> Self {
        if fatal_judge_error(&e) {
            EvalFailure::Fatal(e)
        } else {
            EvalFailure::Record(e.to_string())
        }
    }
}

impl From<MetricsError> for EvalFailure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Judge(j) => j.into(),
            other => EvalFailure::Record(other.to_string()),
        }
    }
}

fn eval_one(
    index: usize,
    sample: &SampleRecord,
    trace: &TraceRecord,
    answer_judge: &dyn AnswerJudge,
    image_judge: Option<&dyn ImageChoiceJudge>,
    opts: &EvalOptions,
) -> Result<EvalRecord, EvalFailure> {
    let parsed = parse_trace(&trace.text);
    let acc_score = if opts.metrics.acc {
        let v = answer_judge.judge_answer(
            &sample.question,
            parsed.answer_or_empty(),
            &sample.answer,
        )?;
        Some(v.score)
    } else {
        None
    };
    let giou = match sample.clamped_gt_boxes() {
        Some(gt) if opts.metrics.giou && !gt.is_empty() => {
            Some(grounding_iou(&parsed.bboxes(), &gt, sample.dims())?)
        }
        _ => None,
    };
    let mut correlation_hits = Vec::new();
    if opts.metrics.correlation && !parsed.boxes.is_empty() {
        let judge = image_judge.expect("checked before the run");
        let image = load_image(sample, &opts.image_root).map_err(EvalFailure::Record)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(index as u64);
        for _ in 0..opts.repeats {
            if let TrialOutcome::Hit(h) =
                correlation_trial(&parsed, &image, judge, &mut rng, &opts.style)?
            {
                correlation_hits.push(h);
            }
        }
    }
    Ok(EvalRecord {
        sample_id: sample.id.clone(),
        acc_score,
        giou,
        correlation_hits,
    })
}

pub fn cmd_eval(
    samples: &[SampleRecord],
    traces: &[TraceRecord],
    answer_judge: &dyn AnswerJudge,
    image_judge: Option<&dyn ImageChoiceJudge>,
    opts: &EvalOptions,
) -> Result<CorpusOutput<ReportLine>> {
    if opts.metrics.correlation {
        if image_judge.is_none() {
            bail!(
                "the correlation metric needs an image-capable judge: rerun with \
                 --judge remote --judge-url <URL> (and JUDGE_API_KEY if the endpoint requires it), \
                 or drop correlation from --metrics"
            );
        }
        if opts.repeats == 0 {
            bail!("--repeats must be at least 1 when correlation is requested");
        }
    }
    let by_id = index_samples(samples)?;
    let mut trace_for: HashMap<&str, Vec<&TraceRecord>> = HashMap::new();
    let mut dangling = Vec::new();
    for t in traces {
        if by_id.contains_key(t.sample_id.as_str()) {
            trace_for.entry(t.sample_id.as_str()).or_default().push(t);
        } else {
            dangling.push(ReportLine::Error {
                sample_id: t.sample_id.clone(),
                error: format!("trace {:?} references an unknown sample", t.id),
            });
        }
    }

    let results: Vec<Result<ReportLine, JudgeError>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let error = |error: String| {
                Ok(ReportLine::Error {
                    sample_id: s.id.clone(),
                    error,
                })
            };
            let trace = match trace_for.get(s.id.as_str()).map(Vec::as_slice) {
                Some([t]) => *t,
                Some(ts) => {
                    return error(format!("{} traces for one sample; expected 1", ts.len()))
                }
                None => return error("no trace for this sample".into()),
            };
            match eval_one(i, s, trace, answer_judge, image_judge, opts) {
                Ok(r) => Ok(ReportLine::Sample(r)),
                Err(EvalFailure::Record(e)) => error(e),
                Err(EvalFailure::Fatal(e)) => Err(e),
            }
        })
        .collect();

    let mut lines = Vec::with_capacity(results.len() + dangling.len() + 1);
    for r in results {
        lines.push(r?);
    }
    lines.extend(dangling);
    let records: Vec<EvalRecord> = lines
        .iter()
        .filter_map(|l| match l {
            ReportLine::Sample(r) => Some(r.clone()),
            _ => None,
        })
        .collect();
    let errors = lines.len() - records.len();
    let mean_of = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let correlation = if opts.metrics.correlation {
        aggregate_correlation(&records, opts.repeats).ok()
    } else {
        None
    };
    let summary = EvalSummary {
        samples: records.len(),
        errors,
        mean_acc: mean_of(records.iter().filter_map(|r| r.acc_score).collect()),
        mean_giou: mean_of(records.iter().filter_map(|r| r.giou).collect()),
        correlation,
        correlation_skipped: if opts.metrics.correlation {
            records
                .iter()
                .filter(|r| r.correlation_hits.is_empty())
                .count()
        } else {
            0
        },
    };
    lines.push(ReportLine::Summary(summary));
    Ok(CorpusOutput { lines, errors })
}
