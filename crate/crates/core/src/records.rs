//! JSON Lines record schemas and a line-aware reader.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::metrics::{CorrelationSummary, EvalRecord, ImageDims};
use crate::reward::{AnswerKey, RewardBreakdown};
use crate::trace::BoundingBox;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {field}: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
}

/// Validated after deserialization; `field` names the offending key.
pub trait Record: DeserializeOwned {
    fn validate(&self) -> Result<(), (String, String)> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Counting,
    Relation,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub image_width: u32,
    pub image_height: u32,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_boxes: Option<Vec<BoundingBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_count: Option<u32>,
    #[serde(default)]
    pub task_type: TaskType,
    /// Unknown fields, preserved.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl SampleRecord {
    pub fn dims(&self) -> ImageDims {
        ImageDims::new(self.image_width, self.image_height)
    }

    pub fn answer_key(&self) -> AnswerKey<'_> {
        AnswerKey {
            question: &self.question,
            answer: &self.answer,
            gt_count: self.gt_count,
        }
    }

    /// Ground-truth boxes clamped to the declared image.
    pub fn clamped_gt_boxes(&self) -> Option<Vec<BoundingBox>> {
        self.gt_boxes.as_ref().map(|bs| {
            bs.iter()
                .map(|b| b.clamp_to(self.image_width, self.image_height))
                .collect()
        })
    }
}

impl Record for SampleRecord {
    fn validate(&self) -> Result<(), (String, String)> {
        if self.gt_count.is_some() && self.task_type != TaskType::Counting {
            return Err((
                "gt_count".into(),
                "gt_count requires task_type \"counting\"".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    pub sample_id: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Record for TraceRecord {}

/// One line of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum ScoreLine {
    Score {
        trace_id: String,
        sample_id: String,
        #[serde(flatten)]
        reward: RewardBreakdown,
    },
    Error {
        trace_id: String,
        sample_id: String,
        error: String,
    },
    Summary(ScoreSummary),
}

impl Record for ScoreLine {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub errors: usize,
    pub mean_r_format: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_r_count: Option<f64>,
    pub mean_r_ans: f64,
    pub mean_total: f64,
}

/// One line of `report.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum ReportLine {
    Sample(EvalRecord),
    Error { sample_id: String, error: String },
    Summary(EvalSummary),
}

impl Record for ReportLine {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_giou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationSummary>,
    #[serde(default)]
    pub correlation_skipped: usize,
}

fn field_from_serde_message(msg: &str) -> String {
    // serde messages quote the field in backticks: "missing field `question`".
    msg.split('`').nth(1).unwrap_or("<record>").to_string()
}

pub fn parse_jsonl<T: Record>(content: &str) -> Result<Vec<T>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(line).map_err(|e| {
            let message = e.to_string();
            RecordError::Schema {
                line: line_no,
                field: field_from_serde_message(&message),
                message,
            }
        })?;
        rec.validate()
            .map_err(|(field, message)| RecordError::Schema {
                line: line_no,
                field,
                message,
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>, RecordError> {
    let path = path.as_ref();
    let io_err = |source| RecordError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut content = String::new();
    for line in BufReader::new(file).lines() {
        content.push_str(&line.map_err(io_err)?);
        content.push('\n');
    }
    parse_jsonl(&content)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
