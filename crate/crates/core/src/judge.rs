//! Answer-correctness and image-choice judges.
//!
//! [`RuleJudge`] is a deterministic offline stand-in for a vision-language
//! judge. [`RemoteJudge`] (feature `remote-judge`) speaks a small
//! JSON-over-HTTP contract:
//!
//! ```text
//! POST <url>
//! Authorization: Bearer $JUDGE_API_KEY
//! {"prompt": "...", "images": ["<base64 png>", ...]}
//! ```
//!
//! The response body is either the judge's raw text, or a JSON object whose
//! `response` (or `text`) string field carries it.

use std::sync::OnceLock;
use std::time::Duration;

use image::RgbImage;
use regex::Regex;
use serde::{Deserialize, Serialize};

pub const API_KEY_ENV: &str = "JUDGE_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not parse a judge verdict from response: {0:?}")]
    Parse(String),
    #[error("credential rejected by judge endpoint (HTTP {0})")]
    Auth(u16),
    #[error("invalid judge request: {0}")]
    InvalidRequest(String),
    #[error("image encoding failed: {0}")]
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    /// Clamped to `[0, 1]`.
    pub score: f64,
    pub raw_response: String,
}

impl JudgeVerdict {
    /// Binary correctness used as `s_gpt`: fractional scores are thresholded
    /// at 0.5.
    pub fn binary(&self) -> f64 {
        if self.score >= 0.5 {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeRequest {
    pub prompt: String,
    /// Encoded (PNG) images, at most two.
    pub images: Vec<Vec<u8>>,
    pub max_retries: u32,
    pub timeout: Duration,
}

impl JudgeRequest {
    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.prompt.is_empty() {
            return Err(JudgeError::InvalidRequest("empty prompt".into()));
        }
        if self.images.len() > 2 {
            return Err(JudgeError::InvalidRequest(format!(
                "{} images attached, at most 2 allowed",
                self.images.len()
            )));
        }
        Ok(())
    }
}

/// Scores a predicted answer against the reference.
pub trait AnswerJudge: Send + Sync {
    fn judge_answer(
        &self,
        question: &str,
        predicted: &str,
        gt_answer: &str,
    ) -> Result<JudgeVerdict, JudgeError>;
}

/// Picks which of two overlays matches a description; returns 0 or 1.
pub trait ImageChoiceJudge: Send + Sync {
    fn choose_image(&self, prompt: &str, images: [&RgbImage; 2]) -> Result<u8, JudgeError>;
}

/// Lowercase, drop punctuation, drop leading articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words = lowered.split_whitespace().peekable();
    while words
        .peek()
        .is_some_and(|w| matches!(*w, "a" | "an" | "the"))
    {
        words.next();
    }
    words.collect::<Vec<_>>().join(" ")
}

pub fn rule_judge(_question: &str, predicted: &str, gt_answer: &str) -> u8 {
    u8::from(normalize_answer(predicted) == normalize_answer(gt_answer))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleJudge;

impl AnswerJudge for RuleJudge {
    fn judge_answer(
        &self,
        question: &str,
        predicted: &str,
        gt_answer: &str,
    ) -> Result<JudgeVerdict, JudgeError> {
        let hit = rule_judge(question, predicted, gt_answer);
        Ok(JudgeVerdict {
            score: f64::from(hit),
            raw_response: format!("{{\"score\": {hit}}}"),
        })
    }
}

fn score_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // Accepts strict JSON and the unquoted `{score: 1}` the prompt asks for.
        Regex::new(
            r#"\{\s*["']?score["']?\s*:\s*["']?(-?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?)["']?\s*\}"#,
        )
        .expect("static score pattern")
    })
}

/// First `{"score": n}` object embedded anywhere in `response`, clamped.
pub fn parse_score(response: &str) -> Option<f64> {
    score_regex()
        .captures_iter(response)
        .filter_map(|c| c[1].parse::<f64>().ok())
        .find(|v| v.is_finite())
        .map(|v| v.clamp(0.0, 1.0))
}

/// First case-insensitive occurrence of "Image 0" / "Image 1".
pub fn parse_binary_choice(response: &str) -> Result<u8, JudgeError> {
    let lower = response.to_lowercase();
    let zero = lower.find("image 0");
    let one = lower.find("image 1");
    match (zero, one) {
        (Some(a), Some(b)) => Ok(if a < b { 0 } else { 1 }),
        (Some(_), None) => Ok(0),
        (None, Some(_)) => Ok(1),
        (None, None) => Err(JudgeError::Parse(response.to_string())),
    }
}

/// Unwraps `{"response": "..."}` / `{"text": "..."}` envelopes.
pub fn response_text(body: &str) -> String {
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(body) {
        for key in ["response", "text"] {
            if let Some(serde_json::Value::String(s)) = map.get(key) {
                return s.clone();
            }
        }
    }
    body.to_string()
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, JudgeError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| JudgeError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

#[cfg(feature = "remote-judge")]
pub use remote::{RemoteJudge, RemoteJudgeConfig};

#[cfg(feature = "remote-judge")]
mod remote {
    use std::sync::{Condvar, Mutex};
    use std::time::Duration;

    use base64::Engine;
    use image::RgbImage;

    use super::*;
    use crate::prompts::render_answer_prompt;

    #[derive(Debug, Clone)]
    pub struct RemoteJudgeConfig {
        pub url: String,
        pub api_key: Option<String>,
        pub timeout: Duration,
        pub max_retries: u32,
        /// First backoff delay; doubles after each failed attempt.
        pub backoff: Duration,
        pub max_in_flight: usize,
    }

    impl RemoteJudgeConfig {
        pub fn new(url: impl Into<String>) -> Self {
            Self {
                url: url.into(),
                api_key: std::env::var(API_KEY_ENV).ok(),
                timeout: Duration::from_secs(60),
                max_retries: 3,
                backoff: Duration::from_millis(500),
                max_in_flight: 4,
            }
        }
    }

    struct InFlight {
        count: Mutex<usize>,
        freed: Condvar,
        cap: usize,
    }

    impl InFlight {
        fn acquire(&self) -> InFlightGuard<'_> {
            let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.cap {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
            InFlightGuard(self)
        }
    }

    struct InFlightGuard<'a>(&'a InFlight);

    impl Drop for InFlightGuard<'_> {
        fn drop(&mut self) {
            let mut n = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
            *n -= 1;
            self.0.freed.notify_one();
        }
    }

    enum Attempt {
        Body(String),
        Retryable(JudgeError),
    }

    /// HTTP judge client with bounded retries and a global in-flight cap.
    pub struct RemoteJudge {
        config: RemoteJudgeConfig,
        agent: ureq::Agent,
        in_flight: InFlight,
    }

    impl RemoteJudge {
        pub fn new(config: RemoteJudgeConfig) -> Self {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(false)
                .build()
                .into();
            let cap = config.max_in_flight.max(1);
            Self {
                config,
                agent,
                in_flight: InFlight {
                    count: Mutex::new(0),
                    freed: Condvar::new(),
                    cap,
                },
            }
        }

        pub fn config(&self) -> &RemoteJudgeConfig {
            &self.config
        }

        pub fn request(&self, prompt: String, images: Vec<Vec<u8>>) -> JudgeRequest {
            JudgeRequest {
                prompt,
                images,
                max_retries: self.config.max_retries,
                timeout: self.config.timeout,
            }
        }

        fn post_once(&self, body: &str) -> Result<Attempt, JudgeError> {
            let _slot = self.in_flight.acquire();
            let mut req = self
                .agent
                .post(&self.config.url)
                .header("Content-Type", "application/json");
            if let Some(key) = &self.config.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let mut resp = match req.send(body) {
                Ok(r) => r,
                Err(e) => return Ok(Attempt::Retryable(JudgeError::Transport(e.to_string()))),
            };
            let status = resp.status().as_u16();
            if status == 401 || status == 403 {
                return Err(JudgeError::Auth(status));
            }
            let text = match resp.body_mut().read_to_string() {
                Ok(t) => t,
                Err(e) => return Ok(Attempt::Retryable(JudgeError::Transport(e.to_string()))),
            };
            if !(200..300).contains(&status) {
                return Ok(Attempt::Retryable(JudgeError::Transport(format!(
                    "HTTP {status}: {text}"
                ))));
            }
            Ok(Attempt::Body(response_text(&text)))
        }

        /// Posts `request` until `parse` accepts the response text, making at
        /// most `max_retries + 1` calls.
        pub fn call_with<T>(
            &self,
            request: &JudgeRequest,
            parse: impl Fn(&str) -> Result<T, JudgeError>,
        ) -> Result<(T, String), JudgeError> {
            request.validate()?;
            let engine = base64::engine::general_purpose::STANDARD;
            let body = serde_json::json!({
                "prompt": request.prompt,
                "images": request.images.iter().map(|b| engine.encode(b)).collect::<Vec<_>>(),
            })
            .to_string();
            let mut delay = self.config.backoff;
            let mut last = JudgeError::Transport("no attempt made".into());
            for attempt in 0..=request.max_retries {
                if attempt > 0 {
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
                match self.post_once(&body)? {
                    Attempt::Body(text) => match parse(&text) {
                        Ok(v) => return Ok((v, text)),
                        Err(e) => last = e,
                    },
                    Attempt::Retryable(e) => last = e,
                }
            }
            Err(last)
        }

        pub fn remote_judge(&self, request: &JudgeRequest) -> Result<JudgeVerdict, JudgeError> {
            let (score, raw_response) = self.call_with(request, |text| {
                parse_score(text).ok_or_else(|| JudgeError::Parse(text.to_string()))
            })?;
            Ok(JudgeVerdict {
                score,
                raw_response,
            })
        }
    }

    impl AnswerJudge for RemoteJudge {
        fn judge_answer(
            &self,
            question: &str,
            predicted: &str,
            gt_answer: &str,
        ) -> Result<JudgeVerdict, JudgeError> {
            let prompt = render_answer_prompt(question, gt_answer, predicted);
            self.remote_judge(&self.request(prompt, Vec::new()))
        }
    }

    impl ImageChoiceJudge for RemoteJudge {
        fn choose_image(&self, prompt: &str, images: [&RgbImage; 2]) -> Result<u8, JudgeError> {
            let encoded = images
                .iter()
                .map(|img| encode_png(img))
                .collect::<Result<Vec<_>, _>>()?;
            let req = self.request(prompt.to_string(), encoded);
            self.call_with(&req, parse_binary_choice).map(|(v, _)| v)
        }
    }
}
