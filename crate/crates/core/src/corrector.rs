//! Unified model-input construction and correction backends: oracle,
//! identity, and a remote inference server speaking a fixed JSON protocol.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::catalog::SchemaCatalog;
use crate::corpus::CorrectionExample;
use crate::error::{Error, Result};
use crate::sqlkit;

/// Which example features are concatenated into the model input.
/// The schema segment is always present; it is the point of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    pub include_question: bool,
    pub include_explanation: bool,
    pub include_feedback: bool,
    pub include_incorrect_parse: bool,
    pub separator: String,
}

impl Default for InputConfig {
    /// The strongest configuration: everything except the explanation.
    fn default() -> Self {
        InputConfig {
            include_question: true,
            include_explanation: false,
            include_feedback: true,
            include_incorrect_parse: true,
            separator: " | ".into(),
        }
    }
}

impl InputConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.include_feedback && !self.include_incorrect_parse {
            return Err(Error::Config(
                "input config must include feedback or the incorrect parse; \
                 with neither this is plain text-to-SQL, not correction"
                    .into(),
            ));
        }
        if self.separator.is_empty() {
            return Err(Error::Config("separator must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentTag {
    Question,
    Schema,
    IncorrectParse,
    Feedback,
    Explanation,
}

/// The text fed to a correction model, with its segment structure retained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub text: String,
    pub segments: Vec<(SegmentTag, String)>,
}

/// Fixed segment order: question, schema, incorrect parse, feedback,
/// explanation; disabled segments are skipped.
pub fn build_input(
    example: &CorrectionExample,
    schema_text: &str,
    cfg: &InputConfig,
) -> Result<ModelInput> {
    cfg.validate()?;
    let mut segments: Vec<(SegmentTag, String)> = Vec::new();
    if cfg.include_question {
        segments.push((SegmentTag::Question, example.question.clone()));
    }
    segments.push((SegmentTag::Schema, schema_text.to_string()));
    if cfg.include_incorrect_parse {
        segments.push((SegmentTag::IncorrectParse, example.incorrect_parse.clone()));
    }
    if cfg.include_feedback {
        segments.push((SegmentTag::Feedback, example.feedback.clone()));
    }
    if cfg.include_explanation {
        if let Some(lines) = &example.explanation {
            segments.push((SegmentTag::Explanation, lines.join(". ")));
        }
    }
    let text = segments
        .iter()
        .map(|(_, content)| content.as_str())
        .collect::<Vec<_>>()
        .join(&cfg.separator);
    Ok(ModelInput { text, segments })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Oracle,
    Identity,
    Remote,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Oracle => write!(f, "oracle"),
            Backend::Identity => write!(f, "identity"),
            Backend::Remote => write!(f, "remote"),
        }
    }
}

/// Output of one correction attempt.
#[derive(Debug, Clone)]
pub struct CorrectionResult {
    pub example_id: String,
    pub predicted_sql: String,
    pub backend: Backend,
    pub latency: Duration,
    pub raw_model_output: Option<String>,
    /// Set when the predicted SQL failed normalization and is passed through
    /// raw, or when a remote call failed outright.
    pub failed: bool,
}

/// Upper-bound backend: returns the normalized gold parse.
pub fn correct_oracle(example: &CorrectionExample, catalog: &SchemaCatalog) -> CorrectionResult {
    let start = Instant::now();
    let (sql, failed) = match sqlkit::normalize_sql(&example.gold_parse, catalog) {
        Ok(normalized) => (normalized, false),
        // Gold parses are validated at load; reaching this means the caller
        // skipped validation. Surface the raw text rather than panicking.
        Err(_) => (example.gold_parse.clone(), true),
    };
    CorrectionResult {
        example_id: example.example_id.clone(),
        predicted_sql: sql,
        backend: Backend::Oracle,
        latency: start.elapsed(),
        raw_model_output: None,
        failed,
    }
}

/// No-interaction control backend: returns the normalized incorrect parse.
/// An unnormalizable parse is recorded as failed and passed through raw.
pub fn correct_identity(example: &CorrectionExample, catalog: &SchemaCatalog) -> CorrectionResult {
    let start = Instant::now();
    let (sql, failed) = match sqlkit::normalize_sql(&example.incorrect_parse, catalog) {
        Ok(normalized) => (normalized, false),
        Err(_) => (example.incorrect_parse.clone(), true),
    };
    CorrectionResult {
        example_id: example.example_id.clone(),
        predicted_sql: sql,
        backend: Backend::Identity,
        latency: start.elapsed(),
        raw_model_output: None,
        failed,
    }
}

#[derive(Debug, Serialize)]
struct GenerateRequest<'a> {
    id: &'a str,
    input: &'a str,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    #[allow(dead_code)]
    id: String,
    output: String,
}

/// Remote corrector client for the `POST /generate` wire protocol.
#[derive(Debug, Clone)]
pub struct RemoteCorrector {
    pub endpoint: String,
    pub timeout: Duration,
    pub attempts: u32,
    pub backoff: Duration,
}

impl RemoteCorrector {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        RemoteCorrector {
            endpoint: endpoint.into(),
            timeout,
            attempts: 3,
            backoff: Duration::from_millis(100),
        }
    }

    /// Send one correction request.
    ///
    /// Timeouts, connection failures, and non-success statuses are retried
    /// with backoff up to the attempt budget and then reported as a remote
    /// error; a malformed response body is a protocol error and is not
    /// retried. The request body carries the input text byte-exactly.
    pub fn correct(
        &self,
        example_id: &str,
        input: &ModelInput,
        catalog: &SchemaCatalog,
    ) -> Result<CorrectionResult> {
        let start = Instant::now();
        let url = format!("{}/generate", self.endpoint.trim_end_matches('/'));
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(self.timeout)
            .timeout(self.timeout)
            .build();
        let body = serde_json::to_string(&GenerateRequest {
            id: example_id,
            input: &input.text,
        })
        .expect("request serializes");

        let mut last_error = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * attempt);
            }
            match agent
                .post(&url)
                .set("content-type", "application/json")
                .send_string(&body)
            {
                Ok(response) => {
                    let text = response.into_string().map_err(|e| {
                        Error::Protocol(format!("unreadable response body: {e}"))
                    })?;
                    let parsed: GenerateResponse = serde_json::from_str(&text).map_err(|e| {
                        Error::Protocol(format!("malformed response body `{text}`: {e}"))
                    })?;
                    let raw = parsed.output;
                    // An empty output is a valid response recorded as failure.
                    if raw.trim().is_empty() {
                        return Ok(CorrectionResult {
                            example_id: example_id.to_string(),
                            predicted_sql: String::new(),
                            backend: Backend::Remote,
                            latency: start.elapsed(),
                            raw_model_output: Some(raw),
                            failed: true,
                        });
                    }
                    let (sql, failed) = match sqlkit::normalize_sql(&raw, catalog) {
                        Ok(normalized) => (normalized, false),
                        Err(_) => (raw.clone(), true),
                    };
                    return Ok(CorrectionResult {
                        example_id: example_id.to_string(),
                        predicted_sql: sql,
                        backend: Backend::Remote,
                        latency: start.elapsed(),
                        raw_model_output: Some(raw),
                        failed,
                    });
                }
                Err(ureq::Error::Status(code, _)) => {
                    last_error = format!("status {code}");
                }
                Err(ureq::Error::Transport(t)) => {
                    last_error = format!("transport: {t}");
                }
            }
        }
        Err(Error::Remote {
            attempts: self.attempts,
            message: last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ColumnDef, TableDef, ValueType};

    fn catalog() -> SchemaCatalog {
        SchemaCatalog::new(
            "d",
            vec![TableDef {
                name: "singer".into(),
                columns: vec![
                    ColumnDef { name: "name".into(), value_type: ValueType::Text },
                    ColumnDef { name: "age".into(), value_type: ValueType::Number },
                ],
            }],
        )
        .unwrap()
    }

    fn example() -> CorrectionExample {
        CorrectionExample {
            example_id: "e1".into(),
            db_id: "d".into(),
            question: "names of singers".into(),
            feedback: "names not ages".into(),
            incorrect_parse: "select age from singer".into(),
            gold_parse: "SELECT name FROM singer".into(),
            explanation: Some(vec!["step 1".into(), "step 2".into()]),
        }
    }

    #[test]
    fn default_config_order() {
        let input = build_input(&example(), "d | singer : name", &InputConfig::default()).unwrap();
        assert_eq!(
            input.text,
            "names of singers | d | singer : name | select age from singer | names not ages"
        );
        let tags: Vec<SegmentTag> = input.segments.iter().map(|(t, _)| *t).collect();
        assert_eq!(
            tags,
            vec![
                SegmentTag::Question,
                SegmentTag::Schema,
                SegmentTag::IncorrectParse,
                SegmentTag::Feedback
            ]
        );
    }

    #[test]
    fn no_question_no_explanation_config() {
        let cfg = InputConfig {
            include_question: false,
            ..InputConfig::default()
        };
        let input = build_input(&example(), "<schema>", &cfg).unwrap();
        assert_eq!(input.text, "<schema> | select age from singer | names not ages");
    }

    #[test]
    fn explanation_lines_joined() {
        let cfg = InputConfig {
            include_explanation: true,
            ..InputConfig::default()
        };
        let input = build_input(&example(), "s", &cfg).unwrap();
        assert!(input.text.ends_with("step 1. step 2"));
    }

    #[test]
    fn build_input_is_deterministic() {
        let cfg = InputConfig::default();
        let a = build_input(&example(), "s", &cfg).unwrap();
        let b = build_input(&example(), "s", &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_without_interactive_features_rejected() {
        let cfg = InputConfig {
            include_feedback: false,
            include_incorrect_parse: false,
            ..InputConfig::default()
        };
        assert!(build_input(&example(), "s", &cfg).is_err());
    }

    #[test]
    fn oracle_returns_normalized_gold() {
        let result = correct_oracle(&example(), &catalog());
        assert_eq!(result.predicted_sql, "select name from singer");
        assert_eq!(result.backend, Backend::Oracle);
        assert!(!result.failed);
    }

    #[test]
    fn identity_returns_normalized_incorrect_parse() {
        let result = correct_identity(&example(), &catalog());
        assert_eq!(result.predicted_sql, "select age from singer");
        assert_eq!(result.backend, Backend::Identity);
    }

    #[test]
    fn identity_flags_unlexable_parse() {
        let mut ex = example();
        ex.incorrect_parse = "select 'broken from singer".into();
        let result = correct_identity(&ex, &catalog());
        assert!(result.failed);
        assert_eq!(result.predicted_sql, ex.incorrect_parse);
    }
}
