//! Model backends.
//!
//! Everything provider-specific lives behind [`ChatBackend::send`], which
//! returns raw text. [`complete`] layers the structured-output contract on
//! top: the reply must be a single JSON object that passes the caller's
//! validator, and a rejected reply is re-prompted with the validation error
//! up to `max_parse_retries` times before failing with
//! [`BackendError::SchemaViolation`].

mod http;
mod rules;
mod scripted;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::casefile::Dataset;
use crate::corpus::Corpus;

pub use http::{HttpBackend, ProviderFlavor, RateLimiter, RetryPolicy};
pub use rules::{requirement_items, IssueMap, RuleOracle};
pub use scripted::{scripted_oracle, Script, ScriptEntry, ScriptedOracle};

pub const DEFAULT_MAX_PARSE_RETRIES: u32 = 2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

/// Which structured output a request expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSchema {
    PlannerOutput,
    ChecklistOutput,
    AssessmentOutput,
    SupervisorOutput,
    DeterminationOutput,
    ExtractVerifyOutput,
    SingleAgentOutput,
    FreeText,
}

/// Pipeline stage a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Planner,
    Extract,
    Verify,
    Supervise,
    ExtractVerify,
    VerifySupervise,
    SingleAgent,
    Decide,
    Baseline,
    Enhanced,
}

impl StageKind {
    pub const ALL: [StageKind; 10] = [
        StageKind::Planner,
        StageKind::Extract,
        StageKind::Verify,
        StageKind::Supervise,
        StageKind::ExtractVerify,
        StageKind::VerifySupervise,
        StageKind::SingleAgent,
        StageKind::Decide,
        StageKind::Baseline,
        StageKind::Enhanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Planner => "planner",
            StageKind::Extract => "extract",
            StageKind::Verify => "verify",
            StageKind::Supervise => "supervise",
            StageKind::ExtractVerify => "extract_verify",
            StageKind::VerifySupervise => "verify_supervise",
            StageKind::SingleAgent => "single_agent",
            StageKind::Decide => "decide",
            StageKind::Baseline => "baseline",
            StageKind::Enhanced => "enhanced",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        StageKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn response_schema(self) -> ResponseSchema {
        match self {
            StageKind::Planner => ResponseSchema::PlannerOutput,
            StageKind::Extract => ResponseSchema::ChecklistOutput,
            StageKind::Verify => ResponseSchema::AssessmentOutput,
            StageKind::Supervise | StageKind::VerifySupervise => ResponseSchema::SupervisorOutput,
            StageKind::ExtractVerify => ResponseSchema::ExtractVerifyOutput,
            StageKind::SingleAgent => ResponseSchema::SingleAgentOutput,
            StageKind::Decide => ResponseSchema::DeterminationOutput,
            StageKind::Baseline | StageKind::Enhanced => ResponseSchema::FreeText,
        }
    }
}

/// Routing metadata. Test oracles key on it; HTTP adapters never send it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    pub stage: StageKind,
    pub case_id: String,
    /// 1-based attempt number within the structured-output retry loop.
    pub attempt: u32,
    /// The question text the request is about, verbatim.
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub response_schema: ResponseSchema,
    pub temperature: f32,
    pub max_output_tokens: u32,
    #[serde(skip)]
    pub tag: Option<RequestTag>,
}

impl ChatRequest {
    /// A pipeline request: temperature is always 0.
    pub fn new(system_prompt: String, user_prompt: String, response_schema: ResponseSchema, tag: RequestTag) -> Self {
        Self {
            system_prompt,
            user_prompt,
            response_schema,
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            tag: Some(tag),
        }
    }

    pub fn stage(&self) -> Option<StageKind> {
        self.tag.as_ref().map(|t| t.stage)
    }
}

/// One raw model reply and, if it was rejected, why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub raw_text: String,
    pub parsed: Option<Value>,
    pub attempts: u32,
    pub latency_ms: u64,
    pub transcript: Vec<AttemptLog>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("provider error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    ProviderError { message: String, status: Option<u16> },
    #[error("model output failed validation after {attempts} attempt(s): {reason}")]
    SchemaViolation {
        reason: String,
        raw_text: String,
        attempts: u32,
        transcript: Vec<AttemptLog>,
    },
    #[error("request timed out after {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("no scripted response for stage {stage} and case {case_id:?}")]
    UnknownScriptKey { stage: String, case_id: String },
    #[error("credential environment variable {var} is not set")]
    MissingCredential { var: String },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

impl BackendError {
    /// Transport-level failures: the backend could not be reached or
    /// answered with an error. Used by the service to choose 503.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::ProviderError { .. } | BackendError::Timeout { .. })
    }
}

/// A chat model that turns a request into raw text.
pub trait ChatBackend: Send + Sync {
    /// Short human-readable identifier, used in report file names.
    fn describe(&self) -> String;
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn describe(&self) -> String {
        (**self).describe()
    }
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).send(request)
    }
}

/// Extracts the JSON object from a reply. The reply must be exactly one
/// JSON object, optionally wrapped in a single markdown code fence.
pub fn parse_json_reply(raw: &str) -> Result<Value, String> {
    let trimmed = raw.trim();
    let body = match trimmed.strip_prefix("```") {
        Some(rest) => {
            let rest = rest.strip_prefix("json").unwrap_or(rest);
            rest.strip_suffix("```")
                .ok_or_else(|| "unterminated code fence".to_string())?
                .trim()
        }
        None => trimmed,
    };
    let value: Value = serde_json::from_str(body).map_err(|e| format!("response is not valid JSON: {e}"))?;
    if !value.is_object() {
        return Err("response must be a single JSON object".into());
    }
    Ok(value)
}

const CORRECTION_HEADER: &str = "## Correction";

pub fn correction_prompt(original: &str, error: &str) -> String {
    format!(
        "{original}\n\n{CORRECTION_HEADER}\nYour previous response was rejected: {error}\nRespond again with a single JSON object only."
    )
}

/// Sends `request` and enforces the structured-output contract.
///
/// For [`ResponseSchema::FreeText`] the first reply is returned as-is.
/// Otherwise the reply is parsed as JSON and passed to `validate`; on
/// rejection the request is re-sent with the error appended, for at most
/// `max_parse_retries` extra attempts.
pub fn complete(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    max_parse_retries: u32,
    validate: &dyn Fn(&Value) -> Result<(), String>,
) -> Result<ChatResponse, BackendError> {
    let started = Instant::now();
    let mut transcript = Vec::new();
    let mut current = request.clone();
    let max_attempts = max_parse_retries + 1;
    for attempt in 1..=max_attempts {
        if let Some(tag) = current.tag.as_mut() {
            tag.attempt = attempt;
        }
        let raw = backend.send(&current)?;
        if request.response_schema == ResponseSchema::FreeText {
            transcript.push(AttemptLog {
                raw_text: raw.clone(),
                rejection: None,
            });
            return Ok(ChatResponse {
                raw_text: raw,
                parsed: None,
                attempts: attempt,
                latency_ms: started.elapsed().as_millis() as u64,
                transcript,
            });
        }
        match parse_json_reply(&raw).and_then(|v| validate(&v).map(|()| v)) {
            Ok(value) => {
                transcript.push(AttemptLog {
                    raw_text: raw.clone(),
                    rejection: None,
                });
                return Ok(ChatResponse {
                    raw_text: raw,
                    parsed: Some(value),
                    attempts: attempt,
                    latency_ms: started.elapsed().as_millis() as u64,
                    transcript,
                });
            }
            Err(reason) => {
                tracing::debug!(attempt, %reason, "model output rejected");
                transcript.push(AttemptLog {
                    raw_text: raw.clone(),
                    rejection: Some(reason.clone()),
                });
                if attempt == max_attempts {
                    return Err(BackendError::SchemaViolation {
                        reason,
                        raw_text: raw,
                        attempts: attempt,
                        transcript,
                    });
                }
                current.user_prompt = correction_prompt(&request.user_prompt, &reason);
            }
        }
    }
    unreachable!("loop returns on the final attempt")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpProvider,
    ScriptedOracle,
}

/// Where a scripted oracle gets its answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSource {
    /// Canned responses keyed by (stage, case id), read from a JSON file.
    Script { path: std::path::PathBuf },
    /// Mechanical outputs derived from the dataset ground truth.
    Rules { issue_map_path: std::path::PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub provider: Option<ProviderFlavor>,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_parse_retries")]
    pub max_parse_retries: u32,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default)]
    pub oracle: Option<OracleSource>,
}

fn default_timeout_ms() -> u64 {
    120_000
}
fn default_parse_retries() -> u32 {
    DEFAULT_MAX_PARSE_RETRIES
}
fn default_rpm() -> u32 {
    60
}

impl BackendConfig {
    pub fn rule_oracle(issue_map_path: impl Into<std::path::PathBuf>) -> Self {
        Self::oracle(OracleSource::Rules {
            issue_map_path: issue_map_path.into(),
        })
    }

    pub fn script(path: impl Into<std::path::PathBuf>) -> Self {
        Self::oracle(OracleSource::Script { path: path.into() })
    }

    fn oracle(source: OracleSource) -> Self {
        Self {
            kind: BackendKind::ScriptedOracle,
            provider: None,
            endpoint_url: String::new(),
            model_name: String::new(),
            auth_env_var: String::new(),
            timeout_ms: default_timeout_ms(),
            max_parse_retries: DEFAULT_MAX_PARSE_RETRIES,
            requests_per_minute: default_rpm(),
            oracle: Some(source),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::HttpProvider => {
                if self.provider.is_none() {
                    return Err(BackendError::InvalidConfig("http_provider requires `provider`".into()));
                }
                if self.endpoint_url.is_empty() || self.model_name.is_empty() {
                    return Err(BackendError::InvalidConfig(
                        "http_provider requires `endpoint_url` and `model_name`".into(),
                    ));
                }
                if self.auth_env_var.is_empty() {
                    return Err(BackendError::InvalidConfig("http_provider requires `auth_env_var`".into()));
                }
                if self.requests_per_minute == 0 {
                    return Err(BackendError::InvalidConfig("requests_per_minute must be positive".into()));
                }
            }
            BackendKind::ScriptedOracle => {
                if self.oracle.is_none() {
                    return Err(BackendError::InvalidConfig("scripted_oracle requires an `oracle` table".into()));
                }
            }
        }
        Ok(())
    }

    /// Short name for file names and logs.
    pub fn label(&self) -> String {
        match (&self.kind, &self.oracle) {
            (BackendKind::ScriptedOracle, Some(OracleSource::Rules { .. })) => "rule-oracle".into(),
            (BackendKind::ScriptedOracle, _) => "scripted-oracle".into(),
            (BackendKind::HttpProvider, _) => format!(
                "{}-{}",
                self.provider.map(|p| p.as_str()).unwrap_or("http"),
                self.model_name
            ),
        }
    }
}

/// Instantiates the configured backend. The rule oracle needs the corpus and
/// the full dataset (ground truth included); other kinds ignore them.
pub fn build_backend(
    config: &BackendConfig,
    corpus: &Arc<Corpus>,
    dataset: Option<&Arc<Dataset>>,
) -> Result<Arc<dyn ChatBackend>, BackendError> {
    config.validate()?;
    match (config.kind, &config.oracle) {
        (BackendKind::HttpProvider, _) => Ok(Arc::new(HttpBackend::from_config(config)?)),
        (BackendKind::ScriptedOracle, Some(OracleSource::Script { path })) => {
            let script = Script::load(path)?;
            Ok(Arc::new(scripted_oracle(script)?))
        }
        (BackendKind::ScriptedOracle, Some(OracleSource::Rules { issue_map_path })) => {
            let dataset = dataset
                .ok_or_else(|| BackendError::InvalidConfig("rule oracle needs a dataset".into()))?
                .clone();
            let issue_map = IssueMap::load(issue_map_path)?;
            Ok(Arc::new(RuleOracle::new(corpus.clone(), dataset, issue_map)))
        }
        (BackendKind::ScriptedOracle, None) => unreachable!("validated above"),
    }
}
