//! The adjudication pipeline.
//!
//! Agent stages run in sequence, each receiving the serialized outputs of
//! the earlier ones. The determination gate is plain code: when any
//! checklist item is an unaddressed critical gap the label is Inconclusive
//! and the decide stage is never called.

mod gap;
pub mod prompts;
mod run;
mod stages;
mod trace;
mod types;
pub mod validate;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use crate::backend::{BackendError, ResponseSchema, StageKind, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MAX_PARSE_RETRIES};
use crate::casefile::{Label, QuestionType};
use crate::corpus::{CorpusError, DEFAULT_K};
use crate::text::words;

pub use gap::{compute_gap, needed_information, NEEDED_INFORMATION_PREFIX};
pub use prompts::{static_prompts, PriorOutput, PromptOrigin, StagePrompt, StagePrompts};
pub use run::{plan_prompts, replay, run_on_passages, run_pipeline, PipelineRun, FREE_TEXT_MISSING_INFORMATION};
pub use stages::{
    canonical_json, decide, extract_and_verify, extract_checklist, gap_for, single_agent, supervise,
    verify_and_supervise, verify_facts, StageContext,
};
pub use trace::{PipelineTrace, StageRecord, TraceAbort, TRACE_SCHEMA_VERSION};
pub use types::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOptions {
    pub retrieval_k: usize,
    pub max_parse_retries: u32,
    pub max_output_tokens: u32,
    /// Overrides the default `{case_id}.{mode}` trace id.
    pub trace_id: Option<String>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            retrieval_k: DEFAULT_K,
            max_parse_retries: DEFAULT_MAX_PARSE_RETRIES,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            trace_id: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] CorpusError),
    #[error("{} stage failed: {source}", stage.as_str())]
    Backend {
        stage: StageKind,
        #[source]
        source: BackendError,
    },
    #[error("{} stage produced an empty checklist", stage.as_str())]
    EmptyChecklist { stage: StageKind },
    #[error("final assessments do not match the checklist: {0}")]
    CoverageGap(String),
    #[error("label {label} is not a valid determination for a {question_type:?} question")]
    InvalidLabel { label: Label, question_type: QuestionType },
    #[error("no determination label found in the {} answer", stage.as_str())]
    UnparseableAnswer { stage: StageKind, raw_text: String },
    #[error("{operation} is not available in {mode} mode")]
    InvalidMode { mode: PipelineMode, operation: &'static str },
}

impl PipelineError {
    /// Name of the step that failed, as recorded in the trace.
    pub fn stage_name(&self) -> &'static str {
        match self {
            PipelineError::Retrieval(_) => "retrieve",
            PipelineError::Backend { stage, .. }
            | PipelineError::EmptyChecklist { stage }
            | PipelineError::UnparseableAnswer { stage, .. } => stage.as_str(),
            PipelineError::CoverageGap(_) => "compute_gap",
            PipelineError::InvalidLabel { .. } => StageKind::Decide.as_str(),
            PipelineError::InvalidMode { .. } => "setup",
        }
    }

    /// The backend could not be reached or answered with an error.
    pub fn is_backend_unavailable(&self) -> bool {
        matches!(self, PipelineError::Backend { source, .. } if source.is_unavailable())
    }
}

fn typed<T: DeserializeOwned>(value: &Value) -> Result<(), String> {
    serde_json::from_value::<T>(value.clone())
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Checks that `value` has the shape `schema` describes.
pub fn check_schema(schema: ResponseSchema, value: &Value) -> Result<(), String> {
    match schema {
        ResponseSchema::PlannerOutput => typed::<PlannerOutput>(value),
        ResponseSchema::ChecklistOutput => typed::<Checklist>(value),
        ResponseSchema::AssessmentOutput => typed::<AssessmentOutput>(value),
        ResponseSchema::SupervisorOutput => typed::<SupervisorVerdict>(value),
        ResponseSchema::DeterminationOutput => typed::<DeterminationOutput>(value),
        ResponseSchema::ExtractVerifyOutput => typed::<ExtractVerifyOutput>(value),
        ResponseSchema::SingleAgentOutput => typed::<SingleAgentOutput>(value),
        ResponseSchema::FreeText => Ok(()),
    }
}

/// The label a free-text answer commits to: the last whole-word mention of
/// a label valid for the question type.
pub fn extract_label(answer: &str, question_type: QuestionType) -> Option<Label> {
    let allowed = Label::allowed_for(question_type);
    let tokens: Vec<String> = words(answer).collect();
    tokens
        .iter()
        .rev()
        .find_map(|w| allowed.iter().copied().find(|l| l.as_str() == w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_is_last_compatible_keyword() {
        let q = QuestionType::EligibilityDetermination;
        assert_eq!(
            extract_label("Not ineligible at first glance; Determination: Eligible.", q),
            Some(Label::Eligible)
        );
        assert_eq!(
            extract_label("The claimant is eligible? No. Determination: INELIGIBLE", q),
            Some(Label::Ineligible)
        );
        assert_eq!(extract_label("Determination: Inconclusive.", q), Some(Label::Inconclusive));
        assert_eq!(extract_label("yes", q), None);
        assert_eq!(
            extract_label("Eligible? The answer is yes.", QuestionType::DirectQuestion),
            Some(Label::Yes)
        );
        assert_eq!(extract_label("noted", QuestionType::DirectQuestion), None);
    }

    #[test]
    fn schema_check_is_typed() {
        let ok = serde_json::json!({"assessments": []});
        assert!(check_schema(ResponseSchema::AssessmentOutput, &ok).is_ok());
        let bad = serde_json::json!({"assessments": [{"item_id": "a", "status": "met"}]});
        assert!(check_schema(ResponseSchema::AssessmentOutput, &bad).is_err());
    }
}
