//! Per-case audit trace. A trace records everything needed to re-run a case
//! without the corpus: the retrieved passages in full, every prompt and raw
//! reply, the parsed stage outputs, and the gate decision.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::types::{Checklist, Determination, GapSet, Override, PipelineMode, PlannerOutput, SupervisorVerdict, Assessment};
use crate::backend::{correction_prompt, AttemptLog, ResponseSchema, StageKind};
use crate::casefile::QuestionType;
use crate::corpus::{Passage, RetrievalResult};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// One backend call, including every structured-output retry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageKind,
    pub system_prompt: String,
    pub user_prompt: String,
    pub response_schema: ResponseSchema,
    pub temperature: f32,
    pub max_output_tokens: u32,
    /// Hash of the prompt outside its substitution slots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<String>,
    pub attempts: Vec<AttemptLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: u64,
}

impl StageRecord {
    /// Every user prompt actually sent: the original, then each correction.
    pub fn sent_user_prompts(&self) -> Vec<String> {
        let mut out = vec![self.user_prompt.clone()];
        for a in self.attempts.iter().take(self.attempts.len().saturating_sub(1)) {
            if let Some(reason) = &a.rejection {
                out.push(correction_prompt(&self.user_prompt, reason));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceAbort {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub schema_version: u32,
    pub trace_id: String,
    pub case_id: String,
    pub mode: PipelineMode,
    pub backend: String,
    pub question_type: QuestionType,
    pub narrative: String,
    /// Hash of each prompt asset, plus the prompt set version.
    pub prompt_assets: BTreeMap<String, String>,
    pub retrieval_k: usize,
    pub max_parse_retries: u32,
    pub retrieval: Vec<RetrievalResult>,
    pub passages: Vec<Passage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerOutput>,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checklist: Option<Checklist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_assessments: Option<Vec<Assessment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<SupervisorVerdict>,
    #[serde(default)]
    pub overrides: Vec<Override>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_set: Option<GapSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub determination: Option<Determination>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<TraceAbort>,
    pub started_at_unix_ms: u64,
    pub elapsed_ms: u64,
}

impl PipelineTrace {
    pub fn backend_calls(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, kind: StageKind) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == kind)
    }

    /// Copy with every wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        t.started_at_unix_ms = 0;
        t.elapsed_ms = 0;
        for s in &mut t.stages {
            s.elapsed_ms = 0;
        }
        t
    }

    /// Every (system, user) prompt pair sent to the backend, retries included.
    pub fn sent_prompts(&self) -> Vec<(String, String)> {
        self.stages
            .iter()
            .flat_map(|s| {
                s.sent_user_prompts()
                    .into_iter()
                    .map(move |u| (s.system_prompt.clone(), u))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }

    /// File name used when traces are written to a directory.
    pub fn file_name(&self) -> String {
        format!("{}.json", sanitize(&self.trace_id))
    }

    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitized_file_names() {
        assert_eq!(sanitize("fix-001.full"), "fix-001.full");
        assert_eq!(sanitize("a/b c"), "a_b_c");
    }

    #[test]
    fn corrections_are_reconstructed() {
        let rec = StageRecord {
            stage: StageKind::Verify,
            system_prompt: "s".into(),
            user_prompt: "u".into(),
            response_schema: ResponseSchema::AssessmentOutput,
            temperature: 0.0,
            max_output_tokens: 10,
            template_hash: None,
            attempts: vec![
                AttemptLog { raw_text: "x".into(), rejection: Some("bad".into()) },
                AttemptLog { raw_text: "{}".into(), rejection: None },
            ],
            parsed: None,
            error: None,
            elapsed_ms: 5,
        };
        let sent = rec.sent_user_prompts();
        assert_eq!(sent.len(), 2);
        assert!(sent[1].starts_with("u\n\n## Correction\n"));
        assert!(sent[1].contains("rejected: bad"));
    }
}
