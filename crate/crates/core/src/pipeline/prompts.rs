//! Prompt assets and rendering.
//!
//! Every stage prompt is split into a fixed part (system text, stage
//! instructions, response format) and three substitution slots: the
//! question, the retrieved passages, and the outputs of earlier stages.
//! `template_hash` covers the fixed part only, so two cases rendered from
//! the same template set hash identically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::PipelineMode;
use super::PipelineError;
use crate::backend::{ResponseSchema, StageKind};
use crate::corpus::Passage;

pub const PROMPT_SET_VERSION: &str = "2026-10.1";

const COMMON: &str = include_str!("../../prompts/common.txt");
const PLANNER: &str = include_str!("../../prompts/planner.txt");
const EXTRACT: &str = include_str!("../../prompts/extract.txt");
const VERIFY: &str = include_str!("../../prompts/verify.txt");
const SUPERVISE: &str = include_str!("../../prompts/supervise.txt");
const DECIDE: &str = include_str!("../../prompts/decide.txt");
const STATIC_EXTRACT: &str = include_str!("../../prompts/static_extract.txt");
const STATIC_VERIFY: &str = include_str!("../../prompts/static_verify.txt");
const STATIC_SUPERVISE: &str = include_str!("../../prompts/static_supervise.txt");
const STATIC_DECIDE: &str = include_str!("../../prompts/static_decide.txt");
pub const BASELINE: &str = include_str!("../../prompts/baseline.txt");
pub const ENHANCED: &str = include_str!("../../prompts/enhanced.txt");

/// Every text asset, by name. Hashes of these are pinned in each trace.
pub fn assets() -> [(&'static str, &'static str); 12] {
    [
        ("common", COMMON),
        ("planner", PLANNER),
        ("extract", EXTRACT),
        ("verify", VERIFY),
        ("supervise", SUPERVISE),
        ("decide", DECIDE),
        ("static_extract", STATIC_EXTRACT),
        ("static_verify", STATIC_VERIFY),
        ("static_supervise", STATIC_SUPERVISE),
        ("static_decide", STATIC_DECIDE),
        ("baseline", BASELINE),
        ("enhanced", ENHANCED),
    ]
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn asset_hashes() -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = assets()
        .into_iter()
        .map(|(name, text)| (name.to_string(), sha256_hex(text)))
        .collect();
    out.insert("version".into(), PROMPT_SET_VERSION.into());
    out
}

fn role(stage: StageKind) -> &'static str {
    match stage {
        StageKind::Planner => "prompt planning",
        StageKind::Extract => "requirements checklist",
        StageKind::Verify => "fact verification",
        StageKind::Supervise => "supervisory review",
        StageKind::ExtractVerify => "requirements checklist and fact verification",
        StageKind::VerifySupervise => "fact verification and supervisory review",
        StageKind::SingleAgent => "requirements checklist, fact verification, and supervisory review",
        StageKind::Decide => "determination",
        StageKind::Baseline | StageKind::Enhanced => "single-pass answer",
    }
}

fn scaffold(stage: StageKind) -> String {
    match stage {
        StageKind::Planner => PLANNER.trim().to_string(),
        StageKind::Extract => EXTRACT.trim().to_string(),
        StageKind::Verify => VERIFY.trim().to_string(),
        StageKind::Supervise => SUPERVISE.trim().to_string(),
        StageKind::Decide => DECIDE.trim().to_string(),
        StageKind::ExtractVerify => format!("{}\n\n{}", EXTRACT.trim(), VERIFY.trim()),
        StageKind::VerifySupervise => format!("{}\n\n{}", VERIFY.trim(), SUPERVISE.trim()),
        StageKind::SingleAgent => format!("{}\n\n{}\n\n{}", EXTRACT.trim(), VERIFY.trim(), SUPERVISE.trim()),
        StageKind::Baseline => BASELINE.trim().to_string(),
        StageKind::Enhanced => format!("{}\n\n{}", BASELINE.trim(), ENHANCED.trim()),
    }
}

fn static_instructions(stage: StageKind) -> String {
    match stage {
        StageKind::Extract => STATIC_EXTRACT.trim().to_string(),
        StageKind::Verify => STATIC_VERIFY.trim().to_string(),
        StageKind::Supervise => STATIC_SUPERVISE.trim().to_string(),
        StageKind::Decide => STATIC_DECIDE.trim().to_string(),
        StageKind::ExtractVerify => format!("{}\n{}", STATIC_EXTRACT.trim(), STATIC_VERIFY.trim()),
        StageKind::VerifySupervise => format!("{}\n{}", STATIC_VERIFY.trim(), STATIC_SUPERVISE.trim()),
        StageKind::SingleAgent => format!(
            "{}\n{}\n{}",
            STATIC_EXTRACT.trim(),
            STATIC_VERIFY.trim(),
            STATIC_SUPERVISE.trim()
        ),
        _ => String::new(),
    }
}

const ASSESSMENT_SHAPE: &str = r#"{"item_id": string, "status": "satisfied" | "unaddressed", "supporting_quote": exact sentence from the question (satisfied only), "criticality": "critical_gap" | "not_relevant" (unaddressed only), "rationale": string, "conflicting_accounts": boolean (optional)}"#;
const CHECKLIST_SHAPE: &str = r#"{"items": [{"item_id": string, "category": "required_element" | "consideration" | "case_law_requirement", "text": exact requirement wording, "statute_citation": string (required for required_element), "case_name": string and "principle": string (required for case_law_requirement)}], "source_passage_ids": [passage id]}"#;
const OVERRIDE_SHAPE: &str = r#"{"item_id": string, "from": previous status, "to": new status, "reason": string}"#;

/// Plain-language description of a response schema, embedded in prompts.
pub fn response_format(schema: ResponseSchema) -> String {
    match schema {
        ResponseSchema::PlannerOutput => r#"{"issues": [statutory citation], "stage_instructions": {component name: instructions}}"#.into(),
        ResponseSchema::ChecklistOutput => CHECKLIST_SHAPE.into(),
        ResponseSchema::AssessmentOutput => format!(r#"{{"assessments": [{ASSESSMENT_SHAPE}]}}"#),
        ResponseSchema::SupervisorOutput => format!(
            r#"{{"final_assessments": [{ASSESSMENT_SHAPE}], "overrides": [{OVERRIDE_SHAPE}], "recommendation": "proceed" | "abstain"}}"#
        ),
        ResponseSchema::ExtractVerifyOutput => format!(
            r#"{{"checklist": {CHECKLIST_SHAPE}, "assessments": [{ASSESSMENT_SHAPE}]}}"#
        ),
        ResponseSchema::SingleAgentOutput => format!(
            r#"{{"checklist": {CHECKLIST_SHAPE}, "final_assessments": [{ASSESSMENT_SHAPE}], "overrides": [{OVERRIDE_SHAPE}], "recommendation": "proceed" | "abstain"}}"#
        ),
        ResponseSchema::DeterminationOutput => r#"{"label": "eligible" | "ineligible" for eligibility questions, "yes" | "no" for direct questions, "reasoning": string, "cited_passage_ids": [passage id]}"#.into(),
        ResponseSchema::FreeText => String::new(),
    }
}

/// Renders retrieved passages in rank order.
pub fn render_passages(passages: &[Passage]) -> String {
    passages
        .iter()
        .map(|p| {
            format!(
                "[{}] {} | {} ({:?})\n{}",
                p.id, p.citation, p.title, p.kind, p.text
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Serialized output of an earlier stage, embedded verbatim downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorOutput {
    pub stage: StageKind,
    pub json: String,
}

pub fn render_prior(prior: &[PriorOutput]) -> String {
    if prior.is_empty() {
        return "(none)".into();
    }
    prior
        .iter()
        .map(|p| format!("### Output of the {} component\n{}", role(p.stage), p.json))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrigin {
    Planner,
    Static,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePrompt {
    pub stage: StageKind,
    pub position: usize,
    pub total: usize,
    pub system: String,
    pub instructions: String,
}

impl StagePrompt {
    fn new(stage: StageKind, position: usize, total: usize, instructions: String) -> Self {
        let mut system = format!(
            "{}\n\nYou are component {position} of {total} in this review: {}.",
            COMMON.trim(),
            role(stage)
        );
        system.push_str("\n\n");
        system.push_str(&scaffold(stage));
        Self {
            stage,
            position,
            total,
            system,
            instructions,
        }
    }

    pub fn response_schema(&self) -> ResponseSchema {
        self.stage.response_schema()
    }

    /// Hash of everything outside the substitution slots.
    pub fn template_hash(&self) -> String {
        sha256_hex(&format!(
            "{}\u{0}{}\u{0}{}",
            self.system,
            self.instructions,
            response_format(self.response_schema())
        ))
    }

    pub fn render_user(&self, question: &str, passages: &[Passage], prior: &[PriorOutput]) -> String {
        render_user_prompt(
            &self.instructions,
            question,
            &render_passages(passages),
            &render_prior(prior),
            self.response_schema(),
        )
    }
}

/// The single user-prompt layout every stage uses.
pub fn render_user_prompt(
    instructions: &str,
    question: &str,
    passages_block: &str,
    prior_block: &str,
    schema: ResponseSchema,
) -> String {
    format!(
        "## Instructions for this component\n{instructions}\n\n\
         ## Question (reference it exactly as written; do not rephrase)\n{question}\n\n\
         ## Retrieved passages\n{passages_block}\n\n\
         ## Outputs from earlier components\n{prior_block}\n\n\
         ## Response format\nRespond with a single JSON object only, shaped as:\n{}",
        response_format(schema)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePrompts {
    pub origin: PromptOrigin,
    pub stages: Vec<StagePrompt>,
    pub decide: StagePrompt,
}

impl StagePrompts {
    /// Builds a prompt set for `mode`'s agent stages plus the determination,
    /// taking each stage's instructions from `instructions`.
    pub(crate) fn assemble(
        mode: PipelineMode,
        origin: PromptOrigin,
        instructions: impl Fn(StageKind) -> String,
    ) -> Self {
        let agent = mode.agent_stages();
        let total = agent.len() + 1;
        let stages = agent
            .iter()
            .enumerate()
            .map(|(i, &s)| StagePrompt::new(s, i + 1, total, instructions(s)))
            .collect();
        let decide = StagePrompt::new(StageKind::Decide, total, total, instructions(StageKind::Decide));
        Self { origin, stages, decide }
    }

    pub fn get(&self, stage: StageKind) -> Option<&StagePrompt> {
        if stage == StageKind::Decide {
            return Some(&self.decide);
        }
        self.stages.iter().find(|p| p.stage == stage)
    }

    pub(crate) fn require(&self, stage: StageKind) -> &StagePrompt {
        self.get(stage).expect("prompt set built for this mode")
    }

    /// Combined hash of every stage template in the set.
    pub fn fingerprint(&self) -> String {
        let joined: Vec<String> = self
            .stages
            .iter()
            .chain(std::iter::once(&self.decide))
            .map(StagePrompt::template_hash)
            .collect();
        sha256_hex(&joined.join(":"))
    }
}

/// The fixed template set used by the static-prompting ablation. Identical
/// for every case; only the slots differ at render time.
pub fn static_prompts(mode: PipelineMode) -> Result<StagePrompts, PipelineError> {
    if mode != PipelineMode::StaticPrompting {
        return Err(PipelineError::InvalidMode {
            mode,
            operation: "static_prompts",
        });
    }
    Ok(StagePrompts::assemble(mode, PromptOrigin::Static, static_instructions))
}

/// System and user prompt for the planner call.
pub fn planner_request(mode: PipelineMode, question: &str, passages: &[Passage]) -> (String, String) {
    let system = format!("{}\n\n{}", COMMON.trim(), PLANNER.trim());
    let mut components: Vec<&str> = mode.agent_stages().iter().map(|s| s.as_str()).collect();
    components.push(StageKind::Decide.as_str());
    let instructions = format!(
        "Write tailored instructions for these components, in pipeline order: {}.",
        components.join(", ")
    );
    let user = render_user_prompt(
        &instructions,
        question,
        &render_passages(passages),
        &render_prior(&[]),
        ResponseSchema::PlannerOutput,
    );
    (system, user)
}

/// System and user prompt for the single-call baseline and enhanced modes.
pub fn single_pass_request(stage: StageKind, question: &str, passages: &[Passage]) -> (String, String) {
    let system = scaffold(stage);
    let user = format!(
        "Legal materials:\n\n{}\n\nQuestion:\n{question}",
        render_passages(passages)
    );
    (system, user)
}
