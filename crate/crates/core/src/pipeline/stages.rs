//! Stage executors. Each one renders its prompt, calls the backend through
//! the structured-output loop, validates the reply, and appends a
//! [`StageRecord`] to the trace whether or not the call succeeded.

use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::gap::compute_gap;
use super::prompts::{PriorOutput, StagePrompt};
use super::trace::{PipelineTrace, StageRecord};
use super::types::{
    Assessment, AssessmentOutput, Checklist, Determination, DeterminationOutput, ExtractVerifyOutput, GapSet,
    Recommendation, SingleAgentOutput, SupervisorVerdict,
};
use super::{validate, PipelineError, PipelineOptions};
use crate::backend::{complete, BackendError, ChatBackend, ChatRequest, RequestTag, StageKind};
use crate::casefile::{CaseView, Label};
use crate::corpus::Passage;

/// Canonical serialization used when one stage's output is embedded in a
/// later stage's prompt.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("stage output serializes")
}

/// Everything a stage needs besides its own inputs.
pub struct StageContext<'a> {
    pub case: &'a CaseView,
    pub passages: &'a [Passage],
    pub backend: &'a dyn ChatBackend,
    pub options: &'a PipelineOptions,
    pub trace: &'a mut PipelineTrace,
}

impl StageContext<'_> {
    fn request(&self, stage: StageKind, system: String, user: String) -> ChatRequest {
        let mut req = ChatRequest::new(
            system,
            user,
            stage.response_schema(),
            RequestTag {
                stage,
                case_id: self.case.id.clone(),
                attempt: 1,
                question: self.case.narrative.clone(),
            },
        );
        req.max_output_tokens = self.options.max_output_tokens;
        req
    }

    fn record(
        &mut self,
        request: &ChatRequest,
        template_hash: Option<String>,
        started: Instant,
        result: &Result<crate::backend::ChatResponse, BackendError>,
    ) {
        let stage = request.stage().expect("pipeline requests are tagged");
        let (attempts, parsed, error) = match result {
            Ok(r) => (r.transcript.clone(), r.parsed.clone(), None),
            Err(BackendError::SchemaViolation { transcript, .. }) => {
                (transcript.clone(), None, result.as_ref().err().map(ToString::to_string))
            }
            Err(e) => (Vec::new(), None, Some(e.to_string())),
        };
        self.trace.stages.push(StageRecord {
            stage,
            system_prompt: request.system_prompt.clone(),
            user_prompt: request.user_prompt.clone(),
            response_schema: request.response_schema,
            temperature: request.temperature,
            max_output_tokens: request.max_output_tokens,
            template_hash,
            attempts,
            parsed,
            error,
            elapsed_ms: started.elapsed().as_millis() as u64,
        });
    }

    /// Structured call: the reply must deserialize into `T` and pass `check`.
    pub(crate) fn call<T: DeserializeOwned>(
        &mut self,
        stage: StageKind,
        system: String,
        user: String,
        template_hash: Option<String>,
        check: impl Fn(&T) -> Result<(), String>,
    ) -> Result<T, PipelineError> {
        let request = self.request(stage, system, user);
        let started = Instant::now();
        let validator = |v: &serde_json::Value| {
            let typed: T = serde_json::from_value(v.clone()).map_err(|e| format!("response does not match the expected shape: {e}"))?;
            check(&typed)
        };
        let result = complete(self.backend, &request, self.options.max_parse_retries, &validator);
        self.record(&request, template_hash, started, &result);
        let response = result.map_err(|source| PipelineError::Backend { stage, source })?;
        let value = response.parsed.expect("structured replies are parsed");
        Ok(serde_json::from_value(value).expect("validated reply deserializes"))
    }

    /// Free-text call, used by the single-prompt modes.
    pub(crate) fn call_text(&mut self, stage: StageKind, system: String, user: String) -> Result<String, PipelineError> {
        let request = self.request(stage, system, user);
        let started = Instant::now();
        let result = complete(self.backend, &request, 0, &|_| Ok(()));
        self.record(&request, None, started, &result);
        result
            .map(|r| r.raw_text)
            .map_err(|source| PipelineError::Backend { stage, source })
    }

    fn call_stage<T: DeserializeOwned>(
        &mut self,
        prompt: &StagePrompt,
        prior: &[PriorOutput],
        check: impl Fn(&T) -> Result<(), String>,
    ) -> Result<T, PipelineError> {
        let user = prompt.render_user(&self.case.narrative, self.passages, prior);
        self.call(prompt.stage, prompt.system.clone(), user, Some(prompt.template_hash()), check)
    }
}

fn prior<T: Serialize>(stage: StageKind, value: &T) -> PriorOutput {
    PriorOutput {
        stage,
        json: canonical_json(value),
    }
}

fn non_empty(checklist: &Checklist, stage: StageKind) -> Result<(), PipelineError> {
    if checklist.items.is_empty() {
        Err(PipelineError::EmptyChecklist { stage })
    } else {
        Ok(())
    }
}

pub fn extract_checklist(ctx: &mut StageContext<'_>, prompt: &StagePrompt) -> Result<Checklist, PipelineError> {
    let passages = ctx.passages;
    let checklist: Checklist = ctx.call_stage(prompt, &[], |c| validate::checklist(c, passages))?;
    non_empty(&checklist, prompt.stage)?;
    ctx.trace.checklist = Some(checklist.clone());
    Ok(checklist)
}

pub fn verify_facts(
    ctx: &mut StageContext<'_>,
    prompt: &StagePrompt,
    checklist: &Checklist,
) -> Result<Vec<Assessment>, PipelineError> {
    let question = ctx.case.narrative.clone();
    let out: AssessmentOutput = ctx.call_stage(prompt, &[prior(StageKind::Extract, checklist)], |o: &AssessmentOutput| {
        validate::assessments(checklist, &o.assessments, &question)
    })?;
    ctx.trace.initial_assessments = Some(out.assessments.clone());
    Ok(out.assessments)
}

pub fn supervise(
    ctx: &mut StageContext<'_>,
    prompt: &StagePrompt,
    checklist: &Checklist,
    assessments: &[Assessment],
) -> Result<SupervisorVerdict, PipelineError> {
    let question = ctx.case.narrative.clone();
    let upstream = if prompt.stage == StageKind::Supervise && ctx.trace.stage(StageKind::ExtractVerify).is_some() {
        StageKind::ExtractVerify
    } else {
        StageKind::Verify
    };
    let priors = [
        prior(StageKind::Extract, checklist),
        prior(
            upstream,
            &AssessmentOutput {
                assessments: assessments.to_vec(),
            },
        ),
    ];
    let verdict: SupervisorVerdict =
        ctx.call_stage(prompt, &priors, |v| validate::verdict(checklist, v, &question))?;
    Ok(settle_verdict(ctx.trace, verdict, Some(assessments)))
}

pub fn extract_and_verify(
    ctx: &mut StageContext<'_>,
    prompt: &StagePrompt,
) -> Result<(Checklist, Vec<Assessment>), PipelineError> {
    let passages = ctx.passages;
    let question = ctx.case.narrative.clone();
    let out: ExtractVerifyOutput = ctx.call_stage(prompt, &[], |o: &ExtractVerifyOutput| {
        validate::checklist(&o.checklist, passages)?;
        validate::assessments(&o.checklist, &o.assessments, &question)
    })?;
    non_empty(&out.checklist, prompt.stage)?;
    ctx.trace.checklist = Some(out.checklist.clone());
    ctx.trace.initial_assessments = Some(out.assessments.clone());
    Ok((out.checklist, out.assessments))
}

pub fn verify_and_supervise(
    ctx: &mut StageContext<'_>,
    prompt: &StagePrompt,
    checklist: &Checklist,
) -> Result<SupervisorVerdict, PipelineError> {
    let question = ctx.case.narrative.clone();
    let verdict: SupervisorVerdict = ctx.call_stage(prompt, &[prior(StageKind::Extract, checklist)], |v| {
        validate::verdict(checklist, v, &question)
    })?;
    Ok(settle_verdict(ctx.trace, verdict, None))
}

pub fn single_agent(
    ctx: &mut StageContext<'_>,
    prompt: &StagePrompt,
) -> Result<(Checklist, SupervisorVerdict), PipelineError> {
    let passages = ctx.passages;
    let question = ctx.case.narrative.clone();
    let out: SingleAgentOutput = ctx.call_stage(prompt, &[], |o: &SingleAgentOutput| {
        validate::checklist(&o.checklist, passages)?;
        let verdict = SupervisorVerdict {
            final_assessments: o.final_assessments.clone(),
            overrides: o.overrides.clone(),
            recommendation: o.recommendation,
        };
        validate::verdict(&o.checklist, &verdict, &question)
    })?;
    non_empty(&out.checklist, prompt.stage)?;
    ctx.trace.checklist = Some(out.checklist.clone());
    let verdict = SupervisorVerdict {
        final_assessments: out.final_assessments,
        overrides: out.overrides,
        recommendation: out.recommendation,
    };
    Ok((out.checklist, settle_verdict(ctx.trace, verdict, None)))
}

/// Replaces the model's recommendation with the one implied by its final
/// assessments, and notes any disagreement or unrecorded status change.
fn settle_verdict(
    trace: &mut PipelineTrace,
    mut verdict: SupervisorVerdict,
    initial: Option<&[Assessment]>,
) -> SupervisorVerdict {
    let implied = Recommendation::from_assessments(&verdict.final_assessments);
    if implied != verdict.recommendation {
        trace.notes.push(format!(
            "supervisor recommended {:?} but its final assessments imply {:?}; using {:?}",
            verdict.recommendation, implied, implied
        ));
        verdict.recommendation = implied;
    }
    if let Some(initial) = initial {
        for before in initial {
            let Some(after) = verdict.final_assessments.iter().find(|a| a.item_id == before.item_id) else {
                continue;
            };
            let changed = before.status_code() != after.status_code();
            let recorded = verdict.overrides.iter().any(|o| o.item_id == before.item_id);
            if changed && !recorded {
                trace.notes.push(format!(
                    "item {} changed from {} to {} without an override record",
                    before.item_id,
                    before.status_code(),
                    after.status_code()
                ));
            }
        }
    }
    trace.overrides = verdict.overrides.clone();
    trace.verdict = Some(verdict.clone());
    verdict
}

/// Computes the gap set and records it.
pub fn gap_for(trace: &mut PipelineTrace, checklist: &Checklist, verdict: &SupervisorVerdict) -> Result<GapSet, PipelineError> {
    let gap = compute_gap(checklist, &verdict.final_assessments)?;
    trace.gap_set = Some(gap.clone());
    Ok(gap)
}

/// The determination gate. A non-empty gap set yields Inconclusive without
/// a backend call; otherwise the decide stage picks the label.
pub fn decide(
    ctx: &mut StageContext<'_>,
    prompt: &StagePrompt,
    checklist: &Checklist,
    verdict: &SupervisorVerdict,
    gap: &GapSet,
) -> Result<Determination, PipelineError> {
    let trace_id = ctx.trace.trace_id.clone();
    if !gap.is_empty() {
        let ids: Vec<&str> = gap.gaps.iter().map(|g| g.item_id.as_str()).collect();
        return Ok(Determination {
            case_id: ctx.case.id.clone(),
            label: Label::Inconclusive,
            reasoning: format!(
                "A determination cannot be made: {} requirement(s) are not established by the stated facts ({}).",
                gap.len(),
                ids.join(", ")
            ),
            cited_passage_ids: checklist.source_passage_ids.clone(),
            missing_information: gap.gaps.iter().map(|g| g.needed_information.clone()).collect(),
            trace_id,
        });
    }
    let passages = ctx.passages;
    let priors = [prior(StageKind::Extract, checklist), prior(StageKind::Supervise, verdict)];
    let out: DeterminationOutput = ctx.call_stage(prompt, &priors, |o| validate::determination(o, passages))?;
    let question_type = ctx.case.question_type;
    if out.label == Label::Inconclusive || !out.label.is_compatible_with(question_type) {
        return Err(PipelineError::InvalidLabel {
            label: out.label,
            question_type,
        });
    }
    Ok(Determination {
        case_id: ctx.case.id.clone(),
        label: out.label,
        reasoning: out.reasoning,
        cited_passage_ids: out.cited_passage_ids,
        missing_information: Vec::new(),
        trace_id,
    })
}
