use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::Value;

use super::prompts::{self, PromptOrigin, StagePrompts};
use super::stages::{self, StageContext};
use super::trace::{PipelineTrace, TraceAbort, TRACE_SCHEMA_VERSION};
use super::types::{Determination, PipelineMode, PlannerOutput};
use super::{extract_label, validate, PipelineError, PipelineOptions};
use crate::backend::{scripted_oracle, ChatBackend, Script, StageKind};
use crate::casefile::{CaseView, Label};
use crate::corpus::{Corpus, Passage, RetrievalResult};

/// Stands in for itemized gaps when a single-prompt mode abstains.
pub const FREE_TEXT_MISSING_INFORMATION: &str = "Not itemized: see the free-text answer";

#[derive(Debug)]
pub struct PipelineRun {
    pub trace: PipelineTrace,
    pub outcome: Result<Determination, PipelineError>,
}

impl PipelineRun {
    pub fn determination(&self) -> Option<&Determination> {
        self.outcome.as_ref().ok()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Retrieves passages for the question and runs `mode` over them.
pub fn run_pipeline(
    case: &CaseView,
    corpus: &Corpus,
    mode: PipelineMode,
    backend: &dyn ChatBackend,
    options: &PipelineOptions,
) -> PipelineRun {
    match corpus.retrieve_passages(&case.narrative, options.retrieval_k) {
        Ok((retrieval, passages)) => run_on_passages(case, retrieval, passages, mode, backend, options),
        Err(e) => {
            let started = Instant::now();
            let mut trace = empty_trace(case, mode, backend, options, Vec::new(), Vec::new());
            let err = PipelineError::Retrieval(e);
            trace.abort = Some(TraceAbort {
                stage: err.stage_name().into(),
                error: err.to_string(),
            });
            trace.elapsed_ms = started.elapsed().as_millis() as u64;
            PipelineRun {
                trace,
                outcome: Err(err),
            }
        }
    }
}

fn empty_trace(
    case: &CaseView,
    mode: PipelineMode,
    backend: &dyn ChatBackend,
    options: &PipelineOptions,
    retrieval: Vec<RetrievalResult>,
    passages: Vec<Passage>,
) -> PipelineTrace {
    PipelineTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        trace_id: options
            .trace_id
            .clone()
            .unwrap_or_else(|| format!("{}.{}", case.id, mode)),
        case_id: case.id.clone(),
        mode,
        backend: backend.describe(),
        question_type: case.question_type,
        narrative: case.narrative.clone(),
        prompt_assets: prompts::asset_hashes(),
        retrieval_k: options.retrieval_k,
        max_parse_retries: options.max_parse_retries,
        retrieval,
        passages,
        planner: None,
        stages: Vec::new(),
        checklist: None,
        initial_assessments: None,
        verdict: None,
        overrides: Vec::new(),
        gap_set: None,
        determination: None,
        notes: Vec::new(),
        abort: None,
        started_at_unix_ms: now_ms(),
        elapsed_ms: 0,
    }
}

/// Runs `mode` over an already retrieved passage set.
pub fn run_on_passages(
    case: &CaseView,
    retrieval: Vec<RetrievalResult>,
    passages: Vec<Passage>,
    mode: PipelineMode,
    backend: &dyn ChatBackend,
    options: &PipelineOptions,
) -> PipelineRun {
    let started = Instant::now();
    let mut trace = empty_trace(case, mode, backend, options, retrieval, passages.clone());
    let outcome = {
        let mut ctx = StageContext {
            case,
            passages: &passages,
            backend,
            options,
            trace: &mut trace,
        };
        if mode.computes_gap() {
            run_staged(&mut ctx, mode)
        } else {
            run_single_prompt(&mut ctx, mode)
        }
    };
    match &outcome {
        Ok(det) => trace.determination = Some(det.clone()),
        Err(err) => {
            tracing::warn!(case_id = %case.id, %mode, error = %err, "case aborted");
            trace.abort = Some(TraceAbort {
                stage: err.stage_name().into(),
                error: err.to_string(),
            });
        }
    }
    trace.elapsed_ms = started.elapsed().as_millis() as u64;
    PipelineRun { trace, outcome }
}

/// Asks the planner for tailored stage instructions.
pub fn plan_prompts(ctx: &mut StageContext<'_>, mode: PipelineMode) -> Result<StagePrompts, PipelineError> {
    if !mode.uses_planner() {
        return Err(PipelineError::InvalidMode {
            mode,
            operation: "plan_prompts",
        });
    }
    let (system, user) = prompts::planner_request(mode, &ctx.case.narrative, ctx.passages);
    let mut required: Vec<StageKind> = mode.agent_stages().to_vec();
    required.push(StageKind::Decide);
    let hash = prompts::sha256_hex(&system);
    let plan: PlannerOutput = ctx.call(StageKind::Planner, system, user, Some(hash), |p| {
        validate::planner(p, &required)
    })?;
    let prompts = StagePrompts::assemble(mode, PromptOrigin::Planner, |s| {
        plan.stage_instructions.get(s.as_str()).cloned().unwrap_or_default()
    });
    ctx.trace.planner = Some(plan);
    Ok(prompts)
}

fn run_staged(ctx: &mut StageContext<'_>, mode: PipelineMode) -> Result<Determination, PipelineError> {
    let prompts = if mode.uses_planner() {
        plan_prompts(ctx, mode)?
    } else {
        prompts::static_prompts(mode)?
    };
    let (checklist, verdict) = match mode {
        PipelineMode::Full | PipelineMode::StaticPrompting => {
            let checklist = stages::extract_checklist(ctx, prompts.require(StageKind::Extract))?;
            let assessments = stages::verify_facts(ctx, prompts.require(StageKind::Verify), &checklist)?;
            let verdict = stages::supervise(ctx, prompts.require(StageKind::Supervise), &checklist, &assessments)?;
            (checklist, verdict)
        }
        PipelineMode::NoExtractor => {
            let (checklist, assessments) = stages::extract_and_verify(ctx, prompts.require(StageKind::ExtractVerify))?;
            let verdict = stages::supervise(ctx, prompts.require(StageKind::Supervise), &checklist, &assessments)?;
            (checklist, verdict)
        }
        PipelineMode::NoSupervisor => {
            let checklist = stages::extract_checklist(ctx, prompts.require(StageKind::Extract))?;
            let verdict = stages::verify_and_supervise(ctx, prompts.require(StageKind::VerifySupervise), &checklist)?;
            (checklist, verdict)
        }
        PipelineMode::SingleAgent => stages::single_agent(ctx, prompts.require(StageKind::SingleAgent))?,
        PipelineMode::Baseline | PipelineMode::Enhanced => unreachable!("single-prompt modes handled separately"),
    };
    let gap = stages::gap_for(ctx.trace, &checklist, &verdict)?;
    stages::decide(ctx, &prompts.decide, &checklist, &verdict, &gap)
}

fn run_single_prompt(ctx: &mut StageContext<'_>, mode: PipelineMode) -> Result<Determination, PipelineError> {
    let stage = match mode {
        PipelineMode::Baseline => StageKind::Baseline,
        _ => StageKind::Enhanced,
    };
    let (system, user) = prompts::single_pass_request(stage, &ctx.case.narrative, ctx.passages);
    let answer = ctx.call_text(stage, system, user)?;
    let label = extract_label(&answer, ctx.case.question_type).ok_or_else(|| PipelineError::UnparseableAnswer {
        stage,
        raw_text: answer.clone(),
    })?;
    let cited = ctx
        .passages
        .iter()
        .filter(|p| answer.contains(&p.citation) || answer.contains(&p.id))
        .map(|p| p.id.clone())
        .collect();
    Ok(Determination {
        case_id: ctx.case.id.clone(),
        label,
        reasoning: answer.trim().to_string(),
        cited_passage_ids: cited,
        missing_information: if label == Label::Inconclusive {
            vec![FREE_TEXT_MISSING_INFORMATION.to_string()]
        } else {
            Vec::new()
        },
        trace_id: ctx.trace.trace_id.clone(),
    })
}

/// Re-runs a recorded case from its trace alone: the recorded passages
/// stand in for retrieval and the recorded replies for the backend.
pub fn replay(trace: &PipelineTrace) -> Result<PipelineRun, crate::backend::BackendError> {
    let mut script = Script::default();
    for stage in &trace.stages {
        let replies: Vec<Value> = stage.attempts.iter().map(|a| Value::String(a.raw_text.clone())).collect();
        if !replies.is_empty() {
            script.push(stage.stage, trace.case_id.clone(), replies);
        }
    }
    let backend = scripted_oracle(script)?;
    let case = CaseView {
        id: trace.case_id.clone(),
        narrative: trace.narrative.clone(),
        question_type: trace.question_type,
    };
    let options = PipelineOptions {
        retrieval_k: trace.retrieval_k,
        max_parse_retries: trace.max_parse_retries,
        max_output_tokens: trace
            .stages
            .first()
            .map(|s| s.max_output_tokens)
            .unwrap_or(crate::backend::DEFAULT_MAX_OUTPUT_TOKENS),
        trace_id: Some(trace.trace_id.clone()),
    };
    Ok(run_on_passages(
        &case,
        trace.retrieval.clone(),
        trace.passages.clone(),
        trace.mode,
        &backend,
        &options,
    ))
}
