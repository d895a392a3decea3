mod common;

use factgate_core::backend::{scripted_oracle, BackendError, Script, StageKind};
use factgate_core::casefile::load_dataset;
use factgate_core::pipeline::{
    run_pipeline, AssessmentStatus, PipelineError, PipelineMode, PipelineOptions, PipelineRun,
};
use factgate_core::Label;
use serde_json::{json, Value};

/// A script that reproduces the rule oracle's Full-mode run of one case.
fn script_from_rule_run(case_id: &str) -> (Script, PipelineRun) {
    let (corpus, dataset) = (common::corpus(), common::dataset());
    let oracle = common::rule_oracle(&corpus, &dataset);
    let case = dataset.get(case_id).unwrap();
    let run = run_pipeline(&case.redacted(), &corpus, PipelineMode::Full, &oracle, &PipelineOptions::default());
    let mut script = Script::default();
    for s in &run.trace.stages {
        script.push(s.stage, case_id, vec![s.parsed.clone().unwrap()]);
    }
    (script, run)
}

fn run_script(case_id: &str, script: Script) -> PipelineRun {
    let (corpus, dataset) = (common::corpus(), common::dataset());
    let backend = scripted_oracle(script).unwrap();
    let case = dataset.get(case_id).unwrap();
    run_pipeline(&case.redacted(), &corpus, PipelineMode::Full, &backend, &PipelineOptions::default())
}

fn replace_entry(script: &mut Script, stage: StageKind, responses: Vec<Value>) {
    let entry = script.entries.iter_mut().find(|e| e.stage == stage).unwrap();
    entry.responses = responses;
}

fn poisoned_verify(original: &Value) -> Value {
    let mut v = original.clone();
    v["assessments"][0]["supporting_quote"] = json!("The claimant admitted to using drugs at work every day.");
    v
}

#[test]
fn scripted_replay_matches_rule_oracle() {
    let (script, reference) = script_from_rule_run("fix-001");
    let run = run_script("fix-001", script);
    assert_eq!(run.determination().unwrap().label, reference.determination().unwrap().label);
    assert_eq!(run.trace.checklist, reference.trace.checklist);
}

#[test]
fn fabricated_quote_is_reprompted_then_rejected() {
    let (mut script, reference) = script_from_rule_run("fix-001");
    let good = reference.trace.stage(StageKind::Verify).unwrap().parsed.clone().unwrap();
    replace_entry(&mut script, StageKind::Verify, vec![poisoned_verify(&good)]);
    let run = run_script("fix-001", script);
    match &run.outcome {
        Err(PipelineError::Backend {
            stage: StageKind::Verify,
            source: BackendError::SchemaViolation { attempts, reason, .. },
        }) => {
            assert_eq!(*attempts, 3);
            assert!(reason.contains("not an exact quotation"), "{reason}");
        }
        other => panic!("expected a schema violation, got {:?}", other.as_ref().map(|d| d.label)),
    }
    let record = run.trace.stage(StageKind::Verify).unwrap();
    assert_eq!(record.attempts.len(), 3);
    assert!(record.sent_user_prompts()[1].contains("## Correction"));
    assert_eq!(run.trace.abort.as_ref().unwrap().stage, "verify");
    assert!(run.trace.determination.is_none());
}

#[test]
fn fabricated_quote_then_correction_recovers() {
    let (mut script, reference) = script_from_rule_run("fix-001");
    let good = reference.trace.stage(StageKind::Verify).unwrap().parsed.clone().unwrap();
    replace_entry(&mut script, StageKind::Verify, vec![poisoned_verify(&good), good]);
    let run = run_script("fix-001", script);
    assert_eq!(run.determination().unwrap().label, Label::Ineligible);
    assert_eq!(run.trace.stage(StageKind::Verify).unwrap().attempts.len(), 2);
}

#[test]
fn malformed_planner_output_aborts_with_trace() {
    let (mut script, _) = script_from_rule_run("fix-002");
    replace_entry(&mut script, StageKind::Planner, vec![json!("I think the claimant should get benefits.")]);
    let run = run_script("fix-002", script);
    assert!(matches!(
        run.outcome,
        Err(PipelineError::Backend { stage: StageKind::Planner, .. })
    ));
    let abort = run.trace.abort.unwrap();
    assert_eq!(abort.stage, "planner");
    assert_eq!(run.trace.stages.len(), 1);
    assert_eq!(run.trace.passages.len(), 8);
}

#[test]
fn empty_checklist_is_not_retried() {
    let (mut script, _) = script_from_rule_run("fix-003");
    replace_entry(&mut script, StageKind::Extract, vec![json!({"items": [], "source_passage_ids": []})]);
    let run = run_script("fix-003", script);
    assert!(matches!(run.outcome, Err(PipelineError::EmptyChecklist { stage: StageKind::Extract })));
    assert_eq!(run.trace.stage(StageKind::Extract).unwrap().attempts.len(), 1);
}

#[test]
fn decide_may_not_abstain_or_cross_question_types() {
    let (mut script, reference) = script_from_rule_run("fix-001");
    let mut reply = reference.trace.stage(StageKind::Decide).unwrap().parsed.clone().unwrap();
    for label in ["inconclusive", "yes"] {
        reply["label"] = json!(label);
        replace_entry(&mut script, StageKind::Decide, vec![reply.clone()]);
        let run = run_script("fix-001", script.clone());
        assert!(matches!(run.outcome, Err(PipelineError::InvalidLabel { .. })), "{label}");
    }
}

#[test]
fn missing_script_key_fails_loudly() {
    let (mut script, _) = script_from_rule_run("fix-001");
    script.entries.retain(|e| e.stage != StageKind::Supervise);
    let run = run_script("fix-001", script);
    assert!(matches!(
        run.outcome,
        Err(PipelineError::Backend {
            source: BackendError::UnknownScriptKey { .. },
            ..
        })
    ));
}

#[test]
fn supervisor_recommendation_is_recomputed() {
    let (mut script, reference) = script_from_rule_run("fix-001");
    let mut verdict = reference.trace.stage(StageKind::Supervise).unwrap().parsed.clone().unwrap();
    verdict["recommendation"] = json!("abstain");
    replace_entry(&mut script, StageKind::Supervise, vec![verdict]);
    let run = run_script("fix-001", script);
    assert_eq!(run.determination().unwrap().label, Label::Ineligible);
    assert!(run.trace.notes.iter().any(|n| n.contains("imply Proceed")), "{:?}", run.trace.notes);
}

#[test]
fn supervisor_override_turns_a_weak_quote_into_a_gap() {
    let dir = common::fixtures().join("override");
    let dataset = load_dataset(dir.join("case.json")).unwrap();
    let backend = scripted_oracle(Script::load(dir.join("script.json")).unwrap()).unwrap();
    let corpus = common::corpus();
    let case = dataset.get("override-001").unwrap();
    let run = run_pipeline(&case.redacted(), &corpus, PipelineMode::Full, &backend, &PipelineOptions::default());
    let det = run.outcome.as_ref().unwrap();
    assert_eq!(det.label, Label::Inconclusive);
    assert_eq!(det.missing_information.len(), 1);
    let initial = run.trace.initial_assessments.as_ref().unwrap();
    assert!(initial.iter().all(|a| a.status == AssessmentStatus::Satisfied));
    assert_eq!(run.trace.overrides.len(), 1);
    assert_eq!(run.trace.overrides[0].item_id, "crs-8-73-108-5-e-ix:d");
    assert!(run.trace.notes.is_empty(), "{:?}", run.trace.notes);
    assert_eq!(run.trace.backend_calls(), 4);
}
