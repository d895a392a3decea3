//! Semantic checks on parsed stage outputs. A failure message is fed back to
//! the model as a correction, so messages name the offending item.

use std::collections::{BTreeMap, BTreeSet};

use super::types::{
    Assessment, AssessmentStatus, Checklist, Criticality, DeterminationOutput, ItemCategory, PlannerOutput,
    SupervisorVerdict,
};
use crate::backend::StageKind;
use crate::corpus::Passage;
use crate::text::{contains_normalized, words};

/// Words that belong to assessment, not extraction.
pub const STATUS_VOCABULARY: [&str; 8] = [
    "satisfied",
    "unsatisfied",
    "met",
    "unmet",
    "unaddressed",
    "missing",
    "fulfilled",
    "established",
];

fn has_status_word(text: &str) -> Option<String> {
    words(text).find(|w| STATUS_VOCABULARY.contains(&w.as_str()))
}

fn quoted_from_passages(text: &str, passages: &[Passage]) -> bool {
    passages.iter().any(|p| contains_normalized(&p.text, text))
}

pub fn planner(output: &PlannerOutput, required: &[StageKind]) -> Result<(), String> {
    for stage in required {
        match output.stage_instructions.get(stage.as_str()) {
            Some(text) if !text.trim().is_empty() => {}
            _ => return Err(format!("stage_instructions has no instructions for {:?}", stage.as_str())),
        }
    }
    if let Some(unknown) = output
        .stage_instructions
        .keys()
        .find(|k| StageKind::parse(k).is_none())
    {
        return Err(format!("stage_instructions has unknown component {unknown:?}"));
    }
    Ok(())
}

/// Structural and extraction-only checks on a checklist. An empty checklist
/// passes here and is rejected by the caller without a retry.
pub fn checklist(checklist: &Checklist, passages: &[Passage]) -> Result<(), String> {
    let retrieved: BTreeSet<&str> = passages.iter().map(|p| p.id.as_str()).collect();
    for id in &checklist.source_passage_ids {
        if !retrieved.contains(id.as_str()) {
            return Err(format!("source passage {id:?} was not among the retrieved passages"));
        }
    }
    let mut seen = BTreeSet::new();
    for item in &checklist.items {
        let id = &item.item_id;
        if id.trim().is_empty() {
            return Err("a checklist item has an empty item_id".into());
        }
        if !seen.insert(id.as_str()) {
            return Err(format!("item_id {id:?} appears more than once"));
        }
        if item.text.trim().is_empty() {
            return Err(format!("item {id:?} has empty text"));
        }
        let verbatim = quoted_from_passages(&item.text, passages);
        match item.category {
            ItemCategory::RequiredElement => {
                if item.statute_citation.as_deref().is_none_or(|c| c.trim().is_empty()) {
                    return Err(format!("required_element {id:?} needs a statute_citation"));
                }
                if !verbatim {
                    return Err(format!(
                        "item {id:?} text does not reproduce the wording of any retrieved passage"
                    ));
                }
            }
            ItemCategory::Consideration => {
                if !verbatim {
                    return Err(format!(
                        "item {id:?} text does not reproduce the wording of any retrieved passage"
                    ));
                }
            }
            ItemCategory::CaseLawRequirement => {
                if item.case_name.as_deref().is_none_or(|c| c.trim().is_empty()) {
                    return Err(format!("case_law_requirement {id:?} needs a case_name"));
                }
                let principle = item.principle.as_deref().unwrap_or("");
                if principle.trim().is_empty() {
                    return Err(format!("case_law_requirement {id:?} needs a principle"));
                }
                for field in [item.text.as_str(), principle] {
                    if quoted_from_passages(field, passages) {
                        continue;
                    }
                    if let Some(word) = has_status_word(field) {
                        return Err(format!(
                            "item {id:?} uses assessment language ({word:?}); extraction must not assess"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Exact coverage: one assessment per checklist item, nothing else.
pub fn coverage(checklist: &Checklist, assessments: &[Assessment]) -> Result<(), String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in assessments {
        *counts.entry(a.item_id.as_str()).or_default() += 1;
    }
    let missing: Vec<&str> = checklist
        .items
        .iter()
        .map(|i| i.item_id.as_str())
        .filter(|id| !counts.contains_key(id))
        .collect();
    let unexpected: Vec<&str> = counts
        .keys()
        .copied()
        .filter(|id| checklist.item(id).is_none())
        .collect();
    let repeated: Vec<&str> = counts.iter().filter(|(_, &n)| n > 1).map(|(id, _)| *id).collect();
    if missing.is_empty() && unexpected.is_empty() && repeated.is_empty() {
        return Ok(());
    }
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing {missing:?}"));
    }
    if !unexpected.is_empty() {
        parts.push(format!("unknown {unexpected:?}"));
    }
    if !repeated.is_empty() {
        parts.push(format!("repeated {repeated:?}"));
    }
    Err(format!(
        "assessments must cover every checklist item exactly once: {}",
        parts.join(", ")
    ))
}

pub fn assessments(checklist: &Checklist, assessments: &[Assessment], question: &str) -> Result<(), String> {
    coverage(checklist, assessments)?;
    for a in assessments {
        let id = &a.item_id;
        match a.status {
            AssessmentStatus::Satisfied => {
                let quote = a.supporting_quote.as_deref().unwrap_or("");
                if quote.trim().is_empty() {
                    return Err(format!("satisfied item {id:?} needs a supporting_quote"));
                }
                if !contains_normalized(question, quote) {
                    return Err(format!(
                        "supporting_quote for {id:?} is not an exact quotation from the question"
                    ));
                }
                if a.criticality.is_some() {
                    return Err(format!("satisfied item {id:?} must not carry a criticality"));
                }
                if a.conflicting_accounts {
                    return Err(format!(
                        "item {id:?} is flagged as conflicting accounts and must be unaddressed with critical_gap"
                    ));
                }
            }
            AssessmentStatus::Unaddressed => {
                if a.criticality.is_none() {
                    return Err(format!("unaddressed item {id:?} needs a criticality"));
                }
                if a.conflicting_accounts && a.criticality != Some(Criticality::CriticalGap) {
                    return Err(format!(
                        "item {id:?} is flagged as conflicting accounts and must be unaddressed with critical_gap"
                    ));
                }
            }
        }
    }
    Ok(())
}

pub fn verdict(checklist: &Checklist, verdict: &SupervisorVerdict, question: &str) -> Result<(), String> {
    assessments(checklist, &verdict.final_assessments, question)?;
    for o in &verdict.overrides {
        if checklist.item(&o.item_id).is_none() {
            return Err(format!("override refers to unknown item {:?}", o.item_id));
        }
        if o.reason.trim().is_empty() {
            return Err(format!("override of {:?} needs a reason", o.item_id));
        }
    }
    Ok(())
}

pub fn determination(output: &DeterminationOutput, passages: &[Passage]) -> Result<(), String> {
    if output.reasoning.trim().is_empty() {
        return Err("reasoning must not be empty".into());
    }
    if output.cited_passage_ids.is_empty() {
        return Err("cited_passage_ids must name at least one retrieved passage".into());
    }
    for id in &output.cited_passage_ids {
        if !passages.iter().any(|p| &p.id == id) {
            return Err(format!("cited passage {id:?} was not among the retrieved passages"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PassageKind;
    use crate::pipeline::types::ChecklistItem;

    fn passage() -> Passage {
        Passage {
            id: "p1".into(),
            kind: PassageKind::Statute,
            citation: "C.R.S. 1".into(),
            title: "Rule".into(),
            text: "(a) the test was   conducted by a licensed laboratory\n(b) the employer had a written policy".into(),
            source_doc: "doc".into(),
        }
    }

    fn item(id: &str, category: ItemCategory, text: &str) -> ChecklistItem {
        ChecklistItem {
            item_id: id.into(),
            category,
            text: text.into(),
            statute_citation: Some("C.R.S. 1".into()),
            case_name: None,
            principle: None,
        }
    }

    fn list(items: Vec<ChecklistItem>) -> Checklist {
        Checklist {
            items,
            source_passage_ids: vec!["p1".into()],
        }
    }

    #[test]
    fn checklist_requires_verbatim_wording() {
        let ok = list(vec![item(
            "a",
            ItemCategory::RequiredElement,
            "the test was conducted by a licensed laboratory",
        )]);
        assert!(checklist(&ok, &[passage()]).is_ok());
        let paraphrase = list(vec![item("a", ItemCategory::RequiredElement, "a lab did the test")]);
        assert!(checklist(&paraphrase, &[passage()]).unwrap_err().contains("wording"));
    }

    #[test]
    fn checklist_rejects_duplicates_and_unretrieved_sources() {
        let text = "the employer had a written policy";
        let dup = list(vec![
            item("a", ItemCategory::RequiredElement, text),
            item("a", ItemCategory::RequiredElement, text),
        ]);
        assert!(checklist(&dup, &[passage()]).unwrap_err().contains("more than once"));
        let mut foreign = list(vec![item("a", ItemCategory::RequiredElement, text)]);
        foreign.source_passage_ids.push("elsewhere".into());
        assert!(checklist(&foreign, &[passage()]).unwrap_err().contains("elsewhere"));
    }

    #[test]
    fn case_law_item_rejects_assessment_language() {
        let mut cl = item("h", ItemCategory::CaseLawRequirement, "notice was satisfied here");
        cl.statute_citation = None;
        cl.case_name = Some("A v. B".into());
        cl.principle = Some("notice is required".into());
        let err = checklist(&list(vec![cl]), &[passage()]).unwrap_err();
        assert!(err.contains("satisfied"), "{err}");
    }

    #[test]
    fn coverage_reports_missing_and_unknown() {
        let c = list(vec![
            item("a", ItemCategory::RequiredElement, "x"),
            item("b", ItemCategory::RequiredElement, "y"),
        ]);
        let a = vec![Assessment::unaddressed("a", Criticality::CriticalGap, ""), Assessment::unaddressed("z", Criticality::CriticalGap, "")];
        let err = coverage(&c, &a).unwrap_err();
        assert!(err.contains("\"b\"") && err.contains("\"z\""), "{err}");
    }

    #[test]
    fn satisfied_needs_quote_from_question() {
        let c = list(vec![item("a", ItemCategory::RequiredElement, "x")]);
        let q = "The lab was licensed.  She was fired.";
        assert!(assessments(&c, &[Assessment::satisfied("a", "The lab was licensed. She was fired.", "")], q).is_ok());
        let err = assessments(&c, &[Assessment::satisfied("a", "The lab was certified.", "")], q).unwrap_err();
        assert!(err.contains("exact quotation"));
    }

    #[test]
    fn conflict_flag_forces_critical_gap() {
        let c = list(vec![item("a", ItemCategory::RequiredElement, "x")]);
        let mut a = Assessment::unaddressed("a", Criticality::NotRelevant, "");
        a.conflicting_accounts = true;
        assert!(assessments(&c, &[a.clone()], "q").is_err());
        a.criticality = Some(Criticality::CriticalGap);
        assert!(assessments(&c, &[a], "q").is_ok());
    }

    #[test]
    fn determination_cites_retrieved_passages() {
        let out = DeterminationOutput {
            label: crate::casefile::Label::Eligible,
            reasoning: "r".into(),
            cited_passage_ids: vec!["p2".into()],
        };
        assert!(determination(&out, &[passage()]).is_err());
    }
}
