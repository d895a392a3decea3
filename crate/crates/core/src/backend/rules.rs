use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use super::{BackendError, ChatBackend, ChatRequest, StageKind};
use crate::casefile::{CaseFile, Dataset, Label, QuestionType};
use crate::corpus::{Corpus, Passage, PassageKind};
use crate::pipeline::{
    Assessment, AssessmentOutput, Checklist, ChecklistItem, Criticality, DeterminationOutput, ExtractVerifyOutput,
    ItemCategory, PlannerOutput, Recommendation, SingleAgentOutput, SupervisorVerdict,
};
use crate::text::{contains_normalized, normalize_ws, sentences, tokenize};

/// Issue tag → ids of the passages whose requirements govern that issue.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct IssueMap(pub BTreeMap<String, Vec<String>>);

impl IssueMap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidConfig(format!("cannot read issue map {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| BackendError::InvalidConfig(format!("malformed issue map {}: {e}", path.display())))
    }

    /// Passage ids for a set of tags, first-seen order, without duplicates.
    pub fn passages_for<'a>(&'a self, tags: &'a [String]) -> Vec<&'a str> {
        let mut seen = BTreeSet::new();
        tags.iter()
            .filter_map(|t| self.0.get(t))
            .flatten()
            .map(String::as_str)
            .filter(|id| seen.insert(*id))
            .collect()
    }
}

/// Requirement entries a passage contributes to a checklist.
///
/// Statutes and regulations list required elements as lines of the form
/// `(a) text`; consideration passages list considerations the same way;
/// a case-law passage contributes its `Principle:` line. Examples
/// contribute nothing.
pub fn requirement_items(passage: &Passage) -> Vec<ChecklistItem> {
    let enumerated = || {
        passage.text.lines().filter_map(|line| {
            let line = line.trim();
            let rest = line.strip_prefix('(')?;
            let (designator, text) = rest.split_once(") ")?;
            let valid = !designator.is_empty() && designator.chars().all(|c| c.is_ascii_alphanumeric());
            valid.then(|| (designator.to_string(), text.trim().to_string()))
        })
    };
    match passage.kind {
        PassageKind::Statute | PassageKind::Regulation => enumerated()
            .map(|(d, text)| ChecklistItem {
                item_id: format!("{}:{d}", passage.id),
                category: ItemCategory::RequiredElement,
                text,
                statute_citation: Some(passage.citation.clone()),
                case_name: None,
                principle: None,
            })
            .collect(),
        PassageKind::Consideration => enumerated()
            .map(|(d, text)| ChecklistItem {
                item_id: format!("{}:{d}", passage.id),
                category: ItemCategory::Consideration,
                text,
                statute_citation: Some(passage.citation.clone()),
                case_name: None,
                principle: None,
            })
            .collect(),
        PassageKind::CaseLaw => passage
            .text
            .lines()
            .filter_map(|l| l.trim().strip_prefix("Principle:"))
            .map(|p| ChecklistItem {
                item_id: format!("{}:principle", passage.id),
                category: ItemCategory::CaseLawRequirement,
                text: p.trim().to_string(),
                statute_citation: None,
                case_name: Some(passage.title.clone()),
                principle: Some(p.trim().to_string()),
            })
            .collect(),
        PassageKind::Example => Vec::new(),
    }
}

/// Deterministic stand-in for a model that fabricates every stage output
/// from the dataset's ground truth:
///
/// - checklist: one item per requirement entry in the passages mapped to
///   the case's issue tags;
/// - assessments: a withheld requirement is an unaddressed critical gap
///   unless its withheld fact now appears in the question; considerations
///   are unaddressed and not relevant; everything else is satisfied, quoting
///   the question sentence with the largest word overlap;
/// - supervisor: confirms the assessments without overrides;
/// - determination: the gold label, or the resolved label when the case was
///   incomplete and its facts have since been supplied.
///
/// The baseline mode answers with a determination regardless of gaps; the
/// enhanced mode answers Inconclusive when a gap remains.
pub struct RuleOracle {
    corpus: Arc<Corpus>,
    dataset: Arc<Dataset>,
    issue_map: IssueMap,
}

impl RuleOracle {
    pub fn new(corpus: Arc<Corpus>, dataset: Arc<Dataset>, issue_map: IssueMap) -> Self {
        Self {
            corpus,
            dataset,
            issue_map,
        }
    }

    fn governing_passages(&self, case: &CaseFile) -> Vec<&Passage> {
        self.issue_map
            .passages_for(&case.issue_tags)
            .into_iter()
            .filter_map(|id| self.corpus.fetch(id))
            .collect()
    }

    pub fn checklist_for(&self, case: &CaseFile) -> Checklist {
        let mut items = Vec::new();
        let mut sources = Vec::new();
        for p in self.governing_passages(case) {
            let from_passage = requirement_items(p);
            if !from_passage.is_empty() {
                sources.push(p.id.clone());
                items.extend(from_passage);
            }
        }
        Checklist {
            items,
            source_passage_ids: sources,
        }
    }

    pub fn assessments_for(&self, case: &CaseFile, checklist: &Checklist, question: &str) -> Vec<Assessment> {
        checklist
            .items
            .iter()
            .map(|item| {
                let withheld = case
                    .meta
                    .withheld_item_ids
                    .iter()
                    .position(|id| *id == item.item_id)
                    .map(|i| case.meta.withheld_facts[i].as_str());
                match withheld {
                    Some(fact) if contains_normalized(question, fact) => Assessment::satisfied(
                        &item.item_id,
                        normalize_ws(fact),
                        "The supplied fact establishes this requirement.",
                    ),
                    Some(_) => Assessment::unaddressed(
                        &item.item_id,
                        Criticality::CriticalGap,
                        "No stated fact establishes this requirement.",
                    ),
                    None if item.category == ItemCategory::Consideration => Assessment::unaddressed(
                        &item.item_id,
                        Criticality::NotRelevant,
                        "This consideration does not bear on the stated facts.",
                    ),
                    None => Assessment::satisfied(
                        &item.item_id,
                        best_supporting_sentence(question, &item.text),
                        "Stated facts establish this requirement.",
                    ),
                }
            })
            .collect()
    }

    fn determined_label(case: &CaseFile) -> Label {
        match case.meta.gold_label {
            Label::Inconclusive => case.meta.resolved_label.unwrap_or(match case.question_type {
                QuestionType::EligibilityDetermination => Label::Eligible,
                QuestionType::DirectQuestion => Label::Yes,
            }),
            other => other,
        }
    }

    fn citations(&self, case: &CaseFile) -> Vec<String> {
        self.governing_passages(case)
            .into_iter()
            .filter(|p| matches!(p.kind, PassageKind::Statute | PassageKind::Regulation))
            .map(|p| p.citation.clone())
            .collect()
    }

    fn planner_output(&self, case: &CaseFile) -> PlannerOutput {
        let citations = self.citations(case);
        let focus = if citations.is_empty() {
            "the retrieved provisions".to_string()
        } else {
            citations.join("; ")
        };
        let stage_instructions = [
            StageKind::Extract,
            StageKind::Verify,
            StageKind::Supervise,
            StageKind::ExtractVerify,
            StageKind::VerifySupervise,
            StageKind::SingleAgent,
            StageKind::Decide,
        ]
        .into_iter()
        .map(|s| {
            (
                s.as_str().to_string(),
                format!(
                    "Stage {}: work through each enumerated element of {focus} in order, using the outputs of earlier stages.",
                    s.as_str()
                ),
            )
        })
        .collect();
        PlannerOutput {
            issues: citations,
            stage_instructions,
        }
    }
}

/// The sentence of `question` sharing the most distinct words with
/// `requirement`; the first one wins ties.
pub fn best_supporting_sentence(question: &str, requirement: &str) -> String {
    let wanted: BTreeSet<String> = tokenize(requirement).into_iter().collect();
    let mut best: Option<(&str, usize)> = None;
    for s in sentences(question) {
        let have: BTreeSet<String> = tokenize(s).into_iter().collect();
        let overlap = have.intersection(&wanted).count();
        if best.is_none_or(|(_, b)| overlap > b) {
            best = Some((s, overlap));
        }
    }
    best.map(|(s, _)| s.to_string()).unwrap_or_else(|| question.trim().to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("oracle output serializes")
}

impl ChatBackend for RuleOracle {
    fn describe(&self) -> String {
        "rule-oracle".into()
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let tag = request
            .tag
            .as_ref()
            .ok_or_else(|| BackendError::InvalidConfig("rule oracle needs tagged requests".into()))?;
        let unknown = || BackendError::UnknownScriptKey {
            stage: tag.stage.as_str().into(),
            case_id: tag.case_id.clone(),
        };
        let case = self.dataset.get(&tag.case_id).ok_or_else(unknown)?;
        let question = tag.question.as_str();
        let checklist = self.checklist_for(case);
        let assessments = self.assessments_for(case, &checklist, question);
        let verdict = SupervisorVerdict {
            recommendation: Recommendation::from_assessments(&assessments),
            final_assessments: assessments.clone(),
            overrides: Vec::new(),
        };
        let label = Self::determined_label(case);
        Ok(match tag.stage {
            StageKind::Planner => to_json(&self.planner_output(case)),
            StageKind::Extract => to_json(&checklist),
            StageKind::Verify => to_json(&AssessmentOutput { assessments }),
            StageKind::Supervise | StageKind::VerifySupervise => to_json(&verdict),
            StageKind::ExtractVerify => to_json(&ExtractVerifyOutput { checklist, assessments }),
            StageKind::SingleAgent => to_json(&SingleAgentOutput {
                checklist,
                final_assessments: verdict.final_assessments,
                overrides: verdict.overrides,
                recommendation: verdict.recommendation,
            }),
            StageKind::Decide => to_json(&DeterminationOutput {
                label,
                reasoning: format!(
                    "Every requirement of {} is established by the stated facts.",
                    self.citations(case).join("; ")
                ),
                cited_passage_ids: checklist.source_passage_ids,
            }),
            StageKind::Baseline => format!(
                "Applying {} to the facts described, the answer follows directly. Determination: {label}.",
                self.citations(case).join("; ")
            ),
            StageKind::Enhanced => {
                let gaps: Vec<&str> = checklist
                    .items
                    .iter()
                    .zip(&verdict.final_assessments)
                    .filter(|(_, a)| a.is_critical_gap())
                    .map(|(i, _)| i.text.as_str())
                    .collect();
                if gaps.is_empty() {
                    format!("Each statutory requirement is met on the stated facts. Determination: {label}.")
                } else {
                    format!(
                        "Additional facts are needed on: {}. Determination: Inconclusive.",
                        gaps.join("; ")
                    )
                }
            }
        })
    }
}
