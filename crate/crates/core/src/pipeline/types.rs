use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::casefile::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ItemCategory {
    RequiredElement,
    Consideration,
    CaseLawRequirement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ChecklistItem {
    pub item_id: String,
    pub category: ItemCategory,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statute_citation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principle: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Checklist {
    pub items: Vec<ChecklistItem>,
    pub source_passage_ids: Vec<String>,
}

impl Checklist {
    pub fn item(&self, id: &str) -> Option<&ChecklistItem> {
        self.items.iter().find(|i| i.item_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentStatus {
    Satisfied,
    Unaddressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    CriticalGap,
    NotRelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Assessment {
    pub item_id: String,
    pub status: AssessmentStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supporting_quote: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criticality: Option<Criticality>,
    #[serde(default)]
    pub rationale: String,
    /// Set when the item turns on conflicting claimant and employer accounts.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub conflicting_accounts: bool,
}

impl Assessment {
    pub fn satisfied(item_id: impl Into<String>, quote: impl Into<String>, rationale: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            status: AssessmentStatus::Satisfied,
            supporting_quote: Some(quote.into()),
            criticality: None,
            rationale: rationale.into(),
            conflicting_accounts: false,
        }
    }

    pub fn unaddressed(item_id: impl Into<String>, criticality: Criticality, rationale: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            status: AssessmentStatus::Unaddressed,
            supporting_quote: None,
            criticality: Some(criticality),
            rationale: rationale.into(),
            conflicting_accounts: false,
        }
    }

    pub fn is_critical_gap(&self) -> bool {
        self.status == AssessmentStatus::Unaddressed && self.criticality == Some(Criticality::CriticalGap)
    }

    /// Compact status string used in override records, e.g.
    /// `satisfied` or `unaddressed/critical_gap`.
    pub fn status_code(&self) -> String {
        match (self.status, self.criticality) {
            (AssessmentStatus::Satisfied, _) => "satisfied".into(),
            (AssessmentStatus::Unaddressed, Some(Criticality::CriticalGap)) => "unaddressed/critical_gap".into(),
            (AssessmentStatus::Unaddressed, Some(Criticality::NotRelevant)) => "unaddressed/not_relevant".into(),
            (AssessmentStatus::Unaddressed, None) => "unaddressed".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub item_id: String,
    pub from: String,
    pub to: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    Proceed,
    Abstain,
}

impl Recommendation {
    /// Proceed exactly when no assessment is an unaddressed critical gap.
    pub fn from_assessments(assessments: &[Assessment]) -> Self {
        if assessments.iter().any(Assessment::is_critical_gap) {
            Recommendation::Abstain
        } else {
            Recommendation::Proceed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SupervisorVerdict {
    pub final_assessments: Vec<Assessment>,
    #[serde(default)]
    pub overrides: Vec<Override>,
    pub recommendation: Recommendation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct GapEntry {
    pub item_id: String,
    pub requirement_text: String,
    pub needed_information: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct GapSet {
    pub gaps: Vec<GapEntry>,
}

impl GapSet {
    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }
    pub fn len(&self) -> usize {
        self.gaps.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Determination {
    pub case_id: String,
    pub label: Label,
    pub reasoning: String,
    #[serde(default)]
    pub cited_passage_ids: Vec<String>,
    /// Non-empty exactly when `label` is `Inconclusive`.
    #[serde(default)]
    pub missing_information: Vec<String>,
    pub trace_id: String,
}

// Wire formats for model outputs.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerOutput {
    /// Statutory provisions the planner identified, by citation.
    pub issues: Vec<String>,
    /// Tailored instructions keyed by stage name.
    pub stage_instructions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentOutput {
    pub assessments: Vec<Assessment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterminationOutput {
    pub label: Label,
    pub reasoning: String,
    pub cited_passage_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractVerifyOutput {
    pub checklist: Checklist,
    pub assessments: Vec<Assessment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleAgentOutput {
    pub checklist: Checklist,
    pub final_assessments: Vec<Assessment>,
    #[serde(default)]
    pub overrides: Vec<Override>,
    pub recommendation: Recommendation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    Full,
    NoExtractor,
    NoSupervisor,
    SingleAgent,
    StaticPrompting,
    Baseline,
    Enhanced,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 7] = [
        PipelineMode::Full,
        PipelineMode::NoExtractor,
        PipelineMode::NoSupervisor,
        PipelineMode::SingleAgent,
        PipelineMode::StaticPrompting,
        PipelineMode::Baseline,
        PipelineMode::Enhanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Full => "full",
            PipelineMode::NoExtractor => "no-extractor",
            PipelineMode::NoSupervisor => "no-supervisor",
            PipelineMode::SingleAgent => "single-agent",
            PipelineMode::StaticPrompting => "static-prompting",
            PipelineMode::Baseline => "baseline",
            PipelineMode::Enhanced => "enhanced",
        }
    }

    /// Row name in ablation tables.
    pub fn display_name(self) -> &'static str {
        match self {
            PipelineMode::Full => "Full pipeline",
            PipelineMode::NoExtractor => "2-Agent (No Extractor)",
            PipelineMode::NoSupervisor => "2-Agent (No Supervisor)",
            PipelineMode::SingleAgent => "Single Agent",
            PipelineMode::StaticPrompting => "Static Prompting",
            PipelineMode::Baseline => "Baseline prompt",
            PipelineMode::Enhanced => "Enhanced prompt",
        }
    }

    /// Modes whose prompts come from the planner call.
    pub fn uses_planner(self) -> bool {
        matches!(
            self,
            PipelineMode::Full | PipelineMode::NoExtractor | PipelineMode::NoSupervisor | PipelineMode::SingleAgent
        )
    }

    /// Modes that run the checklist stages and the gap gate.
    pub fn computes_gap(self) -> bool {
        !matches!(self, PipelineMode::Baseline | PipelineMode::Enhanced)
    }

    /// Agent stages in execution order. Empty for single-prompt modes.
    pub fn agent_stages(self) -> &'static [crate::backend::StageKind] {
        use crate::backend::StageKind::*;
        match self {
            PipelineMode::Full | PipelineMode::StaticPrompting => &[Extract, Verify, Supervise],
            PipelineMode::NoExtractor => &[ExtractVerify, Supervise],
            PipelineMode::NoSupervisor => &[Extract, VerifySupervise],
            PipelineMode::SingleAgent => &[SingleAgent],
            PipelineMode::Baseline | PipelineMode::Enhanced => &[],
        }
    }

    /// Backend calls a run makes: planner (if any) + agent stages + one
    /// determination call when the gap set is empty. Single-prompt modes
    /// always make exactly one call.
    pub fn expected_calls(self, gap_empty: bool) -> usize {
        if !self.computes_gap() {
            return 1;
        }
        usize::from(self.uses_planner()) + self.agent_stages().len() + usize::from(gap_empty)
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PipelineMode::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown mode {s:?}; expected one of {}", names.join(", "))
            })
    }
}
