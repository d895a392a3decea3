//! Case and dataset schema.
//!
//! Every case carries a `_meta` block with its gold label, completeness level
//! and the facts withheld from the narrative. The pipeline never sees that
//! block: it only ever receives a [`CaseView`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub enum QuestionType {
    #[serde(rename = "eligibility")]
    EligibilityDetermination,
    #[serde(rename = "direct")]
    DirectQuestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Eligible,
    Ineligible,
    Yes,
    No,
    Inconclusive,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Eligible,
        Label::Ineligible,
        Label::Yes,
        Label::No,
        Label::Inconclusive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Eligible => "eligible",
            Label::Ineligible => "ineligible",
            Label::Yes => "yes",
            Label::No => "no",
            Label::Inconclusive => "inconclusive",
        }
    }

    /// Yes/No answer direct questions, Eligible/Ineligible answer eligibility
    /// determinations, and Inconclusive answers either.
    pub fn is_compatible_with(self, question_type: QuestionType) -> bool {
        match self {
            Label::Inconclusive => true,
            Label::Eligible | Label::Ineligible => question_type == QuestionType::EligibilityDetermination,
            Label::Yes | Label::No => question_type == QuestionType::DirectQuestion,
        }
    }

    /// Labels a model may use for this question type, Inconclusive included.
    pub fn allowed_for(question_type: QuestionType) -> Vec<Label> {
        Label::ALL
            .into_iter()
            .filter(|l| l.is_compatible_with(question_type))
            .collect()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_lowercase();
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == lower)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub enum Completeness {
    #[serde(rename = "complete")]
    Complete,
    #[serde(rename = "missing-1")]
    Missing1,
    #[serde(rename = "missing-2")]
    Missing2,
    #[serde(rename = "missing-3")]
    Missing3,
    #[serde(rename = "missing-4")]
    Missing4,
}

impl Completeness {
    pub const ALL: [Completeness; 5] = [
        Completeness::Complete,
        Completeness::Missing1,
        Completeness::Missing2,
        Completeness::Missing3,
        Completeness::Missing4,
    ];

    /// Number of withheld facts this level implies.
    pub fn missing_count(self) -> usize {
        match self {
            Completeness::Complete => 0,
            Completeness::Missing1 => 1,
            Completeness::Missing2 => 2,
            Completeness::Missing3 => 3,
            Completeness::Missing4 => 4,
        }
    }

    pub fn from_missing_count(k: usize) -> Option<Self> {
        Completeness::ALL.into_iter().find(|c| c.missing_count() == k)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Completeness::Complete => "complete",
            Completeness::Missing1 => "missing-1",
            Completeness::Missing2 => "missing-2",
            Completeness::Missing3 => "missing-3",
            Completeness::Missing4 => "missing-4",
        }
    }
}

/// Ground truth kept out of every prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseMeta {
    pub gold_label: Label,
    pub completeness: Completeness,
    #[serde(default)]
    pub withheld_facts: Vec<String>,
    /// Checklist item ids the withheld facts would have established, in the
    /// same order as `withheld_facts`. Used by the rule oracle.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub withheld_item_ids: Vec<String>,
    /// The label the case resolves to once the withheld facts are supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub id: String,
    pub narrative: String,
    pub question_type: QuestionType,
    #[serde(default)]
    pub issue_tags: Vec<String>,
    #[serde(rename = "_meta")]
    pub meta: CaseMeta,
}

/// What the pipeline is allowed to see of a case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct CaseView {
    pub id: String,
    pub narrative: String,
    pub question_type: QuestionType,
}

impl CaseFile {
    pub fn redacted(&self) -> CaseView {
        CaseView {
            id: self.id.clone(),
            narrative: self.narrative.clone(),
            question_type: self.question_type,
        }
    }

    pub fn gold_label(&self) -> Label {
        self.meta.gold_label
    }

    pub fn completeness(&self) -> Completeness {
        self.meta.completeness
    }

    /// Checks every case-level invariant, returning the violated rule.
    pub fn validate(&self) -> Result<(), String> {
        let m = &self.meta;
        if self.id.trim().is_empty() {
            return Err("id must be non-empty".into());
        }
        if self.narrative.trim().is_empty() {
            return Err("narrative must be non-empty".into());
        }
        if !m.gold_label.is_compatible_with(self.question_type) {
            return Err(format!(
                "gold label {} is not allowed for question type {:?}",
                m.gold_label, self.question_type
            ));
        }
        let complete = m.completeness == Completeness::Complete;
        let inconclusive = m.gold_label == Label::Inconclusive;
        if complete && inconclusive {
            return Err("complete case must not have an inconclusive gold label".into());
        }
        if !complete && !inconclusive {
            return Err(format!(
                "{} case must have an inconclusive gold label, found {}",
                m.completeness.as_str(),
                m.gold_label
            ));
        }
        let k = m.completeness.missing_count();
        if m.withheld_facts.len() != k {
            return Err(format!(
                "{} case must list exactly {k} withheld facts, found {}",
                m.completeness.as_str(),
                m.withheld_facts.len()
            ));
        }
        if m.withheld_facts.iter().any(|f| f.trim().is_empty()) {
            return Err("withheld facts must be non-empty".into());
        }
        if !m.withheld_item_ids.is_empty() && m.withheld_item_ids.len() != k {
            return Err("withheld_item_ids must parallel withheld_facts".into());
        }
        if let Some(resolved) = m.resolved_label {
            if resolved == Label::Inconclusive || !resolved.is_compatible_with(self.question_type) {
                return Err(format!("resolved label {resolved} is not a determination for this question type"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub by_completeness: BTreeMap<Completeness, usize>,
    pub by_label: BTreeMap<Label, usize>,
}

impl Manifest {
    pub fn compute(cases: &[CaseFile]) -> Self {
        let mut m = Manifest::default();
        for c in cases {
            *m.by_completeness.entry(c.meta.completeness).or_default() += 1;
            *m.by_label.entry(c.meta.gold_label).or_default() += 1;
        }
        m
    }

    pub fn inconclusive(&self) -> usize {
        self.by_label.get(&Label::Inconclusive).copied().unwrap_or(0)
    }

    pub fn complete(&self) -> usize {
        self.by_completeness.get(&Completeness::Complete).copied().unwrap_or(0)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset {path}: {message}")]
    MalformedDataset { path: PathBuf, message: String },
    #[error("case {case_id}: {rule}")]
    InvariantViolation { case_id: String, rule: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    cases: Vec<CaseFile>,
    manifest: Manifest,
}

impl Dataset {
    /// Validates every case (plus id uniqueness) and computes the manifest.
    pub fn from_cases(cases: Vec<CaseFile>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for c in &cases {
            c.validate().map_err(|rule| DatasetError::InvariantViolation {
                case_id: c.id.clone(),
                rule,
            })?;
            if !seen.insert(c.id.as_str()) {
                return Err(DatasetError::InvariantViolation {
                    case_id: c.id.clone(),
                    rule: "duplicate case id".into(),
                });
            }
        }
        let manifest = Manifest::compute(&cases);
        Ok(Self { cases, manifest })
    }

    pub fn cases(&self) -> &[CaseFile] {
        &self.cases
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CaseFile> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.cases).expect("cases serialize")
    }

    /// Short content hash used in report file names.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(serde_json::to_vec(&self.cases).expect("cases serialize"));
        hex::encode(&digest[..6])
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cases: Vec<CaseFile> = serde_json::from_str(&raw).map_err(|e| DatasetError::MalformedDataset {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Dataset::from_cases(cases)
}

/// Partitions cases by completeness level. Empty levels are omitted.
pub fn split_by_completeness(dataset: &Dataset) -> BTreeMap<Completeness, Vec<CaseFile>> {
    let mut out: BTreeMap<Completeness, Vec<CaseFile>> = BTreeMap::new();
    for c in dataset.cases() {
        out.entry(c.meta.completeness).or_default().push(c.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str, label: Label, completeness: Completeness, withheld: &[&str]) -> CaseFile {
        CaseFile {
            id: id.into(),
            narrative: "The claimant quit. Is she eligible?".into(),
            question_type: QuestionType::EligibilityDetermination,
            issue_tags: vec!["voluntary-quit".into()],
            meta: CaseMeta {
                gold_label: label,
                completeness,
                withheld_facts: withheld.iter().map(|s| s.to_string()).collect(),
                withheld_item_ids: vec![],
                resolved_label: None,
            },
        }
    }

    #[test]
    fn two_case_manifest() {
        let ds = Dataset::from_cases(vec![
            case("a", Label::Eligible, Completeness::Complete, &[]),
            case("b", Label::Inconclusive, Completeness::Missing2, &["x", "y"]),
        ])
        .unwrap();
        assert_eq!(ds.manifest().by_completeness.get(&Completeness::Complete), Some(&1));
        assert_eq!(ds.manifest().by_completeness.get(&Completeness::Missing2), Some(&1));
        assert_eq!(ds.manifest().by_completeness.len(), 2);
    }

    #[test]
    fn invariant_violations() {
        let bad = [
            case("c1", Label::Inconclusive, Completeness::Complete, &[]),
            case("c2", Label::Eligible, Completeness::Missing1, &["x"]),
            case("c3", Label::Inconclusive, Completeness::Missing2, &["x"]),
            case("c4", Label::Yes, Completeness::Complete, &[]),
            case("c5", Label::Eligible, Completeness::Complete, &["x"]),
        ];
        for c in bad {
            let id = c.id.clone();
            match Dataset::from_cases(vec![c]) {
                Err(DatasetError::InvariantViolation { case_id, .. }) => assert_eq!(case_id, id),
                other => panic!("{id}: expected violation, got {other:?}"),
            }
        }
        let mut empty = case("c6", Label::Eligible, Completeness::Complete, &[]);
        empty.narrative = "   ".into();
        assert!(Dataset::from_cases(vec![empty]).is_err());
        let dup = vec![
            case("d", Label::Eligible, Completeness::Complete, &[]),
            case("d", Label::Eligible, Completeness::Complete, &[]),
        ];
        assert!(Dataset::from_cases(dup).is_err());
    }

    #[test]
    fn label_compatibility() {
        use QuestionType::*;
        assert!(Label::Yes.is_compatible_with(DirectQuestion));
        assert!(!Label::Yes.is_compatible_with(EligibilityDetermination));
        assert!(!Label::Eligible.is_compatible_with(DirectQuestion));
        assert!(Label::Inconclusive.is_compatible_with(DirectQuestion));
        assert_eq!(Label::allowed_for(DirectQuestion), vec![Label::Yes, Label::No, Label::Inconclusive]);
        assert_eq!("Ineligible".parse::<Label>().unwrap(), Label::Ineligible);
    }

    #[test]
    fn malformed_json_and_unknown_meta_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        fs::write(&p, "{not json").unwrap();
        assert!(matches!(load_dataset(&p), Err(DatasetError::MalformedDataset { .. })));
        fs::write(
            &p,
            r#"[{"id":"a","narrative":"n","question_type":"direct","_meta":{"gold_label":"yes","completeness":"complete","withheld_facts":[],"hint":1}}]"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(&p), Err(DatasetError::MalformedDataset { .. })));
    }

    #[test]
    fn empty_dataset_splits_to_empty_map() {
        let ds = Dataset::from_cases(vec![]).unwrap();
        assert!(split_by_completeness(&ds).is_empty());
    }

    #[test]
    fn redacted_view_has_no_meta() {
        let c = case("a", Label::Inconclusive, Completeness::Missing1, &["secret fact"]);
        let json = serde_json::to_string(&c.redacted()).unwrap();
        assert!(!json.contains("secret fact"));
        assert!(!json.contains("_meta"));
        assert!(!json.contains("gold_label"));
    }
}
