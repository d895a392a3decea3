//! Scoring and metrics.
//!
//! A prediction is correct only when it equals the gold label, so an
//! Inconclusive answer on a complete case is as wrong as a determination on
//! an incomplete one. Errors are bucketed by direction.

mod bootstrap;
mod metrics;
mod report;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::casefile::{CaseFile, Completeness, Label};
use crate::pipeline::Determination;

pub use bootstrap::{bootstrap_ci, percentile, MetricSelector, DEFAULT_RESAMPLES};
pub use metrics::{aggregate_metrics, error_analysis, DeferralOutcome, ErrorBreakdown, MetricsReport, REPORT_SCHEMA_VERSION};
pub use report::{emit_ablation_table, emit_report, metric_rows, ReportFormat};

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("prediction is for case {prediction:?} but the case file is {case:?}")]
    IdMismatch { prediction: String, case: String },
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("n_resamples must be at least 1")]
    InvalidResamples,
    #[error("metric {0} is undefined on this result set")]
    UndefinedMetric(String),
}

/// A predicted label, or the marker for an answer that yielded none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Eligible,
    Ineligible,
    Yes,
    No,
    Inconclusive,
    Unparseable,
}

impl Prediction {
    pub fn label(self) -> Option<Label> {
        match self {
            Prediction::Eligible => Some(Label::Eligible),
            Prediction::Ineligible => Some(Label::Ineligible),
            Prediction::Yes => Some(Label::Yes),
            Prediction::No => Some(Label::No),
            Prediction::Inconclusive => Some(Label::Inconclusive),
            Prediction::Unparseable => None,
        }
    }
}

impl From<Label> for Prediction {
    fn from(label: Label) -> Self {
        match label {
            Label::Eligible => Prediction::Eligible,
            Label::Ineligible => Prediction::Ineligible,
            Label::Yes => Prediction::Yes,
            Label::No => Prediction::No,
            Label::Inconclusive => Prediction::Inconclusive,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label() {
            Some(l) => f.write_str(l.as_str()),
            None => f.write_str("unparseable"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    None,
    FalseDenial,
    FalseApproval,
    FalseDeferral,
    WrongDecision,
    Unparseable,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 6] = [
        ErrorKind::None,
        ErrorKind::FalseDenial,
        ErrorKind::FalseApproval,
        ErrorKind::FalseDeferral,
        ErrorKind::WrongDecision,
        ErrorKind::Unparseable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::None => "none",
            ErrorKind::FalseDenial => "false_denial",
            ErrorKind::FalseApproval => "false_approval",
            ErrorKind::FalseDeferral => "false_deferral",
            ErrorKind::WrongDecision => "wrong_decision",
            ErrorKind::Unparseable => "unparseable",
        }
    }

    pub fn classify(predicted: Prediction, gold: Label) -> Self {
        let Some(label) = predicted.label() else {
            return ErrorKind::Unparseable;
        };
        if label == gold {
            return ErrorKind::None;
        }
        match (gold, label) {
            (Label::Inconclusive, Label::Ineligible | Label::No) => ErrorKind::FalseDenial,
            (Label::Inconclusive, _) => ErrorKind::FalseApproval,
            (_, Label::Inconclusive) => ErrorKind::FalseDeferral,
            _ => ErrorKind::WrongDecision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredResult {
    pub case_id: String,
    pub predicted: Prediction,
    pub gold: Label,
    pub correct: bool,
    pub completeness: Completeness,
    pub error_kind: ErrorKind,
}

impl ScoredResult {
    pub fn new(case_id: impl Into<String>, predicted: Prediction, gold: Label, completeness: Completeness) -> Self {
        let error_kind = ErrorKind::classify(predicted, gold);
        Self {
            case_id: case_id.into(),
            predicted,
            gold,
            correct: error_kind == ErrorKind::None,
            completeness,
            error_kind,
        }
    }

    pub fn is_inconclusive_case(&self) -> bool {
        self.gold == Label::Inconclusive
    }
}

pub fn score_case(prediction: &Determination, case: &CaseFile) -> Result<ScoredResult, HarnessError> {
    score_prediction(&prediction.case_id, prediction.label.into(), case)
}

/// Scores a bare prediction; used for cases whose run failed.
pub fn score_prediction(case_id: &str, predicted: Prediction, case: &CaseFile) -> Result<ScoredResult, HarnessError> {
    if case_id != case.id {
        return Err(HarnessError::IdMismatch {
            prediction: case_id.to_string(),
            case: case.id.clone(),
        });
    }
    Ok(ScoredResult::new(
        &case.id,
        predicted,
        case.gold_label(),
        case.completeness(),
    ))
}
