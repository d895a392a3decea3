use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, ErrorKind, HarnessError, MetricSelector, Prediction, ScoredResult};
use crate::casefile::Completeness;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Outcome of a gold-Inconclusive case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferralOutcome {
    FalseDenial,
    FalseApproval,
    CorrectDeferral,
    Unparseable,
}

impl DeferralOutcome {
    pub const ALL: [DeferralOutcome; 4] = [
        DeferralOutcome::FalseDenial,
        DeferralOutcome::FalseApproval,
        DeferralOutcome::CorrectDeferral,
        DeferralOutcome::Unparseable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DeferralOutcome::FalseDenial => "false_denial",
            DeferralOutcome::FalseApproval => "false_approval",
            DeferralOutcome::CorrectDeferral => "correct_deferral",
            DeferralOutcome::Unparseable => "unparseable",
        }
    }
}

/// How gold-Inconclusive cases were answered. Both maps are empty when
/// there are no such cases; otherwise the rates sum to 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub n_inconclusive: usize,
    pub counts: BTreeMap<DeferralOutcome, usize>,
    pub rates: BTreeMap<DeferralOutcome, f64>,
}

impl ErrorBreakdown {
    pub fn rate(&self, outcome: DeferralOutcome) -> Option<f64> {
        self.rates.get(&outcome).copied()
    }
}

pub fn error_analysis(results: &[ScoredResult]) -> ErrorBreakdown {
    let inconclusive: Vec<&ScoredResult> = results.iter().filter(|r| r.is_inconclusive_case()).collect();
    let n = inconclusive.len();
    if n == 0 {
        return ErrorBreakdown::default();
    }
    let mut counts: BTreeMap<DeferralOutcome, usize> = DeferralOutcome::ALL.into_iter().map(|o| (o, 0)).collect();
    for r in inconclusive {
        let outcome = match (r.error_kind, r.predicted) {
            (ErrorKind::FalseDenial, _) => DeferralOutcome::FalseDenial,
            (ErrorKind::FalseApproval, _) => DeferralOutcome::FalseApproval,
            (_, Prediction::Unparseable) => DeferralOutcome::Unparseable,
            _ => DeferralOutcome::CorrectDeferral,
        };
        *counts.get_mut(&outcome).expect("all outcomes present") += 1;
    }
    let rates = counts.iter().map(|(&o, &c)| (o, c as f64 / n as f64)).collect();
    ErrorBreakdown {
        n_inconclusive: n,
        counts,
        rates,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Pipeline mode the results came from, when known.
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub dataset_hash: Option<String>,
    pub n_total: usize,
    pub n_complete: usize,
    pub n_inconclusive: usize,
    pub correct_total: usize,
    pub correct_complete: usize,
    pub correct_inconclusive: usize,
    pub accuracy_all: f64,
    /// `None` when there are no complete cases.
    pub accuracy_complete: Option<f64>,
    /// `None` when there are no inconclusive cases.
    pub accuracy_inconclusive: Option<f64>,
    /// Keyed `missing-1` .. `missing-4`; only levels present in the results.
    pub accuracy_by_missing_k: BTreeMap<String, f64>,
    /// Count of every error kind over all results.
    pub error_breakdown: BTreeMap<ErrorKind, usize>,
    pub inconclusive_errors: ErrorBreakdown,
    #[serde(default)]
    pub ci_95: BTreeMap<String, (f64, f64)>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn aggregate_metrics(results: &[ScoredResult]) -> Result<MetricsReport, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let count = |pred: &dyn Fn(&ScoredResult) -> bool| results.iter().filter(|r| pred(r)).count();
    let n_complete = count(&|r| !r.is_inconclusive_case());
    let n_inconclusive = results.len() - n_complete;
    let correct_complete = count(&|r| !r.is_inconclusive_case() && r.correct);
    let correct_inconclusive = count(&|r| r.is_inconclusive_case() && r.correct);
    let correct_total = correct_complete + correct_inconclusive;

    let mut accuracy_by_missing_k = BTreeMap::new();
    for k in 1..=4 {
        let level = Completeness::from_missing_count(k).expect("1..=4 are valid");
        let at_level: Vec<&ScoredResult> = results
            .iter()
            .filter(|r| r.is_inconclusive_case() && r.completeness == level)
            .collect();
        if let Some(acc) = ratio(at_level.iter().filter(|r| r.correct).count(), at_level.len()) {
            accuracy_by_missing_k.insert(level.as_str().to_string(), acc);
        }
    }
    let mut error_breakdown: BTreeMap<ErrorKind, usize> = ErrorKind::ALL.into_iter().map(|k| (k, 0)).collect();
    for r in results {
        *error_breakdown.get_mut(&r.error_kind).expect("all kinds present") += 1;
    }
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode: None,
        backend: None,
        dataset_hash: None,
        n_total: results.len(),
        n_complete,
        n_inconclusive,
        correct_total,
        correct_complete,
        correct_inconclusive,
        accuracy_all: correct_total as f64 / results.len() as f64,
        accuracy_complete: ratio(correct_complete, n_complete),
        accuracy_inconclusive: ratio(correct_inconclusive, n_inconclusive),
        accuracy_by_missing_k,
        error_breakdown,
        inconclusive_errors: error_analysis(results),
        ci_95: BTreeMap::new(),
    })
}

impl MetricsReport {
    /// Adds bootstrap intervals for every accuracy that is defined.
    pub fn with_confidence_intervals(
        mut self,
        results: &[ScoredResult],
        n_resamples: usize,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        let mut selectors = vec![MetricSelector::AccuracyAll];
        if self.accuracy_complete.is_some() {
            selectors.push(MetricSelector::AccuracyComplete);
        }
        if self.accuracy_inconclusive.is_some() {
            selectors.push(MetricSelector::AccuracyInconclusive);
        }
        for s in selectors {
            let ci = bootstrap_ci(results, s, n_resamples, seed)?;
            self.ci_95.insert(s.name(), ci);
        }
        Ok(self)
    }

    pub fn with_provenance(mut self, mode: impl Into<String>, backend: impl Into<String>, dataset_hash: impl Into<String>) -> Self {
        self.mode = Some(mode.into());
        self.backend = Some(backend.into());
        self.dataset_hash = Some(dataset_hash.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casefile::Label;

    fn result(gold: Label, predicted: Prediction, completeness: Completeness) -> ScoredResult {
        ScoredResult::new("c", predicted, gold, completeness)
    }

    #[test]
    fn nine_complete_one_missed_inconclusive() {
        let mut rs: Vec<ScoredResult> = (0..9)
            .map(|_| result(Label::Eligible, Prediction::Eligible, Completeness::Complete))
            .collect();
        rs.push(result(Label::Inconclusive, Prediction::Eligible, Completeness::Missing1));
        let m = aggregate_metrics(&rs).unwrap();
        assert_eq!(m.accuracy_all, 0.9);
        assert_eq!(m.accuracy_complete, Some(1.0));
        assert_eq!(m.accuracy_inconclusive, Some(0.0));
        assert_eq!(m.accuracy_by_missing_k.get("missing-1"), Some(&0.0));
        assert_eq!(m.error_breakdown[&ErrorKind::FalseApproval], 1);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(aggregate_metrics(&[]).unwrap_err(), HarnessError::EmptyResults);
    }

    #[test]
    fn breakdown_rates() {
        let mut rs = Vec::new();
        for _ in 0..6 {
            rs.push(result(Label::Inconclusive, Prediction::Ineligible, Completeness::Missing2));
        }
        rs.push(result(Label::Inconclusive, Prediction::Eligible, Completeness::Missing2));
        for _ in 0..3 {
            rs.push(result(Label::Inconclusive, Prediction::Inconclusive, Completeness::Missing2));
        }
        rs.push(result(Label::Eligible, Prediction::Ineligible, Completeness::Complete));
        let b = error_analysis(&rs);
        assert_eq!(b.n_inconclusive, 10);
        assert_eq!(b.rate(DeferralOutcome::FalseDenial), Some(0.6));
        assert_eq!(b.rate(DeferralOutcome::FalseApproval), Some(0.1));
        assert_eq!(b.rate(DeferralOutcome::CorrectDeferral), Some(0.3));
        assert!(error_analysis(&rs[10..]).counts.is_empty());
    }
}
