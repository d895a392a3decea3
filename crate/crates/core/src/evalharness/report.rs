use std::fmt::Write as _;

use super::metrics::DeferralOutcome;
use super::{ErrorKind, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    MarkdownTable,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::MarkdownTable => "md",
            ReportFormat::Csv => "csv",
        }
    }
}

fn two_dp(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Every scalar metric in a report, in a fixed order. Undefined accuracies
/// appear as `None`.
pub fn metric_rows(report: &MetricsReport) -> Vec<(String, Option<f64>)> {
    let mut rows = vec![
        ("n_total".to_string(), Some(report.n_total as f64)),
        ("n_complete".to_string(), Some(report.n_complete as f64)),
        ("n_inconclusive".to_string(), Some(report.n_inconclusive as f64)),
        ("accuracy_all".to_string(), Some(report.accuracy_all)),
        ("accuracy_complete".to_string(), report.accuracy_complete),
        ("accuracy_inconclusive".to_string(), report.accuracy_inconclusive),
    ];
    for (level, acc) in &report.accuracy_by_missing_k {
        rows.push((format!("accuracy_{}", level.replace('-', "_")), Some(*acc)));
    }
    for (kind, count) in &report.error_breakdown {
        if *kind != ErrorKind::None {
            rows.push((format!("errors_{}", kind.as_str()), Some(*count as f64)));
        }
    }
    for outcome in DeferralOutcome::ALL {
        if let Some(rate) = report.inconclusive_errors.rate(outcome) {
            rows.push((format!("inconclusive_{}_rate", outcome.as_str()), Some(rate)));
        }
    }
    rows
}

fn row_name(report: &MetricsReport) -> String {
    match (&report.mode, &report.backend) {
        (Some(m), Some(b)) => format!("{m} ({b})"),
        (Some(m), None) => m.clone(),
        _ => "run".into(),
    }
}

fn markdown(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("| Run | All Cases | Complete | Inconclusive |\n");
    out.push_str("|---|---|---|---|\n");
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} |",
        row_name(report),
        two_dp(Some(report.accuracy_all)),
        two_dp(report.accuracy_complete),
        two_dp(report.accuracy_inconclusive)
    );
    let _ = writeln!(
        out,
        "\nCases: {} ({} complete, {} inconclusive)",
        report.n_total, report.n_complete, report.n_inconclusive
    );
    if !report.accuracy_by_missing_k.is_empty() {
        out.push_str("\n| Completeness | Accuracy |\n|---|---|\n");
        for (level, acc) in &report.accuracy_by_missing_k {
            let _ = writeln!(out, "| {level} | {} |", two_dp(Some(*acc)));
        }
    }
    if report.inconclusive_errors.n_inconclusive > 0 {
        out.push_str("\n| Inconclusive-case outcome | Count | Rate |\n|---|---|---|\n");
        for outcome in DeferralOutcome::ALL {
            let count = report.inconclusive_errors.counts.get(&outcome).copied().unwrap_or(0);
            let _ = writeln!(
                out,
                "| {} | {count} | {} |",
                outcome.as_str(),
                two_dp(report.inconclusive_errors.rate(outcome))
            );
        }
    }
    if !report.ci_95.is_empty() {
        out.push_str("\n| Metric | 95% CI |\n|---|---|\n");
        for (name, (lo, hi)) in &report.ci_95 {
            let _ = writeln!(out, "| {name} | [{lo:.2}, {hi:.2}] |");
        }
    }
    out
}

fn csv(report: &MetricsReport) -> String {
    let mut out = String::from("metric,value,ci_lower,ci_upper\n");
    for (name, value) in metric_rows(report) {
        let (lo, hi) = report
            .ci_95
            .get(&name)
            .map(|(l, h)| (l.to_string(), h.to_string()))
            .unwrap_or_default();
        let value = value.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{name},{value},{lo},{hi}");
    }
    out
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::MarkdownTable => markdown(report),
        ReportFormat::Csv => csv(report),
    }
}

/// One row per configuration, accuracies to two decimals.
pub fn emit_ablation_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("| Configuration | All Cases | Complete | Inconclusive |\n|---|---|---|---|\n");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "| {name} | {} | {} | {} |",
            two_dp(Some(r.accuracy_all)),
            two_dp(r.accuracy_complete),
            two_dp(r.accuracy_inconclusive)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casefile::{Completeness, Label};
    use crate::evalharness::{aggregate_metrics, Prediction, ScoredResult};

    fn report() -> MetricsReport {
        let rs = vec![
            ScoredResult::new("a", Prediction::Eligible, Label::Eligible, Completeness::Complete),
            ScoredResult::new("b", Prediction::Ineligible, Label::Inconclusive, Completeness::Missing1),
            ScoredResult::new("c", Prediction::Inconclusive, Label::Inconclusive, Completeness::Missing3),
        ];
        aggregate_metrics(&rs).unwrap().with_confidence_intervals(&rs, 200, 3).unwrap()
    }

    #[test]
    fn markdown_has_table_header() {
        let md = emit_report(&report(), ReportFormat::MarkdownTable);
        assert!(md.contains("All Cases | Complete | Inconclusive"));
        assert!(md.contains("| run | 0.67 | 1.00 | 0.50 |"), "{md}");
    }

    #[test]
    fn json_round_trips() {
        let r = report();
        let back: MetricsReport = serde_json::from_str(&emit_report(&r, ReportFormat::Json)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_has_one_row_per_metric() {
        let r = report();
        let csv = emit_report(&r, ReportFormat::Csv);
        assert_eq!(csv.lines().count() - 1, metric_rows(&r).len());
        assert!(csv.lines().any(|l| l.starts_with("accuracy_all,") && l.split(',').nth(2).unwrap() != ""));
    }

    #[test]
    fn ablation_header() {
        let t = emit_ablation_table(&[("Full pipeline".into(), report())]);
        assert!(t.starts_with("| Configuration | All Cases | Complete | Inconclusive |"));
        assert_eq!(t.lines().count(), 3);
    }
}
