//! Percentile bootstrap.
//!
//! Generator: `Xoshiro256PlusPlus` seeded with `seed_from_u64` (the seed is
//! expanded through SplitMix64). Each resample draws `n` indices in order;
//! an index is `(next_u64() as u128 * n as u128) >> 64`. Resamples run
//! sequentially from one stream. Resamples on which the metric is undefined
//! (no case of the relevant kind drawn) are dropped. The interval endpoints
//! are the 2.5th and 97.5th percentiles, linearly interpolated at
//! `p * (m - 1)` over the `m` sorted values.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{HarnessError, ScoredResult};
use crate::casefile::Completeness;

pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSelector {
    AccuracyAll,
    AccuracyComplete,
    AccuracyInconclusive,
    /// Accuracy on inconclusive cases with exactly k withheld facts.
    AccuracyMissing(usize),
}

impl MetricSelector {
    pub fn name(self) -> String {
        match self {
            MetricSelector::AccuracyAll => "accuracy_all".into(),
            MetricSelector::AccuracyComplete => "accuracy_complete".into(),
            MetricSelector::AccuracyInconclusive => "accuracy_inconclusive".into(),
            MetricSelector::AccuracyMissing(k) => format!("accuracy_missing_{k}"),
        }
    }

    fn includes(self, r: &ScoredResult) -> bool {
        match self {
            MetricSelector::AccuracyAll => true,
            MetricSelector::AccuracyComplete => !r.is_inconclusive_case(),
            MetricSelector::AccuracyInconclusive => r.is_inconclusive_case(),
            MetricSelector::AccuracyMissing(k) => {
                r.is_inconclusive_case() && Completeness::from_missing_count(k) == Some(r.completeness)
            }
        }
    }

    /// The metric over a (re)sampled set, if defined.
    pub fn evaluate<'a>(self, sample: impl IntoIterator<Item = &'a ScoredResult>) -> Option<f64> {
        let (mut n, mut correct) = (0usize, 0usize);
        for r in sample.into_iter().filter(|r| self.includes(r)) {
            n += 1;
            correct += usize::from(r.correct);
        }
        (n > 0).then(|| correct as f64 / n as f64)
    }
}

/// Linear-interpolation percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn bootstrap_ci(
    results: &[ScoredResult],
    metric: MetricSelector,
    n_resamples: usize,
    seed: u64,
) -> Result<(f64, f64), HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    if n_resamples == 0 {
        return Err(HarnessError::InvalidResamples);
    }
    let n = results.len();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        let drawn: Vec<&ScoredResult> = (0..n)
            .map(|_| &results[((rng.next_u64() as u128 * n as u128) >> 64) as usize])
            .collect();
        if let Some(v) = metric.evaluate(drawn) {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(HarnessError::UndefinedMetric(metric.name()));
    }
    values.sort_by(f64::total_cmp);
    Ok((percentile(&values, 0.025), percentile(&values, 0.975)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casefile::Label;
    use crate::evalharness::Prediction;

    fn correct(n: usize) -> Vec<ScoredResult> {
        (0..n)
            .map(|i| ScoredResult::new(format!("c{i}"), Prediction::Yes, Label::Yes, Completeness::Complete))
            .collect()
    }

    #[test]
    fn degenerate_all_correct() {
        assert_eq!(bootstrap_ci(&correct(12), MetricSelector::AccuracyAll, 1000, 42), Ok((1.0, 1.0)));
    }

    #[test]
    fn single_result_endpoints() {
        let one = vec![ScoredResult::new("x", Prediction::No, Label::Yes, Completeness::Complete)];
        let (lo, hi) = bootstrap_ci(&one, MetricSelector::AccuracyAll, 50, 7).unwrap();
        assert!(lo <= hi);
        assert!([0.0, 1.0].contains(&lo) && [0.0, 1.0].contains(&hi));
    }

    #[test]
    fn undefined_metric_and_bad_input() {
        assert_eq!(
            bootstrap_ci(&correct(3), MetricSelector::AccuracyInconclusive, 10, 1),
            Err(HarnessError::UndefinedMetric("accuracy_inconclusive".into()))
        );
        assert_eq!(bootstrap_ci(&[], MetricSelector::AccuracyAll, 10, 1), Err(HarnessError::EmptyResults));
        assert_eq!(bootstrap_ci(&correct(2), MetricSelector::AccuracyAll, 0, 1), Err(HarnessError::InvalidResamples));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert!((percentile(&v, 0.025) - 0.1).abs() < 1e-12);
        assert_eq!(percentile(&[5.0], 0.975), 5.0);
    }
}
