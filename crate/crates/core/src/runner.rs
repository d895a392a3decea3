//! Whole-dataset evaluation with a bounded worker pool. Results come back in
//! dataset order regardless of the worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::backend::ChatBackend;
use crate::casefile::Dataset;
use crate::corpus::Corpus;
use crate::evalharness::{score_case, score_prediction, HarnessError, Prediction, ScoredResult};
use crate::pipeline::{run_pipeline, PipelineError, PipelineMode, PipelineOptions, PipelineRun};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("workers must be at least 1")]
    InvalidWorkers,
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug)]
pub struct CaseRun {
    pub run: PipelineRun,
    pub result: ScoredResult,
}

impl CaseRun {
    /// The case ended in a pipeline error other than an answer without a label.
    pub fn is_error(&self) -> bool {
        matches!(&self.run.outcome, Err(e) if !matches!(e, PipelineError::UnparseableAnswer { .. }))
    }
}

#[derive(Debug)]
pub struct Evaluation {
    pub mode: PipelineMode,
    pub cases: Vec<CaseRun>,
}

impl Evaluation {
    pub fn results(&self) -> Vec<ScoredResult> {
        self.cases.iter().map(|c| c.result.clone()).collect()
    }

    pub fn error_count(&self) -> usize {
        self.cases.iter().filter(|c| c.is_error()).count()
    }

    /// Fraction of cases that ended in a pipeline error.
    pub fn error_rate(&self) -> f64 {
        if self.cases.is_empty() {
            0.0
        } else {
            self.error_count() as f64 / self.cases.len() as f64
        }
    }
}

/// Runs every case of `dataset` through `mode`. A failed case is scored as
/// unparseable and the run continues.
pub fn evaluate_dataset(
    dataset: &Dataset,
    corpus: &Corpus,
    mode: PipelineMode,
    backend: &dyn ChatBackend,
    options: &PipelineOptions,
    workers: usize,
) -> Result<Evaluation, RunnerError> {
    if workers == 0 {
        return Err(RunnerError::InvalidWorkers);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunnerError::Pool(e.to_string()))?;
    let cases = pool.install(|| {
        dataset
            .cases()
            .par_iter()
            .map(|case| {
                let view = case.redacted();
                let run = run_pipeline(&view, corpus, mode, backend, options);
                let result = match &run.outcome {
                    Ok(det) => score_case(det, case)?,
                    Err(_) => score_prediction(&case.id, Prediction::Unparseable, case)?,
                };
                tracing::debug!(case_id = %case.id, predicted = %result.predicted, "scored");
                Ok(CaseRun { run, result })
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    Ok(Evaluation { mode, cases })
}
