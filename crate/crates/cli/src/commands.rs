//! The `adjudicate`, `evaluate`, and `ablate` commands. Each returns a value
//! the binary turns into output and an exit code, so tests can drive them
//! directly.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use factgate_core::backend::{build_backend, ChatBackend};
use factgate_core::casefile::load_dataset;
use factgate_core::corpus::load_corpus;
use factgate_core::evalharness::{aggregate_metrics, emit_ablation_table, emit_report, MetricsReport, ReportFormat, ScoredResult};
use factgate_core::pipeline::{run_pipeline, PipelineRun};
use factgate_core::runner::{evaluate_dataset, Evaluation};
use factgate_core::{CaseView, Corpus, Dataset, Label, PipelineMode, QuestionType};
use serde::Serialize;

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
/// More than [`MAX_ERROR_RATE`] of an evaluation's cases failed.
pub const EXIT_TOO_MANY_FAILURES: u8 = 2;
pub const EXIT_INCONCLUSIVE: u8 = 10;

pub const MAX_ERROR_RATE: f64 = 0.10;

/// Loaded corpus, dataset, and backend for one configuration.
pub struct Workspace {
    pub config: RunConfig,
    pub corpus: Arc<Corpus>,
    pub dataset: Option<Arc<Dataset>>,
    pub backend: Arc<dyn ChatBackend>,
}

impl Workspace {
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let corpus = Arc::new(
            load_corpus(&config.corpus_path)
                .with_context(|| format!("loading corpus from {}", config.corpus_path.display()))?,
        );
        let dataset = match &config.dataset_path {
            Some(p) => Some(Arc::new(
                load_dataset(p).with_context(|| format!("loading dataset from {}", p.display()))?,
            )),
            None => None,
        };
        let backend = build_backend(&config.backend, &corpus, dataset.as_ref()).context("building backend")?;
        Ok(Self {
            config,
            corpus,
            dataset,
            backend,
        })
    }

    pub fn dataset(&self) -> Result<&Arc<Dataset>> {
        self.dataset
            .as_ref()
            .context("this command needs `dataset_path` in the config")
    }

    fn backend_label(&self) -> String {
        file_safe(&self.config.backend.label())
    }
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub enum CaseInput {
    DatasetCase(String),
    AdHoc {
        narrative: String,
        question_type: QuestionType,
    },
}

pub struct Adjudication {
    pub run: PipelineRun,
    pub trace_path: PathBuf,
}

impl Adjudication {
    pub fn exit_code(&self) -> u8 {
        match self.run.determination() {
            Some(d) if d.label == Label::Inconclusive => EXIT_INCONCLUSIVE,
            Some(_) => EXIT_OK,
            None => EXIT_ERROR,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        match &self.run.outcome {
            Ok(d) => {
                let _ = writeln!(out, "determination: {}", d.label.as_str());
                for id in &d.cited_passage_ids {
                    let _ = writeln!(out, "cited: {id}");
                }
                for line in &d.missing_information {
                    let _ = writeln!(out, "needed: {line}");
                }
            }
            Err(e) => {
                let _ = writeln!(out, "error: {e}");
            }
        }
        let _ = writeln!(out, "trace: {}", self.trace_path.display());
        out
    }
}

pub fn adjudicate(ws: &Workspace, input: CaseInput) -> Result<Adjudication> {
    let view = match input {
        CaseInput::DatasetCase(id) => ws
            .dataset()?
            .get(&id)
            .with_context(|| format!("unknown case id {id:?}"))?
            .redacted(),
        CaseInput::AdHoc {
            narrative,
            question_type,
        } => {
            if narrative.trim().is_empty() {
                bail!("narrative must be non-empty");
            }
            CaseView {
                id: "adhoc".into(),
                narrative,
                question_type,
            }
        }
    };
    let run = run_pipeline(
        &view,
        &ws.corpus,
        ws.config.mode,
        ws.backend.as_ref(),
        &ws.config.pipeline_options(),
    );
    let trace_path = run
        .trace
        .write_to_dir(&ws.config.output_dir.join("traces"))
        .context("writing trace")?;
    Ok(Adjudication { run, trace_path })
}

#[derive(Serialize)]
struct ResultRow<'a> {
    #[serde(flatten)]
    result: &'a ScoredResult,
    trace_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub struct EvaluationOutput {
    pub evaluation: Evaluation,
    pub report: MetricsReport,
    /// `<mode>-<backend>-<dataset hash prefix>`; prefixes every output file.
    pub stem: String,
    pub files: Vec<PathBuf>,
}

impl EvaluationOutput {
    pub fn exit_code(&self) -> u8 {
        if self.evaluation.error_rate() > MAX_ERROR_RATE {
            EXIT_TOO_MANY_FAILURES
        } else {
            EXIT_OK
        }
    }
}

fn write(path: PathBuf, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    files.push(path);
    Ok(())
}

/// Runs the whole dataset through `mode` and writes traces, per-case
/// results, and the report in JSON, Markdown, and CSV.
pub fn evaluate(ws: &Workspace, mode: PipelineMode) -> Result<EvaluationOutput> {
    let dataset = ws.dataset()?;
    let config = &ws.config;
    let evaluation = evaluate_dataset(
        dataset,
        &ws.corpus,
        mode,
        ws.backend.as_ref(),
        &config.pipeline_options(),
        config.workers,
    )?;
    let hash = dataset.content_hash();
    let stem = format!("{}-{}-{}", mode.as_str(), ws.backend_label(), &hash[..12.min(hash.len())]);
    let results = evaluation.results();
    let report = aggregate_metrics(&results)?
        .with_confidence_intervals(&results, config.bootstrap_resamples, config.seed)?
        .with_provenance(mode.as_str(), config.backend.label(), hash.clone());

    let out = &config.output_dir;
    let trace_dir = out.join("traces").join(&stem);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    for case in &evaluation.cases {
        case.run.trace.write_to_dir(&trace_dir).context("writing trace")?;
    }
    let rows: Vec<ResultRow> = evaluation
        .cases
        .iter()
        .map(|c| ResultRow {
            result: &c.result,
            trace_id: &c.run.trace.trace_id,
            error: c.run.outcome.as_ref().err().map(|e| e.to_string()),
        })
        .collect();
    write(
        out.join(format!("{stem}.results.json")),
        &serde_json::to_string_pretty(&rows)?,
        &mut files,
    )?;
    for format in [ReportFormat::Json, ReportFormat::MarkdownTable, ReportFormat::Csv] {
        write(
            out.join(format!("{stem}.report.{}", format.extension())),
            &emit_report(&report, format),
            &mut files,
        )?;
    }
    tracing::info!(%stem, accuracy = report.accuracy_all, errors = evaluation.error_count(), "evaluation finished");
    Ok(EvaluationOutput {
        evaluation,
        report,
        stem,
        files,
    })
}

pub struct AblationOutput {
    pub runs: Vec<EvaluationOutput>,
    pub table: String,
    pub table_path: PathBuf,
}

impl AblationOutput {
    pub fn exit_code(&self) -> u8 {
        self.runs.iter().map(EvaluationOutput::exit_code).max().unwrap_or(EXIT_OK)
    }
}

/// Evaluates every mode and writes the comparison table.
pub fn ablate(ws: &Workspace) -> Result<AblationOutput> {
    let mut runs = Vec::new();
    for mode in PipelineMode::ALL {
        runs.push(evaluate(ws, mode)?);
    }
    let rows: Vec<(String, MetricsReport)> = runs
        .iter()
        .map(|r| (r.evaluation.mode.display_name().to_string(), r.report.clone()))
        .collect();
    let table = emit_ablation_table(&rows);
    let hash = ws.dataset()?.content_hash();
    let table_path = ws
        .config
        .output_dir
        .join(format!("ablation-{}-{}.md", ws.backend_label(), &hash[..12.min(hash.len())]));
    std::fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    Ok(AblationOutput {
        runs,
        table,
        table_path,
    })
}
