use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use factgate::commands::{self, CaseInput, Workspace, EXIT_ERROR};
use factgate::config::{Overrides, RunConfig};
use factgate::server::{self, AppState};
use factgate_core::{PipelineMode, QuestionType};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "factgate", version, about = "Checklist-driven legal adjudication that abstains when facts are missing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PipelineMode>,
    /// `rules:<issue map>`, `script:<script file>`, or a backend config file.
    #[arg(long)]
    backend: Option<String>,
    /// Bootstrap seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Adjudicate one case from the dataset or a free narrative.
    Adjudicate {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "narrative", required_unless_present = "narrative")]
        case_id: Option<String>,
        #[arg(long, requires = "question_type")]
        narrative: Option<String>,
        #[arg(long, value_parser = parse_question_type)]
        question_type: Option<QuestionType>,
    },
    /// Evaluate the whole dataset in one mode.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the dataset in every mode and write the comparison table.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Serve the session API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

fn parse_mode(s: &str) -> Result<PipelineMode, String> {
    s.parse()
}

fn parse_question_type(s: &str) -> Result<QuestionType, String> {
    match s {
        "eligibility" => Ok(QuestionType::EligibilityDetermination),
        "direct" => Ok(QuestionType::DirectQuestion),
        other => Err(format!("unknown question type {other:?}; use eligibility or direct")),
    }
}

fn workspace(common: Common) -> Result<Workspace> {
    let mut config = RunConfig::load(&common.config)?;
    config.apply(&Overrides {
        mode: common.mode,
        backend: common.backend,
        seed: common.seed,
        workers: common.workers,
        output_dir: common.out,
    })?;
    Workspace::open(config)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Adjudicate {
            common,
            case_id,
            narrative,
            question_type,
        } => {
            let ws = workspace(common)?;
            let input = match (case_id, narrative, question_type) {
                (Some(id), _, _) => CaseInput::DatasetCase(id),
                (None, Some(narrative), Some(question_type)) => CaseInput::AdHoc {
                    narrative,
                    question_type,
                },
                _ => unreachable!("clap enforces the argument groups"),
            };
            let result = commands::adjudicate(&ws, input)?;
            print!("{}", result.render());
            Ok(result.exit_code())
        }
        Command::Evaluate { common } => {
            let ws = workspace(common)?;
            let out = commands::evaluate(&ws, ws.config.mode)?;
            print!(
                "{}",
                factgate_core::evalharness::emit_report(&out.report, factgate_core::evalharness::ReportFormat::MarkdownTable)
            );
            println!("failed cases: {}/{}", out.evaluation.error_count(), out.evaluation.cases.len());
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(out.exit_code())
        }
        Command::Ablate { common } => {
            let ws = workspace(common)?;
            let out = commands::ablate(&ws)?;
            print!("{}", out.table);
            println!("wrote {}", out.table_path.display());
            Ok(out.exit_code())
        }
        Command::Serve { common, bind } => {
            let ws = workspace(common)?;
            let state = AppState::new(
                ws.corpus.clone(),
                ws.dataset.clone(),
                ws.backend.clone(),
                ws.config.mode,
                ws.config.pipeline_options(),
            )
            .with_trace_dir(ws.config.output_dir.join("traces").join("sessions"))
            .with_workers(ws.config.workers);
            let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                tracing::info!(address = %listener.local_addr()?, "listening");
                server::serve(Arc::new(state), listener).await?;
                Ok::<_, anyhow::Error>(())
            })?;
            Ok(commands::EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
