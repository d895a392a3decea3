//! Requirement-checklist adjudication with explicit abstention.
//!
//! A case is adjudicated only when every requirement extracted from the
//! retrieved legal passages is satisfied by a quoted, stated fact. Otherwise
//! the pipeline returns `Inconclusive` together with the list of facts that
//! still need to be gathered.
//!
//! Modules:
//! - [`corpus`]: passage loading and BM25 retrieval over complete passages.
//! - [`casefile`]: case and dataset schema with completeness labels.
//! - [`backend`]: model backends, structured-output validation, test oracles.
//! - [`pipeline`]: planner, checklist / verification / supervision stages, gap gate.
//! - [`evalharness`]: scoring, metrics, bootstrap intervals, reports.
//! - [`runner`]: parallel evaluation of whole datasets.

pub mod backend;
pub mod casefile;
pub mod corpus;
pub mod evalharness;
pub mod pipeline;
pub mod runner;
pub mod text;

pub use casefile::{CaseFile, CaseView, Completeness, Dataset, Label, QuestionType};
pub use corpus::{Corpus, Passage, PassageKind, RetrievalResult};
pub use pipeline::{Determination, PipelineMode, PipelineTrace};
