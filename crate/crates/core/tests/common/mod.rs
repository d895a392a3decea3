#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use factgate_core::backend::{IssueMap, RuleOracle};
use factgate_core::casefile::load_dataset;
use factgate_core::corpus::load_corpus;
use factgate_core::{Corpus, Dataset};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn corpus() -> Arc<Corpus> {
    Arc::new(load_corpus(fixtures().join("corpus")).expect("fixture corpus loads"))
}

pub fn dataset() -> Arc<Dataset> {
    Arc::new(load_dataset(fixtures().join("dataset.json")).expect("fixture dataset loads"))
}

pub fn issue_map() -> IssueMap {
    IssueMap::load(fixtures().join("issue_map.json")).expect("issue map loads")
}

pub fn rule_oracle(corpus: &Arc<Corpus>, dataset: &Arc<Dataset>) -> RuleOracle {
    RuleOracle::new(corpus.clone(), dataset.clone(), issue_map())
}
