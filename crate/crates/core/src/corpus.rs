//! Legal reference corpus and lexical retrieval.
//!
//! Passages are stored whole. Retrieval scores whole passages with BM25
//! (k1 = 1.2, b = 0.75) and never returns a fragment of one.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum PassageKind {
    Statute,
    Regulation,
    Consideration,
    CaseLaw,
    Example,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Passage {
    pub id: String,
    pub kind: PassageKind,
    pub citation: String,
    pub title: String,
    pub text: String,
    pub source_doc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus file {path}{}: {message}", position.map(|p| format!(" (passage #{p})")).unwrap_or_default())]
    MalformedCorpus {
        path: PathBuf,
        position: Option<usize>,
        message: String,
    },
    #[error("duplicate passage id {id:?}")]
    DuplicatePassageId { id: String },
    #[error("query text is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
}

/// A single posting: which passage, and how often the term occurs in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Posting {
    pub passage_id: String,
    pub term_frequency: u32,
}

/// Term → postings, plus the length statistics BM25 needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
}

impl InvertedIndex {
    pub fn build(passages: &[Passage]) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(passages.len());
        for passage in passages {
            let tokens = tokenize(&index_text(passage));
            doc_lengths.push(tokens.len());
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    passage_id: passage.id.clone(),
                    term_frequency: tf,
                });
            }
        }
        let total: usize = doc_lengths.iter().sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        Self {
            postings,
            doc_lengths,
            avg_doc_length,
        }
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }
}

/// The text a passage is indexed under: citation, title and body.
pub fn index_text(passage: &Passage) -> String {
    format!("{} {} {}", passage.citation, passage.title, passage.text)
}

/// BM25 inverse document frequency, in the non-negative `ln(1 + ...)` form.
pub fn bm25_idf(n_docs: usize, doc_freq: usize) -> f64 {
    let n = n_docs as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Contribution of one term to one passage's score.
pub fn bm25_term_score(idf: f64, tf: u32, doc_len: usize, avg_len: f64) -> f64 {
    let tf = f64::from(tf);
    let norm = if avg_len > 0.0 {
        1.0 - BM25_B + BM25_B * doc_len as f64 / avg_len
    } else {
        1.0
    };
    idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    passages: Vec<Passage>,
    index: InvertedIndex,
}

impl Corpus {
    /// Builds a corpus from passages in order, rejecting empty text and
    /// duplicate ids.
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for p in &passages {
            if !seen.insert(p.id.as_str()) {
                return Err(CorpusError::DuplicatePassageId { id: p.id.clone() });
            }
        }
        let index = InvertedIndex::build(&passages);
        Ok(Self { passages, index })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn fetch(&self, id: &str) -> Option<&Passage> {
        self.passages.iter().find(|p| p.id == id)
    }

    /// Ranks every passage against `query_text` and returns the top `k`.
    ///
    /// Passages with a zero score still fill the list when fewer than `k`
    /// passages match, so the result always has `min(k, len)` entries.
    /// Ties are broken by ascending passage id.
    pub fn retrieve(&self, query_text: &str, k: usize) -> Result<Vec<RetrievalResult>, CorpusError> {
        if query_text.trim().is_empty() {
            return Err(CorpusError::EmptyQuery);
        }
        if k == 0 {
            return Err(CorpusError::InvalidK);
        }
        let query_terms: BTreeSet<String> = tokenize(query_text).into_iter().collect();
        let n_docs = self.passages.len();
        let position: BTreeMap<&str, usize> = self
            .passages
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.as_str(), i))
            .collect();

        let mut scores = vec![0.0f64; n_docs];
        for term in &query_terms {
            let postings = self.index.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = bm25_idf(n_docs, postings.len());
            for posting in postings {
                let i = position[posting.passage_id.as_str()];
                scores[i] += bm25_term_score(
                    idf,
                    posting.term_frequency,
                    self.index.doc_lengths[i],
                    self.index.avg_doc_length,
                );
            }
        }

        let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        ranked.sort_by(|(ia, sa), (ib, sb)| {
            sb.total_cmp(sa)
                .then_with(|| self.passages[*ia].id.cmp(&self.passages[*ib].id))
        });
        Ok(ranked
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(rank, (i, score))| RetrievalResult {
                passage_id: self.passages[i].id.clone(),
                score,
                rank: rank + 1,
            })
            .collect())
    }

    /// Retrieves and resolves results into owned passages, in rank order.
    pub fn retrieve_passages(&self, query_text: &str, k: usize) -> Result<(Vec<RetrievalResult>, Vec<Passage>), CorpusError> {
        let results = self.retrieve(query_text, k)?;
        let passages = results
            .iter()
            .map(|r| self.fetch(&r.passage_id).cloned().expect("retrieved id is in corpus"))
            .collect();
        Ok((results, passages))
    }
}

/// Loads a corpus from one JSON file or from every `*.json` file in a
/// directory (sorted by file name). Each file holds an array of passages.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut passages = Vec::new();
    for file in files {
        passages.extend(parse_corpus_file(&file)?);
    }
    Corpus::from_passages(passages)
}

fn parse_corpus_file(file: &Path) -> Result<Vec<Passage>, CorpusError> {
    let raw = fs::read_to_string(file).map_err(|source| CorpusError::Io {
        path: file.to_path_buf(),
        source,
    })?;
    let malformed = |position: Option<usize>, message: String| CorpusError::MalformedCorpus {
        path: file.to_path_buf(),
        position,
        message,
    };
    let values: Vec<serde_json::Value> =
        serde_json::from_str(&raw).map_err(|e| malformed(None, e.to_string()))?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let passage: Passage =
                serde_json::from_value(v).map_err(|e| malformed(Some(i), e.to_string()))?;
            if passage.text.trim().is_empty() {
                return Err(malformed(Some(i), format!("passage {:?} has empty text", passage.id)));
            }
            if passage.id.trim().is_empty() {
                return Err(malformed(Some(i), "passage id is empty".into()));
            }
            Ok(passage)
        })
        .collect()
}
