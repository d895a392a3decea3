use std::collections::BTreeSet;

use factgate_core::corpus::{Corpus, Passage, PassageKind};
use proptest::prelude::*;

const VOCAB: [&str; 12] = [
    "claimant", "employer", "test", "policy", "quit", "hazard", "late", "work", "written", "notice", "laboratory",
    "shift",
];

fn passage(i: usize, words: &[usize]) -> Passage {
    Passage {
        id: format!("p{i:02}"),
        kind: PassageKind::Statute,
        citation: String::new(),
        title: String::new(),
        text: words.iter().map(|&w| VOCAB[w]).collect::<Vec<_>>().join(" "),
        source_doc: "gen".into(),
    }
}

/// Exhaustive scorer written from the BM25 definition, independent of the
/// inverted index.
fn brute_force(passages: &[Passage], query: &str) -> Vec<(String, f64)> {
    let tok = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_lowercase).collect() };
    let docs: Vec<Vec<String>> = passages.iter().map(|p| tok(&p.text)).collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let terms: BTreeSet<String> = tok(query).into_iter().collect();
    let mut scored: Vec<(String, f64)> = passages
        .iter()
        .zip(&docs)
        .map(|(p, doc)| {
            let mut s = 0.0;
            for t in &terms {
                let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                let tf = doc.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = if avg > 0.0 { 0.25 + 0.75 * doc.len() as f64 / avg } else { 1.0 };
                s += idf * tf * 2.2 / (tf + 1.2 * norm);
            }
            (p.id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
    proptest::collection::vec(proptest::collection::vec(0..VOCAB.len(), 1..15), 1..20)
}

proptest! {
    #[test]
    fn top_k_matches_exhaustive_ranking(
        docs in corpus_strategy(),
        query in proptest::collection::vec(0..VOCAB.len(), 1..5),
        k in 1usize..25,
    ) {
        let passages: Vec<Passage> = docs.iter().enumerate().map(|(i, w)| passage(i, w)).collect();
        let corpus = Corpus::from_passages(passages.clone()).unwrap();
        let q = query.iter().map(|&w| VOCAB[w]).collect::<Vec<_>>().join(" ");
        let got = corpus.retrieve(&q, k).unwrap();
        let expected = brute_force(&passages, &q);
        prop_assert_eq!(got.len(), k.min(passages.len()));
        for (r, (id, score)) in got.iter().zip(&expected) {
            prop_assert_eq!(&r.passage_id, id);
            prop_assert!((r.score - score).abs() < 1e-9);
        }
        for (i, r) in got.iter().enumerate() {
            prop_assert_eq!(r.rank, i + 1);
        }
    }

    #[test]
    fn larger_k_extends_smaller_k(
        docs in corpus_strategy(),
        query in proptest::collection::vec(0..VOCAB.len(), 1..5),
        k in 1usize..10,
    ) {
        let passages: Vec<Passage> = docs.iter().enumerate().map(|(i, w)| passage(i, w)).collect();
        let corpus = Corpus::from_passages(passages).unwrap();
        let q = query.iter().map(|&w| VOCAB[w]).collect::<Vec<_>>().join(" ");
        let small = corpus.retrieve(&q, k).unwrap();
        let large = corpus.retrieve(&q, k + 3).unwrap();
        prop_assert_eq!(&large[..small.len()], &small[..]);
        for w in large.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }
}
