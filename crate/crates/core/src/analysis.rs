//! Corpus characterization: vocabulary overlap between two corpora and
//! token-length statistics of a QA dataset.

use std::cmp::Reverse;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{extract_corpus, QaDataset, TextCorpus};
use crate::text;

pub const DEFAULT_TOP_K: usize = 10_000;

/// Embedded English stopword list, one word per line.
pub const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("corpus {0:?} is empty")]
    EmptyCorpus(String),
    #[error("corpus {0:?} has no terms left after stopword removal")]
    EmptyVocabulary(String),
}

#[derive(Debug, Clone)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn english() -> Self {
        Self::from_list(ENGLISH_STOPWORDS)
    }

    /// Whitespace-separated words, lowercased.
    pub fn from_list(list: &str) -> Self {
        StopWords(list.split_whitespace().map(str::to_lowercase).collect())
    }

    pub fn none() -> Self {
        StopWords(HashSet::new())
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub top_k: usize,
    /// `100 * |top(A) ∩ top(B)| / min(|top(A)|, |top(B)|)`
    pub overlap_pct: f64,
    /// Distinct non-stopword terms in each corpus.
    pub vocab_a_size: usize,
    pub vocab_b_size: usize,
    pub top_a_size: usize,
    pub top_b_size: usize,
    pub shared: usize,
}

fn term_counts(c: &TextCorpus, stopwords: &StopWords) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for doc in &c.documents {
        for w in text::words(&doc.text) {
            let w = w.to_lowercase();
            if !stopwords.contains(&w) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// The `top_k` most frequent non-stopword terms, frequency descending, ties
/// broken lexicographically.
pub fn top_terms(c: &TextCorpus, top_k: usize, stopwords: &StopWords) -> Vec<(String, usize)> {
    rank_terms(term_counts(c, stopwords), top_k)
}

fn rank_terms(counts: HashMap<String, usize>, top_k: usize) -> Vec<(String, usize)> {
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|(wa, ca), (wb, cb)| (Reverse(ca), wa).cmp(&(Reverse(cb), wb)));
    ranked.truncate(top_k);
    ranked
}

pub fn vocab_overlap(
    a: &TextCorpus,
    b: &TextCorpus,
    top_k: usize,
    stopwords: &StopWords,
) -> Result<OverlapReport, AnalysisError> {
    let name = |c: &TextCorpus| c.documents.first().map(|d| d.doc_id.clone()).unwrap_or_default();
    for c in [a, b] {
        if c.is_empty() {
            return Err(AnalysisError::EmptyCorpus(name(c)));
        }
    }
    let counts_a = term_counts(a, stopwords);
    let counts_b = term_counts(b, stopwords);
    let (vocab_a_size, vocab_b_size) = (counts_a.len(), counts_b.len());
    let top_a: HashSet<String> = rank_terms(counts_a, top_k).into_iter().map(|(w, _)| w).collect();
    let top_b: HashSet<String> = rank_terms(counts_b, top_k).into_iter().map(|(w, _)| w).collect();
    for (top, c) in [(&top_a, a), (&top_b, b)] {
        if top.is_empty() {
            return Err(AnalysisError::EmptyVocabulary(name(c)));
        }
    }
    let shared = top_a.intersection(&top_b).count();
    let denom = top_a.len().min(top_b.len());
    Ok(OverlapReport {
        top_k,
        overlap_pct: 100.0 * shared as f64 / denom as f64,
        vocab_a_size,
        vocab_b_size,
        top_a_size: top_a.len(),
        top_b_size: top_b.len(),
        shared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub avg_tokens_question: f64,
    /// Over the first gold answer of each QA entry.
    pub avg_tokens_answer: f64,
    /// Over distinct contexts.
    pub avg_tokens_document: f64,
    pub corpus_size_bytes: usize,
    pub n_examples: usize,
}

fn mean(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

pub fn token_stats(d: &QaDataset) -> CorpusStats {
    let (mut q_tokens, mut a_tokens, mut n) = (0, 0, 0);
    for ex in d.iter_examples() {
        n += 1;
        q_tokens += text::count_words(ex.question);
        a_tokens += ex.answers.first().map_or(0, |a| text::count_words(&a.text));
    }
    let corpus = extract_corpus(d);
    let doc_tokens: usize = corpus.documents.iter().map(|doc| text::count_words(&doc.text)).sum();
    CorpusStats {
        avg_tokens_question: mean(q_tokens, n),
        avg_tokens_answer: mean(a_tokens, n),
        avg_tokens_document: mean(doc_tokens, corpus.documents.len()),
        corpus_size_bytes: corpus.size_bytes,
        n_examples: n,
    }
}
