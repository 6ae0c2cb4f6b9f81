//! Linear span scorer used by the built-in backend.
//!
//! A candidate answer is a run of at most [`MAX_SPAN_TOKENS`] tokens inside
//! one of the [`TOP_SENTENCES`] context sentences that share the most
//! idf-weighted vocabulary with the question. Each span is scored by a dot
//! product over four features:
//!
//! | feature            | value                                                        |
//! |--------------------|--------------------------------------------------------------|
//! | `span_overlap`     | sum of idf over distinct span terms that occur in the question |
//! | `sentence_overlap` | the same sum over the sentence holding the span start        |
//! | `span_length`      | span length in tokens                                        |
//! | `start_position`   | start token index divided by the context length in tokens    |
//!
//! The highest score wins; ties go to the earliest start, then the shortest
//! span. Training minimizes a logistic loss with gold spans as positives and
//! [`NEGATIVES_PER_EXAMPLE`] sampled candidates as negatives.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainerError};
use crate::dataset::{answer_byte_range, Answer, QaDataset, TextCorpus};
use crate::sampling::{derive_seed, partial_shuffle, rng_from_seed};
use crate::text::{self, Token};

pub const FEATURE_NAMES: [&str; 4] = ["span_overlap", "sentence_overlap", "span_length", "start_position"];
pub const N_FEATURES: usize = FEATURE_NAMES.len();
pub const MAX_SPAN_TOKENS: usize = 20;
pub const TOP_SENTENCES: usize = 3;
pub const NEGATIVES_PER_EXAMPLE: usize = 10;

pub type Features = [f64; N_FEATURES];

/// Token range `[start, end)` over a tokenized context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScorerModel {
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
    pub idf_table: BTreeMap<String, f64>,
    /// Weight of terms missing from `idf_table`.
    pub default_idf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean example loss over the whole training multiset after each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub examples: usize,
}

/// A tokenized context with per-token question weights.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tokens: Vec<Token>,
    /// idf of the token if its term occurs in the question, else 0.
    question_weight: Vec<f64>,
    sentence_of: Vec<usize>,
    /// Token ranges of sentences.
    sentences: Vec<(usize, usize)>,
    sentence_overlap: Vec<f64>,
}

impl Prepared {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn sentences(&self) -> &[(usize, usize)] {
        &self.sentences
    }

    /// Byte range in the context covered by `span`.
    pub fn byte_range(&self, span: TokenSpan) -> (usize, usize) {
        (self.tokens[span.start].start, self.tokens[span.end - 1].end)
    }

    fn check(&self, span: TokenSpan) -> Result<(), TrainerError> {
        if span.is_empty() || span.end > self.tokens.len() {
            return Err(TrainerError::SpanOutOfBounds {
                start: span.start,
                end: span.end,
                len: self.tokens.len(),
            });
        }
        Ok(())
    }

    fn span_overlap(&self, span: TokenSpan) -> f64 {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut sum = 0.0;
        for i in span.start..span.end {
            if self.question_weight[i] > 0.0 && seen.insert(&self.tokens[i].norm) {
                sum += self.question_weight[i];
            }
        }
        sum
    }

    /// Feature vector of a span already checked to be in bounds.
    pub fn features(&self, span: TokenSpan) -> Features {
        self.features_with_overlap(span, self.span_overlap(span))
    }

    fn features_with_overlap(&self, span: TokenSpan, overlap: f64) -> Features {
        [
            overlap,
            self.sentence_overlap[self.sentence_of[span.start]],
            span.len() as f64,
            span.start as f64 / self.tokens.len() as f64,
        ]
    }

    /// Sentences holding candidates, in context order.
    fn top_sentences(&self) -> Vec<usize> {
        let mut ranked: Vec<usize> = (0..self.sentences.len()).collect();
        ranked.sort_by(|&a, &b| {
            self.sentence_overlap[b]
                .total_cmp(&self.sentence_overlap[a])
                .then(a.cmp(&b))
        });
        ranked.truncate(TOP_SENTENCES);
        ranked.sort_unstable();
        ranked
    }

    /// All candidate spans ordered by start, then length.
    pub fn candidates(&self) -> Vec<TokenSpan> {
        let mut out = Vec::new();
        for s in self.top_sentences() {
            let (lo, hi) = self.sentences[s];
            for start in lo..hi {
                for end in start + 1..=(start + MAX_SPAN_TOKENS).min(hi) {
                    out.push(TokenSpan { start, end });
                }
            }
        }
        out
    }

    /// Token spans covering each gold answer that survives truncation, deduplicated.
    pub fn gold_spans(&self, context: &str, answers: &[Answer]) -> Vec<TokenSpan> {
        let mut spans = Vec::new();
        for a in answers {
            let Some((bs, be)) = answer_byte_range(context, a) else { continue };
            let mut covered = self
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.end > bs && t.start < be)
                .map(|(i, _)| i);
            if let Some(first) = covered.next() {
                let last = covered.next_back().unwrap_or(first);
                let span = TokenSpan::new(first, last + 1);
                if !spans.contains(&span) {
                    spans.push(span);
                }
            }
        }
        spans
    }
}

fn dot(w: &[f64], x: &Features) -> f64 {
    w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3] * x[3]
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Training view of one example occurrence.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub positives: Vec<Features>,
    pub negatives: Vec<Features>,
}

impl TrainItem {
    /// Mean positive log-loss plus mean negative log-loss.
    pub fn loss(&self, w: &[f64]) -> f64 {
        let mut l = 0.0;
        if !self.positives.is_empty() {
            l += self.positives.iter().map(|x| softplus(-dot(w, x))).sum::<f64>() / self.positives.len() as f64;
        }
        if !self.negatives.is_empty() {
            l += self.negatives.iter().map(|x| softplus(dot(w, x))).sum::<f64>() / self.negatives.len() as f64;
        }
        l
    }

    pub fn add_gradient(&self, w: &[f64], grad: &mut [f64; N_FEATURES]) {
        if !self.positives.is_empty() {
            let scale = 1.0 / self.positives.len() as f64;
            for x in &self.positives {
                let g = -sigmoid(-dot(w, x)) * scale;
                for (gj, xj) in grad.iter_mut().zip(x) {
                    *gj += g * xj;
                }
            }
        }
        if !self.negatives.is_empty() {
            let scale = 1.0 / self.negatives.len() as f64;
            for x in &self.negatives {
                let g = sigmoid(dot(w, x)) * scale;
                for (gj, xj) in grad.iter_mut().zip(x) {
                    *gj += g * xj;
                }
            }
        }
    }
}

impl Default for SpanScorerModel {
    fn default() -> Self {
        Self::untrained()
    }
}

impl SpanScorerModel {
    /// Zero weights and uniform term weights: predictions fall back to the tie-break.
    pub fn untrained() -> Self {
        SpanScorerModel {
            weights: vec![0.0; N_FEATURES],
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            idf_table: BTreeMap::new(),
            default_idf: 1.0,
        }
    }

    pub fn with_weights(mut self, weights: Features) -> Self {
        self.weights = weights.to_vec();
        self
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf_table.get(term).copied().unwrap_or(self.default_idf)
    }

    /// Domain adaptation: `idf(t) = ln(N / df(t))` over the corpus documents.
    /// Terms absent from the corpus get `ln(N)`, as if seen once.
    pub fn fit_idf(&mut self, corpus: &TextCorpus) {
        let n = corpus.documents.len();
        if n == 0 {
            return;
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in &corpus.documents {
            let terms: HashSet<String> = text::words(&doc.text).map(str::to_lowercase).collect();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = n as f64;
        self.idf_table = df.into_iter().map(|(t, c)| (t, (n / c as f64).ln())).collect();
        self.default_idf = n.ln();
    }

    pub fn prepare(&self, question: &str, context: &str, max_tokens: usize) -> Prepared {
        let question_terms: HashSet<String> = text::words(question).map(str::to_lowercase).collect();
        let mut tokens = text::tokenize(context);
        tokens.truncate(max_tokens);
        let question_weight: Vec<f64> = tokens
            .iter()
            .map(|t| if question_terms.contains(&t.norm) { self.idf(&t.norm) } else { 0.0 })
            .collect();

        let mut sentences = Vec::new();
        let mut sentence_of = Vec::with_capacity(tokens.len());
        let mut lo = 0;
        for (i, t) in tokens.iter().enumerate() {
            sentence_of.push(sentences.len());
            if t.ends_sentence || i + 1 == tokens.len() {
                sentences.push((lo, i + 1));
                lo = i + 1;
            }
        }
        let mut p = Prepared {
            tokens,
            question_weight,
            sentence_of,
            sentence_overlap: Vec::new(),
            sentences,
        };
        p.sentence_overlap = p
            .sentences
            .iter()
            .map(|&(lo, hi)| p.span_overlap(TokenSpan::new(lo, hi)))
            .collect();
        p
    }

    /// Linear score of `span` (token indices over the full, untruncated context).
    pub fn score_span(&self, question: &str, context: &str, span: TokenSpan) -> Result<f64, TrainerError> {
        let p = self.prepare(question, context, usize::MAX);
        p.check(span)?;
        Ok(self.score_prepared(&p, span))
    }

    pub fn score_prepared(&self, p: &Prepared, span: TokenSpan) -> f64 {
        dot(&self.weights, &p.features(span))
    }

    /// Best candidate span, or `None` for a context without tokens.
    pub fn best_span(&self, p: &Prepared) -> Option<(TokenSpan, f64)> {
        let mut best: Option<(TokenSpan, f64)> = None;
        let mut seen: HashSet<&str> = HashSet::new();
        for s in p.top_sentences() {
            let (lo, hi) = p.sentences[s];
            for start in lo..hi {
                seen.clear();
                let mut overlap = 0.0;
                for end in start + 1..=(start + MAX_SPAN_TOKENS).min(hi) {
                    let i = end - 1;
                    if p.question_weight[i] > 0.0 && seen.insert(&p.tokens[i].norm) {
                        overlap += p.question_weight[i];
                    }
                    let span = TokenSpan { start, end };
                    let score = dot(&self.weights, &p.features_with_overlap(span, overlap));
                    // candidates arrive by start then length, so strict > keeps the tie-break
                    if best.is_none_or(|(_, b)| score > b) {
                        best = Some((span, score));
                    }
                }
            }
        }
        best
    }

    /// Answer text for one question: a substring of `context`.
    pub fn predict_answer<'c>(&self, question: &str, context: &'c str, max_tokens: usize) -> &'c str {
        let p = self.prepare(question, context, max_tokens);
        match self.best_span(&p) {
            Some((span, _)) => {
                let (a, b) = p.byte_range(span);
                &context[a..b]
            }
            None => "",
        }
    }

    /// Builds the per-occurrence training items; negatives are drawn once per call.
    pub fn training_items(&self, data: &QaDataset, cfg: &TrainConfig) -> Vec<TrainItem> {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &["negatives"]));
        data.iter_examples()
            .map(|ex| {
                let p = self.prepare(ex.question, ex.context, cfg.max_context_tokens);
                let golds = p.gold_spans(ex.context, ex.answers);
                let mut pool: Vec<TokenSpan> = p.candidates().into_iter().filter(|c| !golds.contains(c)).collect();
                let k = NEGATIVES_PER_EXAMPLE.min(pool.len());
                partial_shuffle(&mut pool, k, &mut rng);
                pool.truncate(k);
                TrainItem {
                    positives: golds.iter().map(|&s| p.features(s)).collect(),
                    negatives: pool.iter().map(|&s| p.features(s)).collect(),
                }
            })
            .collect()
    }

    pub fn mean_loss(&self, items: &[TrainItem]) -> f64 {
        if items.is_empty() {
            return 0.0;
        }
        items.iter().map(|it| it.loss(&self.weights)).sum::<f64>() / items.len() as f64
    }

    /// Mini-batch gradient descent over a per-epoch seeded shuffle of `data`.
    /// Every occurrence of a repeated example is its own training item.
    pub fn fit_qa(&mut self, data: &QaDataset, cfg: &TrainConfig) -> Result<TrainReport, TrainerError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(TrainerError::EmptyData);
        }
        let items = self.training_items(data, cfg);
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        let mut steps = 0;
        let mut order: Vec<usize> = (0..items.len()).collect();
        for epoch in 0..cfg.epochs {
            let n = order.len();
            partial_shuffle(
                &mut order,
                n,
                &mut rng_from_seed(derive_seed(cfg.seed, &["epoch", &epoch.to_string()])),
            );
            for batch in order.chunks(cfg.batch_size) {
                let mut grad = [0.0; N_FEATURES];
                for &i in batch {
                    items[i].add_gradient(&self.weights, &mut grad);
                }
                let scale = cfg.learning_rate / batch.len() as f64;
                for (w, g) in self.weights.iter_mut().zip(grad) {
                    *w -= scale * g;
                }
                steps += 1;
            }
            epoch_losses.push(self.mean_loss(&items));
        }
        Ok(TrainReport {
            epoch_losses,
            steps,
            examples: items.len(),
        })
    }
}
