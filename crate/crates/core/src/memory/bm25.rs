//! Okapi BM25 over pre-tokenized documents.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

const DEFAULT_K1: f64 = 1.2;
const DEFAULT_B: f64 = 0.75;

/// Incremental BM25 index. Documents are added as token lists and referred
/// to by insertion order. Scores use
/// `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))` and the standard
/// length-normalized term frequency; repeated query tokens contribute once
/// per occurrence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    doc_terms: Vec<HashMap<String, u32>>,
    doc_lens: Vec<usize>,
    doc_freq: HashMap<String, u32>,
    total_len: usize,
}

impl Default for Bm25Index {
    fn default() -> Self {
        Self::new()
    }
}

impl Bm25Index {
    pub fn new() -> Self {
        Self::with_params(DEFAULT_K1, DEFAULT_B)
    }

    pub fn with_params(k1: f64, b: f64) -> Self {
        Self {
            k1,
            b,
            doc_terms: Vec::new(),
            doc_lens: Vec::new(),
            doc_freq: HashMap::new(),
            total_len: 0,
        }
    }

    /// Adds one document; returns its id.
    pub fn add(&mut self, tokens: &[String]) -> usize {
        let mut terms: HashMap<String, u32> = HashMap::new();
        for t in tokens {
            *terms.entry(t.clone()).or_insert(0) += 1;
        }
        for term in terms.keys() {
            *self.doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        self.total_len += tokens.len();
        self.doc_lens.push(tokens.len());
        self.doc_terms.push(terms);
        self.doc_terms.len() - 1
    }

    pub fn len(&self) -> usize {
        self.doc_terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_terms.is_empty()
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.doc_terms.len() as f64;
        let df = f64::from(self.doc_freq.get(term).copied().unwrap_or(0));
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of one document against the query tokens.
    pub fn score(&self, doc: usize, query_tokens: &[String]) -> f64 {
        if self.doc_terms.is_empty() {
            return 0.0;
        }
        let avg_len = self.total_len as f64 / self.doc_terms.len() as f64;
        let len_norm = if avg_len > 0.0 {
            self.k1 * (1.0 - self.b + self.b * self.doc_lens[doc] as f64 / avg_len)
        } else {
            self.k1
        };
        let mut total = 0.0;
        for term in query_tokens {
            let tf = f64::from(self.doc_terms[doc].get(term).copied().unwrap_or(0));
            if tf == 0.0 {
                continue;
            }
            total += self.idf(term) * (tf * (self.k1 + 1.0)) / (tf + len_norm);
        }
        total
    }

    /// Scores for every document, in document order.
    pub fn scores(&self, query_tokens: &[String]) -> Vec<f64> {
        (0..self.doc_terms.len())
            .map(|d| self.score(d, query_tokens))
            .collect()
    }

    /// The `k` best documents with strictly positive scores, best first.
    /// Ties keep insertion order.
    pub fn top_k(&self, query_tokens: &[String], k: usize) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self
            .scores(query_tokens)
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s > 0.0)
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        ranked.truncate(k);
        ranked
    }
}
