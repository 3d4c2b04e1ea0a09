//! Okapi BM25 over chunk terms.

use super::fusion::{by_score_desc, ScoredChunk};
use crate::corpus::{ChunkId, ChunkIndex};
use crate::tokenizer::Tokenizer;
use std::collections::HashMap;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Inverted index with document-frequency statistics for one [`ChunkIndex`].
#[derive(Debug, Clone)]
pub struct SparseIndex {
    postings: HashMap<String, Vec<(ChunkId, u32)>>,
    chunk_len: Vec<u32>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

pub fn build_sparse_index(index: &ChunkIndex, tokenizer: &dyn Tokenizer) -> SparseIndex {
    SparseIndex::build(index, tokenizer, BM25_K1, BM25_B)
}

impl SparseIndex {
    pub fn build(index: &ChunkIndex, tokenizer: &dyn Tokenizer, k1: f64, b: f64) -> Self {
        let mut postings: HashMap<String, Vec<(ChunkId, u32)>> = HashMap::new();
        let mut chunk_len = Vec::with_capacity(index.len());
        for chunk in index.chunks() {
            let terms = tokenizer.terms(&chunk.text);
            chunk_len.push(terms.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push((chunk.chunk_id, n));
            }
        }
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|(id, _)| *id);
        }
        let total: u64 = chunk_len.iter().map(|&l| u64::from(l)).sum();
        let avg_len = if chunk_len.is_empty() {
            0.0
        } else {
            total as f64 / chunk_len.len() as f64
        };
        Self {
            postings,
            chunk_len,
            avg_len,
            k1,
            b,
        }
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_len.len()
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.num_chunks() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every chunk sharing at least one term with the query.
    /// Repeated query terms contribute once per occurrence.
    pub fn score_all(&self, query_terms: &[String]) -> HashMap<ChunkId, f64> {
        let mut scores: HashMap<ChunkId, f64> = HashMap::new();
        for term in query_terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(list.len());
            for &(id, tf) in list {
                let tf = f64::from(tf);
                let dl = f64::from(self.chunk_len[id.index()]);
                let norm = self.k1 * (1.0 - self.b + self.b * dl / self.avg_len);
                *scores.entry(id).or_default() += idf * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }
}

/// Top `limit` chunks by BM25, positive scores only, descending.
pub fn score_sparse(handle: &SparseIndex, tokenizer: &dyn Tokenizer, query: &str, limit: usize) -> Vec<ScoredChunk> {
    let terms = tokenizer.terms(query);
    let mut hits: Vec<(f64, ChunkId)> = handle
        .score_all(&terms)
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(id, s)| (s, id))
        .collect();
    hits.sort_by(|a, b| by_score_desc(*a, *b));
    hits.truncate(limit);
    hits.into_iter().map(|(s, id)| ScoredChunk::raw(id, s)).collect()
}
