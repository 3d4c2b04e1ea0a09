//! Exact (BM25) and semantic (embedding) retrieval plus the assembled
//! retriever that fuses their normalized scores.

mod bm25;
mod dense;
mod fusion;

pub use bm25::{build_sparse_index, score_sparse, SparseIndex, BM25_B, BM25_K1};
pub use dense::{cosine, score_semantic, DenseIndex, EmbedError, EmbeddingProvider, HashingEmbedder, RemoteEmbedder};
pub use fusion::{
    fuse_and_rank, minmax_normalize, FusionWeights, InvalidWeights, RankedContext, RankedEntry, ScoredChunk,
};

use crate::corpus::{ChunkIndex, CorpusStore};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// Default number of candidates each strategy contributes before fusion.
pub const DEFAULT_FUSION_POOL: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embedding(#[from] EmbedError),
}

/// Parameters of one assembled retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub granularity: usize,
    pub top_k: usize,
    pub weights: FusionWeights,
    pub threshold: f64,
    pub fusion_pool: usize,
}

/// Retrieval structures for one granularity.
#[derive(Debug)]
pub struct IndexedLevel {
    pub chunks: Arc<ChunkIndex>,
    pub sparse: SparseIndex,
    pub dense: DenseIndex,
}

/// Result of an assembled retrieval.
#[derive(Debug, Clone)]
pub struct Retrieved {
    pub level: Arc<IndexedLevel>,
    pub ranked: RankedContext,
    /// Whether this call had to build the level (chunking plus retriever indexes).
    pub built: bool,
}

/// Owns the corpus and lazily builds per-granularity retrieval structures.
pub struct RetrievalEngine {
    store: Arc<CorpusStore>,
    embedder: Arc<dyn EmbeddingProvider>,
    levels: Mutex<BTreeMap<usize, Arc<IndexedLevel>>>,
    vector_dir: Option<PathBuf>,
}

impl RetrievalEngine {
    pub fn new(store: Arc<CorpusStore>, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            store,
            embedder,
            levels: Mutex::new(BTreeMap::new()),
            vector_dir: None,
        }
    }

    /// Reuse chunk embeddings persisted in `dir` when their provider matches.
    pub fn with_vector_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.vector_dir = Some(dir.into());
        self
    }

    pub fn store(&self) -> &Arc<CorpusStore> {
        &self.store
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    /// Returns the retrieval structures at `granularity` and whether they were built now.
    pub fn level(&self, granularity: usize) -> Result<(Arc<IndexedLevel>, bool), RetrievalError> {
        let mut levels = self.levels.lock().expect("level cache poisoned");
        if let Some(l) = levels.get(&granularity) {
            return Ok((Arc::clone(l), false));
        }
        let chunks = self.store.rescale_index(granularity);
        let sparse = build_sparse_index(&chunks, self.store.tokenizer().as_ref());
        let dense = match self.load_vectors(granularity, &chunks) {
            Some(d) => d,
            None => DenseIndex::build(&chunks, self.embedder.as_ref())?,
        };
        let level = Arc::new(IndexedLevel { chunks, sparse, dense });
        levels.insert(granularity, Arc::clone(&level));
        Ok((level, true))
    }

    fn load_vectors(&self, granularity: usize, chunks: &ChunkIndex) -> Option<DenseIndex> {
        let path = vector_path(self.vector_dir.as_ref()?, granularity);
        let dense = DenseIndex::read_from(&path).ok()?;
        (dense.provider_id() == self.embedder.id() && dense.len() == chunks.len()).then_some(dense)
    }

    /// Writes chunk embeddings of every built level into `dir`.
    pub fn persist_vectors(&self, dir: &Path) -> std::io::Result<()> {
        let levels: Vec<(usize, Arc<IndexedLevel>)> = self
            .levels
            .lock()
            .expect("level cache poisoned")
            .iter()
            .map(|(g, l)| (*g, Arc::clone(l)))
            .collect();
        for (g, l) in levels {
            l.dense.write_to(&vector_path(dir, g))?;
        }
        Ok(())
    }

    /// Sparse and dense top-`fusion_pool`, each min-max normalized, fused
    /// with the configured weights, thresholded and cut to `top_k`.
    pub fn retrieve(&self, query: &str, cfg: &RetrievalConfig) -> Result<Retrieved, RetrievalError> {
        let (level, built) = self.level(cfg.granularity)?;
        let tokenizer = self.store.tokenizer().as_ref();
        let exact = minmax_normalize(&score_sparse(&level.sparse, tokenizer, query, cfg.fusion_pool));
        let semantic = minmax_normalize(&score_semantic(
            self.embedder.as_ref(),
            &level.dense,
            query,
            cfg.fusion_pool,
        )?);
        let ranked = fuse_and_rank(&exact, &semantic, cfg.weights, cfg.threshold, cfg.top_k);
        Ok(Retrieved { level, ranked, built })
    }

    /// Dense-only top-`limit` retrieval.
    pub fn retrieve_semantic(
        &self,
        query: &str,
        granularity: usize,
        limit: usize,
    ) -> Result<(Arc<IndexedLevel>, Vec<ScoredChunk>, bool), RetrievalError> {
        let (level, built) = self.level(granularity)?;
        let hits = score_semantic(self.embedder.as_ref(), &level.dense, query, limit)?;
        Ok((level, hits, built))
    }
}

fn vector_path(dir: &Path, granularity: usize) -> PathBuf {
    dir.join(format!("vectors-{granularity}.bin"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::tokenizer::{Tokenizer, WhitespacePunctTokenizer};

    fn engine(texts: &[&str]) -> RetrievalEngine {
        let tok: Arc<dyn Tokenizer> = Arc::new(WhitespacePunctTokenizer);
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t))
            .collect();
        let store = Arc::new(CorpusStore::new(docs, Arc::clone(&tok)).unwrap());
        RetrievalEngine::new(store, Arc::new(HashingEmbedder::new(tok)))
    }

    fn cfg(g: usize, k: usize) -> RetrievalConfig {
        RetrievalConfig {
            granularity: g,
            top_k: k,
            weights: FusionWeights::balanced(),
            threshold: 0.1,
            fusion_pool: DEFAULT_FUSION_POOL,
        }
    }

    #[test]
    fn levels_are_built_once() {
        let e = engine(&["alpha beta gamma delta", "epsilon zeta"]);
        let first = e.retrieve("beta", &cfg(2, 3)).unwrap();
        assert!(first.built);
        let second = e.retrieve("zeta", &cfg(2, 3)).unwrap();
        assert!(!second.built);
        assert!(Arc::ptr_eq(&first.level, &second.level));
        assert_eq!(e.store().build_count(), 1);
    }

    #[test]
    fn assembled_retrieval_prefers_matching_chunk() {
        let e = engine(&[
            "The University of New Haven campus spans 82 acres.",
            "The University of West Florida campus spans 1600 acres.",
            "Quarterly revenue rose sharply in Europe.",
        ]);
        let r = e
            .retrieve("campus of University of West Florida", &cfg(512, 2))
            .unwrap();
        assert_eq!(r.ranked.entries[0].chunk_id.0, 1);
        assert!(r.ranked.entries.len() <= 2);
    }

    #[test]
    fn empty_corpus_retrieves_nothing() {
        let e = engine(&[]);
        assert!(e.retrieve("anything", &cfg(150, 5)).unwrap().ranked.is_empty());
    }

    #[test]
    fn persisted_vectors_are_reused() {
        let dir = tempfile::tempdir().unwrap();
        let e = engine(&["one two three", "four five six"]);
        let (built, _) = e.level(2).unwrap();
        e.persist_vectors(dir.path()).unwrap();
        let reloaded = engine(&["one two three", "four five six"]).with_vector_dir(dir.path());
        let (level, _) = reloaded.level(2).unwrap();
        assert_eq!(level.dense, built.dense);
    }
}
