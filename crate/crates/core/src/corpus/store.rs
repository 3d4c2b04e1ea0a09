use super::chunk::{chunk_document, Chunk, ChunkId, Span};
use super::{DocId, Document, IngestError};
use crate::tokenizer::Tokenizer;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

pub const MANIFEST_FILE: &str = "manifest.json";
const DOCUMENTS_FILE: &str = "documents.jsonl";

/// All chunks of a corpus at one granularity. Immutable once built.
#[derive(Debug)]
pub struct ChunkIndex {
    granularity: usize,
    tokenizer_id: String,
    chunks: Vec<Chunk>,
    doc_lookup: HashMap<DocId, Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("chunk {0} does not belong to this index")]
pub struct NotInIndex(pub ChunkId);

impl ChunkIndex {
    fn build(docs: &[Document], granularity: usize, tokenizer: &dyn Tokenizer) -> Self {
        let mut chunks = Vec::new();
        let mut doc_lookup = HashMap::with_capacity(docs.len());
        for doc in docs {
            let start = chunks.len();
            for mut c in chunk_document(doc, granularity, tokenizer) {
                c.chunk_id = ChunkId(chunks.len() as u32);
                chunks.push(c);
            }
            doc_lookup.insert(doc.doc_id.clone(), start..chunks.len());
        }
        Self {
            granularity,
            tokenizer_id: tokenizer.id().to_string(),
            chunks,
            doc_lookup,
        }
    }

    pub fn granularity(&self) -> usize {
        self.granularity
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, id: ChunkId) -> Option<&Chunk> {
        self.chunks.get(id.index())
    }

    /// Chunks of one document in ordinal order.
    pub fn doc_chunks(&self, doc_id: &DocId) -> &[Chunk] {
        match self.doc_lookup.get(doc_id) {
            Some(r) => &self.chunks[r.clone()],
            None => &[],
        }
    }

    /// Up to `2 * radius + 1` chunks of the same document centred on `chunk`.
    pub fn get_neighbors(&self, chunk: &Chunk, radius: usize) -> Result<&[Chunk], NotInIndex> {
        let own = self
            .chunk(chunk.chunk_id)
            .filter(|c| c.doc_id == chunk.doc_id && c.ordinal == chunk.ordinal)
            .ok_or(NotInIndex(chunk.chunk_id))?;
        let doc = self.doc_chunks(&own.doc_id);
        let lo = own.ordinal.saturating_sub(radius);
        let hi = (own.ordinal + radius + 1).min(doc.len());
        Ok(&doc[lo..hi])
    }

    pub fn total_tokens(&self) -> usize {
        self.chunks.iter().map(Chunk::token_len).sum()
    }
}

/// Contents of the index directory manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tokenizer_id: String,
    pub granularities: Vec<usize>,
    pub corpus_digest: String,
    pub document_count: usize,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, PersistError> {
        let path = dir.join(MANIFEST_FILE);
        let raw = std::fs::read_to_string(&path).map_err(|e| PersistError::io(&path, e))?;
        serde_json::from_str(&raw).map_err(|e| PersistError::Corrupt(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index was built with tokenizer {stored:?} but {active:?} is active")]
    TokenizerMismatch { stored: String, active: String },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl PersistError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ChunkRow {
    chunk_id: u32,
    doc_id: String,
    ordinal: usize,
    char_start: usize,
    char_end: usize,
    token_start: usize,
    token_end: usize,
}

/// A corpus plus its per-granularity chunk indexes.
///
/// Index construction is serialized behind one lock, so concurrent callers
/// asking for the same missing granularity observe a single build.
pub struct CorpusStore {
    documents: Arc<Vec<Document>>,
    doc_positions: HashMap<DocId, usize>,
    tokenizer: Arc<dyn Tokenizer>,
    indexes: Mutex<BTreeMap<usize, Arc<ChunkIndex>>>,
    builds: AtomicUsize,
}

impl std::fmt::Debug for CorpusStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorpusStore")
            .field("documents", &self.documents.len())
            .field("tokenizer", &self.tokenizer.id())
            .field("granularities", &self.granularities())
            .finish()
    }
}

impl CorpusStore {
    pub fn new(documents: Vec<Document>, tokenizer: Arc<dyn Tokenizer>) -> Result<Self, IngestError> {
        let mut doc_positions = HashMap::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            if doc_positions.insert(d.doc_id.clone(), i).is_some() {
                return Err(IngestError::DuplicateId(d.doc_id.0.clone()));
            }
        }
        Ok(Self {
            documents: Arc::new(documents),
            doc_positions,
            tokenizer,
            indexes: Mutex::new(BTreeMap::new()),
            builds: AtomicUsize::new(0),
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, id: &DocId) -> Option<&Document> {
        self.doc_positions.get(id).map(|&i| &self.documents[i])
    }

    /// Position of a document in corpus order.
    pub fn doc_position(&self, id: &DocId) -> Option<usize> {
        self.doc_positions.get(id).copied()
    }

    pub fn tokenizer(&self) -> &Arc<dyn Tokenizer> {
        &self.tokenizer
    }

    pub fn total_tokens(&self) -> usize {
        self.documents
            .iter()
            .map(|d| self.tokenizer.count_tokens(&d.text))
            .sum()
    }

    /// Number of chunk indexes built (not loaded) by this store.
    pub fn build_count(&self) -> usize {
        self.builds.load(Ordering::SeqCst)
    }

    pub fn granularities(&self) -> Vec<usize> {
        self.indexes
            .lock()
            .expect("index cache poisoned")
            .keys()
            .copied()
            .collect()
    }

    pub fn cached(&self, granularity: usize) -> Option<Arc<ChunkIndex>> {
        self.indexes
            .lock()
            .expect("index cache poisoned")
            .get(&granularity)
            .cloned()
    }

    /// Returns the index at `granularity`, building and caching it on first use.
    pub fn rescale_index(&self, granularity: usize) -> Arc<ChunkIndex> {
        assert!(granularity >= 1, "granularity must be at least 1");
        let mut cache = self.indexes.lock().expect("index cache poisoned");
        if let Some(idx) = cache.get(&granularity) {
            return Arc::clone(idx);
        }
        let idx = Arc::new(ChunkIndex::build(&self.documents, granularity, self.tokenizer.as_ref()));
        self.builds.fetch_add(1, Ordering::SeqCst);
        log::debug!("built chunk index g={} ({} chunks)", granularity, idx.len());
        cache.insert(granularity, Arc::clone(&idx));
        idx
    }

    /// SHA-256 over document ids and texts, used to detect stale index directories.
    pub fn digest(&self) -> String {
        corpus_digest(&self.documents)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            tokenizer_id: self.tokenizer.id().to_string(),
            granularities: self.granularities(),
            corpus_digest: self.digest(),
            document_count: self.documents.len(),
        }
    }

    /// Writes documents, the manifest and one chunk table per cached granularity.
    pub fn persist(&self, dir: &Path) -> Result<Manifest, PersistError> {
        std::fs::create_dir_all(dir).map_err(|e| PersistError::io(dir, e))?;

        let docs_path = dir.join(DOCUMENTS_FILE);
        let mut out = String::new();
        for d in self.documents.iter() {
            let rec = serde_json::json!({
                "id": d.doc_id.as_str(),
                "text": d.text,
                "source": d.source_name,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        std::fs::write(&docs_path, out).map_err(|e| PersistError::io(&docs_path, e))?;

        let snapshot: Vec<Arc<ChunkIndex>> = self
            .indexes
            .lock()
            .expect("index cache poisoned")
            .values()
            .cloned()
            .collect();
        for idx in &snapshot {
            let path = chunk_table_path(dir, idx.granularity);
            let mut w =
                csv::Writer::from_path(&path).map_err(|e| PersistError::Corrupt(format!("{}: {e}", path.display())))?;
            for c in idx.chunks() {
                w.serialize(ChunkRow {
                    chunk_id: c.chunk_id.0,
                    doc_id: c.doc_id.0.clone(),
                    ordinal: c.ordinal,
                    char_start: c.char_span.start,
                    char_end: c.char_span.end,
                    token_start: c.token_span.start,
                    token_end: c.token_span.end,
                })
                .map_err(|e| PersistError::Corrupt(e.to_string()))?;
            }
            w.flush().map_err(|e| PersistError::io(&path, e))?;
        }

        let manifest = self.manifest();
        let path = dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, body).map_err(|e| PersistError::io(&path, e))?;
        Ok(manifest)
    }

    /// Reloads a persisted corpus. Loaded indexes do not count as builds.
    pub fn load(dir: &Path, tokenizer: Arc<dyn Tokenizer>) -> Result<Self, PersistError> {
        let manifest = Manifest::read(dir)?;
        if manifest.tokenizer_id != tokenizer.id() {
            return Err(PersistError::TokenizerMismatch {
                stored: manifest.tokenizer_id,
                active: tokenizer.id().to_string(),
            });
        }
        let docs_path = dir.join(DOCUMENTS_FILE);
        let documents = super::ingest_corpus(&docs_path, super::CorpusFormat::JsonLines)?;
        let store = Self::new(documents, tokenizer)?;
        if store.digest() != manifest.corpus_digest {
            return Err(PersistError::Corrupt("documents do not match manifest digest".into()));
        }
        let mut loaded = BTreeMap::new();
        for &g in &manifest.granularities {
            loaded.insert(g, Arc::new(store.load_chunk_table(dir, g)?));
        }
        *store.indexes.lock().expect("index cache poisoned") = loaded;
        Ok(store)
    }

    fn load_chunk_table(&self, dir: &Path, granularity: usize) -> Result<ChunkIndex, PersistError> {
        let path = chunk_table_path(dir, granularity);
        let mut reader =
            csv::Reader::from_path(&path).map_err(|e| PersistError::Corrupt(format!("{}: {e}", path.display())))?;
        // char offset -> byte offset tables, built lazily per document
        let mut byte_maps: HashMap<DocId, Vec<usize>> = HashMap::new();
        let mut chunks = Vec::new();
        let mut doc_lookup: HashMap<DocId, Range<usize>> = HashMap::new();
        let mut seen_docs = HashSet::new();
        for row in reader.deserialize::<ChunkRow>() {
            let row = row.map_err(|e| PersistError::Corrupt(format!("{}: {e}", path.display())))?;
            let doc_id = DocId(row.doc_id);
            let doc = self
                .document(&doc_id)
                .ok_or_else(|| PersistError::Corrupt(format!("unknown doc {doc_id}")))?;
            let map = byte_maps.entry(doc_id.clone()).or_insert_with(|| {
                let mut m: Vec<usize> = doc.text.char_indices().map(|(b, _)| b).collect();
                m.push(doc.text.len());
                m
            });
            if row.chunk_id as usize != chunks.len()
                || row.char_start > row.char_end
                || row.char_end >= map.len()
                || row.token_start > row.token_end
            {
                return Err(PersistError::Corrupt(format!(
                    "{}: bad row for chunk {}",
                    path.display(),
                    row.chunk_id
                )));
            }
            let byte_span = Span::new(map[row.char_start], map[row.char_end]);
            let pos = chunks.len();
            if seen_docs.insert(doc_id.clone()) {
                doc_lookup.insert(doc_id.clone(), pos..pos);
            }
            doc_lookup.get_mut(&doc_id).expect("inserted above").end = pos + 1;
            chunks.push(Chunk {
                chunk_id: ChunkId(row.chunk_id),
                text: doc.text[byte_span.start..byte_span.end].to_string(),
                doc_id,
                ordinal: row.ordinal,
                token_span: Span::new(row.token_start, row.token_end),
                char_span: Span::new(row.char_start, row.char_end),
                byte_span,
                granularity,
            });
        }
        for d in self.documents.iter() {
            doc_lookup.entry(d.doc_id.clone()).or_insert(0..0);
        }
        Ok(ChunkIndex {
            granularity,
            tokenizer_id: self.tokenizer.id().to_string(),
            chunks,
            doc_lookup,
        })
    }
}

fn chunk_table_path(dir: &Path, granularity: usize) -> PathBuf {
    dir.join(format!("chunks-{granularity}.csv"))
}

pub fn corpus_digest(docs: &[Document]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update((d.doc_id.0.len() as u64).to_le_bytes());
        h.update(d.doc_id.0.as_bytes());
        h.update((d.text.len() as u64).to_le_bytes());
        h.update(d.text.as_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WhitespacePunctTokenizer;

    fn store(docs: Vec<Document>) -> CorpusStore {
        CorpusStore::new(docs, Arc::new(WhitespacePunctTokenizer)).unwrap()
    }

    fn sample() -> CorpusStore {
        store(vec![
            Document::new("a", "one two three four five six seven"),
            Document::new("b", "alpha beta gamma"),
        ])
    }

    #[test]
    fn rescale_caches_by_granularity() {
        let s = sample();
        let first = s.rescale_index(2);
        let again = s.rescale_index(2);
        assert!(Arc::ptr_eq(&first, &again));
        assert_eq!(s.build_count(), 1);
        let other = s.rescale_index(3);
        assert!(!Arc::ptr_eq(&first, &other));
        assert_eq!(s.build_count(), 2);
        assert_eq!(s.granularities(), vec![2, 3]);
    }

    #[test]
    fn granularity_one_gives_one_chunk_per_token() {
        let s = store(vec![Document::new("a", "x y, z")]);
        let idx = s.rescale_index(1);
        let texts: Vec<&str> = idx.chunks().iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["x ", "y", ", ", "z"]);
    }

    #[test]
    fn concurrent_requests_build_once() {
        let s = Arc::new(sample());
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let s = Arc::clone(&s);
                scope.spawn(move || {
                    s.rescale_index(4);
                });
            }
        });
        assert_eq!(s.build_count(), 1);
    }

    #[test]
    fn neighbors_clip_at_document_bounds() {
        let s = sample();
        let idx = s.rescale_index(2);
        let a = idx.doc_chunks(&DocId::from("a"));
        assert_eq!(a.len(), 4);
        let ords = |cs: &[Chunk]| cs.iter().map(|c| c.ordinal).collect::<Vec<_>>();
        assert_eq!(ords(idx.get_neighbors(&a[1], 1).unwrap()), vec![0, 1, 2]);
        assert_eq!(ords(idx.get_neighbors(&a[0], 1).unwrap()), vec![0, 1]);
        assert_eq!(ords(idx.get_neighbors(&a[3], 1).unwrap()), vec![2, 3]);
        assert_eq!(ords(idx.get_neighbors(&a[2], 0).unwrap()), vec![2]);
        // neighbours never cross into document b
        let b = idx.doc_chunks(&DocId::from("b"));
        assert!(idx
            .get_neighbors(&b[0], 5)
            .unwrap()
            .iter()
            .all(|c| c.doc_id.as_str() == "b"));
    }

    #[test]
    fn foreign_chunk_is_rejected() {
        let s = sample();
        let idx = s.rescale_index(2);
        let mut alien = idx.chunks()[0].clone();
        alien.chunk_id = ChunkId(999);
        assert_eq!(idx.get_neighbors(&alien, 1), Err(NotInIndex(ChunkId(999))));
    }

    #[test]
    fn persist_and_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(vec![
            Document::new("a", "Ünïcode tëxt,\n\twith  odd   spacing.  "),
            Document::new("b", ""),
            Document::new("c", "plain words here and there"),
        ]);
        let i150 = s.rescale_index(150);
        let i2 = s.rescale_index(2);
        let manifest = s.persist(dir.path()).unwrap();
        assert_eq!(manifest.granularities, vec![2, 150]);

        let loaded = CorpusStore::load(dir.path(), Arc::new(WhitespacePunctTokenizer)).unwrap();
        assert_eq!(loaded.build_count(), 0);
        assert_eq!(loaded.documents(), s.documents());
        assert_eq!(loaded.cached(2).unwrap().chunks(), i2.chunks());
        assert_eq!(loaded.cached(150).unwrap().chunks(), i150.chunks());
        // cached granularities are served without rebuilding
        loaded.rescale_index(2);
        assert_eq!(loaded.build_count(), 0);
    }

    #[test]
    fn reload_rejects_other_tokenizer() {
        struct Other;
        impl Tokenizer for Other {
            fn id(&self) -> &str {
                "other"
            }
            fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
                WhitespacePunctTokenizer.token_spans(text)
            }
        }
        let dir = tempfile::tempdir().unwrap();
        sample().persist(dir.path()).unwrap();
        let err = CorpusStore::load(dir.path(), Arc::new(Other)).unwrap_err();
        assert!(matches!(err, PersistError::TokenizerMismatch { .. }));
    }
}
