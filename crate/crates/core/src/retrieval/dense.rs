//! Embedding providers and exhaustive cosine search.

use super::fusion::{by_score_desc, ScoredChunk};
use crate::corpus::{ChunkId, ChunkIndex};
use crate::tokenizer::Tokenizer;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Deserialize;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected embedding response: {0}")]
    Shape(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Maps texts to fixed-dimension vectors. Implementations must tolerate
/// concurrent calls.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Feature-hashed bag of terms. Deterministic for a given dimension and seed.
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
    tokenizer: Arc<dyn Tokenizer>,
}

impl HashingEmbedder {
    pub const DEFAULT_DIM: usize = 256;
    pub const DEFAULT_SEED: u64 = 0x5eed;

    pub fn new(tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self::with_params(tokenizer, Self::DEFAULT_DIM, Self::DEFAULT_SEED)
    }

    pub fn with_params(tokenizer: Arc<dyn Tokenizer>, dim: usize, seed: u64) -> Self {
        assert!(dim > 0);
        Self { dim, seed, tokenizer }
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for term in self.tokenizer.terms(text) {
            let h = fnv1a(self.seed, term.as_bytes());
            let slot = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        v
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche so the sign bit depends on every byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

impl EmbeddingProvider for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-{}-{:x}-{}", self.dim, self.seed, self.tokenizer.id())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// OpenAI-compatible embeddings endpoint: `POST {endpoint}` with
/// `{"input": [...], "model": ...}`, reading `data[i].embedding`.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    batch_size: usize,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("http client builds");
        Self {
            client,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            batch_size: 64,
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let body = serde_json::json!({ "input": texts, "model": self.model });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbedError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: EmbeddingResponse = serde_json::from_str(&text).map_err(|e| EmbedError::Shape(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::Shape(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote-{}", self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(batch)?);
        }
        Ok(out)
    }
}

/// Cosine similarity; 0 when either vector has zero magnitude.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Chunk embeddings for one [`ChunkIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    provider_id: String,
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

const VECTOR_MAGIC: &[u8; 4] = b"OKV1";

impl DenseIndex {
    pub fn build(index: &ChunkIndex, provider: &dyn EmbeddingProvider) -> Result<Self, EmbedError> {
        let texts: Vec<String> = index.chunks().iter().map(|c| c.text.clone()).collect();
        let vectors = provider.embed(&texts)?;
        if vectors.len() != texts.len() {
            return Err(EmbedError::Shape(format!(
                "{} vectors for {} chunks",
                vectors.len(),
                texts.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(EmbedError::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self {
            provider_id: provider.id(),
            dim,
            vectors,
        })
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, id: ChunkId) -> Option<&[f32]> {
        self.vectors.get(id.index()).map(Vec::as_slice)
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(VECTOR_MAGIC)?;
        w.write_u32::<LittleEndian>(self.provider_id.len() as u32)?;
        w.write_all(self.provider_id.as_bytes())?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.vectors.len() as u32)?;
        for v in &self.vectors {
            for &x in v {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        w.flush()
    }

    pub fn read_from(path: &Path) -> std::io::Result<Self> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != VECTOR_MAGIC {
            return Err(bad("not a vector file"));
        }
        let id_len = r.read_u32::<LittleEndian>()? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let provider_id = String::from_utf8(id).map_err(|_| bad("provider id is not utf-8"))?;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            let mut v = vec![0f32; dim];
            r.read_f32_into::<LittleEndian>(&mut v)?;
            vectors.push(v);
        }
        Ok(Self {
            provider_id,
            dim,
            vectors,
        })
    }
}

/// Top `limit` chunks by cosine similarity with the query embedding.
pub fn score_semantic(
    provider: &dyn EmbeddingProvider,
    dense: &DenseIndex,
    query: &str,
    limit: usize,
) -> Result<Vec<ScoredChunk>, EmbedError> {
    if dense.is_empty() {
        return Ok(Vec::new());
    }
    let q = provider
        .embed(&[query.to_string()])?
        .pop()
        .ok_or_else(|| EmbedError::Shape("no query embedding returned".into()))?;
    if q.len() != dense.dim {
        return Err(EmbedError::Dimension {
            expected: dense.dim,
            got: q.len(),
        });
    }
    let mut hits: Vec<(f64, ChunkId)> = dense
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (cosine(&q, v), ChunkId(i as u32)))
        .collect();
    hits.sort_by(|a, b| by_score_desc(*a, *b));
    hits.truncate(limit);
    Ok(hits.into_iter().map(|(s, id)| ScoredChunk::raw(id, s)).collect())
}
