//! Document ingestion, chunking and persisted chunk indexes.

mod chunk;
mod store;

pub use chunk::{chunk_document, Chunk, ChunkId, Span};
pub use store::{corpus_digest, ChunkIndex, CorpusStore, Manifest, PersistError, MANIFEST_FILE};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

/// Identifier of a document within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub String);

impl DocId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        DocId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_name: Option<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: DocId(doc_id.into()),
            text: text.into(),
            source_name: None,
        }
    }
}

/// Supported on-disk corpus formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// One JSON object per line: `id` (optional), `text` (required), `source` (optional).
    #[default]
    JsonLines,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read corpus file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate doc_id {0:?}")]
    DuplicateId(String),
}

#[derive(Deserialize)]
struct CorpusRecord {
    #[serde(default)]
    id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

/// Reads every document from a corpus file.
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Document>, IngestError> {
    let raw = std::fs::read_to_string(path).map_err(|source| IngestError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        CorpusFormat::JsonLines => parse_jsonl_corpus(&raw),
    }
}

/// Parses line-delimited corpus records. Blank lines are skipped; documents
/// without an explicit id are named `doc-<n>` after their position.
pub fn parse_jsonl_corpus(raw: &str) -> Result<Vec<Document>, IngestError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| IngestError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let text = rec.text.ok_or_else(|| IngestError::Malformed {
            line: line_no,
            reason: "missing required field `text`".into(),
        })?;
        let id = rec.id.unwrap_or_else(|| format!("doc-{}", docs.len()));
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId(id));
        }
        docs.push(Document {
            doc_id: DocId(id),
            text,
            source_name: rec.source,
        });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_records_in_order() {
        let raw = r#"{"text": "alpha"}
{"text": "beta", "source": "b.txt"}
{"id": "g", "text": "gamma"}
"#;
        let docs = parse_jsonl_corpus(raw).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs[0].doc_id.as_str(), "doc-0");
        assert_eq!(docs[1].source_name.as_deref(), Some("b.txt"));
        assert_eq!(docs[2].doc_id.as_str(), "g");
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_jsonl_corpus("").unwrap().is_empty());
    }

    #[test]
    fn missing_text_names_line() {
        let raw = "{\"text\": \"ok\"}\n{\"id\": \"x\"}\n";
        match parse_jsonl_corpus(raw) {
            Err(IngestError::Malformed { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("text"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_json_is_malformed() {
        let err = parse_jsonl_corpus("{\"text\": \"a\"}\nnot json\n").unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 2, .. }));
    }

    #[test]
    fn duplicate_explicit_ids_rejected() {
        let raw = "{\"id\": \"a\", \"text\": \"1\"}\n{\"id\": \"a\", \"text\": \"2\"}\n";
        assert!(matches!(parse_jsonl_corpus(raw), Err(IngestError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn unreadable_file() {
        let err = ingest_corpus(Path::new("/nonexistent/corpus.jsonl"), CorpusFormat::JsonLines).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.jsonl"));
    }
}
