use super::{DocId, Document};
use crate::tokenizer::Tokenizer;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Position of a chunk within its [`ChunkIndex`](super::ChunkIndex).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(pub u32);

impl ChunkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Half-open `[start, end)` interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: ChunkId,
    pub doc_id: DocId,
    pub ordinal: usize,
    pub token_span: Span,
    /// Offsets in Unicode scalar values.
    pub char_span: Span,
    /// Offsets in UTF-8 bytes; same boundaries as `char_span`.
    pub byte_span: Span,
    pub text: String,
    pub granularity: usize,
}

impl Chunk {
    pub fn token_len(&self) -> usize {
        self.token_span.len()
    }
}

/// Cuts a document into consecutive chunks of `granularity` tokens.
///
/// Chunk boundaries sit at the first byte of a token, so whitespace between
/// two chunks belongs to the earlier one. The first chunk starts at offset 0
/// and the last ends at the end of the text, which makes the chunk texts an
/// exact partition of the document. A non-empty document with no tokens
/// yields a single zero-token chunk. Chunk ids equal ordinals here; a
/// [`ChunkIndex`](super::ChunkIndex) renumbers them corpus-wide.
pub fn chunk_document(doc: &Document, granularity: usize, tokenizer: &dyn Tokenizer) -> Vec<Chunk> {
    assert!(granularity >= 1, "granularity must be at least 1");
    let text = doc.text.as_str();
    if text.is_empty() {
        return Vec::new();
    }
    let tokens = tokenizer.token_spans(text);

    // (token_start, token_end, byte_start, byte_end)
    let mut cuts = Vec::new();
    if tokens.is_empty() {
        cuts.push((0, 0, 0, text.len()));
    } else {
        let mut k = 0;
        while k < tokens.len() {
            let end = (k + granularity).min(tokens.len());
            let byte_start = if k == 0 { 0 } else { tokens[k].start };
            let byte_end = if end == tokens.len() {
                text.len()
            } else {
                tokens[end].start
            };
            cuts.push((k, end, byte_start, byte_end));
            k = end;
        }
    }

    let mut chunks = Vec::with_capacity(cuts.len());
    let mut char_pos = 0;
    for (ordinal, (tok_start, tok_end, byte_start, byte_end)) in cuts.into_iter().enumerate() {
        let piece = &text[byte_start..byte_end];
        let char_len = piece.chars().count();
        chunks.push(Chunk {
            chunk_id: ChunkId(ordinal as u32),
            doc_id: doc.doc_id.clone(),
            ordinal,
            token_span: Span::new(tok_start, tok_end),
            char_span: Span::new(char_pos, char_pos + char_len),
            byte_span: Span::new(byte_start, byte_end),
            text: piece.to_string(),
            granularity,
        });
        char_pos += char_len;
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WhitespacePunctTokenizer;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn three_hundred_twenty_tokens_at_150() {
        let doc = Document::new("d", words(320));
        // oracle: the default tokenizer yields one token per "w<i>" word
        assert_eq!(WhitespacePunctTokenizer.count_tokens(&doc.text), 320);
        let chunks = chunk_document(&doc, 150, &WhitespacePunctTokenizer);
        let lens: Vec<usize> = chunks.iter().map(Chunk::token_len).collect();
        assert_eq!(lens, vec![150, 150, 20]);
        for c in &chunks {
            assert_eq!(WhitespacePunctTokenizer.count_tokens(&c.text), c.token_len());
        }
    }

    #[test]
    fn empty_document_has_no_chunks() {
        let doc = Document::new("d", "");
        assert!(chunk_document(&doc, 10, &WhitespacePunctTokenizer).is_empty());
    }

    #[test]
    fn short_document_is_one_chunk() {
        let doc = Document::new("d", words(100));
        let chunks = chunk_document(&doc, 512, &WhitespacePunctTokenizer);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, doc.text);
    }

    #[test]
    fn whitespace_only_document_is_one_empty_chunk() {
        let doc = Document::new("d", "  \n ");
        let chunks = chunk_document(&doc, 3, &WhitespacePunctTokenizer);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_len(), 0);
        assert_eq!(chunks[0].text, doc.text);
    }

    #[test]
    fn char_spans_count_scalars() {
        let doc = Document::new("d", "ünï cödé wörd");
        let chunks = chunk_document(&doc, 1, &WhitespacePunctTokenizer);
        assert_eq!(chunks[1].char_span, Span::new(4, 9));
        assert_eq!(chunks[1].byte_span, Span::new(6, 13));
    }

    proptest! {
        #[test]
        fn chunks_partition_document(text in "\\PC{0,300}", g in 1usize..40) {
            let doc = Document::new("d", text.clone());
            let chunks = chunk_document(&doc, g, &WhitespacePunctTokenizer);
            let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
            prop_assert_eq!(&joined, &text);
            let chars: Vec<char> = text.chars().collect();
            let mut expected_start = 0;
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.ordinal, i);
                prop_assert_eq!(c.char_span.start, expected_start);
                let by_chars: String = chars[c.char_span.start..c.char_span.end].iter().collect();
                prop_assert_eq!(&by_chars, &c.text);
                prop_assert!(c.token_len() <= g);
                if i + 1 < chunks.len() {
                    prop_assert_eq!(c.token_len(), g);
                }
                expected_start = c.char_span.end;
            }
        }

        #[test]
        fn halving_granularity_never_reduces_count(text in "[a-z ,.]{0,400}", g in 2usize..64) {
            let doc = Document::new("d", text);
            let coarse = chunk_document(&doc, g, &WhitespacePunctTokenizer).len();
            let fine = chunk_document(&doc, g / 2, &WhitespacePunctTokenizer).len();
            prop_assert!(fine >= coarse);
        }
    }
}
