use crate::corpus::{Chunk, ChunkId, ChunkIndex, CorpusStore, DocId, Document, Span};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// A run of consecutive chunks of one document, assembled for a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub doc_id: DocId,
    /// Inclusive first and last chunk ordinals.
    pub ordinal_range: (usize, usize),
    pub text: String,
    /// Every chunk the block covers, in document order.
    pub chunk_ids: Vec<ChunkId>,
    /// The subset that retrieval selected; the rest came from extension,
    /// merging or table recovery.
    pub retrieved: Vec<ChunkId>,
}

/// Extends, merges and optionally table-recovers the selected chunks into
/// per-document blocks, ordered by document id then first ordinal.
/// Unknown chunk ids are ignored.
pub fn process_context(
    index: &ChunkIndex,
    store: &CorpusStore,
    selected: &[ChunkId],
    extend_radius: usize,
    recover_tables: bool,
) -> Vec<ContextBlock> {
    let mut ranges: BTreeMap<&DocId, Vec<(usize, usize)>> = BTreeMap::new();
    for id in selected {
        let Some(chunk) = index.chunk(*id) else { continue };
        let Ok(around) = index.get_neighbors(chunk, extend_radius) else {
            continue;
        };
        let (Some(first), Some(last)) = (around.first(), around.last()) else {
            continue;
        };
        ranges
            .entry(&chunk.doc_id)
            .or_default()
            .push((first.ordinal, last.ordinal));
    }

    let wanted: HashSet<ChunkId> = selected.iter().copied().collect();
    let mut blocks = Vec::new();
    for (doc_id, doc_ranges) in ranges {
        let chunks = index.doc_chunks(doc_id);
        let mut merged = merge_ranges(doc_ranges);
        if recover_tables {
            if let Some(doc) = store.document(doc_id) {
                let grown = merged
                    .iter()
                    .map(|&(a, b)| {
                        let span = Span::new(chunks[a].char_span.start, chunks[b].char_span.end);
                        covering_ordinals(chunks, recover_table(doc, span))
                    })
                    .collect();
                merged = merge_ranges(grown);
            }
        }
        for (a, b) in merged {
            let covered = &chunks[a..=b];
            blocks.push(ContextBlock {
                doc_id: doc_id.clone(),
                ordinal_range: (a, b),
                text: covered.iter().map(|c| c.text.as_str()).collect(),
                chunk_ids: covered.iter().map(|c| c.chunk_id).collect(),
                retrieved: covered
                    .iter()
                    .map(|c| c.chunk_id)
                    .filter(|c| wanted.contains(c))
                    .collect(),
            });
        }
    }
    blocks
}

/// Sorts and merges ranges that overlap or touch.
fn merge_ranges(mut ranges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    ranges.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(ranges.len());
    for (a, b) in ranges {
        match out.last_mut() {
            Some(last) if a <= last.1 + 1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Ordinals of the first and last chunks intersecting a char span.
fn covering_ordinals(chunks: &[Chunk], span: Span) -> (usize, usize) {
    let first = chunks
        .partition_point(|c| c.char_span.end <= span.start)
        .min(chunks.len() - 1);
    let last_char = span.end.saturating_sub(1).max(span.start);
    let last = chunks
        .partition_point(|c| c.char_span.end <= last_char)
        .min(chunks.len() - 1);
    (first, last.max(first))
}

/// Number of header or caption lines taken above a recovered table.
pub const TABLE_CAPTION_LINES: usize = 2;

/// A line looks like a table row when it has at least two cell separators:
/// `|`, a tab, or a run of two or more spaces.
pub fn is_table_line(line: &str) -> bool {
    let t = line.trim();
    if t.is_empty() {
        return false;
    }
    let mut separators = 0;
    let mut spaces = 0;
    for ch in t.chars() {
        if ch == ' ' {
            spaces += 1;
            continue;
        }
        if spaces >= 2 {
            separators += 1;
        }
        spaces = 0;
        if ch == '|' || ch == '\t' {
            separators += 1;
        }
    }
    separators >= 2
}

/// Line extents in chars: `(start, end)` with `end` excluding the newline.
fn line_extents(text: &str) -> Vec<(usize, usize)> {
    let mut lines = Vec::new();
    let mut start = 0;
    let mut pos = 0;
    for ch in text.chars() {
        if ch == '\n' {
            lines.push((start, pos));
            start = pos + 1;
        }
        pos += 1;
    }
    lines.push((start, pos));
    lines
}

/// Grows a char span that starts or ends inside a table to the whole table.
///
/// If the span's first line is a table row, the span extends upward over
/// adjacent rows plus up to [`TABLE_CAPTION_LINES`] non-blank lines above
/// them; if its last line is a row, it extends downward over adjacent rows.
/// Spans touching no table row are returned unchanged.
pub fn recover_table(doc: &Document, span: Span) -> Span {
    if span.is_empty() {
        return span;
    }
    let lines = line_extents(&doc.text);
    let line_of = |pos: usize| lines.partition_point(|&(_, end)| end < pos).min(lines.len() - 1);
    let texts: Vec<String> = {
        let chars: Vec<char> = doc.text.chars().collect();
        lines.iter().map(|&(a, b)| chars[a..b].iter().collect()).collect()
    };
    let row = |i: usize| is_table_line(&texts[i]);

    let first = line_of(span.start);
    let last = line_of(span.end - 1);
    let mut out = span;
    if row(first) {
        let mut i = first;
        while i > 0 && row(i - 1) {
            i -= 1;
        }
        for _ in 0..TABLE_CAPTION_LINES {
            if i > 0 && !texts[i - 1].trim().is_empty() && !row(i - 1) {
                i -= 1;
            } else {
                break;
            }
        }
        out.start = out.start.min(lines[i].0);
    }
    if row(last) {
        let mut j = last;
        while j + 1 < lines.len() && row(j + 1) {
            j += 1;
        }
        out.end = out.end.max(lines[j].1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{Tokenizer, WhitespacePunctTokenizer};
    use std::sync::Arc;

    fn store(texts: &[(&str, String)]) -> CorpusStore {
        let tok: Arc<dyn Tokenizer> = Arc::new(WhitespacePunctTokenizer);
        let docs = texts.iter().map(|(id, t)| Document::new(*id, t.clone())).collect();
        CorpusStore::new(docs, tok).unwrap()
    }

    fn words(prefix: &str, n: usize) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn id_of(index: &ChunkIndex, doc: &str, ordinal: usize) -> ChunkId {
        index.doc_chunks(&DocId::from(doc))[ordinal].chunk_id
    }

    #[test]
    fn adjacent_selections_merge() {
        let s = store(&[("a", words("w", 100))]);
        let idx = s.rescale_index(10);
        let blocks = process_context(&idx, &s, &[id_of(&idx, "a", 5), id_of(&idx, "a", 4)], 0, false);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].ordinal_range, (4, 5));
        assert!(s.documents()[0].text.contains(&blocks[0].text));
    }

    #[test]
    fn radius_extends_and_clips() {
        let s = store(&[("a", words("w", 100))]);
        let idx = s.rescale_index(10);
        let mid = process_context(&idx, &s, &[id_of(&idx, "a", 7)], 1, false);
        assert_eq!(mid[0].ordinal_range, (6, 8));
        let edge = process_context(&idx, &s, &[id_of(&idx, "a", 9)], 1, false);
        assert_eq!(edge[0].ordinal_range, (8, 9));
        assert_eq!(edge[0].retrieved, vec![id_of(&idx, "a", 9)]);
    }

    #[test]
    fn documents_stay_separate_and_ordered() {
        let s = store(&[("b", words("x", 30)), ("a", words("y", 30))]);
        let idx = s.rescale_index(10);
        let blocks = process_context(&idx, &s, &[id_of(&idx, "b", 2), id_of(&idx, "a", 0)], 0, false);
        let docs: Vec<&str> = blocks.iter().map(|b| b.doc_id.as_str()).collect();
        assert_eq!(docs, vec!["a", "b"]);
    }

    #[test]
    fn table_line_heuristic() {
        assert!(is_table_line("| a | b |"));
        assert!(is_table_line("Revenue  2019  2020"));
        assert!(is_table_line("x\ty\tz"));
        assert!(!is_table_line("A plain sentence, with a | pipe."));
        assert!(!is_table_line("   "));
    }

    #[test]
    fn prose_span_is_unchanged() {
        let doc = Document::new("d", "One line.\nAnother line here.\nLast.");
        let span = Span::new(3, 15);
        assert_eq!(recover_table(&doc, span), span);
    }
}
