//! Score normalization and weighted sparse/dense fusion.

use crate::corpus::ChunkId;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: ChunkId,
    pub raw_score: f64,
    pub normalized_score: f64,
}

impl ScoredChunk {
    pub fn raw(chunk_id: ChunkId, raw_score: f64) -> Self {
        Self {
            chunk_id,
            raw_score,
            normalized_score: raw_score,
        }
    }
}

/// Relative weights of the exact and semantic sides, stored summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    w_exact: f64,
    w_semantic: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid fusion weights ({exact}, {semantic}): both must be finite and non-negative with a positive sum")]
pub struct InvalidWeights {
    pub exact: f64,
    pub semantic: f64,
}

impl FusionWeights {
    pub fn new(exact: f64, semantic: f64) -> Result<Self, InvalidWeights> {
        let ok = exact.is_finite() && semantic.is_finite() && exact >= 0.0 && semantic >= 0.0;
        let sum = exact + semantic;
        if !ok || sum <= 0.0 {
            return Err(InvalidWeights { exact, semantic });
        }
        Ok(Self {
            w_exact: exact / sum,
            w_semantic: semantic / sum,
        })
    }

    pub fn balanced() -> Self {
        Self {
            w_exact: 0.5,
            w_semantic: 0.5,
        }
    }

    pub fn exact(&self) -> f64 {
        self.w_exact
    }

    pub fn semantic(&self) -> f64 {
        self.w_semantic
    }
}

/// One fused entry: the chunk plus the per-side normalized scores it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub chunk_id: ChunkId,
    pub exact_score: f64,
    pub semantic_score: f64,
    pub fused_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedContext {
    pub entries: Vec<RankedEntry>,
    pub fusion_weights: FusionWeights,
    pub threshold_applied: f64,
}

impl RankedContext {
    pub fn chunk_ids(&self) -> Vec<ChunkId> {
        self.entries.iter().map(|e| e.chunk_id).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Min-max rescaling to `[0, 1]`, preserving order. Degenerate inputs (a
/// single element or all-equal scores) map to 1.0.
pub fn minmax_normalize(scores: &[ScoredChunk]) -> Vec<ScoredChunk> {
    let (min, max) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.raw_score), hi.max(s.raw_score))
    });
    let range = max - min;
    scores
        .iter()
        .map(|s| ScoredChunk {
            normalized_score: if range > 0.0 {
                ((s.raw_score - min) / range).clamp(0.0, 1.0)
            } else {
                1.0
            },
            ..*s
        })
        .collect()
}

/// Descending by score, ascending chunk id on ties.
pub(crate) fn by_score_desc(a: (f64, ChunkId), b: (f64, ChunkId)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Combines normalized exact and semantic results with
/// `fused = w_exact * exact + w_semantic * semantic`.
///
/// A chunk missing from one side scores 0 there. Entries whose fused score
/// falls below `threshold * top1` are dropped, then the list is cut to `limit`.
pub fn fuse_and_rank(
    exact: &[ScoredChunk],
    semantic: &[ScoredChunk],
    weights: FusionWeights,
    threshold: f64,
    limit: usize,
) -> RankedContext {
    debug_assert!((0.0..1.0).contains(&threshold));
    let mut sides: BTreeMap<ChunkId, (f64, f64)> = BTreeMap::new();
    for s in exact {
        sides.entry(s.chunk_id).or_default().0 = s.normalized_score;
    }
    for s in semantic {
        sides.entry(s.chunk_id).or_default().1 = s.normalized_score;
    }
    let mut entries: Vec<RankedEntry> = sides
        .into_iter()
        .map(|(chunk_id, (e, s))| RankedEntry {
            chunk_id,
            exact_score: e,
            semantic_score: s,
            fused_score: weights.exact() * e + weights.semantic() * s,
        })
        .collect();
    entries.sort_by(|a, b| by_score_desc((a.fused_score, a.chunk_id), (b.fused_score, b.chunk_id)));
    if let Some(top) = entries.first().map(|e| e.fused_score) {
        let floor = threshold * top;
        entries.retain(|e| e.fused_score >= floor);
    }
    entries.truncate(limit);
    RankedContext {
        entries,
        fusion_weights: weights,
        threshold_applied: threshold,
    }
}
