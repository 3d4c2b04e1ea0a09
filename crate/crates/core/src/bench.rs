//! Benchmark runs: a line-delimited question set answered through one
//! engine mode and scored against gold answers.

use crate::engine::{Mode, OkraEngine};
use crate::eval::{aggregate_report, BenchFailure, BenchReport, EvalRecord, Metric};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub metric: Metric,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset {path}, line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
}

pub fn load_dataset(path: &Path) -> Result<Vec<BenchItem>, DatasetError> {
    let raw = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Answers every item, scoring successes and recording failures
/// separately. Items are distributed over `parallelism` threads; results
/// keep dataset order.
pub fn run_bench(
    engine: &OkraEngine,
    items: &[BenchItem],
    mode: Mode,
    precise: bool,
    parallelism: usize,
) -> BenchReport {
    let run_one = |item: &BenchItem| match engine.answer_with(&item.question, mode, precise) {
        Ok(r) => Ok(EvalRecord {
            query_id: item.id.clone(),
            score: item.metric.score(&r.answer, &item.answers),
            prediction: r.answer,
            gold: item.answers.clone(),
            metric: item.metric,
            cost: r.cost,
            pipeline: r.pipeline,
        }),
        Err(e) => {
            log::warn!("query {} failed: {e}", item.id);
            Err(BenchFailure {
                query_id: item.id.clone(),
                error: e.to_string(),
            })
        }
    };

    let workers = parallelism.clamp(1, items.len().max(1));
    let outcomes: Vec<Result<EvalRecord, BenchFailure>> = if workers == 1 {
        items.iter().map(run_one).collect()
    } else {
        let per = items.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(per)
                .map(|part| s.spawn(move || part.iter().map(run_one).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("bench worker panicked"))
                .collect()
        })
    };

    let mut records = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failed.push(f),
        }
    }
    BenchReport {
        mode: mode.as_str().to_string(),
        summary: aggregate_report(&records, failed.len()),
        records,
        failed,
    }
}
