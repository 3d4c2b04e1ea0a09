use clap::{Parser, Subcommand};
use okra_core::bench::{load_dataset, run_bench};
use okra_core::config::EngineConfig;
use okra_core::corpus::{corpus_digest, ingest_corpus, CorpusFormat, CorpusStore, Manifest};
use okra_core::engine::{Mode, OkraEngine};
use okra_core::retrieval::RetrievalEngine;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

/// Task-adaptive question answering over long documents.
#[derive(Parser)]
#[command(name = "okra", version)]
struct Cli {
    /// Engine configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured engine mode.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk and index a corpus into the index directory.
    Index {
        /// Line-delimited corpus; defaults to `corpus.path` from the config.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Answer one question.
    Query {
        question: String,
        /// Print the full JSON trace instead of just the answer.
        #[arg(long)]
        trace: bool,
        /// Re-run unanswerable answers over the long context.
        #[arg(long)]
        precise: bool,
        /// Build indexes in memory when no index directory exists.
        #[arg(long)]
        build: bool,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run a question set and write a scored report.
    Bench {
        dataset: PathBuf,
        #[arg(long, default_value = "bench-report.json")]
        report: PathBuf,
        #[arg(long)]
        precise: bool,
        #[arg(long)]
        build: bool,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: okra_core::engine::UnknownMode| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.engine.mode = m;
    }
    match cli.command {
        Command::Index { corpus } => cmd_index(&cfg, corpus),
        Command::Query {
            question,
            trace,
            precise,
            build,
            corpus,
        } => {
            cfg.planner.precise_mode |= precise;
            cmd_query(&cfg, &question, trace, build, corpus)
        }
        Command::Bench {
            dataset,
            report,
            precise,
            build,
            corpus,
        } => {
            cfg.planner.precise_mode |= precise;
            cmd_bench(&cfg, &dataset, &report, build, corpus)
        }
    }
}

fn corpus_path(cfg: &EngineConfig, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
    flag.or_else(|| cfg.corpus.path.clone())
        .ok_or_else(|| Failure::Usage("no corpus given: pass --corpus or set corpus.path in the config".into()))
}

fn cmd_index(cfg: &EngineConfig, corpus: Option<PathBuf>) -> Result<(), Failure> {
    let path = corpus_path(cfg, corpus)?;
    let tokenizer = cfg.tokenizer()?;
    let docs = ingest_corpus(&path, CorpusFormat::JsonLines)?;
    let dir = &cfg.index.dir;

    if let Ok(m) = Manifest::read(dir) {
        let complete = cfg
            .index
            .granularities
            .iter()
            .all(|g| m.granularities.contains(g) && dir.join(format!("vectors-{g}.bin")).is_file());
        if complete && m.tokenizer_id == tokenizer.id() && m.corpus_digest == corpus_digest(&docs) {
            println!("up-to-date: {} ({} documents)", dir.display(), m.document_count);
            return Ok(());
        }
    }

    let store = Arc::new(CorpusStore::new(docs, Arc::clone(&tokenizer))?);
    let retrieval = RetrievalEngine::new(Arc::clone(&store), cfg.embedder(tokenizer)?);
    for &g in &cfg.index.granularities {
        let (level, _) = retrieval.level(g)?;
        println!("granularity {g}: {} chunks", level.chunks.len());
    }
    let manifest = store.persist(dir)?;
    retrieval.persist_vectors(dir)?;
    println!(
        "indexed {} documents into {} (granularities {:?})",
        manifest.document_count,
        dir.display(),
        manifest.granularities
    );
    Ok(())
}

fn open_store(cfg: &EngineConfig, build: bool, corpus: Option<PathBuf>) -> Result<Arc<CorpusStore>, Failure> {
    let tokenizer = cfg.tokenizer()?;
    let dir = &cfg.index.dir;
    if Manifest::read(dir).is_ok() && corpus.is_none() {
        return Ok(Arc::new(CorpusStore::load(dir, tokenizer)?));
    }
    if !build {
        return Err(Failure::Runtime(format!(
            "no index at {}; run `okra index` first or pass --build",
            dir.display()
        )));
    }
    let docs = ingest_corpus(&corpus_path(cfg, corpus)?, CorpusFormat::JsonLines)?;
    Ok(Arc::new(CorpusStore::new(docs, tokenizer)?))
}

fn engine(cfg: &EngineConfig, build: bool, corpus: Option<PathBuf>) -> Result<OkraEngine, Failure> {
    Ok(cfg.build_engine(open_store(cfg, build, corpus)?)?)
}

fn print_trace(cfg: &EngineConfig, result: &okra_core::executor::QueryResult) -> Result<(), Failure> {
    let doc = serde_json::json!({ "config": cfg, "result": result });
    let mut out = std::io::stdout().lock();
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn cmd_query(
    cfg: &EngineConfig,
    question: &str,
    trace: bool,
    build: bool,
    corpus: Option<PathBuf>,
) -> Result<(), Failure> {
    let engine = engine(cfg, build, corpus)?;
    match engine.answer_with(question, cfg.engine.mode, cfg.planner.precise_mode) {
        Ok(result) => {
            if trace {
                print_trace(cfg, &result)?;
            } else {
                println!("{}", result.answer);
            }
            Ok(())
        }
        Err(e) => {
            if trace {
                print_trace(cfg, &e.partial)?;
            }
            Err(Failure::Runtime(e.to_string()))
        }
    }
}

fn cmd_bench(
    cfg: &EngineConfig,
    dataset: &Path,
    report_path: &Path,
    build: bool,
    corpus: Option<PathBuf>,
) -> Result<(), Failure> {
    let items = load_dataset(dataset)?;
    let engine = engine(cfg, build, corpus)?;
    let report = run_bench(
        &engine,
        &items,
        cfg.engine.mode,
        cfg.planner.precise_mode,
        cfg.bench.parallelism,
    );
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(report_path, serde_json::to_string_pretty(&report)?)?;
    println!("{}: {}", report.mode, report.summary);
    if !items.is_empty() && report.records.is_empty() {
        return Err(Failure::Runtime(format!("all {} queries failed", items.len())));
    }
    Ok(())
}
