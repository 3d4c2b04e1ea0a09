//! TOML engine configuration and construction of the configured engine.

use crate::analyzer::{AnalyzerBackend, HeuristicAnalyzer, RemoteLmAnalyzer};
use crate::corpus::CorpusStore;
use crate::engine::{Mode, OkraEngine};
use crate::executor::{Executor, LongContextConfig};
use crate::gateway::{
    ChatBackend, GatewayError, GenerationParams, OpenAiChatClient, OpenAiConfig, ScriptError, ScriptedBackend,
};
use crate::planner::{PlanError, PlannerOptions, RuntimeEnv, WeightTable};
use crate::retrieval::{
    EmbeddingProvider, FusionWeights, HashingEmbedder, InvalidWeights, RemoteEmbedder, RetrievalEngine,
    DEFAULT_FUSION_POOL,
};
use crate::tokenizer::{tokenizer_by_id, Tokenizer, WhitespacePunctTokenizer};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("unknown tokenizer `{0}`")]
    UnknownTokenizer(String),
    #[error("{section}.backend `{value}` is not supported")]
    UnknownBackend { section: &'static str, value: String },
    #[error("{0} is required for the configured backend")]
    Missing(&'static str),
    #[error(transparent)]
    Weights(#[from] InvalidWeights),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub dir: PathBuf,
    pub tokenizer: String,
    pub granularities: Vec<usize>,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("okra-index"),
            tokenizer: WhitespacePunctTokenizer::ID.to_string(),
            granularities: vec![150, 512],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    /// `hashing` or `remote`.
    pub backend: String,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            backend: "hashing".into(),
            endpoint: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzerSection {
    /// `heuristic` or `remote-lm`.
    pub backend: String,
    /// Remote analyzer endpoint; defaults to the generation gateway.
    pub base_url: Option<String>,
    pub model: Option<String>,
}

impl Default for AnalyzerSection {
    fn default() -> Self {
        Self {
            backend: "heuristic".into(),
            base_url: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    /// `mock` or `openai`.
    pub backend: String,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub temperature: f32,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let p = GenerationParams::default();
        Self {
            backend: "mock".into(),
            base_url: None,
            model: None,
            mock_script: None,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            max_retries: 2,
            max_in_flight: 4,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub exact: [f64; 2],
    pub semantic: [f64; 2],
    pub same: [f64; 2],
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self {
            exact: [0.6, 0.4],
            semantic: [0.4, 0.6],
            same: [0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub max_steps: usize,
    pub precise_mode: bool,
    pub threshold: f64,
    pub weights: WeightsSection,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let d = PlannerOptions::default();
        Self {
            max_steps: d.max_steps,
            precise_mode: d.precise_mode,
            threshold: d.threshold,
            weights: WeightsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub fusion_pool: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            fusion_pool: DEFAULT_FUSION_POOL,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub parallelism: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { parallelism: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub budget_weighted_tokens: Option<u64>,
    pub latency_threshold_secs: Option<f64>,
}

/// Full engine configuration. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub corpus: CorpusSection,
    pub index: IndexSection,
    pub embedding: EmbeddingSection,
    pub analyzer: AnalyzerSection,
    pub gateway: GatewaySection,
    pub planner: PlannerSection,
    pub retrieval: RetrievalSection,
    pub long_context: LongContextConfig,
    pub engine: EngineSection,
    pub bench: BenchSection,
    pub env: EnvSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EngineConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: EngineConfig = toml::from_str(&raw).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = cfg.corpus.path.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut cfg.index.dir);
        if let Some(p) = cfg.gateway.mock_script.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn tokenizer(&self) -> Result<Arc<dyn Tokenizer>, ConfigError> {
        tokenizer_by_id(&self.index.tokenizer)
            .ok_or_else(|| ConfigError::UnknownTokenizer(self.index.tokenizer.clone()))
    }

    pub fn planner_options(&self) -> Result<PlannerOptions, ConfigError> {
        let w = &self.planner.weights;
        let options = PlannerOptions {
            precise_mode: self.planner.precise_mode,
            max_steps: self.planner.max_steps,
            weights: WeightTable {
                exact: FusionWeights::new(w.exact[0], w.exact[1])?,
                semantic: FusionWeights::new(w.semantic[0], w.semantic[1])?,
                same: FusionWeights::new(w.same[0], w.same[1])?,
            },
            threshold: self.planner.threshold,
            fusion_pool: self.retrieval.fusion_pool,
        };
        if options.max_steps == 0 {
            return Err(PlanError::NoSteps.into());
        }
        if !(0.0..1.0).contains(&options.threshold) {
            return Err(PlanError::Retrieval(format!("planner.threshold {} outside [0, 1)", options.threshold)).into());
        }
        Ok(options)
    }

    pub fn runtime_env(&self) -> Result<RuntimeEnv, ConfigError> {
        let latency = match self.env.latency_threshold_secs {
            Some(s) if s.is_finite() && s > 0.0 => Some(Duration::from_secs_f64(s)),
            Some(_) => return Err(PlanError::NonPositiveCap.into()),
            None => None,
        };
        Ok(RuntimeEnv::new(self.env.budget_weighted_tokens, latency)?)
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.gateway.temperature,
            max_tokens: self.gateway.max_tokens,
        }
    }

    pub fn embedder(&self, tokenizer: Arc<dyn Tokenizer>) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        match self.embedding.backend.as_str() {
            "hashing" => Ok(Arc::new(HashingEmbedder::new(tokenizer))),
            "remote" => {
                let endpoint = self
                    .embedding
                    .endpoint
                    .clone()
                    .ok_or(ConfigError::Missing("embedding.endpoint"))?;
                let model = self
                    .embedding
                    .model
                    .clone()
                    .ok_or(ConfigError::Missing("embedding.model"))?;
                let key = std::env::var(crate::gateway::API_KEY_ENV).ok();
                Ok(Arc::new(RemoteEmbedder::new(endpoint, model, key)))
            }
            other => Err(ConfigError::UnknownBackend {
                section: "embedding",
                value: other.to_string(),
            }),
        }
    }

    fn openai(
        &self,
        base_url: Option<&String>,
        model: Option<&String>,
        tokenizer: Arc<dyn Tokenizer>,
    ) -> Result<OpenAiChatClient, ConfigError> {
        let base_url = base_url.ok_or(ConfigError::Missing("gateway.base_url"))?;
        let model = model.ok_or(ConfigError::Missing("gateway.model"))?;
        let mut c = OpenAiConfig::new(base_url.clone(), model.clone());
        c.max_retries = self.gateway.max_retries;
        c.max_in_flight = self.gateway.max_in_flight;
        c.timeout = Duration::from_secs(self.gateway.timeout_secs);
        Ok(OpenAiChatClient::new(c, tokenizer)?)
    }

    pub fn gateway(&self, tokenizer: Arc<dyn Tokenizer>) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        match self.gateway.backend.as_str() {
            "mock" => Ok(match &self.gateway.mock_script {
                Some(p) => Arc::new(ScriptedBackend::from_file(p, tokenizer)?),
                None => Arc::new(ScriptedBackend::new(Vec::new(), tokenizer)),
            }),
            "openai" => Ok(Arc::new(self.openai(
                self.gateway.base_url.as_ref(),
                self.gateway.model.as_ref(),
                tokenizer,
            )?)),
            other => Err(ConfigError::UnknownBackend {
                section: "gateway",
                value: other.to_string(),
            }),
        }
    }

    /// A remote analyzer reuses the generation gateway unless it has its
    /// own endpoint.
    pub fn analyzer(
        &self,
        tokenizer: Arc<dyn Tokenizer>,
        gateway: &Arc<dyn ChatBackend>,
    ) -> Result<Arc<dyn AnalyzerBackend>, ConfigError> {
        match self.analyzer.backend.as_str() {
            "heuristic" => Ok(Arc::new(HeuristicAnalyzer::new(tokenizer))),
            "remote-lm" => {
                let backend: Arc<dyn ChatBackend> = match &self.analyzer.base_url {
                    Some(url) => {
                        let model = self.analyzer.model.as_ref().or(self.gateway.model.as_ref());
                        Arc::new(self.openai(Some(url), model, tokenizer)?)
                    }
                    None => Arc::clone(gateway),
                };
                Ok(Arc::new(RemoteLmAnalyzer::new(backend)))
            }
            other => Err(ConfigError::UnknownBackend {
                section: "analyzer",
                value: other.to_string(),
            }),
        }
    }

    /// Wires the configured backends around an already loaded corpus.
    pub fn build_engine(&self, store: Arc<CorpusStore>) -> Result<OkraEngine, ConfigError> {
        let tokenizer = Arc::clone(store.tokenizer());
        let embedder = self.embedder(Arc::clone(&tokenizer))?;
        let retrieval = Arc::new(RetrievalEngine::new(store, embedder).with_vector_dir(&self.index.dir));
        let gateway = self.gateway(Arc::clone(&tokenizer))?;
        let analyzer = self.analyzer(tokenizer, &gateway)?;
        let executor = Executor::new(retrieval, gateway)
            .with_params(self.generation_params())
            .with_long_context(self.long_context);
        Ok(OkraEngine::new(executor, analyzer)
            .with_planner(self.planner_options()?)
            .with_env(self.runtime_env()?)
            .with_mode(self.engine.mode))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: EngineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, EngineConfig::default());
        assert_eq!(cfg.planner_options().unwrap(), PlannerOptions::default());
        assert_eq!(cfg.index.granularities, vec![150, 512]);
    }

    #[test]
    fn sections_parse_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("okra.toml");
        std::fs::write(
            &path,
            r#"
[corpus]
path = "corpus.jsonl"

[gateway]
backend = "mock"
mock_script = "script.jsonl"

[planner]
max_steps = 3
precise_mode = true

[planner.weights]
exact = [3.0, 2.0]
semantic = [2.0, 3.0]
same = [1.0, 1.0]

[engine]
mode = "std-rag"

[long_context]
token_limit = 1000
granularity = 512
top_chunks = 10
"#,
        )
        .unwrap();
        let cfg = EngineConfig::load(&path).unwrap();
        assert_eq!(
            cfg.corpus.path.as_deref(),
            Some(dir.path().join("corpus.jsonl").as_path())
        );
        assert_eq!(cfg.engine.mode, Mode::StdRag);
        assert_eq!(cfg.long_context.token_limit, 1000);
        let opts = cfg.planner_options().unwrap();
        assert!(opts.precise_mode);
        assert!((opts.weights.exact.exact() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_and_backends_are_rejected() {
        assert!(toml::from_str::<EngineConfig>("[planner]\nmax_step = 3").is_err());
        let cfg: EngineConfig = toml::from_str("[gateway]\nbackend = \"carrier-pigeon\"").unwrap();
        assert!(matches!(
            cfg.gateway(Arc::new(WhitespacePunctTokenizer)),
            Err(ConfigError::UnknownBackend { section: "gateway", .. })
        ));
    }
}
