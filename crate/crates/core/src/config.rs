//! Pipeline configuration (JSON) and provider construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, HashingEmbedder, RemoteEmbedder, DEFAULT_DIMS, DEFAULT_PHASE2_DIMS};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::evolve::{EvolutionConfig, FitnessWeights};
use crate::explain::DEFAULT_PASSAGES;
use crate::http::{HttpTransport, RetryPolicy, UreqTransport};
use crate::llm::{Gateway, MockLlm, Prompts, RemoteLlm};
use crate::providers::Providers;
use crate::vector_index::DEFAULT_K;

pub const ENV_LLM_BASE_URL: &str = "SYNAPSE_LLM_BASE_URL";
pub const ENV_LLM_API_KEY: &str = "SYNAPSE_LLM_API_KEY";
pub const ENV_LLM_MODEL: &str = "SYNAPSE_LLM_MODEL";
pub const ENV_EMBED_BASE_URL: &str = "SYNAPSE_EMBED_BASE_URL";
pub const ENV_EMBED_API_KEY: &str = "SYNAPSE_EMBED_API_KEY";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Normalized postings (JSONL) written by `ingest`.
    pub corpus: PathBuf,
    /// Normalized resumes (JSONL) written by `ingest`.
    pub resumes: PathBuf,
    pub index: PathBuf,
    pub judgments: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: PathBuf::from("synapse-data/postings.jsonl"),
            resumes: PathBuf::from("synapse-data/resumes.jsonl"),
            index: PathBuf::from("synapse-data/postings.idx"),
            judgments: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedConfig {
    Hash {
        dims: usize,
        phase2_dims: usize,
    },
    /// Endpoint and key come from the environment.
    Remote {
        model: String,
        phase2_model: String,
    },
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig::Hash { dims: DEFAULT_DIMS, phase2_dims: DEFAULT_PHASE2_DIMS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LlmConfig {
    Mock {
        #[serde(default)]
        seed: u64,
    },
    /// Endpoint and key come from the environment; the model falls back to
    /// `SYNAPSE_LLM_MODEL`.
    Remote {
        #[serde(default)]
        model: Option<String>,
    },
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig::Mock { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub embed: EmbedConfig,
    pub llm: LlmConfig,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig { embed: EmbedConfig::default(), llm: LlmConfig::default(), max_in_flight: DEFAULT_MAX_IN_FLIGHT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub retrieval_k: usize,
    /// Phase-II candidate count; `None` reranks all K retrieved postings.
    pub rerank_candidates: Option<usize>,
    pub ensemble: EnsembleConfig,
    pub fitness: FitnessWeights,
    pub evolution: EvolutionConfig,
    pub providers: ProviderConfig,
    pub prompts_dir: Option<PathBuf>,
    pub explain_passages: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            retrieval_k: DEFAULT_K,
            rerank_candidates: None,
            ensemble: EnsembleConfig::default(),
            fitness: FitnessWeights::default(),
            evolution: EvolutionConfig::default(),
            providers: ProviderConfig::default(),
            prompts_dir: None,
            explain_passages: DEFAULT_PASSAGES,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        let config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.retrieval_k == 0 {
            return Err(Error::Config("retrieval_k must be at least 1".into()));
        }
        if self.rerank_candidates == Some(0) {
            return Err(Error::Config("rerank_candidates must be at least 1".into()));
        }
        if self.explain_passages == 0 {
            return Err(Error::Config("explain_passages must be at least 1".into()));
        }
        if self.providers.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if let EmbedConfig::Hash { dims, phase2_dims } = self.providers.embed {
            if dims == 0 || phase2_dims == 0 {
                return Err(Error::Config("embedding dims must be positive".into()));
            }
        }
        let lists = 3 + usize::from(self.ensemble.include_phase1);
        self.ensemble.validate(lists).map_err(|e| Error::Config(format!("ensemble: {e}")))?;
        self.fitness.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.evolution.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn rerank_count(&self) -> usize {
        self.rerank_candidates.unwrap_or(self.retrieval_k)
    }

    pub fn prompts(&self) -> Result<Prompts> {
        match &self.prompts_dir {
            Some(dir) => Ok(Prompts::load_dir(dir)?),
            None => Ok(Prompts::builtin()),
        }
    }

    /// Builds providers, reading endpoints from `env`.
    pub fn providers_with(&self, env: &dyn Fn(&str) -> Option<String>, transport: Arc<dyn HttpTransport>) -> Result<Providers> {
        let retry = RetryPolicy::default();
        let bound = self.providers.max_in_flight;
        let require = |name: &str| -> Result<String> {
            env(name).filter(|v| !v.is_empty()).ok_or_else(|| Error::Config(format!("{name} must be set for remote providers")))
        };
        let (phase1, phase2): (Arc<dyn EmbeddingProvider>, Arc<dyn EmbeddingProvider>) = match &self.providers.embed {
            EmbedConfig::Hash { dims, phase2_dims } => {
                (Arc::new(HashingEmbedder::new(*dims)), Arc::new(HashingEmbedder::new(*phase2_dims)))
            }
            EmbedConfig::Remote { model, phase2_model } => {
                let base = require(ENV_EMBED_BASE_URL)?;
                let key = env(ENV_EMBED_API_KEY);
                (
                    Arc::new(RemoteEmbedder::new(transport.clone(), base.clone(), key.clone(), model.clone(), retry.clone(), bound)),
                    Arc::new(RemoteEmbedder::new(transport.clone(), base, key, phase2_model.clone(), retry.clone(), bound)),
                )
            }
        };
        let prompts = self.prompts()?;
        let gateway = match &self.providers.llm {
            LlmConfig::Mock { seed } => Gateway::new(Arc::new(MockLlm::new(*seed)), prompts),
            LlmConfig::Remote { model } => {
                let base = require(ENV_LLM_BASE_URL)?;
                let model = match model {
                    Some(m) => m.clone(),
                    None => require(ENV_LLM_MODEL)?,
                };
                Gateway::new(Arc::new(RemoteLlm::new(transport, base, env(ENV_LLM_API_KEY), model, retry, bound)), prompts)
            }
        };
        Ok(Providers::new(phase1, phase2, gateway))
    }

    /// Providers backed by the process environment and real HTTP.
    pub fn providers(&self) -> Result<Providers> {
        self.providers_with(&|name| std::env::var(name).ok(), Arc::new(UreqTransport))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Scheme;

    #[test]
    fn defaults_serialize_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.rerank_count(), 25);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(
            r#"{"retrieval_k": 10, "ensemble": {"scheme": "rrf", "weights": [0.5, 0.25, 0.25]},
                "providers": {"llm": {"kind": "mock", "seed": 3}}}"#,
        )
        .unwrap();
        assert_eq!(c.retrieval_k, 10);
        assert_eq!(c.ensemble.scheme, Scheme::Rrf);
        assert_eq!(c.ensemble.rrf_k, 60);
        assert_eq!(c.providers.llm, LlmConfig::Mock { seed: 3 });
        assert_eq!(c.evolution, EvolutionConfig::default());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = PipelineConfig { retrieval_k: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.ensemble.include_phase1 = true;
        assert!(c.validate().is_err());
        c.ensemble.weights = vec![0.25; 4];
        c.validate().unwrap();
    }

    #[test]
    fn remote_providers_need_endpoints() {
        let mut c = PipelineConfig::default();
        c.providers.llm = LlmConfig::Remote { model: None };
        let none = |_: &str| None;
        let err = c.providers_with(&none, Arc::new(UreqTransport)).err().unwrap();
        assert!(err.to_string().contains(ENV_LLM_BASE_URL));
        let env = |k: &str| match k {
            ENV_LLM_BASE_URL => Some("http://localhost:1".to_string()),
            ENV_LLM_MODEL => Some("m".to_string()),
            _ => None,
        };
        assert!(c.providers_with(&env, Arc::new(UreqTransport)).is_ok());
    }
}
