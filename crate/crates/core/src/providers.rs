use std::sync::Arc;

use crate::embedding::{EmbeddingProvider, HashingEmbedder, DEFAULT_DIMS, DEFAULT_PHASE2_DIMS};
use crate::llm::Gateway;

/// Embedding spaces and LLM gateway used by a pipeline run.
#[derive(Clone)]
pub struct Providers {
    /// Retrieval space.
    pub phase1: Arc<dyn EmbeddingProvider>,
    /// Larger space for Phase-II similarity and token alignment.
    pub phase2: Arc<dyn EmbeddingProvider>,
    pub gateway: Gateway,
}

impl Providers {
    pub fn new(
        phase1: Arc<dyn EmbeddingProvider>,
        phase2: Arc<dyn EmbeddingProvider>,
        gateway: Gateway,
    ) -> Self {
        Providers { phase1, phase2, gateway }
    }

    /// Hashing embedders at the default sizes and the mock LLM.
    pub fn offline(seed: u64) -> Self {
        Providers::new(
            Arc::new(HashingEmbedder::new(DEFAULT_DIMS)),
            Arc::new(HashingEmbedder::new(DEFAULT_PHASE2_DIMS)),
            Gateway::mock(seed),
        )
    }
}
