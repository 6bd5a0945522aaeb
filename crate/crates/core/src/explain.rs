//! Evidence-grounded explanations.
//!
//! Sentences from both documents are scored against the other document's
//! vector; the top `m` of each side form the evidence set. The LLM only sees
//! those passages and must cite them as `[#n]`. Any citation outside the set
//! (or no citation at all) rejects the response.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FusedDocument;
use crate::embedding::{cosine, embed_document, EmbedError, EmbeddingProvider};
use crate::llm::{render, Gateway, LlmError, LlmRequest, Purpose};
use crate::text::split_sentences;

pub const DEFAULT_PASSAGES: usize = 3;
const EXPLAIN_TEMPERATURE: f64 = 0.2;
const EXPLAIN_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("passages per source must be at least 1")]
    ZeroPassages,
    #[error("{0} document has no embeddable sentences")]
    NoSentences(Source),
    #[error("evidence set is empty")]
    EmptyEvidence,
    #[error("ungrounded citation: cited {cited:?}, evidence has passages 1..={available}")]
    Ungrounded { cited: Vec<usize>, available: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl ExplainError {
    pub fn is_provider_failure(&self) -> bool {
        match self {
            ExplainError::Embed(e) => e.is_provider_failure(),
            ExplainError::Llm(e) => !matches!(e, LlmError::InvalidRequest(_) | LlmError::Template { .. }),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Resume,
    Posting,
}

impl Source {
    pub fn label(self) -> &'static str {
        match self {
            Source::Resume => "resume",
            Source::Posting => "posting",
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub source: Source,
    /// 1-based position in the evidence set.
    pub passage_id: usize,
    pub text: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub posting_id: String,
    pub passages: Vec<Passage>,
}

impl EvidenceSet {
    pub fn contains_id(&self, id: usize) -> bool {
        (1..=self.passages.len()).contains(&id)
    }

    /// Lines in the `[#n] (source) passage` form the prompts use.
    pub fn prompt_block(&self) -> String {
        self.passages
            .iter()
            .map(|p| format!("[#{}] ({}) {}", p.passage_id, p.source, p.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub posting_id: String,
    pub text: String,
    #[serde(rename = "citations")]
    pub cited_passage_ids: Vec<usize>,
}

fn top_sentences(
    doc: &str,
    other: &crate::embedding::EmbeddingVector,
    source: Source,
    m: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Passage>, ExplainError> {
    let mut scored = Vec::new();
    for sentence in split_sentences(doc) {
        match embed_document(sentence, provider) {
            Ok(v) => scored.push(Passage {
                source,
                passage_id: 0,
                text: sentence.to_string(),
                similarity: cosine(&v, other)?,
            }),
            Err(EmbedError::Unembeddable) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    if scored.is_empty() {
        return Err(ExplainError::NoSentences(source));
    }
    // stable: equal scores keep document order
    scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    scored.truncate(m);
    Ok(scored)
}

/// Top-`m` sentences from each side, merged by similarity (resume first on
/// ties) and numbered from 1.
pub fn retrieve_evidence(
    resume: &FusedDocument,
    posting: &FusedDocument,
    m: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<EvidenceSet, ExplainError> {
    if m == 0 {
        return Err(ExplainError::ZeroPassages);
    }
    let resume_vec = embed_document(&resume.text, provider)?;
    let posting_vec = embed_document(&posting.text, provider)?;
    let mut passages = top_sentences(&resume.text, &posting_vec, Source::Resume, m, provider)?;
    passages.extend(top_sentences(&posting.text, &resume_vec, Source::Posting, m, provider)?);
    passages.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    for (i, p) in passages.iter_mut().enumerate() {
        p.passage_id = i + 1;
    }
    Ok(EvidenceSet { posting_id: posting.doc_id.clone(), passages })
}

fn citation_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[#(\d+)\]").expect("static pattern"))
}

/// Sorted, de-duplicated `[#n]` ids appearing in `text`.
pub fn parse_citations(text: &str) -> Vec<usize> {
    let ids: BTreeSet<usize> = citation_pattern()
        .captures_iter(text)
        .filter_map(|c| c[1].parse().ok())
        .collect();
    ids.into_iter().collect()
}

fn check_grounding(text: &str, evidence: &EvidenceSet) -> Result<Vec<usize>, ExplainError> {
    let cited = parse_citations(text);
    if cited.is_empty() || cited.iter().any(|&id| !evidence.contains_id(id)) {
        return Err(ExplainError::Ungrounded { cited, available: evidence.passages.len() });
    }
    Ok(cited)
}

/// Generates a justification citing only the evidence; an ungrounded
/// response is retried once before failing.
pub fn generate_explanation(evidence: &EvidenceSet, gateway: &Gateway) -> Result<Explanation, ExplainError> {
    if evidence.passages.is_empty() {
        return Err(ExplainError::EmptyEvidence);
    }
    let prompt = render(
        &gateway.prompts().explain,
        &[("posting_id", evidence.posting_id.as_str()), ("evidence", &evidence.prompt_block())],
    );
    let request = LlmRequest::new(Purpose::Explain, prompt, EXPLAIN_TEMPERATURE, EXPLAIN_MAX_TOKENS);
    let mut last = None;
    for attempt in 0..2u64 {
        let response = gateway.complete(&request.clone().with_seed(attempt))?;
        match check_grounding(&response.text, evidence) {
            Ok(cited) => {
                return Ok(Explanation {
                    posting_id: evidence.posting_id.clone(),
                    text: response.text,
                    cited_passage_ids: cited,
                })
            }
            Err(e) => {
                tracing::warn!(attempt, error = %e, "rejected explanation");
                last = Some(e);
            }
        }
    }
    Err(last.unwrap_or(ExplainError::EmptyEvidence))
}
