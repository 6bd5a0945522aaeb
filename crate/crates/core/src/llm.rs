//! Single entry point for every LLM call.
//!
//! [`Gateway`] pairs a provider with the prompt templates. Two providers ship:
//! [`RemoteLlm`] speaks the chat-completions JSON shape with retries, timeouts
//! and an in-flight bound, and [`MockLlm`] is a pure function of
//! (purpose, prompt, request seed, mock seed) that the offline test suite runs on.
//!
//! Prompt templates delimit their payload with marker lines such as
//! `[[CONTEXT]]`, `[[A]]`, `[[B]]` and `[[END]]`; the mock reads those sections.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::fnv1a64;
use crate::http::{post_with_retry, HttpTransport, Limiter, RequestError, RetryPolicy};
use crate::text;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid llm request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Transport(#[from] RequestError),
    #[error("malformed llm response: {0}")]
    MalformedResponse(String),
    #[error("prompt template {name}: {problem}")]
    Template { name: String, problem: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Compare,
    Mutate,
    Crossover,
    Explain,
}

impl Purpose {
    fn as_str(self) -> &'static str {
        match self {
            Purpose::Compare => "compare",
            Purpose::Mutate => "mutate",
            Purpose::Crossover => "crossover",
            Purpose::Explain => "explain",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub purpose: Purpose,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sampling seed forwarded to the provider. Callers vary it to request
    /// distinct rewrites of the same prompt.
    pub seed: Option<u64>,
}

impl LlmRequest {
    pub fn new(purpose: Purpose, prompt: String, temperature: f64, max_tokens: u32) -> Self {
        LlmRequest { purpose, prompt, temperature, max_tokens, seed: None }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub latency: Duration,
    pub provider: ProviderKind,
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

/// Prompt templates, one per call site. Leading `#` lines are version headers
/// and are stripped on load.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub compare_postings: String,
    pub compare_resumes: String,
    pub mutate_light: String,
    pub mutate_aggressive: String,
    pub crossover: String,
    pub explain: String,
}

const TEMPLATE_SPECS: [(&str, &[&str]); 6] = [
    ("compare_postings", &["{resume}", "{posting_a}", "{posting_b}", "[[A]]", "[[B]]"]),
    ("compare_resumes", &["{posting}", "{resume_a}", "{resume_b}", "[[A]]", "[[B]]"]),
    ("mutate_light", &["{resume}", "[[RESUME]]"]),
    ("mutate_aggressive", &["{resume}", "{keywords}", "[[RESUME]]", "[[KEYWORDS]]"]),
    ("crossover", &["{parent_a}", "{parent_b}", "[[PARENT_A]]", "[[PARENT_B]]"]),
    ("explain", &["{posting_id}", "{evidence}", "[[EVIDENCE]]"]),
];

impl Prompts {
    pub fn builtin() -> Self {
        Prompts::from_sources(|name| {
            Ok(match name {
                "compare_postings" => include_str!("../prompts/compare_postings.txt"),
                "compare_resumes" => include_str!("../prompts/compare_resumes.txt"),
                "mutate_light" => include_str!("../prompts/mutate_light.txt"),
                "mutate_aggressive" => include_str!("../prompts/mutate_aggressive.txt"),
                "crossover" => include_str!("../prompts/crossover.txt"),
                _ => include_str!("../prompts/explain.txt"),
            }
            .to_string())
        })
        .expect("builtin prompts are valid")
    }

    /// Loads `<name>.txt` for every template from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, LlmError> {
        Prompts::from_sources(|name| {
            fs::read_to_string(dir.join(format!("{name}.txt"))).map_err(|e| LlmError::Template {
                name: name.to_string(),
                problem: e.to_string(),
            })
        })
    }

    fn from_sources(mut read: impl FnMut(&str) -> Result<String, LlmError>) -> Result<Self, LlmError> {
        let mut loaded = HashMap::new();
        for (name, required) in TEMPLATE_SPECS {
            let body = strip_header(&read(name)?);
            if let Some(missing) = required.iter().find(|r| !body.contains(*r)) {
                return Err(LlmError::Template {
                    name: name.to_string(),
                    problem: format!("missing {missing}"),
                });
            }
            loaded.insert(name, body);
        }
        let mut take = |n: &str| loaded.remove(n).unwrap_or_default();
        Ok(Prompts {
            compare_postings: take("compare_postings"),
            compare_resumes: take("compare_resumes"),
            mutate_light: take("mutate_light"),
            mutate_aggressive: take("mutate_aggressive"),
            crossover: take("crossover"),
            explain: take("explain"),
        })
    }
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts::builtin()
    }
}

fn strip_header(s: &str) -> String {
    s.lines().skip_while(|l| l.starts_with('#')).collect::<Vec<_>>().join("\n").trim().to_string()
}

/// Single-pass `{name}` substitution; substituted values are not re-scanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match tail.find('}').map(|close| (&tail[1..close], close)) {
            Some((name, close)) if vars.iter().any(|(k, _)| *k == name) => {
                let value = vars.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).unwrap_or("");
                out.push_str(value);
                rest = &tail[close + 1..];
            }
            _ => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Splits a prompt into `[[NAME]]`-delimited sections.
pub fn prompt_sections(prompt: &str) -> HashMap<String, String> {
    let mut sections = HashMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in prompt.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("[[") && trimmed.ends_with("]]") && trimmed.len() > 4 {
            if let Some((name, body)) = current.take() {
                sections.insert(name, body.join("\n").trim().to_string());
            }
            current = Some((trimmed[2..trimmed.len() - 2].to_string(), Vec::new()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some((name, body)) = current {
        sections.insert(name, body.join("\n").trim().to_string());
    }
    sections
}

/// Deterministic offline provider.
///
/// * compare: answers the side whose `[[A]]`/`[[B]]` section shares more
///   distinct tokens with `[[CONTEXT]]`, `TIE` on equal overlap;
/// * mutate: `light` mode substitutes synonyms, `aggressive` deletes a
///   10-20% word span then appends up to 5 `[[KEYWORDS]]` absent from the resume;
/// * crossover: interleaves the parents' sentences, deduplicated;
/// * explain: quotes every evidence passage verbatim with its `[#n]` tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockLlm {
    pub seed: u64,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        MockLlm { seed }
    }

    fn rng_for(&self, request: &LlmRequest) -> ChaCha8Rng {
        let mut key = Vec::with_capacity(request.prompt.len() + 32);
        key.extend_from_slice(&self.seed.to_le_bytes());
        key.extend_from_slice(&request.seed.unwrap_or(0).to_le_bytes());
        key.extend_from_slice(request.purpose.as_str().as_bytes());
        key.extend_from_slice(request.prompt.as_bytes());
        ChaCha8Rng::seed_from_u64(fnv1a64(&key))
    }

    pub fn respond(&self, request: &LlmRequest) -> String {
        let sections = prompt_sections(&request.prompt);
        let get = |name: &str| sections.get(name).map(String::as_str).unwrap_or("");
        match request.purpose {
            Purpose::Compare => {
                let context = text::token_set(get("CONTEXT"));
                let overlap = |s: &str| text::token_set(s).intersection(&context).count();
                match overlap(get("A")).cmp(&overlap(get("B"))) {
                    std::cmp::Ordering::Greater => "A".into(),
                    std::cmp::Ordering::Less => "B".into(),
                    std::cmp::Ordering::Equal => "TIE".into(),
                }
            }
            Purpose::Mutate => {
                let mut rng = self.rng_for(request);
                let resume = get("RESUME");
                if get("MODE") == "aggressive" {
                    let keywords: Vec<String> = get("KEYWORDS")
                        .split(',')
                        .map(|k| k.trim().to_string())
                        .filter(|k| !k.is_empty())
                        .collect();
                    let fraction = rng.gen_range(0.10..=0.20);
                    let cut = text::delete_span(resume, fraction, &mut rng);
                    text::inject_keywords(&cut, &keywords, 5)
                } else {
                    text::substitute_synonyms(resume, &mut rng)
                }
            }
            Purpose::Crossover => text::interleave_dedup(get("PARENT_A"), get("PARENT_B")),
            Purpose::Explain => {
                let mut out = vec!["This posting lines up with the candidate's background.".to_string()];
                for line in get("EVIDENCE").lines() {
                    if let Some((tag, source, passage)) = parse_evidence_line(line) {
                        let who = if source == "resume" { "The resume states" } else { "The posting asks for" };
                        out.push(format!("{who} \"{passage}\" [#{tag}]."));
                    }
                }
                out.join(" ")
            }
        }
    }
}

/// Parses `[#n] (source) passage`.
pub fn parse_evidence_line(line: &str) -> Option<(usize, &str, &str)> {
    let rest = line.trim().strip_prefix("[#")?;
    let (tag, rest) = rest.split_once(']')?;
    let rest = rest.trim_start().strip_prefix('(')?;
    let (source, passage) = rest.split_once(')')?;
    Some((tag.parse().ok()?, source, passage.trim()))
}

impl LlmProvider for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let start = Instant::now();
        let text = self.respond(request);
        Ok(LlmResponse { text, latency: start.elapsed(), provider: ProviderKind::Mock })
    }
}

/// Chat-completions client: `POST {base}/chat/completions`.
pub struct RemoteLlm {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
    limiter: Limiter,
}

impl RemoteLlm {
    pub fn new(
        transport: Arc<dyn HttpTransport>,
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Self {
        RemoteLlm {
            transport,
            base_url: base_url.into(),
            api_key,
            model: model.into(),
            retry,
            limiter: Limiter::new(max_in_flight),
        }
    }

    pub fn request_body(&self, request: &LlmRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = seed.into();
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl LlmProvider for RemoteLlm {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let start = Instant::now();
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let resp = post_with_retry(
            self.transport.as_ref(),
            &self.limiter,
            &self.retry,
            &url,
            self.api_key.as_deref(),
            &self.request_body(request),
        )?;
        let parsed: ChatResponse =
            serde_json::from_str(&resp.body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))?;
        Ok(LlmResponse { text, latency: start.elapsed(), provider: ProviderKind::Remote })
    }
}

/// Provider plus prompt templates, shared by every LLM-backed module.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn LlmProvider>,
    prompts: Arc<Prompts>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn LlmProvider>, prompts: Prompts) -> Self {
        Gateway { provider, prompts: Arc::new(prompts) }
    }

    pub fn mock(seed: u64) -> Self {
        Gateway::new(Arc::new(MockLlm::new(seed)), Prompts::builtin())
    }

    pub fn prompts(&self) -> &Prompts {
        &self.prompts
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        self.provider.complete(request)
    }
}
