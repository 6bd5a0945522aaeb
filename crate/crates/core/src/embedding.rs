//! Document and token embeddings behind a provider trait, plus vector math.
//!
//! [`HashingEmbedder`] is the offline default: lowercase alphanumeric tokens,
//! each hashed with 64-bit FNV-1a; the bucket is `hash % dims` and bit 63 picks
//! the sign. Signed counts are accumulated and L2-normalized.
//! [`RemoteEmbedder`] talks to an embeddings service over HTTP.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{post_with_retry, HttpTransport, Limiter, RequestError, RetryPolicy};
use crate::text::tokenize;

pub const DEFAULT_DIMS: usize = 256;
pub const DEFAULT_PHASE2_DIMS: usize = 512;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("unembeddable document")]
    Unembeddable,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("non-finite embedding value")]
    NonFinite,
    #[error("embedding transport error: {0}")]
    Transport(#[from] RequestError),
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
}

impl EmbedError {
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, EmbedError::Transport(_) | EmbedError::MalformedResponse(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::ZeroVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let normalized = (l2_norm(&values) - 1.0).abs() <= NORM_TOLERANCE;
        Ok(EmbeddingVector { values, normalized })
    }

    /// L2-normalizes `values`; fails on an all-zero input.
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbedError> {
        let mut v = EmbeddingVector::new(values)?;
        let norm = l2_norm(&v.values);
        if norm == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        v.values.iter_mut().for_each(|x| *x /= norm);
        v.normalized = true;
        Ok(v)
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Per-token unit vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    tokens: Vec<String>,
    dims: usize,
    matrix: Vec<f64>,
}

impl TokenEmbeddings {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.matrix.chunks_exact(self.dims.max(1))
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Raw (not necessarily normalized) vectors, one per input text, in order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError>;

    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dims: usize,
}

impl HashingEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "hashing embedder needs at least one dimension");
        HashingEmbedder { dims }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Bucket and sign of one token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dims as u64) as usize, sign)
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        for token in tokenize(text) {
            let (bucket, sign) = self.slot(&token);
            v[bucket] += sign;
        }
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_DIMS)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn name(&self) -> String {
        format!("hash-{}", self.dims)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Embeddings service client. Dimensions are learned from the first response
/// and every later response must agree.
pub struct RemoteEmbedder {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
    limiter: Limiter,
    dims: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(
        transport: Arc<dyn HttpTransport>,
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Self {
        RemoteEmbedder {
            transport,
            base_url: base_url.into(),
            api_key,
            model: model.into(),
            retry,
            limiter: Limiter::new(max_in_flight),
            dims: OnceLock::new(),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/embeddings", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let resp = post_with_retry(
            self.transport.as_ref(),
            &self.limiter,
            &self.retry,
            &self.endpoint(),
            self.api_key.as_deref(),
            &body,
        )?;
        let parsed: EmbeddingResponse = serde_json::from_str(&resp.body)
            .map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for datum in parsed.data {
            let slot = out.get_mut(datum.index).ok_or_else(|| {
                EmbedError::MalformedResponse(format!("index {} out of range", datum.index))
            })?;
            let expected = *self.dims.get_or_init(|| datum.embedding.len());
            if datum.embedding.len() != expected {
                return Err(EmbedError::DimMismatch {
                    left: expected,
                    right: datum.embedding.len(),
                });
            }
            *slot = Some(datum.embedding);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| EmbedError::MalformedResponse(format!("missing index {i}"))))
            .collect()
    }

    fn name(&self) -> String {
        format!("remote-{}", self.model)
    }
}

/// Unit-norm document vector. Texts without any token are rejected.
pub fn embed_document(
    text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingVector, EmbedError> {
    embed_documents(&[text], provider).map(|mut v| v.remove(0))
}

/// Batched [`embed_document`].
pub fn embed_documents(
    texts: &[&str],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.iter().any(|t| tokenize(t).is_empty()) {
        return Err(EmbedError::Unembeddable);
    }
    provider
        .embed_batch(texts)?
        .into_iter()
        .map(|raw| {
            EmbeddingVector::normalized(raw).map_err(|e| match e {
                EmbedError::ZeroVector => EmbedError::Unembeddable,
                other => other,
            })
        })
        .collect()
}

/// One unit row per token; tokens whose vector is zero are dropped with
/// their row.
pub fn embed_tokens(
    text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<TokenEmbeddings, EmbedError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(EmbedError::Unembeddable);
    }
    let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let raw = provider.embed_batch(&refs)?;
    let mut kept = Vec::with_capacity(tokens.len());
    let mut matrix = Vec::new();
    let mut dims = None;
    for (token, row) in tokens.into_iter().zip(raw) {
        match *dims.get_or_insert(row.len()) {
            d if d != row.len() => return Err(EmbedError::DimMismatch { left: d, right: row.len() }),
            _ => {}
        }
        match EmbeddingVector::normalized(row) {
            Ok(v) => {
                matrix.extend_from_slice(v.values());
                kept.push(token);
            }
            Err(EmbedError::ZeroVector) => continue,
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(EmbedError::Unembeddable);
    }
    Ok(TokenEmbeddings {
        tokens: kept,
        dims: dims.unwrap_or(0),
        matrix,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity. Exactly the dot product when both inputs are normalized.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dims() != b.dims() {
        return Err(EmbedError::DimMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let d = dot(a.values(), b.values());
    if a.is_normalized() && b.is_normalized() {
        return Ok(d);
    }
    let (na, nb) = (l2_norm(a.values()), l2_norm(b.values()));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(d / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::ScriptedTransport;
    use crate::http::HttpResponse;
    use std::time::Duration;

    // Independent FNV-1a 64 reference used to enumerate buckets.
    fn reference_bucket(token: &str, dims: u64) -> (u64, bool) {
        let mut h: u64 = 14695981039346656037;
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(1099511628211);
        }
        (h % dims, h & (1 << 63) != 0)
    }

    #[test]
    fn hashing_is_deterministic() {
        let p = HashingEmbedder::default();
        let a = embed_document("senior rust engineer", &p).unwrap();
        let b = embed_document("senior rust engineer", &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(cosine(&a, &b).unwrap(), dot(a.values(), a.values()));
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn whitespace_only_is_unembeddable() {
        let err = embed_document("   ", &HashingEmbedder::default()).unwrap_err();
        assert_eq!(err.to_string(), "unembeddable document");
        // the two tokens share a bucket with opposite signs
        let cancelled = embed_document("kcbdqw es", &HashingEmbedder::default());
        assert!(matches!(cancelled, Err(EmbedError::Unembeddable)));
    }

    #[test]
    fn disjoint_buckets_give_zero_cosine() {
        let buckets: Vec<u64> = ["rust", "systems", "piano", "sonata"]
            .iter()
            .map(|t| reference_bucket(t, 256).0)
            .collect();
        // Bucket disjointness between the two documents is a precondition.
        for a in &buckets[..2] {
            assert!(!buckets[2..].contains(a), "bucket collision: {buckets:?}");
        }
        let p = HashingEmbedder::new(256);
        let a = embed_document("rust systems", &p).unwrap();
        let b = embed_document("piano sonata", &p).unwrap();
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn implementation_matches_reference_hash() {
        let p = HashingEmbedder::new(97);
        for t in ["a", "rust", "kubernetes", "zz9", "\u{e9}t\u{e9}"] {
            let (bucket, neg) = reference_bucket(t, 97);
            assert_eq!(p.slot(t), (bucket as usize, if neg { -1.0 } else { 1.0 }));
        }
    }

    #[test]
    fn token_rows() {
        let p = HashingEmbedder::default();
        let te = embed_tokens("a b a", &p).unwrap();
        assert_eq!(te.len(), 3);
        assert_eq!(te.row(0), te.row(2));
        let single = embed_tokens("solo", &p).unwrap();
        assert_eq!(single.len(), 1);
        assert!((l2_norm(single.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signed_hashing_never_yields_zero_token_rows() {
        // Exhaustive over all 1..=3 character tokens from a small alphabet.
        let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz0123456789".chars().collect();
        let p = HashingEmbedder::new(64);
        let mut tokens = Vec::new();
        for &a in &alphabet {
            tokens.push(a.to_string());
            for &b in &alphabet {
                tokens.push(format!("{a}{b}"));
                for &c in &alphabet[..6] {
                    tokens.push(format!("{a}{b}{c}"));
                }
            }
        }
        let text = tokens.join(" ");
        let te = embed_tokens(&text, &p).unwrap();
        assert_eq!(te.len(), tokens.len());
        for row in te.rows() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_examples() {
        let e1 = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let e2 = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(cosine(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        let h = 1.0 / 2f64.sqrt();
        let diag = EmbeddingVector::new(vec![h, h]).unwrap();
        // independent: (1*h + 0*h) = h
        assert!((cosine(&e1, &diag).unwrap() - 0.707_106_78).abs() < 1e-8);
        assert!((cosine(&e1, &diag).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(cosine(&a, &b), Err(EmbedError::DimMismatch { .. })));
        let z = EmbeddingVector::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(cosine(&a, &z), Err(EmbedError::ZeroVector)));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn remote_embedder_reorders_by_index_and_checks_dims() {
        let t = ScriptedTransport::new(Duration::ZERO, |call, body| {
            let n = body["input"].as_array().unwrap().len();
            let dims = if call == 0 { 3 } else { 4 };
            let data: Vec<_> = (0..n)
                .rev()
                .map(|i| serde_json::json!({"index": i, "embedding": vec![i as f64 + 1.0; dims]}))
                .collect();
            Ok(HttpResponse {
                status: 200,
                body: serde_json::json!({ "data": data }).to_string(),
            })
        });
        let e = RemoteEmbedder::new(Arc::new(t), "http://x/", None, "m", RetryPolicy::default(), 8);
        let out = e.embed_batch(&["a", "b"]).unwrap();
        assert_eq!(out[0], vec![1.0; 3]);
        assert_eq!(out[1], vec![2.0; 3]);
        assert!(matches!(e.embed_batch(&["c"]), Err(EmbedError::DimMismatch { .. })));
    }

    #[test]
    fn remote_failure_is_transport_error() {
        let t = ScriptedTransport::new(Duration::ZERO, |_, _| {
            Ok(HttpResponse { status: 503, body: String::new() })
        });
        let policy = RetryPolicy {
            base_backoff: Duration::from_millis(1),
            ..RetryPolicy::default()
        };
        let e = RemoteEmbedder::new(Arc::new(t), "http://x", None, "m", policy, 2);
        let err = embed_document("hello", &e).unwrap_err();
        assert!(err.is_provider_failure());
        assert!(err.to_string().contains("retries exhausted"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn self_cosine_is_one_and_symmetric(a in "[a-z ]{1,40}[a-z]", b in "[a-z]{1,10}( [a-z]{1,10}){0,5}") {
                let p = HashingEmbedder::default();
                let (va, vb) = match (embed_document(&a, &p), embed_document(&b, &p)) {
                    (Ok(va), Ok(vb)) => (va, vb),
                    _ => return Err(TestCaseError::reject("signed buckets cancelled to zero")),
                };
                prop_assert!((cosine(&va, &va).unwrap() - 1.0).abs() < 1e-12);
                prop_assert_eq!(cosine(&va, &vb).unwrap(), cosine(&vb, &va).unwrap());
                prop_assert!(cosine(&va, &vb).unwrap().abs() <= 1.0 + 1e-9);
            }
        }
    }
}
