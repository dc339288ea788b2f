use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::truncate_chars;
use crate::hash::{fnv1a64, prompt_hash};
use crate::llm::{classify_ureq_error, with_retries, ProviderConfig, ProviderError, RetryPolicy, Throttle, TransportError};
use crate::sparse::{tokenize, TokenizerConfig};

pub const DEFAULT_EMBED_CREDENTIAL_ENV: &str = "TCDE_EMBED_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedRole {
    Query,
    Passage,
}

/// A text encoder producing fixed-dimension vectors.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn batch_limit(&self) -> usize;
    fn query_prefix(&self) -> &str;
    fn passage_prefix(&self) -> &str;
    /// Embeds already-prefixed texts, at most `batch_limit` at a time.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

fn protocol(texts: &[String], message: String) -> Error {
    Error::Provider(ProviderError::Protocol {
        prompt_hash: prompt_hash(texts.first().map_or("", String::as_str)),
        message,
    })
}

/// Embeds `texts` in `role`, prepending the role prefix. Output order
/// matches input order.
pub fn embed(texts: &[String], role: EmbedRole, embedder: &dyn Embedder) -> Result<Vec<Vec<f32>>> {
    let prefix = match role {
        EmbedRole::Query => embedder.query_prefix(),
        EmbedRole::Passage => embedder.passage_prefix(),
    };
    let prefixed: Vec<String> = texts.iter().map(|t| format!("{prefix}{t}")).collect();
    if let Some(i) = prefixed.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::InvalidData(format!("text {i} is empty after prefixing")));
    }
    let dim = embedder.dimension();
    let batches: Vec<Vec<Vec<f32>>> = prefixed
        .par_chunks(embedder.batch_limit().max(1))
        .map(|chunk| {
            let vectors = embedder.embed_batch(chunk)?;
            if vectors.len() != chunk.len() {
                return Err(protocol(
                    chunk,
                    format!("{} vectors returned for {} texts", vectors.len(), chunk.len()),
                ));
            }
            for v in &vectors {
                if v.len() != dim {
                    return Err(protocol(chunk, format!("vector of dimension {} where {dim} expected", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(protocol(chunk, "non-finite vector component".into()));
                }
            }
            Ok(vectors)
        })
        .collect::<Result<_>>()?;
    Ok(batches.into_iter().flatten().collect())
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidData(format!(
            "cosine of vectors with dimensions {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Feature-hashing bag-of-words encoder: each token adds 1 at
/// `fnv1a64(token) mod dimension`, then the vector is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    model_id: String,
    tokenizer: TokenizerConfig,
}

impl HashingEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize) -> Self {
        let dimension = dimension.max(1);
        Self {
            dimension,
            model_id: format!("hashing-{dimension}"),
            tokenizer: TokenizerConfig::default(),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dimension];
        for token in tokenize(text, &self.tokenizer) {
            acc[(fnv1a64(token.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dimension];
        }
        acc.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

impl Embedder for HashingEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn batch_limit(&self) -> usize {
        64
    }
    fn query_prefix(&self) -> &str {
        "query: "
    }
    fn passage_prefix(&self) -> &str {
        "passage: "
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub model_id: String,
    pub dimension: usize,
    pub batch_size: usize,
    pub query_prefix: String,
    pub passage_prefix: String,
    /// Longer inputs are truncated to this many characters.
    pub max_input_chars: usize,
    pub timeout_secs: u64,
    pub provider: ProviderConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            model_id: "intfloat/multilingual-e5-base".to_string(),
            dimension: 768,
            batch_size: 32,
            query_prefix: "query: ".to_string(),
            passage_prefix: "passage: ".to_string(),
            max_input_chars: 2_048,
            timeout_secs: 60,
            provider: ProviderConfig {
                credential_env: DEFAULT_EMBED_CREDENTIAL_ENV.to_string(),
                ..ProviderConfig::default()
            },
        }
    }
}

/// Embeddings over HTTP: `{"model", "input": [...]}` in,
/// `{"data": [{"embedding": [...]}, ...]}` out.
pub struct HttpEmbedder {
    config: EmbeddingConfig,
    throttle: Throttle,
    attempts: AtomicU64,
    truncated: AtomicU64,
}

impl HttpEmbedder {
    pub fn new(config: EmbeddingConfig) -> Self {
        let throttle = Throttle::new(
            config.provider.max_concurrent_requests,
            config.provider.requests_per_second,
        );
        Self {
            config,
            throttle,
            attempts: AtomicU64::new(0),
            truncated: AtomicU64::new(0),
        }
    }

    /// Inputs shortened to `max_input_chars` so far.
    pub fn truncated(&self) -> u64 {
        self.truncated.load(Ordering::Relaxed)
    }

    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn send(&self, inputs: &[&str], credential: &str) -> std::result::Result<Vec<Vec<f32>>, TransportError> {
        let _permit = self.throttle.acquire();
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(self.config.timeout_secs))
            .build();
        let body = serde_json::json!({ "model": self.config.model_id, "input": inputs });
        let response = agent
            .post(&self.config.provider.endpoint)
            .set("Authorization", &format!("Bearer {credential}"))
            .send_json(body)
            .map_err(classify_ureq_error)?;
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| TransportError::Protocol(format!("response is not JSON: {e}")))?;
        let data = value
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| TransportError::Protocol("missing `data` array".into()))?;
        data.iter()
            .map(|item| {
                item.get("embedding")
                    .and_then(|e| e.as_array())
                    .ok_or_else(|| TransportError::Protocol("missing `embedding`".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .map(|x| x as f32)
                            .ok_or_else(|| TransportError::Protocol("non-numeric component".into()))
                    })
                    .collect()
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }
    fn dimension(&self) -> usize {
        self.config.dimension
    }
    fn batch_limit(&self) -> usize {
        self.config.batch_size.max(1)
    }
    fn query_prefix(&self) -> &str {
        &self.config.query_prefix
    }
    fn passage_prefix(&self) -> &str {
        &self.config.passage_prefix
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let credential = self.config.provider.resolve_credential()?;
        let limit = self.config.max_input_chars;
        let inputs: Vec<&str> = texts
            .iter()
            .map(|t| {
                let cut = truncate_chars(t, limit);
                if cut.len() < t.len() {
                    self.truncated.fetch_add(1, Ordering::Relaxed);
                }
                cut
            })
            .collect();
        let policy = RetryPolicy {
            max_retries: self.config.provider.max_retries,
            backoff_base: self.config.provider.backoff_base(),
        };
        let hash = prompt_hash(inputs.first().copied().unwrap_or(""));
        Ok(with_retries(policy, &self.attempts, &hash, || self.send(&inputs, &credential))?)
    }
}
