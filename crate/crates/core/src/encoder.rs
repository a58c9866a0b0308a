//! Frozen text embedders.
//!
//! Every exemplar key and every query goes through an [`Embedder`] exactly once
//! per text; nothing downstream ever updates embedder weights. Two
//! implementations ship here: [`HashingEmbedder`], a deterministic
//! feature-hashed bag of character trigrams, and [`RemoteEmbedder`], a JSON
//! client for an external embedding service.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps text to a fixed-dimension real vector. Implementations must be pure
/// (same text, same vector) and callable from several threads at once.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Feature-hashed bag of character trigrams, L2-normalized.
///
/// Text is lowercased and read as a sequence of Unicode scalar values. Each
/// trigram is hashed (seeded) to a bucket and a sign. Text with fewer than
/// three characters has no trigrams and embeds to the zero vector; the same
/// holds in the degenerate case where signed counts cancel exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn bucket(&self, trigram: &[char; 3]) -> (usize, f64) {
        let h = stable_hash(self.seed, trigram);
        let index = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        (index, sign)
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBEDDING_DIM,
            seed: 0,
        }
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
        let mut v = vec![0.0; self.dim];
        for w in chars.windows(3) {
            let (i, sign) = self.bucket(&[w[0], w[1], w[2]]);
            v[i] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// FNV-1a over the trigram's UTF-32 code points, seeded through the offset
/// basis, followed by a splitmix64 finalizer to spread the low bits.
fn stable_hash(seed: u64, trigram: &[char; 3]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for c in trigram {
        for b in (*c as u32).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service speaking
/// `POST {"texts": [...]}` → `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    dim: usize,
    max_attempts: u32,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout: Duration) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            endpoint: endpoint.into(),
            dim,
            max_attempts: 3,
            agent,
        })
    }

    pub fn with_max_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    fn post_once(&self, texts: &[&str]) -> Result<String> {
        let body = serde_json::to_string(&EmbedRequest { texts })?;
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(body.as_bytes())
            .map_err(|e| Error::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        if status.is_server_error() {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {text}"),
            });
        }
        if !status.is_success() {
            return Err(Error::Provider {
                payload: format!("HTTP {status}: {text}"),
            });
        }
        Ok(text)
    }

    /// Validates a response body against the configured dimension.
    pub fn parse_response(&self, body: &str, expected_rows: usize) -> Result<Vec<Vec<f64>>> {
        let parsed: EmbedResponse = serde_json::from_str(body).map_err(|e| Error::Provider {
            payload: format!("{e}: {body}"),
        })?;
        if parsed.vectors.len() != expected_rows {
            return Err(Error::Provider {
                payload: format!(
                    "expected {expected_rows} vectors, got {}",
                    parsed.vectors.len()
                ),
            });
        }
        for v in &parsed.vectors {
            if v.len() != self.dim {
                return Err(Error::Config(format!(
                    "embedding service returned dimension {}, configured {}",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Provider {
                    payload: "embedding service returned a non-finite value".into(),
                });
            }
        }
        Ok(parsed.vectors)
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let body = with_retries(self.max_attempts, || self.post_once(texts))?;
        self.parse_response(&body, texts.len())
    }
}

/// Runs `call` until it succeeds, fails non-retryably, or runs out of attempts.
/// Transport errors carry the number of attempts made.
pub(crate) fn with_retries<T>(max_attempts: u32, mut call: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match call() {
            Err(Error::Transport { message, .. }) => {
                if attempt >= max_attempts {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message,
                    });
                }
                thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            other => return other,
        }
    }
}
