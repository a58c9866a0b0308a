//! The language model as an RL environment: it scores reference completions
//! under a prompt and decodes hypotheses for evaluation.

pub mod prompt;
pub mod remote;
pub mod synthetic;

use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::exemplar_store::Exemplar;

pub use prompt::{parse_prompt, render_prompt, Prompt};
pub use remote::RemoteLmEnv;
pub use synthetic::SyntheticOracleEnv;

/// Log-likelihood of a reference continuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceScore {
    /// Natural-log probability of the whole reference; always ≤ 0.
    pub log_prob: f64,
    /// Number of tokens the reference was split into.
    pub tokens: usize,
}

impl ReferenceScore {
    /// `exp(log_prob)`, or the per-token geometric mean when `length_normalize`.
    pub fn probability(&self, length_normalize: bool) -> f64 {
        if length_normalize && self.tokens > 0 {
            (self.log_prob / self.tokens as f64).exp()
        } else {
            self.log_prob.exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub text: String,
    pub score: f64,
}

pub trait LmEnvironment: Send + Sync {
    fn score(&self, prompt: &Prompt, reference: &str) -> Result<ReferenceScore>;

    /// At most `beams` hypotheses, best first.
    fn generate(&self, prompt: &Prompt, beams: usize) -> Result<Vec<Hypothesis>>;
}

impl<E: LmEnvironment + ?Sized> LmEnvironment for &E {
    fn score(&self, prompt: &Prompt, reference: &str) -> Result<ReferenceScore> {
        (**self).score(prompt, reference)
    }

    fn generate(&self, prompt: &Prompt, beams: usize) -> Result<Vec<Hypothesis>> {
        (**self).generate(prompt, beams)
    }
}

impl<E: LmEnvironment + ?Sized> LmEnvironment for Box<E> {
    fn score(&self, prompt: &Prompt, reference: &str) -> Result<ReferenceScore> {
        (**self).score(prompt, reference)
    }

    fn generate(&self, prompt: &Prompt, beams: usize) -> Result<Vec<Hypothesis>> {
        (**self).generate(prompt, beams)
    }
}

pub fn render_exemplars<'a>(exemplars: impl IntoIterator<Item = &'a Exemplar>, query: &str) -> Prompt {
    let pairs: Vec<(&str, &str)> = exemplars
        .into_iter()
        .map(|e| (e.input_text.as_str(), e.output_text.as_str()))
        .collect();
    render_prompt(pairs, query)
}

/// Reference probability given the query and an exemplar sequence.
pub fn reference_probability(
    env: &dyn LmEnvironment,
    query: &str,
    reference: &str,
    exemplars: &[&Exemplar],
    length_normalize: bool,
) -> Result<f64> {
    let prompt = render_exemplars(exemplars.iter().copied(), query);
    let score = env.score(&prompt, reference)?;
    if score.log_prob.is_nan() || score.log_prob > 0.0 {
        return Err(Error::Provider {
            payload: format!("environment returned log probability {}", score.log_prob),
        });
    }
    Ok(score.probability(length_normalize))
}

/// Increase in reference probability from appending `new_exemplar` to `prev`.
/// Can be negative. Environment failures propagate; there is no default.
pub fn reward(
    env: &dyn LmEnvironment,
    query: &str,
    reference: &str,
    prev: &[&Exemplar],
    new_exemplar: &Exemplar,
    length_normalize: bool,
) -> Result<f64> {
    let before = reference_probability(env, query, reference, prev, length_normalize)?;
    let mut extended = prev.to_vec();
    extended.push(new_exemplar);
    let after = reference_probability(env, query, reference, &extended, length_normalize)?;
    Ok(after - before)
}

/// Memoizes `score` by `(prompt, reference)`; `generate` passes through.
pub struct MemoEnv<E> {
    inner: E,
    cache: Mutex<HashMap<(String, String), ReferenceScore>>,
}

impl<E: LmEnvironment> MemoEnv<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().expect("memo lock").len()
    }
}

impl<E: LmEnvironment> LmEnvironment for MemoEnv<E> {
    fn score(&self, prompt: &Prompt, reference: &str) -> Result<ReferenceScore> {
        let key = (prompt.text.clone(), reference.to_string());
        if let Some(hit) = self.cache.lock().expect("memo lock").get(&key) {
            return Ok(*hit);
        }
        let value = self.inner.score(prompt, reference)?;
        self.cache.lock().expect("memo lock").insert(key, value);
        Ok(value)
    }

    fn generate(&self, prompt: &Prompt, beams: usize) -> Result<Vec<Hypothesis>> {
        self.inner.generate(prompt, beams)
    }
}
