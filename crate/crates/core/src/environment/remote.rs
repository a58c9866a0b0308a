//! Completion-style HTTP client.
//!
//! Scoring sends the prompt with the reference appended and asks for zero new
//! tokens with `echo` and `logprobs` on; the reference log probability is the
//! sum of the echoed token log probabilities whose text offset lies at or past
//! the end of the prompt. Decoding asks for `beams` beam-search completions
//! and ranks them by cumulative token log probability.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::encoder::with_retries;
use crate::environment::prompt::Prompt;
use crate::environment::{Hypothesis, LmEnvironment, ReferenceScore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RemoteLmEnv {
    endpoint: String,
    model: String,
    temperature: f64,
    max_new_tokens: usize,
    max_attempts: u32,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Vec<usize>,
}

/// Text sent for scoring: the prompt, one space, then the reference.
pub fn scoring_text(prompt: &Prompt, reference: &str) -> String {
    format!("{} {}", prompt.text, reference)
}

fn provider_error(body: &str) -> Option<Error> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.get("error").map(|e| Error::Provider { payload: e.to_string() })
}

fn parse_completion(body: &str) -> Result<CompletionResponse> {
    if let Some(err) = provider_error(body) {
        return Err(err);
    }
    serde_json::from_str(body).map_err(|e| Error::Provider {
        payload: format!("unreadable completion response ({e}): {body}"),
    })
}

/// Extracts the reference log probability from an echoed scoring response.
/// `prompt_chars` is the prompt length in characters.
pub fn parse_score_response(body: &str, prompt_chars: usize) -> Result<ReferenceScore> {
    let resp = parse_completion(body)?;
    let choice = resp.choices.into_iter().next().ok_or_else(|| Error::Provider {
        payload: format!("no choices in response: {body}"),
    })?;
    let lp = choice.logprobs.ok_or_else(|| Error::Provider {
        payload: "response carries no logprobs; is echo enabled?".into(),
    })?;
    if lp.text_offset.len() != lp.token_logprobs.len() {
        return Err(Error::Provider {
            payload: "text_offset and token_logprobs differ in length".into(),
        });
    }
    let mut total = 0.0;
    let mut tokens = 0;
    for (offset, logprob) in lp.text_offset.iter().zip(&lp.token_logprobs) {
        if *offset < prompt_chars {
            continue;
        }
        let logprob = logprob.ok_or_else(|| Error::Provider {
            payload: format!("missing logprob for reference token at offset {offset}"),
        })?;
        total += logprob;
        tokens += 1;
    }
    if tokens == 0 {
        return Err(Error::Provider {
            payload: "no reference tokens found past the prompt".into(),
        });
    }
    Ok(ReferenceScore {
        log_prob: total.min(0.0),
        tokens,
    })
}

/// Reads decoded choices as `(text, cumulative log probability)`, best first.
pub fn parse_generate_response(body: &str) -> Result<Vec<Hypothesis>> {
    let resp = parse_completion(body)?;
    let mut hyps: Vec<Hypothesis> = resp
        .choices
        .into_iter()
        .map(|c| {
            let score = c
                .logprobs
                .map(|lp| lp.token_logprobs.iter().flatten().sum::<f64>())
                .unwrap_or(f64::NEG_INFINITY);
            Hypothesis {
                text: c.text.trim().to_string(),
                score,
            }
        })
        .collect();
    hyps.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(hyps)
}

impl RemoteLmEnv {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            max_new_tokens: 256,
            max_attempts: 3,
            agent,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    pub fn score_request(&self, prompt: &Prompt, reference: &str) -> Value {
        json!({
            "model": self.model,
            "prompt": scoring_text(prompt, reference),
            "max_tokens": 0,
            "echo": true,
            "logprobs": true,
        })
    }

    pub fn generate_request(&self, prompt: &Prompt, beams: usize) -> Value {
        json!({
            "model": self.model,
            "prompt": prompt.text,
            "max_tokens": self.max_new_tokens,
            "n": beams,
            "best_of": beams,
            "use_beam_search": true,
            "temperature": self.temperature,
            "logprobs": true,
            "stop": ["\n"],
        })
    }

    fn post(&self, payload: &Value) -> Result<String> {
        with_retries(self.max_attempts, || {
            let transport = |e: &dyn std::fmt::Display| Error::Transport {
                attempts: 1,
                message: e.to_string(),
            };
            let body = payload.to_string();
            let mut resp = self
                .agent
                .post(&self.endpoint)
                .header("content-type", "application/json")
                .send(body.as_bytes())
                .map_err(|e| transport(&e))?;
            let status = resp.status();
            let text = resp.body_mut().read_to_string().map_err(|e| transport(&e))?;
            if status.is_server_error() || status.as_u16() == 429 {
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
        })
    }
}

impl LmEnvironment for RemoteLmEnv {
    fn score(&self, prompt: &Prompt, reference: &str) -> Result<ReferenceScore> {
        let body = self.post(&self.score_request(prompt, reference))?;
        parse_score_response(&body, prompt.text.chars().count())
    }

    fn generate(&self, prompt: &Prompt, beams: usize) -> Result<Vec<Hypothesis>> {
        if beams == 0 {
            return Err(Error::InvalidArgument("beam size must be at least 1".into()));
        }
        let body = self.post(&self.generate_request(prompt, beams))?;
        let mut hyps = parse_generate_response(&body)?;
        hyps.truncate(beams);
        Ok(hyps)
    }
}
