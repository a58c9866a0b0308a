//! Run configuration: a TOML file with dotted keys plus `key=value` overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::encoder::{Embedder, HashingEmbedder, RemoteEmbedder};
use crate::environment::remote::RemoteLmEnv;
use crate::environment::synthetic::SyntheticOracleEnv;
use crate::environment::LmEnvironment;
use crate::error::{Error, Result};
use crate::evaluation::SmatchAverage;
use crate::model::InitScheme;
use crate::policy::SamplingConfig;
use crate::trainer::{PpoConfig, RolloutConfig, SchedulerKind, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub ppo: PpoSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            run_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            policy: PolicyConfig::default(),
            env: EnvConfig::default(),
            reward: RewardConfig::default(),
            ppo: PpoSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL of `{"input", "output"}` records that become the exemplar store.
    pub exemplars: Option<PathBuf>,
    /// Training queries; when absent every exemplar doubles as a query with
    /// itself excluded from retrieval.
    pub train_queries: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hashing,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: String,
    pub timeout_s: f64,
    pub embed_pair: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Hashing,
            dim: crate::encoder::DEFAULT_EMBEDDING_DIM,
            seed: 0,
            endpoint: String::new(),
            timeout_s: 30.0,
            embed_pair: false,
        }
    }
}

impl EncoderConfig {
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self.kind {
            EncoderKind::Hashing => Box::new(HashingEmbedder::new(self.dim, self.seed)?),
            EncoderKind::Remote => {
                if self.endpoint.is_empty() {
                    return Err(Error::Config("encoder.kind = \"remote\" needs encoder.endpoint".into()));
                }
                Box::new(RemoteEmbedder::new(
                    self.endpoint.clone(),
                    self.dim,
                    Duration::from_secs_f64(self.timeout_s),
                )?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub beta: f64,
    pub beta_renorm: f64,
    #[serde(rename = "buffer_B")]
    pub buffer_b: usize,
    pub k_candidates: usize,
    #[serde(rename = "strata_Ns")]
    pub strata_ns: usize,
    pub init: InitScheme,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            beta: 1.0,
            beta_renorm: s.beta_renorm,
            buffer_b: s.buffer,
            k_candidates: s.k,
            strata_ns: s.strata,
            init: InitScheme::default(),
        }
    }
}

impl PolicyConfig {
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            buffer: self.buffer_b,
            k: self.k_candidates,
            strata: self.strata_ns,
            beta_renorm: self.beta_renorm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Synthetic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub endpoint: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_attempts: u32,
    pub beams: usize,
    pub temperature: f64,
    /// Log-probability penalty at zero coverage (synthetic environment).
    pub penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Synthetic,
            endpoint: String::new(),
            model: String::new(),
            timeout_s: 60.0,
            max_attempts: 3,
            beams: 3,
            temperature: 0.0,
            penalty: crate::environment::synthetic::DEFAULT_PENALTY,
        }
    }
}

impl EnvConfig {
    /// `gold` lists the (query, parse) pairs the synthetic environment can decode.
    pub fn build<'a>(&self, gold: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Box<dyn LmEnvironment>> {
        Ok(match self.kind {
            EnvKind::Synthetic => Box::new(SyntheticOracleEnv::new(gold).with_penalty(self.penalty)),
            EnvKind::Remote => {
                if self.endpoint.is_empty() {
                    return Err(Error::Config("env.kind = \"remote\" needs env.endpoint".into()));
                }
                Box::new(
                    RemoteLmEnv::new(
                        self.endpoint.clone(),
                        self.model.clone(),
                        Duration::from_secs_f64(self.timeout_s),
                    )
                    .with_temperature(self.temperature)
                    .with_max_attempts(self.max_attempts),
                )
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub length_normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub epsilon: f64,
    pub c1: f64,
    pub c2: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Exemplars per episode.
    #[serde(rename = "K")]
    pub k: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub scheduler: SchedulerKind,
    /// Zero disables gradient clipping.
    pub max_grad_norm: f64,
    pub replay_capacity: usize,
    pub staleness: u64,
    pub normalize_advantages: bool,
}

impl Default for PpoSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            epsilon: t.ppo.epsilon,
            c1: t.ppo.c1,
            c2: t.ppo.c2,
            gamma: t.gamma,
            lambda: t.lambda,
            k: t.rollout.steps,
            minibatch: t.minibatch,
            epochs: t.epochs,
            lr: t.lr,
            scheduler: t.scheduler,
            max_grad_norm: t.max_grad_norm.unwrap_or(0.0),
            replay_capacity: t.replay_capacity,
            staleness: t.staleness,
            normalize_advantages: t.ppo.normalize_advantages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: u64,
    pub episodes_per_iteration: usize,
    pub min_fill: usize,
    pub validation_queries: usize,
    /// Iterations between checkpoints; the final iteration always checkpoints.
    pub checkpoint_every: u64,
    /// Parameter-array name prefixes excluded from updates, e.g. `["gru."]`.
    pub frozen: Vec<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            episodes: t.total_episodes,
            episodes_per_iteration: t.episodes_per_iteration,
            min_fill: t.min_fill,
            validation_queries: t.validation_queries,
            checkpoint_every: 10,
            frozen: t.frozen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Iterative,
    MipsTopK,
    Bm25,
}

impl RetrieverKind {
    pub fn name(self) -> &'static str {
        match self {
            RetrieverKind::Iterative => "iterative",
            RetrieverKind::MipsTopK => "mips_top_k",
            RetrieverKind::Bm25 => "bm25",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub max_k: usize,
    pub repeats: usize,
    pub smatch_restarts: usize,
    pub smatch_average: SmatchAverage,
    pub retrievers: Vec<RetrieverKind>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_k: 3,
            repeats: 1,
            smatch_restarts: crate::evaluation::smatch::DEFAULT_RESTARTS,
            smatch_average: SmatchAverage::Micro,
            retrievers: vec![RetrieverKind::Iterative, RetrieverKind::MipsTopK, RetrieverKind::Bm25],
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` (`dotted.key=value`), then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading config {}", p.display()), e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.dim == 0 {
            return Err(Error::Config("encoder.dim must be positive".into()));
        }
        if !(self.policy.beta > 0.0 && self.policy.beta.is_finite()) {
            return Err(Error::Config(format!("policy.beta must be positive, got {}", self.policy.beta)));
        }
        if self.env.beams == 0 {
            return Err(Error::Config("env.beams must be at least 1".into()));
        }
        if self.eval.max_k == 0 || self.eval.max_k > self.env.beams {
            return Err(Error::Config(format!(
                "eval.max_k ({}) must lie in 1..=env.beams ({})",
                self.eval.max_k, self.env.beams
            )));
        }
        if self.eval.repeats == 0 {
            return Err(Error::Config("eval.repeats must be at least 1".into()));
        }
        if self.train.checkpoint_every == 0 {
            return Err(Error::Config("train.checkpoint_every must be at least 1".into()));
        }
        self.trainer_config().validate()
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            steps: self.ppo.k,
            sampling: self.policy.sampling(),
            length_normalize: self.reward.length_normalize,
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let p = &self.ppo;
        TrainerConfig {
            rollout: self.rollout_config(),
            ppo: PpoConfig {
                epsilon: p.epsilon,
                c1: p.c1,
                c2: p.c2,
                beta_renorm: self.policy.beta_renorm,
                normalize_advantages: p.normalize_advantages,
            },
            gamma: p.gamma,
            lambda: p.lambda,
            lr: p.lr,
            scheduler: p.scheduler,
            max_grad_norm: (p.max_grad_norm > 0.0).then_some(p.max_grad_norm),
            total_episodes: self.train.episodes,
            episodes_per_iteration: self.train.episodes_per_iteration,
            minibatch: p.minibatch,
            epochs: p.epochs,
            replay_capacity: p.replay_capacity,
            staleness: p.staleness,
            min_fill: self.train.min_fill,
            validation_queries: self.train.validation_queries,
            frozen: self.train.frozen.clone(),
            seed: self.seed,
        }
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

/// Sets `dotted.key` in `table` from `dotted.key=value`. The value is read as
/// a TOML value when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad config key `{key}`")));
    }
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    current.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_table(text.parse().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(text.contains("buffer_B = 768"));
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let table: toml::Table = "policy.beta_renorm = 2.5\nppo.K = 4\n".parse().unwrap();
        let mut table = table;
        apply_override(&mut table, "ppo.K=6").unwrap();
        apply_override(&mut table, "env.model=my-model").unwrap();
        apply_override(&mut table, "eval.retrievers=[\"bm25\"]").unwrap();
        let c = RunConfig::from_table(table).unwrap();
        assert_eq!(c.policy.beta_renorm, 2.5);
        assert_eq!(c.ppo.k, 6);
        assert_eq!(c.env.model, "my-model");
        assert_eq!(c.eval.retrievers, vec![RetrieverKind::Bm25]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let table: toml::Table = "policy.bta = 1.0".parse().unwrap();
        let err = RunConfig::from_table(table).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("bta")), "{err}");
        let table: toml::Table = "sed = 3".parse().unwrap();
        assert!(RunConfig::from_table(table).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "policy.k_candidates=6").unwrap();
        assert!(matches!(RunConfig::from_table(t), Err(Error::Config(_))));
        let mut t = toml::Table::new();
        apply_override(&mut t, "ppo.epsilon=1.5").unwrap();
        assert!(matches!(RunConfig::from_table(t), Err(Error::Config(_))));
    }
}
