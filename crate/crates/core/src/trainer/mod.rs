//! PPO training of the iterative retriever.

pub mod gae;
pub mod optim;
pub mod ppo;
pub mod replay;
pub mod rollout;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::LmEnvironment;
use crate::error::{Error, Result};
use crate::exemplar_store::ExemplarStore;
use crate::model::{RetrieverModel, PARAM_NAMES};

pub use optim::{Adam, Scheduler, SchedulerKind};
pub use ppo::{ppo_loss, LossBreakdown, PpoConfig};
pub use replay::{ReplayBuffer, TransitionRecord};
pub use rollout::{greedy_retrieve, rollout, Episode, EpisodeQuery, RolloutConfig, RolloutMode};

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub rollout: RolloutConfig,
    pub ppo: PpoConfig,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub scheduler: SchedulerKind,
    pub max_grad_norm: Option<f64>,
    pub total_episodes: u64,
    pub episodes_per_iteration: usize,
    pub minibatch: usize,
    /// Passes over the replay buffer per iteration.
    pub epochs: usize,
    pub replay_capacity: usize,
    /// Records older than this many rounds are dropped.
    pub staleness: u64,
    /// No update happens while the buffer holds fewer records.
    pub min_fill: usize,
    /// Training queries also run greedily each iteration to drive the scheduler.
    pub validation_queries: usize,
    /// Parameter arrays left untouched by the optimizer, by name prefix
    /// (`"gru."` freezes the whole recurrent cell).
    pub frozen: Vec<String>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            rollout: RolloutConfig {
                steps: 10,
                sampling: Default::default(),
                length_normalize: false,
            },
            ppo: PpoConfig::default(),
            gamma: 0.99,
            lambda: 0.95,
            lr: 3e-5,
            scheduler: SchedulerKind::ReduceOnPlateau,
            max_grad_norm: Some(1.0),
            total_episodes: 2000,
            episodes_per_iteration: 16,
            minibatch: 128,
            epochs: 1,
            replay_capacity: 2048,
            staleness: 4,
            min_fill: 128,
            validation_queries: 16,
            frozen: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.rollout.sampling.validate()?;
        let p = &self.ppo;
        if !(p.epsilon > 0.0 && p.epsilon < 1.0) {
            return Err(Error::Config(format!("ppo.epsilon must lie in (0, 1), got {}", p.epsilon)));
        }
        for (name, v) in [("ppo.gamma", self.gamma), ("ppo.lambda", self.lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(p.c1 >= 0.0 && p.c2 >= 0.0) {
            return Err(Error::Config("ppo.c1 and ppo.c2 must be non-negative".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("ppo.lr must be positive, got {}", self.lr)));
        }
        for prefix in &self.frozen {
            if !PARAM_NAMES.iter().any(|n| n.starts_with(prefix.as_str())) {
                return Err(Error::Config(format!("frozen entry `{prefix}` matches no parameter array")));
            }
        }
        if self.minibatch == 0 || self.episodes_per_iteration == 0 || self.rollout.steps == 0 {
            return Err(Error::Config(
                "minibatch, episodes per iteration and episode length must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> u64 {
        self.total_episodes.div_ceil(self.episodes_per_iteration as u64)
    }
}

/// Everything a checkpoint must hold to resume training exactly.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub model: RetrieverModel,
    pub adam: Adam,
    pub scheduler: Scheduler,
    pub replay: ReplayBuffer,
    pub iteration: u64,
    pub episodes_done: u64,
    pub failed_episodes: u64,
    /// Total reward of every completed episode, in order.
    pub episode_returns: Vec<f64>,
}

/// Serializable part of [`TrainerState`] besides the parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerProgress {
    pub adam: Adam,
    pub scheduler: Scheduler,
    pub replay: ReplayBuffer,
    pub iteration: u64,
    pub episodes_done: u64,
    pub failed_episodes: u64,
    pub episode_returns: Vec<f64>,
}

impl TrainerState {
    pub fn new(model: RetrieverModel, config: &TrainerConfig) -> Self {
        Self {
            adam: Adam::new(&model, config.lr, config.max_grad_norm),
            scheduler: Scheduler::new(config.scheduler, config.lr, config.total_iterations()),
            replay: ReplayBuffer::new(config.replay_capacity),
            model,
            iteration: 0,
            episodes_done: 0,
            failed_episodes: 0,
            episode_returns: Vec::new(),
        }
    }

    pub fn progress(&self) -> TrainerProgress {
        TrainerProgress {
            adam: self.adam.clone(),
            scheduler: self.scheduler.clone(),
            replay: self.replay.clone(),
            iteration: self.iteration,
            episodes_done: self.episodes_done,
            failed_episodes: self.failed_episodes,
            episode_returns: self.episode_returns.clone(),
        }
    }

    pub fn from_progress(model: RetrieverModel, progress: TrainerProgress) -> Self {
        Self {
            model,
            adam: progress.adam,
            scheduler: progress.scheduler,
            replay: progress.replay,
            iteration: progress.iteration,
            episodes_done: progress.episodes_done,
            failed_episodes: progress.failed_episodes,
            episode_returns: progress.episode_returns,
        }
    }

    /// Rounds parameters and optimizer moments to the precision checkpoints
    /// store, so a resumed run continues from exactly this state.
    pub fn round_for_checkpoint(&mut self) {
        self.model.round_to_f32();
        self.adam.round_to_f32();
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub episodes: u64,
    pub mean_return: f64,
    pub mean_entropy: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub lr: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "iteration,episodes,mean_return,mean_entropy,loss_policy,loss_value,lr";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.episodes,
            self.mean_return,
            self.mean_entropy,
            self.loss_policy,
            self.loss_value,
            self.lr
        )
    }
}

const STREAM_QUERIES: u64 = 1;
const STREAM_EPISODE: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_VALIDATION: u64 = 4;

/// Independent generator for `(seed, stream, index)`, so results do not
/// depend on how rollouts are scheduled across threads.
pub fn derive_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(stream);
    rng
}

pub struct Trainer<'a> {
    config: TrainerConfig,
    store: &'a ExemplarStore,
    env: &'a dyn LmEnvironment,
    queries: &'a [EpisodeQuery],
    validation: Vec<usize>,
    state: TrainerState,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainerConfig,
        store: &'a ExemplarStore,
        env: &'a dyn LmEnvironment,
        queries: &'a [EpisodeQuery],
        state: TrainerState,
    ) -> Result<Self> {
        config.validate()?;
        if queries.is_empty() {
            return Err(Error::Config("no training queries".into()));
        }
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.shuffle(&mut derive_rng(config.seed, STREAM_VALIDATION, 0));
        order.truncate(config.validation_queries);
        Ok(Self {
            config,
            store,
            env,
            queries,
            validation: order,
            state,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainerState {
        &mut self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.episodes_done >= self.config.total_episodes
    }

    /// Collects one batch of episodes, then updates the parameters.
    pub fn run_iteration(&mut self) -> Result<MetricsRow> {
        let cfg = &self.config;
        self.state.iteration += 1;
        let round = self.state.iteration;
        let remaining = cfg.total_episodes.saturating_sub(self.state.episodes_done);
        let n = (cfg.episodes_per_iteration as u64).min(remaining.max(1)) as usize;

        let mut pick = derive_rng(cfg.seed, STREAM_QUERIES, round);
        let jobs: Vec<(u64, usize)> = (0..n)
            .map(|j| (self.state.episodes_done + j as u64, pick.random_range(0..self.queries.len())))
            .collect();
        let model = &self.state.model;
        let (store, env, queries) = (self.store, self.env, self.queries);
        let results: Vec<Result<Episode>> = jobs
            .par_iter()
            .map(|&(episode_id, q)| {
                let mut rng = derive_rng(cfg.seed, STREAM_EPISODE, episode_id);
                let mut ep = rollout(
                    model,
                    store,
                    env,
                    &queries[q],
                    &cfg.rollout,
                    RolloutMode::Sample,
                    episode_id,
                    round,
                    &mut rng,
                )?;
                ep.finish(cfg.gamma, cfg.lambda)?;
                Ok(ep)
            })
            .collect();

        let mut returns = Vec::new();
        let mut entropies = Vec::new();
        let mut last_error = None;
        for result in results {
            match result {
                Ok(ep) => {
                    returns.push(ep.total_reward());
                    entropies.extend(ep.entropies.iter().copied());
                    self.state.replay.extend(ep.records);
                }
                Err(e) => {
                    log::warn!("episode discarded: {e}");
                    self.state.failed_episodes += 1;
                    last_error = Some(e);
                }
            }
        }
        self.state.episodes_done += n as u64;
        if returns.is_empty() {
            return Err(last_error.unwrap_or_else(|| Error::Invariant("no episodes collected".into())));
        }
        self.state.episode_returns.extend(&returns);
        self.state
            .replay
            .drop_older_than(round.saturating_sub(cfg.staleness.saturating_sub(1)));

        let lr = self.state.adam.lr;
        let (loss_policy, loss_value) = self.optimize(round)?;

        let mean_return = mean(&returns);
        let validation = if self.validation.is_empty() {
            mean_return
        } else {
            self.validation_reward()?
        };
        let next_lr = self.state.scheduler.step(lr, round, validation);
        self.state.adam.lr = next_lr;

        Ok(MetricsRow {
            iteration: round,
            episodes: self.state.episodes_done,
            mean_return,
            mean_entropy: mean(&entropies),
            loss_policy,
            loss_value,
            lr,
        })
    }

    /// PPO passes over the replay buffer; returns mean policy and value losses.
    fn optimize(&mut self, round: u64) -> Result<(f64, f64)> {
        let cfg = &self.config;
        let len = self.state.replay.len();
        if len < cfg.min_fill {
            log::info!(
                "iteration {round}: replay buffer holds {len} of {} records needed; skipping update",
                cfg.min_fill
            );
            return Ok((f64::NAN, f64::NAN));
        }
        let mut rng = derive_rng(cfg.seed, STREAM_SHUFFLE, round);
        let (mut policy_sum, mut value_sum, mut batches) = (0.0, 0.0, 0usize);
        for _ in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.minibatch) {
                let batch: Vec<&TransitionRecord> = chunk
                    .iter()
                    .map(|&i| self.state.replay.get(i).expect("index within buffer"))
                    .collect();
                let mut out = ppo_loss(&batch, &self.state.model, self.store, &cfg.ppo)?;
                if !out.total.is_finite() || !out.grads.is_finite() {
                    return Err(Error::Numerical {
                        message: format!("non-finite loss or gradient in iteration {round} (loss {})", out.total),
                        diagnostic: ppo::describe_batch(&batch),
                    });
                }
                if !cfg.frozen.is_empty() {
                    out.grads.zero_matching(|name| cfg.frozen.iter().any(|p| name.starts_with(p.as_str())));
                }
                self.state.adam.update(&mut self.state.model, &out.grads);
                if !self.state.model.is_finite() {
                    return Err(Error::Numerical {
                        message: format!("parameters became non-finite in iteration {round}"),
                        diagnostic: ppo::describe_batch(&batch),
                    });
                }
                policy_sum += out.policy;
                value_sum += out.value;
                batches += 1;
            }
        }
        Ok((policy_sum / batches as f64, value_sum / batches as f64))
    }

    /// Mean greedy-episode return over the validation queries.
    pub fn validation_reward(&self) -> Result<f64> {
        let model = &self.state.model;
        let cfg = &self.config;
        let returns: Vec<Result<f64>> = self
            .validation
            .par_iter()
            .map(|&q| {
                let mut rng = derive_rng(cfg.seed, STREAM_VALIDATION, q as u64);
                rollout(
                    model,
                    self.store,
                    self.env,
                    &self.queries[q],
                    &cfg.rollout,
                    RolloutMode::Greedy,
                    0,
                    0,
                    &mut rng,
                )
                .map(|ep| ep.total_reward())
            })
            .collect();
        let returns: Vec<f64> = returns.into_iter().collect::<Result<_>>()?;
        Ok(mean(&returns))
    }

    /// Runs until the episode budget is spent, calling `on_iteration` after
    /// every iteration.
    pub fn run(&mut self, mut on_iteration: impl FnMut(&mut Self, &MetricsRow) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let row = self.run_iteration()?;
            on_iteration(self, &row)?;
        }
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashingEmbedder;
    use crate::environment::synthetic::SyntheticOracleEnv;
    use crate::exemplar_store::{IngestOptions, Record};
    use crate::model::InitScheme;
    use crate::policy::SamplingConfig;
    use std::collections::HashSet;

    fn small_setup() -> (ExemplarStore, SyntheticOracleEnv, Vec<EpisodeQuery>) {
        let records: Vec<Record> = (0..30)
            .map(|i| Record::new(format!("query {i} words"), format!("(A{} :x (B{} :v 1))", i % 4, i % 3)))
            .collect();
        let emb = HashingEmbedder::new(8, 0).unwrap();
        let store = ExemplarStore::ingest(records.clone(), &emb, IngestOptions::default()).unwrap();
        let env = SyntheticOracleEnv::new(records.iter().map(|r| (r.input.as_str(), r.output.as_str())));
        let queries = records
            .iter()
            .enumerate()
            .map(|(i, r)| EpisodeQuery {
                text: r.input.clone(),
                reference: r.output.clone(),
                embedding: store.embedding(i).to_owned(),
                exclude: HashSet::from([i]),
            })
            .collect();
        (store, env, queries)
    }

    fn small_config() -> TrainerConfig {
        TrainerConfig {
            rollout: RolloutConfig {
                steps: 3,
                sampling: SamplingConfig {
                    buffer: 12,
                    k: 4,
                    strata: 2,
                    beta_renorm: 5.0,
                },
                length_normalize: false,
            },
            total_episodes: 12,
            episodes_per_iteration: 4,
            minibatch: 8,
            min_fill: 8,
            validation_queries: 2,
            lr: 1e-3,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn below_min_fill_skips_update() {
        let (store, env, queries) = small_setup();
        let mut cfg = small_config();
        cfg.min_fill = 1000;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = RetrieverModel::new(8, 1.0, InitScheme::Uniform, &mut rng).unwrap();
        let state = TrainerState::new(model.clone(), &cfg);
        let mut trainer = Trainer::new(cfg, &store, &env, &queries, state).unwrap();
        let row = trainer.run_iteration().unwrap();
        assert!(row.loss_policy.is_nan());
        assert_eq!(trainer.state().model, model);
        assert_eq!(trainer.state().adam.step, 0);
        assert_eq!(trainer.state().replay.len(), 12);
    }

    #[test]
    fn fresh_records_have_unit_ratio() {
        let (store, env, queries) = small_setup();
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = RetrieverModel::new(8, 0.3, InitScheme::Uniform, &mut rng).unwrap();
        let mut records = Vec::new();
        for (i, q) in queries.iter().take(5).enumerate() {
            let mut ep = rollout(&model, &store, &env, q, &cfg.rollout, RolloutMode::Sample, i as u64, 0, &mut rng).unwrap();
            ep.finish(0.99, 0.95).unwrap();
            records.extend(ep.records);
        }
        let batch: Vec<&TransitionRecord> = records.iter().collect();
        let ppo = PpoConfig {
            c1: 0.0,
            c2: 0.0,
            normalize_advantages: false,
            ..PpoConfig::default()
        };
        let out = ppo_loss(&batch, &model, &store, &ppo).unwrap();
        assert_eq!(out.clip_fraction, 0.0);
        let mean_adv = records.iter().map(|r| r.advantage).sum::<f64>() / records.len() as f64;
        assert!((out.policy + mean_adv).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic() {
        let (store, env, queries) = small_setup();
        let run = || {
            let cfg = small_config();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let model = RetrieverModel::new(8, 1.0, InitScheme::Uniform, &mut rng).unwrap();
            let state = TrainerState::new(model, &cfg);
            let mut trainer = Trainer::new(cfg, &store, &env, &queries, state).unwrap();
            let mut rows = Vec::new();
            trainer
                .run(|_, row| {
                    rows.push(row.clone());
                    Ok(())
                })
                .unwrap();
            (rows, trainer.into_state().model)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert!(a[2].loss_value.is_finite());
    }
}
