use std::collections::HashSet;

use ndarray::Array1;
use rand::Rng;

use crate::environment::{reference_probability, LmEnvironment};
use crate::error::{Error, Result};
use crate::exemplar_store::{Exemplar, ExemplarStore};
use crate::model::RetrieverModel;
use crate::policy::{greedy_step, sample_action, stratified_policy, SamplingConfig};
use crate::trainer::gae::{gae, returns_to_go};
use crate::trainer::replay::TransitionRecord;

/// A training or evaluation query with its reference output.
#[derive(Debug, Clone)]
pub struct EpisodeQuery {
    pub text: String,
    pub reference: String,
    pub embedding: Array1<f64>,
    /// Exemplars that may never be selected for this query, e.g. the query's own entry.
    pub exclude: HashSet<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Draw from the stratified truncated policy.
    Sample,
    /// Exact argmax over the whole store.
    Greedy,
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutConfig {
    /// Episode length K.
    pub steps: usize,
    pub sampling: SamplingConfig,
    pub length_normalize: bool,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub records: Vec<TransitionRecord>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Reference probability of the zero-shot prompt.
    pub initial_prob: f64,
    /// Reference probability with all selected exemplars.
    pub final_prob: f64,
    /// Entropy of the truncated policy at each step (zero in greedy mode).
    pub entropies: Vec<f64>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Fills in advantages and return-to-go targets.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let values: Vec<f64> = self.records.iter().map(|r| r.value).collect();
        let adv = gae(&self.rewards, &values, gamma, lambda)?;
        let ret = returns_to_go(&self.rewards, gamma);
        for ((rec, a), g) in self.records.iter_mut().zip(adv).zip(ret) {
            rec.advantage = a;
            rec.return_to_go = g;
        }
        Ok(())
    }
}

/// Runs one episode. Any environment failure aborts it; no reward is defaulted.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    model: &RetrieverModel,
    store: &ExemplarStore,
    env: &dyn LmEnvironment,
    query: &EpisodeQuery,
    config: &RolloutConfig,
    mode: RolloutMode,
    episode_id: u64,
    round: u64,
    rng: &mut impl Rng,
) -> Result<Episode> {
    if config.steps == 0 {
        return Err(Error::Config("episode length must be at least 1".into()));
    }
    let (mut state, _) = model.initial_state(query.embedding.view())?;
    let mut exclude = query.exclude.clone();
    let mut chosen: Vec<&Exemplar> = Vec::with_capacity(config.steps);
    let mut actions = Vec::with_capacity(config.steps);
    let mut rewards = Vec::with_capacity(config.steps);
    let mut records = Vec::with_capacity(config.steps);
    let mut entropies = Vec::with_capacity(config.steps);

    let initial_prob = reference_probability(env, &query.text, &query.reference, &chosen, config.length_normalize)?;
    let mut prob = initial_prob;

    for step in 0..config.steps {
        let value = model.value.value(state.view())?;
        let (action, behavior_prob, candidate_ids, candidate_scores, entropy) = match mode {
            RolloutMode::Sample => {
                let tp = stratified_policy(&model.policy, state.view(), store, &exclude, &config.sampling, rng)?;
                let (id, p) = sample_action(&tp, rng);
                (id, p, tp.ids().to_vec(), tp.raw_scores().to_vec(), tp.entropy())
            }
            RolloutMode::Greedy => {
                let (id, score) = greedy_step(&model.policy, state.view(), store, &exclude)?;
                (id, 1.0, vec![id], vec![score / model.policy.beta], 0.0)
            }
        };
        let exemplar = store
            .get(action)
            .ok_or_else(|| Error::Invariant(format!("policy chose unknown exemplar {action}")))?;
        chosen.push(exemplar);
        let next_prob = reference_probability(env, &query.text, &query.reference, &chosen, config.length_normalize)?;
        let reward = next_prob - prob;
        prob = next_prob;

        records.push(TransitionRecord {
            episode: episode_id,
            step,
            round,
            query_embedding: query.embedding.to_vec(),
            history: actions.clone(),
            state: state.to_vec(),
            candidate_ids,
            candidate_scores,
            action,
            behavior_prob,
            reward,
            value,
            advantage: 0.0,
            return_to_go: 0.0,
        });
        actions.push(action);
        rewards.push(reward);
        entropies.push(entropy);
        exclude.insert(action);
        state = model.gru.step(state.view(), store.embedding(action))?.0;
    }

    Ok(Episode {
        records,
        actions,
        rewards,
        initial_prob,
        final_prob: prob,
        entropies,
    })
}

/// Greedy retrieval without an environment: `steps` distinct exemplars with
/// the score each had when it was chosen.
pub fn greedy_retrieve(
    model: &RetrieverModel,
    store: &ExemplarStore,
    query_embedding: ndarray::ArrayView1<'_, f64>,
    steps: usize,
    exclude: &HashSet<usize>,
) -> Result<Vec<(usize, f64)>> {
    let (mut state, _) = model.initial_state(query_embedding)?;
    let mut exclude = exclude.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (id, score) = greedy_step(&model.policy, state.view(), store, &exclude)?;
        out.push((id, score));
        exclude.insert(id);
        state = model.gru.step(state.view(), store.embedding(id))?.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashingEmbedder;
    use crate::environment::synthetic::SyntheticOracleEnv;
    use crate::exemplar_store::{IngestOptions, Record};
    use crate::model::InitScheme;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ExemplarStore, SyntheticOracleEnv, EpisodeQuery, RetrieverModel) {
        let records: Vec<Record> = (0..40)
            .map(|i| Record::new(format!("item {i} thing"), format!("(F{} :a (G{} :v 1))", i % 5, i % 3)))
            .collect();
        let emb = HashingEmbedder::new(16, 1).unwrap();
        let store = ExemplarStore::ingest(records, &emb, IngestOptions::default()).unwrap();
        let env = SyntheticOracleEnv::new([("item 7 thing", "(F2 :a (G1 :v 1))")]);
        let query = EpisodeQuery {
            text: "item 7 thing".into(),
            reference: "(F2 :a (G1 :v 1))".into(),
            embedding: store.embedding(7).to_owned(),
            exclude: HashSet::from([7]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = RetrieverModel::new(16, 1.0, InitScheme::Uniform, &mut rng).unwrap();
        (store, env, query, model)
    }

    fn config() -> RolloutConfig {
        RolloutConfig {
            steps: 4,
            sampling: SamplingConfig {
                buffer: 16,
                k: 8,
                strata: 4,
                beta_renorm: 5.0,
            },
            length_normalize: false,
        }
    }

    #[test]
    fn rewards_telescope_to_total_gain() {
        let (store, env, query, model) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = rollout(&model, &store, &env, &query, &config(), RolloutMode::Sample, 0, 0, &mut rng).unwrap();
        assert_eq!(ep.actions.len(), 4);
        assert!((ep.total_reward() - (ep.final_prob - ep.initial_prob)).abs() < 1e-12);
        let distinct: HashSet<_> = ep.actions.iter().collect();
        assert_eq!(distinct.len(), 4);
        assert!(!ep.actions.contains(&7));
        for rec in &ep.records {
            assert!(rec.candidate_ids.contains(&rec.action));
            assert!(rec.behavior_prob > 0.0 && rec.behavior_prob <= 1.0);
        }
    }

    #[test]
    fn greedy_rollout_matches_greedy_retrieve() {
        let (store, env, query, model) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = rollout(&model, &store, &env, &query, &config(), RolloutMode::Greedy, 0, 0, &mut rng).unwrap();
        let ids: Vec<usize> = greedy_retrieve(&model, &store, query.embedding.view(), 4, &query.exclude)
            .unwrap()
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        assert_eq!(ep.actions, ids);
    }

    #[test]
    fn finish_fills_targets() {
        let (store, env, query, model) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ep = rollout(&model, &store, &env, &query, &config(), RolloutMode::Sample, 0, 0, &mut rng).unwrap();
        ep.finish(1.0, 1.0).unwrap();
        let total: f64 = ep.rewards.iter().sum();
        assert!((ep.records[0].return_to_go - total).abs() < 1e-12);
    }
}
