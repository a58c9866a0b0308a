//! Clipped-surrogate loss over stored transitions, with exact gradients.
//!
//! Each record's state is recomputed by replaying the GRU over the query
//! embedding and the embeddings of earlier actions, so gradients reach the
//! recurrent weights and `s0` as well as the query map and the value head.

use ndarray::{Array1, Axis};

use crate::error::{Error, Result};
use crate::exemplar_store::ExemplarStore;
use crate::model::{ModelGrads, RetrieverModel};
use crate::recurrent::Tape;
use crate::trainer::replay::TransitionRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    /// Ratio clip ε; the cutoff is `1 + ε`.
    pub epsilon: f64,
    /// Value-loss weight.
    pub c1: f64,
    /// Entropy-bonus weight.
    pub c2: f64,
    pub beta_renorm: f64,
    /// Standardize advantages within each minibatch.
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            c1: 0.5,
            c2: 0.01,
            beta_renorm: 5.0,
            normalize_advantages: true,
        }
    }
}

/// Batch means of the loss terms, plus the gradient of `total`.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// `policy + c1 · value - c2 · entropy`
    pub total: f64,
    /// Mean negated clipped surrogate.
    pub policy: f64,
    /// Mean squared error of V against return-to-go.
    pub value: f64,
    /// Mean entropy of the truncated policy.
    pub entropy: f64,
    /// Share of records whose ratio left `[1 - ε, 1 + ε]`.
    pub clip_fraction: f64,
    pub grads: ModelGrads,
}

fn normalized_advantages(batch: &[&TransitionRecord], normalize: bool) -> Vec<f64> {
    let adv: Vec<f64> = batch.iter().map(|r| r.advantage).collect();
    if !normalize || adv.len() < 2 {
        return adv;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Replays the GRU for one record; returns the state and the tapes in order.
pub fn replay_state(
    model: &RetrieverModel,
    store: &ExemplarStore,
    record: &TransitionRecord,
) -> Result<(Array1<f64>, Vec<Tape>)> {
    let q = Array1::from(record.query_embedding.clone());
    let (mut s, tape) = model.initial_state(q.view())?;
    let mut tapes = vec![tape];
    for &id in &record.history {
        if id >= store.len() {
            return Err(Error::Invariant(format!("history refers to unknown exemplar {id}")));
        }
        let (next, tape) = model.gru.step(s.view(), store.embedding(id))?;
        tapes.push(tape);
        s = next;
    }
    Ok((s, tapes))
}

/// Loss and gradients over `batch`, averaged per record.
pub fn ppo_loss(
    batch: &[&TransitionRecord],
    model: &RetrieverModel,
    store: &ExemplarStore,
    config: &PpoConfig,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let advantages = normalized_advantages(batch, config.normalize_advantages);
    let mut grads = model.zeros_like();
    let (mut policy_sum, mut value_sum, mut entropy_sum) = (0.0, 0.0, 0.0);
    let mut clipped = 0usize;
    let (lo, hi) = (1.0 - config.epsilon, 1.0 + config.epsilon);

    for (record, &adv) in batch.iter().zip(&advantages) {
        let (state, tapes) = replay_state(model, store, record)?;
        let candidates = store.embeddings().select(Axis(0), &record.candidate_ids);
        let fwd = model
            .policy
            .candidate_forward(state.view(), candidates.view(), config.beta_renorm)?;
        let pos = record
            .candidate_ids
            .iter()
            .position(|&id| id == record.action)
            .ok_or_else(|| Error::Invariant(format!("action {} is not among the stored candidates", record.action)))?;
        let p = &fwd.probs;
        let ratio = p[pos] / record.behavior_prob;
        let clipped_ratio = ratio.clamp(lo, hi);
        let unclipped_obj = ratio * adv;
        let clipped_obj = clipped_ratio * adv;
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        policy_sum -= unclipped_obj.min(clipped_obj);
        // d(-surrogate)/d ratio; zero when the clipped branch is the minimum.
        let d_ratio = if unclipped_obj <= clipped_obj { -adv } else { 0.0 };

        let entropy: f64 = -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
        entropy_sum += entropy;

        let mut grad_logits = vec![0.0; p.len()];
        for (j, g) in grad_logits.iter_mut().enumerate() {
            let indicator = if j == pos { 1.0 } else { 0.0 };
            let d_ratio_d_logit = ratio * (indicator - p[j]);
            let log_p = if p[j] > 0.0 { p[j].ln() } else { 0.0 };
            let d_entropy_d_logit = -p[j] * (log_p + entropy);
            *g = d_ratio * d_ratio_d_logit - config.c2 * d_entropy_d_logit;
        }
        let pg = model
            .policy
            .candidate_backward(state.view(), candidates.view(), &grad_logits, config.beta_renorm)?;
        grads.wq += &pg.wq;
        grads.bq += &pg.bq;

        let v = model.value.value(state.view())?;
        let err = v - record.return_to_go;
        value_sum += err * err;
        let d_v = 2.0 * config.c1 * err;
        grads.v.scaled_add(d_v, &state);
        let mut d_state = pg.state;
        d_state.scaled_add(d_v, &model.value.v);

        for tape in tapes.iter().rev() {
            let step = model.gru.backward(tape, d_state.view())?;
            grads.gru.accumulate(&step.params);
            d_state = step.h;
        }
        grads.s0 += &d_state;
    }

    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    let policy = policy_sum / n;
    let value = value_sum / n;
    let entropy = entropy_sum / n;
    Ok(LossBreakdown {
        total: policy + config.c1 * value - config.c2 * entropy,
        policy,
        value,
        entropy,
        clip_fraction: clipped as f64 / n,
        grads,
    })
}

/// One-line-per-record dump used when training hits a non-finite value.
pub fn describe_batch(batch: &[&TransitionRecord]) -> String {
    let mut out = String::from("episode step action behavior_prob reward value advantage return_to_go\n");
    for r in batch {
        out.push_str(&format!(
            "{} {} {} {:e} {:e} {:e} {:e} {:e}\n",
            r.episode, r.step, r.action, r.behavior_prob, r.reward, r.value, r.advantage, r.return_to_go
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashingEmbedder;
    use crate::exemplar_store::{IngestOptions, Record};
    use crate::model::{InitScheme, PARAM_NAMES};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (ExemplarStore, RetrieverModel, Vec<TransitionRecord>) {
        let records: Vec<Record> = (0..12)
            .map(|i| Record::new(format!("example number {i}"), format!("(f{i})")))
            .collect();
        let emb = HashingEmbedder::new(6, 4).unwrap();
        let store = ExemplarStore::ingest(records, &emb, IngestOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = RetrieverModel::new(6, 0.7, InitScheme::Uniform, &mut rng).unwrap();
        for x in model.value.v.iter_mut().chain(model.initial.s0.iter_mut()) {
            *x = rand::Rng::random_range(&mut rng, -0.5..0.5);
        }
        let recs = vec![
            TransitionRecord {
                episode: 0,
                step: 2,
                round: 0,
                query_embedding: store.embedding(0).to_vec(),
                history: vec![3, 5],
                state: vec![],
                candidate_ids: vec![1, 2, 4, 6],
                candidate_scores: vec![],
                action: 4,
                behavior_prob: 0.3,
                reward: 0.1,
                value: 0.0,
                advantage: 0.8,
                return_to_go: 0.4,
            },
            TransitionRecord {
                episode: 1,
                step: 0,
                round: 0,
                query_embedding: store.embedding(9).to_vec(),
                history: vec![],
                state: vec![],
                candidate_ids: vec![7, 8, 10, 11],
                candidate_scores: vec![],
                action: 7,
                behavior_prob: 0.2,
                reward: -0.1,
                value: 0.0,
                advantage: -0.5,
                return_to_go: -0.2,
            },
        ];
        (store, model, recs)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (store, model, recs) = fixture();
        let batch: Vec<&TransitionRecord> = recs.iter().collect();
        // Wide clip so the ratio stays on the differentiable branch.
        let cfg = PpoConfig {
            epsilon: 10.0,
            normalize_advantages: false,
            ..PpoConfig::default()
        };
        let analytic = ppo_loss(&batch, &model, &store, &cfg).unwrap().grads;
        let h = 1e-6;
        for (p_idx, name) in PARAM_NAMES.iter().enumerate() {
            let len = analytic.slices()[p_idx].len();
            for i in (0..len).step_by(5) {
                let mut plus = model.clone();
                plus.params_mut()[p_idx][i] += h;
                let mut minus = model.clone();
                minus.params_mut()[p_idx][i] -= h;
                let fd = (ppo_loss(&batch, &plus, &store, &cfg).unwrap().total
                    - ppo_loss(&batch, &minus, &store, &cfg).unwrap().total)
                    / (2.0 * h);
                let a = analytic.slices()[p_idx][i];
                assert!((a - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{name}[{i}]: analytic {a}, numeric {fd}");
            }
        }
    }

    #[test]
    fn clipped_branch_has_no_policy_gradient() {
        let (store, model, mut recs) = fixture();
        // Tiny behavior probability gives a huge ratio; positive advantage
        // means the clipped objective is the minimum.
        recs[0].behavior_prob = 1e-6;
        recs[0].advantage = 1.0;
        let cfg = PpoConfig {
            c1: 0.0,
            c2: 0.0,
            normalize_advantages: false,
            ..PpoConfig::default()
        };
        let out = ppo_loss(&[&recs[0]], &model, &store, &cfg).unwrap();
        assert_eq!(out.clip_fraction, 1.0);
        assert!((out.policy + 1.2).abs() < 1e-12);
        assert_eq!(out.grads.l2_norm(), 0.0);
    }

    #[test]
    fn foreign_action_is_an_invariant_error() {
        let (store, model, mut recs) = fixture();
        recs[0].action = 11;
        let err = ppo_loss(&[&recs[0]], &model, &store, &PpoConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }
}
