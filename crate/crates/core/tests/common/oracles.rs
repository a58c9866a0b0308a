//! Reference implementations written independently of the library code.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use iterative_retriever::evaluation::{AmrGraph, Target, Triple};
use iterative_retriever::exemplar_store::Exemplar;
use iterative_retriever::model::PARAM_NAMES;
use iterative_retriever::trainer::ppo::{ppo_loss, PpoConfig};
use iterative_retriever::trainer::replay::TransitionRecord;
use iterative_retriever::{ExemplarStore, InitScheme, RetrieverModel};
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Advantages straight from the definition: a discounted sum of future TD errors.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let t = rewards.len();
    let v = |i: usize| if i < t { values[i] } else { 0.0 };
    (0..t)
        .map(|i| {
            (i..t)
                .map(|j| {
                    let delta = rewards[j] + gamma * v(j + 1) - v(j);
                    (gamma * lambda).powi((j - i) as i32) * delta
                })
                .sum()
        })
        .collect()
}

/// Top `n` by a full sort on (score desc, id asc).
pub fn mips_by_sort(rows: &[Vec<f64>], query: &[f64], n: usize, exclude: &HashSet<usize>) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(i))
        .map(|(i, r)| (i, r.iter().zip(query).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(n).map(|(i, _)| i).collect()
}

/// Best matched-triple count over every partial injection of candidate
/// entities into reference entities.
pub fn smatch_exhaustive(candidate: &AmrGraph, reference: &AmrGraph) -> usize {
    let reference_set: BTreeSet<&Triple> = reference.triples().iter().collect();
    let candidate_set: BTreeSet<&Triple> = candidate.triples().iter().collect();
    let n_ref = reference.entity_count();
    let mut best = 0;
    let mut mapping = vec![None; candidate.entity_count()];
    let mut used = vec![false; n_ref];
    fn visit(
        i: usize,
        mapping: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        candidate: &BTreeSet<&Triple>,
        reference: &BTreeSet<&Triple>,
        best: &mut usize,
    ) {
        if i == mapping.len() {
            let matched = candidate
                .iter()
                .filter(|t| {
                    let Some(source) = mapping[t.source] else { return false };
                    let target = match &t.target {
                        Target::Entity(e) => match mapping[*e] {
                            Some(m) => Target::Entity(m),
                            None => return false,
                        },
                        c => c.clone(),
                    };
                    reference.contains(&Triple::new(t.relation.clone(), source, target))
                })
                .count();
            *best = (*best).max(matched);
            return;
        }
        mapping[i] = None;
        visit(i + 1, mapping, used, candidate, reference, best);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                mapping[i] = Some(j);
                visit(i + 1, mapping, used, candidate, reference, best);
                used[j] = false;
            }
        }
        mapping[i] = None;
    }
    visit(0, &mut mapping, &mut used, &candidate_set, &reference_set, &mut best);
    best
}

/// A random graph with 1..=`max_entities` entities over a small vocabulary,
/// so label collisions and competing alignments are common.
pub fn random_graph(rng: &mut impl Rng, max_entities: usize) -> AmrGraph {
    let n = rng.random_range(1..=max_entities);
    let labels = ["f", "g", "h"];
    let relations = ["ARG0", "obj", "x"];
    let constants = ["1", "\"a\""];
    let mut triples: Vec<Triple> = (0..n)
        .map(|e| Triple::new("instance", e, Target::Constant(labels.choose(rng).unwrap().to_string())))
        .collect();
    for _ in 0..rng.random_range(0..=2 * n) {
        let source = rng.random_range(0..n);
        let relation = relations.choose(rng).unwrap().to_string();
        let target = if rng.random_bool(0.6) {
            Target::Entity(rng.random_range(0..n))
        } else {
            Target::Constant(constants.choose(rng).unwrap().to_string())
        };
        triples.push(Triple::new(relation, source, target));
    }
    AmrGraph::new(n, triples).unwrap()
}

/// Outcome of a finite-difference comparison over every parameter entry.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub entries: usize,
}

/// `|a - b| / max(|a|, |b|)`; entries where both sides are below `floor`
/// are compared absolutely against it.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// One random instance: state dimension `d`, `k` candidates per record, every
/// parameter group randomized. Compares the loss gradient with central
/// differences on every parameter entry.
pub fn gradient_check(seed: u64, d: usize, k: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let exemplars = (0..n)
        .map(|id| Exemplar {
            id,
            input_text: format!("x{id}"),
            output_text: "(f)".into(),
        })
        .collect();
    let emb = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let store = ExemplarStore::from_parts(exemplars, emb).unwrap();

    let beta = rng.random_range(0.5..2.0);
    let mut model = RetrieverModel::new(d, beta, InitScheme::Uniform, &mut rng).unwrap();
    for slice in model.params_mut() {
        for x in slice.iter_mut() {
            *x = rng.random_range(-0.8..0.8);
        }
    }

    let records: Vec<TransitionRecord> = (0..3)
        .map(|episode| {
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(&mut rng);
            let history_len = rng.random_range(0..k);
            let history = ids[..history_len].to_vec();
            let mut candidate_ids = ids[history_len..history_len + k].to_vec();
            candidate_ids.sort_unstable();
            let action = candidate_ids[rng.random_range(0..k)];
            TransitionRecord {
                episode,
                step: history_len,
                round: 0,
                query_embedding: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                history,
                state: vec![],
                candidate_ids,
                candidate_scores: vec![],
                action,
                behavior_prob: rng.random_range(0.2..0.6),
                reward: 0.0,
                value: 0.0,
                advantage: rng.random_range(-1.0..1.0),
                return_to_go: rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    let batch: Vec<&TransitionRecord> = records.iter().collect();
    // A wide clip keeps every ratio on the differentiable branch.
    let cfg = PpoConfig {
        epsilon: 100.0,
        c2: 0.05,
        normalize_advantages: false,
        ..PpoConfig::default()
    };
    let loss = |m: &RetrieverModel| ppo_loss(&batch, m, &store, &cfg).unwrap().total;
    let analytic = ppo_loss(&batch, &model, &store, &cfg).unwrap().grads;
    let analytic: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (p, group) in analytic.iter().enumerate().take(PARAM_NAMES.len()) {
        for (i, &exact) in group.iter().enumerate() {
            let mut plus = model.clone();
            plus.params_mut()[p][i] += h;
            let mut minus = model.clone();
            minus.params_mut()[p][i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(exact, numeric, 1e-6));
            entries += 1;
        }
    }
    GradCheck {
        max_rel_err: worst,
        entries,
    }
}
