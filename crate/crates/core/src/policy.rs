//! The action side of the retrieval MDP.
//!
//! A state `s` is mapped to a query `q = Wq s + bq`; exemplar `x` scores
//! `q · F_enc(x) / β`. Inference takes the argmax (an exact MIPS call).
//! Training samples from a truncated policy: the top-B buffer is reduced to
//! `k` candidates by keeping the best `k/Ns` outright and drawing `k/Ns` from
//! each of `Ns - 1` score-ordered strata, then the `k` raw scores are
//! renormalized with a softmax at temperature `β_renorm`.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::exemplar_store::ExemplarStore;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub beta: f64,
}

impl PolicyParams {
    pub fn new(wq: Array2<f64>, bq: Array1<f64>, beta: f64) -> Result<Self> {
        if wq.nrows() != wq.ncols() {
            return Err(Error::Config(format!("Wq must be square, got {:?}", wq.dim())));
        }
        check_dim(wq.nrows(), bq.len())?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        if wq.iter().chain(bq.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Config("policy parameters must be finite".into()));
        }
        Ok(Self { wq, bq, beta })
    }

    pub fn identity(d: usize, beta: f64) -> Result<Self> {
        Self::new(Array2::eye(d), Array1::zeros(d), beta)
    }

    pub fn dim(&self) -> usize {
        self.bq.len()
    }

    /// `Wq · state + bq`.
    pub fn query_vector(&self, state: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_dim(self.dim(), state.len())?;
        Ok(self.wq.dot(&state) + &self.bq)
    }

    /// Scores over the `k` given candidate embeddings (rows) with current
    /// parameters, renormalized at temperature `beta_renorm`.
    pub fn candidate_forward(
        &self,
        state: ArrayView1<'_, f64>,
        candidates: ArrayView2<'_, f64>,
        beta_renorm: f64,
    ) -> Result<CandidateForward> {
        check_dim(self.dim(), candidates.ncols())?;
        let query = self.query_vector(state)?;
        let raw = candidates.dot(&query) / self.beta;
        let probs = softmax(raw.as_slice().expect("contiguous"), beta_renorm);
        Ok(CandidateForward {
            query,
            raw_scores: raw.to_vec(),
            probs,
        })
    }

    /// Backpropagates a gradient on the renormalized logits (`raw / β_renorm`)
    /// into `Wq`, `bq`, and the state.
    pub fn candidate_backward(
        &self,
        state: ArrayView1<'_, f64>,
        candidates: ArrayView2<'_, f64>,
        grad_logits: &[f64],
        beta_renorm: f64,
    ) -> Result<PolicyGrads> {
        check_dim(candidates.nrows(), grad_logits.len())?;
        let scale = 1.0 / (beta_renorm * self.beta);
        let g = Array1::from_iter(grad_logits.iter().map(|x| x * scale));
        let d_query = candidates.t().dot(&g);
        let d_state = self.wq.t().dot(&d_query);
        Ok(PolicyGrads {
            wq: crate::recurrent::outer(&d_query, &state.to_owned()),
            bq: d_query,
            state: d_state,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CandidateForward {
    pub query: Array1<f64>,
    pub raw_scores: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub state: Array1<f64>,
}

/// Numerically stable `softmax(scores / temperature)`.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// The `k`-candidate sampling distribution used at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPolicy {
    ids: Vec<usize>,
    probs: Vec<f64>,
    raw_scores: Vec<f64>,
}

impl TruncatedPolicy {
    /// Builds a policy by renormalizing raw scores at `beta_renorm`.
    pub fn from_scores(ids: Vec<usize>, raw_scores: Vec<f64>, beta_renorm: f64) -> Result<Self> {
        if beta_renorm.is_nan() || beta_renorm <= 0.0 {
            return Err(Error::Config(format!("beta_renorm must be positive, got {beta_renorm}")));
        }
        let probs = softmax(&raw_scores, beta_renorm);
        Self::new(ids, probs, raw_scores)
    }

    pub fn new(ids: Vec<usize>, probs: Vec<f64>, raw_scores: Vec<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Invariant("truncated policy needs at least one candidate".into()));
        }
        if ids.len() != probs.len() || ids.len() != raw_scores.len() {
            return Err(Error::Invariant("ids, probs and raw scores differ in length".into()));
        }
        let distinct: HashSet<usize> = ids.iter().copied().collect();
        if distinct.len() != ids.len() {
            return Err(Error::Invariant("candidate ids are not distinct".into()));
        }
        if probs.iter().any(|&p| !p.is_finite() || p <= 0.0) {
            return Err(Error::Invariant("candidate probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Invariant(format!("probabilities sum to {total}")));
        }
        Ok(Self {
            ids,
            probs,
            raw_scores,
        })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn raw_scores(&self) -> &[f64] {
        &self.raw_scores
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

pub(crate) fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Argmax of `Q(s) · F_enc(x)` over exemplars not in `exclude`.
pub fn greedy_step(
    params: &PolicyParams,
    state: ArrayView1<'_, f64>,
    store: &ExemplarStore,
    exclude: &HashSet<usize>,
) -> Result<(usize, f64)> {
    let query = params.query_vector(state)?;
    store
        .mips_top(query.view(), 1, exclude)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidArgument("every exemplar is excluded".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Top-B action buffer size.
    pub buffer: usize,
    /// Candidates kept in the truncated policy.
    pub k: usize,
    /// Number of strata, counting the deterministic top block.
    pub strata: usize,
    pub beta_renorm: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            buffer: 768,
            k: 8,
            strata: 4,
            beta_renorm: 5.0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strata < 2 {
            return Err(Error::Config(format!("strata_Ns must be at least 2, got {}", self.strata)));
        }
        if self.k == 0 || !self.k.is_multiple_of(self.strata) {
            return Err(Error::Config(format!(
                "k_candidates ({}) must be a positive multiple of strata_Ns ({})",
                self.k, self.strata
            )));
        }
        if self.buffer < self.k {
            return Err(Error::Config(format!(
                "buffer_B ({}) must be at least k_candidates ({})",
                self.buffer, self.k
            )));
        }
        if !(self.beta_renorm > 0.0 && self.beta_renorm.is_finite()) {
            return Err(Error::Config(format!(
                "beta_renorm must be positive, got {}",
                self.beta_renorm
            )));
        }
        Ok(())
    }

    pub fn per_stratum(&self) -> usize {
        self.k / self.strata
    }

    /// Sizes of the `Ns - 1` sampled strata covering the buffer after the
    /// deterministic top block; earlier strata absorb the remainder.
    pub fn stratum_sizes(&self) -> Vec<usize> {
        let rest = self.buffer - self.per_stratum();
        let n = self.strata - 1;
        (0..n).map(|i| rest / n + usize::from(i < rest % n)).collect()
    }
}

/// Builds the stratified truncated policy for one step. Candidates come back
/// in buffer rank order.
pub fn stratified_policy(
    params: &PolicyParams,
    state: ArrayView1<'_, f64>,
    store: &ExemplarStore,
    exclude: &HashSet<usize>,
    config: &SamplingConfig,
    rng: &mut impl Rng,
) -> Result<TruncatedPolicy> {
    config.validate()?;
    let available = store.len().saturating_sub(exclude.iter().filter(|&&id| id < store.len()).count());
    if config.buffer > available {
        return Err(Error::Config(format!(
            "buffer_B ({}) exceeds the {available} selectable exemplars",
            config.buffer
        )));
    }
    let query = params.query_vector(state)?;
    let buffer = store.mips_top(query.view(), config.buffer, exclude)?;

    let m = config.per_stratum();
    let mut picked: Vec<usize> = (0..m).collect();
    let mut start = m;
    for size in config.stratum_sizes() {
        let mut local: Vec<usize> = rand::seq::index::sample(rng, size, m).into_iter().collect();
        local.sort_unstable();
        picked.extend(local.into_iter().map(|i| start + i));
        start += size;
    }
    let ids = picked.iter().map(|&i| buffer[i].0).collect();
    let raw = picked.iter().map(|&i| buffer[i].1 / params.beta).collect();
    TruncatedPolicy::from_scores(ids, raw, config.beta_renorm)
}

/// Draws one candidate; returns it with its probability under `policy`.
pub fn sample_action(policy: &TruncatedPolicy, rng: &mut impl Rng) -> (usize, f64) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&id, &p) in policy.ids.iter().zip(&policy.probs) {
        acc += p;
        if u < acc {
            return (id, p);
        }
    }
    let last = policy.len() - 1;
    (policy.ids[last], policy.probs[last])
}

/// Natural-log probability of `id` and the entropy of the whole truncated policy.
pub fn log_prob_and_entropy(policy: &TruncatedPolicy, id: usize) -> Result<(f64, f64)> {
    let pos = policy
        .position(id)
        .ok_or_else(|| Error::InvalidArgument(format!("id {id} is not a candidate")))?;
    Ok((policy.probs[pos].ln(), policy.entropy()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exemplar_store::Exemplar;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orthogonal_store(n: usize) -> ExemplarStore {
        let exemplars = (0..n)
            .map(|id| Exemplar {
                id,
                input_text: format!("x{id}"),
                output_text: format!("y{id}"),
            })
            .collect();
        ExemplarStore::from_parts(exemplars, Array2::eye(n)).unwrap()
    }

    #[test]
    fn identity_and_constant_query_maps() {
        let s = array![0.3, -1.0, 2.0];
        let id = PolicyParams::identity(3, 1.0).unwrap();
        assert_eq!(id.query_vector(s.view()).unwrap(), s);
        let b = array![1.0, 2.0, 3.0];
        let constant = PolicyParams::new(Array2::zeros((3, 3)), b.clone(), 1.0).unwrap();
        assert_eq!(constant.query_vector(s.view()).unwrap(), b);
    }

    #[test]
    fn policy_params_reject_nonpositive_beta() {
        assert!(PolicyParams::identity(2, 0.0).is_err());
        assert!(PolicyParams::identity(2, -1.0).is_err());
    }

    #[test]
    fn greedy_step_finds_self_and_respects_exclusion() {
        let store = orthogonal_store(8);
        let params = PolicyParams::identity(8, 1.0).unwrap();
        let mut state = Array1::zeros(8);
        state[5] = 1.0;
        state[2] = 0.5;
        assert_eq!(greedy_step(&params, state.view(), &store, &HashSet::new()).unwrap(), (5, 1.0));
        let exclude: HashSet<usize> = [5].into();
        assert_eq!(greedy_step(&params, state.view(), &store, &exclude).unwrap(), (2, 0.5));
        let all: HashSet<usize> = (0..8).collect();
        assert!(greedy_step(&params, state.view(), &store, &all).is_err());
    }

    #[test]
    fn stratum_sizes_for_published_buffer() {
        let cfg = SamplingConfig::default();
        assert_eq!(cfg.per_stratum(), 2);
        assert_eq!(cfg.stratum_sizes(), vec![256, 255, 255]);
    }

    #[test]
    fn sampling_config_preconditions() {
        let bad = [
            SamplingConfig { strata: 1, ..Default::default() },
            SamplingConfig { k: 6, ..Default::default() },
            SamplingConfig { buffer: 4, ..Default::default() },
            SamplingConfig { beta_renorm: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn buffer_larger_than_selectable_set_is_rejected() {
        let store = orthogonal_store(8);
        let params = PolicyParams::identity(8, 1.0).unwrap();
        let cfg = SamplingConfig { buffer: 8, k: 4, strata: 2, beta_renorm: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let exclude: HashSet<usize> = [0].into();
        let err = stratified_policy(&params, Array1::zeros(8).view(), &store, &exclude, &cfg, &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn equal_scores_give_uniform_probabilities() {
        let store = orthogonal_store(16);
        let params = PolicyParams::identity(16, 1.0).unwrap();
        let state = Array1::from_elem(16, 0.25);
        let cfg = SamplingConfig { buffer: 16, k: 8, strata: 4, beta_renorm: 0.37 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tp = stratified_policy(&params, state.view(), &store, &HashSet::new(), &cfg, &mut rng).unwrap();
        assert_eq!(tp.len(), 8);
        for &p in tp.probs() {
            assert!((p - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_and_uniform_policies() {
        let tp = TruncatedPolicy::new(vec![7], vec![1.0], vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_action(&tp, &mut rng), (7, 1.0));

        let uniform = TruncatedPolicy::from_scores(vec![1, 2, 3, 4], vec![0.5; 4], 5.0).unwrap();
        let (lp, h) = log_prob_and_entropy(&uniform, 3).unwrap();
        assert!((lp + 4f64.ln()).abs() < 1e-12);
        assert!((h - 4f64.ln()).abs() < 1e-12);
        assert!(log_prob_and_entropy(&uniform, 9).is_err());
    }

    #[test]
    fn near_deterministic_policy_has_near_zero_entropy() {
        let eps = 1e-9;
        let tp = TruncatedPolicy::new(vec![0, 1, 2], vec![1.0 - 2.0 * eps, eps, eps], vec![0.0; 3]).unwrap();
        assert!(tp.entropy() < 1e-6);
    }

    #[test]
    fn truncated_policy_invariants_are_checked() {
        assert!(TruncatedPolicy::new(vec![], vec![], vec![]).is_err());
        assert!(TruncatedPolicy::new(vec![1, 1], vec![0.5, 0.5], vec![0.0; 2]).is_err());
        assert!(TruncatedPolicy::new(vec![1, 2], vec![0.7, 0.7], vec![0.0; 2]).is_err());
        assert!(TruncatedPolicy::new(vec![1, 2], vec![1.0, 0.0], vec![0.0; 2]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.5], 5.0);
        let b = softmax(&[101.0, 102.0, 103.5], 5.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
