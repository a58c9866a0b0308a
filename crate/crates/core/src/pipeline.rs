//! Retrieval strategies and the decode-and-score evaluation loop.

use std::collections::HashSet;

use ndarray::Array1;
use rayon::prelude::*;

use crate::encoder::Embedder;
use crate::environment::{render_exemplars, LmEnvironment};
use crate::error::{Error, Result};
use crate::evaluation::report::{em_key, summarize_run, PrfTriple};
use crate::evaluation::{exact_match_at_k, smatch_strings, ExampleResult, RunSummary, SmatchAverage};
use crate::exemplar_store::{Exemplar, ExemplarStore, Record};
use crate::model::RetrieverModel;
use crate::policy::{sample_action, stratified_policy, SamplingConfig};
use crate::trainer::{derive_rng, greedy_retrieve, EpisodeQuery};

pub enum Retriever<'a> {
    /// The trained policy, run greedily.
    Iterative(&'a RetrieverModel),
    /// The trained policy, sampling from the stratified truncated policy.
    IterativeSampled(&'a RetrieverModel, SamplingConfig),
    /// One MIPS call with the query embedding: the `K` most similar exemplars.
    MipsTopK,
    Bm25,
}

impl Retriever<'_> {
    /// Up to `k` distinct exemplars with their scores, in retrieval order.
    pub fn retrieve(
        &self,
        store: &ExemplarStore,
        query_text: &str,
        query_embedding: &Array1<f64>,
        k: usize,
        exclude: &HashSet<usize>,
        rng: &mut impl rand::Rng,
    ) -> Result<Vec<(usize, f64)>> {
        let available = (0..store.len()).filter(|i| !exclude.contains(i)).count();
        if k > available {
            return Err(Error::InvalidArgument(format!(
                "asked for {k} exemplars but only {available} are selectable"
            )));
        }
        match self {
            Retriever::Iterative(model) => greedy_retrieve(model, store, query_embedding.view(), k, exclude),
            Retriever::IterativeSampled(model, sampling) => {
                let (mut state, _) = model.initial_state(query_embedding.view())?;
                let mut exclude = exclude.clone();
                let mut out = Vec::with_capacity(k);
                for _ in 0..k {
                    let tp = stratified_policy(&model.policy, state.view(), store, &exclude, sampling, rng)?;
                    let (id, _) = sample_action(&tp, rng);
                    let pos = tp.position(id).expect("sampled id is a candidate");
                    out.push((id, tp.raw_scores()[pos] * model.policy.beta));
                    exclude.insert(id);
                    state = model.gru.step(state.view(), store.embedding(id))?.0;
                }
                Ok(out)
            }
            Retriever::MipsTopK => store.mips_top(query_embedding.view(), k, exclude),
            Retriever::Bm25 => Ok(store
                .bm25_top(query_text, k + exclude.len())
                .into_iter()
                .filter(|(id, _)| !exclude.contains(id))
                .take(k)
                .collect()),
        }
    }
}

/// Every stored exemplar as a training query that may not retrieve itself.
pub fn leave_one_out_queries(store: &ExemplarStore) -> Vec<EpisodeQuery> {
    store
        .exemplars()
        .iter()
        .map(|e| EpisodeQuery {
            text: e.input_text.clone(),
            reference: e.output_text.clone(),
            embedding: store.embedding(e.id).to_owned(),
            exclude: HashSet::from([e.id]),
        })
        .collect()
}

pub fn queries_from_records(records: &[Record], embedder: &dyn Embedder) -> Result<Vec<EpisodeQuery>> {
    let texts: Vec<&str> = records.iter().map(|r| r.input.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    Ok(records
        .iter()
        .zip(vectors)
        .map(|(r, v)| EpisodeQuery {
            text: r.input.clone(),
            reference: r.output.clone(),
            embedding: Array1::from(v),
            exclude: HashSet::new(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    /// Exemplars per prompt.
    pub exemplars: usize,
    pub max_k: usize,
    pub beams: usize,
    pub smatch_restarts: usize,
    pub smatch_average: SmatchAverage,
    pub seed: u64,
}

/// Decodes with the retrieved exemplars and scores the hypotheses.
pub fn score_example(
    env: &dyn LmEnvironment,
    query: &EpisodeQuery,
    retrieved: &[&Exemplar],
    settings: &EvalSettings,
) -> Result<ExampleResult> {
    let prompt = render_exemplars(retrieved.iter().copied(), &query.text);
    let hyps = env.generate(&prompt, settings.beams)?;
    let texts: Vec<String> = hyps.into_iter().map(|h| h.text).collect();
    let em = (1..=settings.max_k)
        .map(|k| (em_key(k), exact_match_at_k(&texts, &query.reference, k)))
        .collect();
    let top = texts.first().map(String::as_str).unwrap_or("");
    let s = smatch_strings(top, &query.reference, settings.smatch_restarts);
    Ok(ExampleResult {
        query: query.text.clone(),
        reference: query.reference.clone(),
        retrieved: retrieved.iter().map(|e| e.id).collect(),
        hypotheses: texts,
        em,
        smatch: PrfTriple::from(&s),
        smatch_counts: [s.matched, s.candidate_total, s.reference_total],
    })
}

/// One evaluation run over `queries`. `run` selects the random stream used by
/// sampled retrieval, so repeats differ while staying reproducible.
pub fn evaluate(
    retriever: &Retriever<'_>,
    store: &ExemplarStore,
    env: &dyn LmEnvironment,
    queries: &[EpisodeQuery],
    settings: &EvalSettings,
    run: u64,
) -> Result<RunSummary> {
    let examples: Vec<ExampleResult> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut rng = derive_rng(settings.seed, 100 + run, i as u64);
            let ids = retriever.retrieve(store, &q.text, &q.embedding, settings.exemplars, &q.exclude, &mut rng)?;
            let exemplars: Vec<&Exemplar> = ids.iter().map(|(id, _)| &store.exemplars()[*id]).collect();
            score_example(env, q, &exemplars, settings)
        })
        .collect::<Result<_>>()?;
    Ok(summarize_run(examples, settings.max_k, settings.smatch_average))
}
