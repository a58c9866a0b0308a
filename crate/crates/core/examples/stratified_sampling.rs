//! The stratified truncated policy: a deterministic top block plus a few
//! candidates drawn from each stratum of the top-B buffer, renormalized with
//! a softmax and sampled from.
//!
//! ```sh
//! cargo run --example stratified_sampling
//! ```

use std::collections::{BTreeMap, HashSet};

use iterative_retriever::policy::{sample_action, stratified_policy, PolicyParams};
use iterative_retriever::{ExemplarStore, Exemplar, SamplingConfig};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Report {
    pub strata: Vec<usize>,
    pub candidates: Vec<usize>,
    pub top_choice_share: f64,
}

pub fn run() -> Result<Report, Box<dyn std::error::Error>> {
    // 1000 exemplars with distinct scores so buffer rank equals id.
    let n = 1000;
    let exemplars = (0..n)
        .map(|id| Exemplar {
            id,
            input_text: format!("utterance {id}"),
            output_text: "(f)".into(),
        })
        .collect();
    let emb = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { 1.0 - i as f64 / n as f64 } else { 0.0 });
    let store = ExemplarStore::from_parts(exemplars, emb)?;
    let params = PolicyParams::identity(2, 0.1)?;
    let state = Array1::from(vec![1.0, 0.0]);

    let config = SamplingConfig::default();
    println!(
        "B={} k={} Ns={}: top block of {}, sampled strata of sizes {:?}",
        config.buffer,
        config.k,
        config.strata,
        config.per_stratum(),
        config.stratum_sizes()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = stratified_policy(&params, state.view(), &store, &HashSet::new(), &config, &mut rng)?;
    println!("candidates:");
    for (id, p) in policy.ids().iter().zip(policy.probs()) {
        println!("  {id:>4}  p = {p:.3}");
    }
    println!("entropy {:.3} nats", policy.entropy());

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let draws = 10_000;
    for _ in 0..draws {
        let (id, _) = sample_action(&policy, &mut rng);
        *counts.entry(id).or_default() += 1;
    }
    let top_choice_share = counts.get(&policy.ids()[0]).copied().unwrap_or(0) as f64 / draws as f64;
    println!("share of {draws} draws on the best candidate: {top_choice_share:.3}");
    Ok(Report {
        strata: config.stratum_sizes(),
        candidates: policy.ids().to_vec(),
        top_choice_share,
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()?;
    Ok(())
}
