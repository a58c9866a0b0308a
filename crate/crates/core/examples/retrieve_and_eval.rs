//! Trains a small retriever, retrieves prompts for a few held-out queries and
//! compares every retriever on EM@k and SMatch.
//!
//! ```sh
//! cargo run --release --example retrieve_and_eval -- [episodes]
//! ```

use std::collections::{BTreeMap, HashSet};

use iterative_retriever::pipeline::{leave_one_out_queries, queries_from_records};
use iterative_retriever::synthetic_task::{generate, trainer_config, SyntheticTaskConfig};
use iterative_retriever::{
    evaluate, EvalSettings, ExemplarStore, HashingEmbedder, IngestOptions, InitScheme, Retriever, RetrieverModel,
    SyntheticOracleEnv, Trainer, TrainerConfig, TrainerState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// EM@1..3 per retriever.
pub fn run(episodes: u64) -> Result<BTreeMap<String, Vec<f64>>, Box<dyn std::error::Error>> {
    let task = generate(&SyntheticTaskConfig {
        exemplars: 600,
        test_queries: 60,
        seed: 4,
        ..Default::default()
    });
    let embedder = HashingEmbedder::new(64, 0)?;
    let store = ExemplarStore::ingest(task.exemplars.clone(), &embedder, IngestOptions::default())?;
    let env = SyntheticOracleEnv::new(task.gold_pairs());

    let base = trainer_config(4);
    let config = TrainerConfig {
        total_episodes: episodes,
        rollout: iterative_retriever::trainer::RolloutConfig {
            sampling: iterative_retriever::SamplingConfig {
                buffer: 128,
                ..base.rollout.sampling
            },
            ..base.rollout
        },
        ..base
    };
    let model = RetrieverModel::new(store.dim(), 0.01, InitScheme::Identity, &mut ChaCha8Rng::seed_from_u64(4))?;
    let train_queries = leave_one_out_queries(&store);
    let state = TrainerState::new(model, &config);
    let mut trainer = Trainer::new(config, &store, &env, &train_queries, state)?;
    trainer.run(|_, row| {
        if row.iteration % 5 == 0 {
            println!("iteration {:>3}  mean return {:.4}", row.iteration, row.mean_return);
        }
        Ok(())
    })?;
    let model = trainer.into_state().model;

    let test = queries_from_records(&task.test, &embedder)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for q in test.iter().take(2) {
        let ids = Retriever::Iterative(&model).retrieve(&store, &q.text, &q.embedding, 4, &HashSet::new(), &mut rng)?;
        println!("\nquery: {}", q.text);
        for (id, score) in ids {
            println!("  {score:>8.3}  {}", store.exemplars()[id].input_text);
        }
    }

    let settings = EvalSettings {
        exemplars: 4,
        max_k: 3,
        beams: 3,
        smatch_restarts: 2,
        smatch_average: Default::default(),
        seed: 0,
    };
    let mut table = BTreeMap::new();
    println!("\nretriever     em@1   em@2   em@3   smatch F");
    for (name, retriever) in [
        ("iterative", Retriever::Iterative(&model)),
        ("mips_topk", Retriever::MipsTopK),
        ("bm25", Retriever::Bm25),
    ] {
        let summary = evaluate(&retriever, &store, &env, &test, &settings, 0)?;
        let em: Vec<f64> = (1..=3).map(|k| summary.em[&format!("em@{k}")]).collect();
        println!("{name:<12} {:.3}  {:.3}  {:.3}  {:.3}", em[0], em[1], em[2], summary.smatch.f);
        table.insert(name.to_string(), em);
    }
    Ok(table)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    run(episodes)?;
    Ok(())
}
