//! Builds an exemplar store, saves and reloads it, then ranks exemplars for a
//! new utterance with dense inner-product search and with BM25.
//!
//! ```sh
//! cargo run --example ingest_and_search -- "what is on my calendar friday"
//! ```

use iterative_retriever::synthetic_task::{generate, SyntheticTaskConfig};
use iterative_retriever::{Embedder, ExemplarStore, HashingEmbedder, IngestOptions};
use std::collections::HashSet;

/// Top-3 ids from each ranker.
pub struct Hits {
    pub dense: Vec<usize>,
    pub lexical: Vec<usize>,
}

pub fn run(query: &str) -> Result<Hits, Box<dyn std::error::Error>> {
    let task = generate(&SyntheticTaskConfig {
        exemplars: 400,
        test_queries: 0,
        ..Default::default()
    });
    let embedder = HashingEmbedder::new(64, 0)?;
    let store = ExemplarStore::ingest(task.exemplars, &embedder, IngestOptions::default())?;

    let dir = tempfile::tempdir()?;
    store.save(dir.path())?;
    let store = ExemplarStore::load(dir.path())?;
    println!("store: {} exemplars, dimension {}", store.len(), store.dim());

    let q = ndarray::Array1::from(embedder.embed(query)?);
    let dense = store.mips_top(q.view(), 3, &HashSet::new())?;
    let lexical = store.bm25_top(query, 3);
    for (name, hits) in [("inner product", &dense), ("bm25", &lexical)] {
        println!("{name}:");
        for (id, score) in hits.iter() {
            println!("  {id:>4}  {score:>7.3}  {}", store.exemplars()[*id].input_text);
        }
    }
    Ok(Hits {
        dense: dense.iter().map(|h| h.0).collect(),
        lexical: lexical.iter().map(|h| h.0).collect(),
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "please book the budget review".into());
    run(&query)?;
    Ok(())
}
