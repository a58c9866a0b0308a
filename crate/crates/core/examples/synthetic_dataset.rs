//! Writes the synthetic parsing task as JSONL, ready for the command line.
//!
//! ```sh
//! cargo run --example synthetic_dataset -- data/ [seed]
//! iterative-retriever --run-dir runs/demo --config examples/configs/synthetic.toml ingest data/exemplars.jsonl
//! iterative-retriever --run-dir runs/demo --config examples/configs/synthetic.toml train --env synthetic
//! iterative-retriever --run-dir runs/demo --config examples/configs/synthetic.toml eval --test data/test.jsonl
//! ```

use std::path::{Path, PathBuf};

use iterative_retriever::exemplar_store::write_jsonl;
use iterative_retriever::synthetic_task::{generate, SyntheticTaskConfig};

pub fn run(dir: &Path, seed: u64) -> Result<(), Box<dyn std::error::Error>> {
    let task = generate(&SyntheticTaskConfig {
        seed,
        ..Default::default()
    });
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("exemplars.jsonl"), &task.exemplars)?;
    write_jsonl(&dir.join("test.jsonl"), &task.test)?;
    println!(
        "wrote {} exemplars and {} test queries to {}",
        task.exemplars.len(),
        task.test.len(),
        dir.display()
    );
    println!("example: {}  =>  {}", task.exemplars[0].input, task.exemplars[0].output);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    run(&dir, seed)
}
