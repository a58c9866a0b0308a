//! Trains the iterative retriever on the synthetic parsing task and compares
//! greedy retrieval with one-shot similarity search.
//!
//! ```sh
//! cargo run --release --example train_synthetic -- [seed ...] [--episodes N]
//! ```

use iterative_retriever::synthetic_task::{learning_run, LearningRun};

pub fn run(seeds: &[u64], episodes: u64) -> Result<Vec<LearningRun>, Box<dyn std::error::Error>> {
    println!("seed  episodes  first50  last50  mips@1  untrained@1  trained@1");
    let mut runs = Vec::new();
    for &seed in seeds {
        let start = std::time::Instant::now();
        let run = learning_run(seed, episodes)?;
        println!(
            "{:>4}  {:>8}  {:>7.4}  {:>6.4}  {:>6.3}  {:>11.3}  {:>9.3}   ({:.0}s)",
            run.seed,
            run.episodes,
            run.first50_return,
            run.last50_return,
            run.mips_em1,
            run.untrained_em1,
            run.trained_em1,
            start.elapsed().as_secs_f64()
        );
        runs.push(run);
    }
    Ok(runs)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut seeds = Vec::new();
    let mut episodes = 2000;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        if arg == "--episodes" {
            episodes = args.next().ok_or("--episodes needs a value")?.parse()?;
        } else {
            seeds.push(arg.parse::<u64>()?);
        }
    }
    if seeds.is_empty() {
        seeds.push(0);
    }
    run(&seeds, episodes)?;
    Ok(())
}
