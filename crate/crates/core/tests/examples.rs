//! Runs every example's `run` entry point with small settings.

#![allow(dead_code)]

#[path = "../examples/ingest_and_search.rs"]
mod ingest_and_search;
#[path = "../examples/stratified_sampling.rs"]
mod stratified_sampling;
#[path = "../examples/gru_gradient_check.rs"]
mod gru_gradient_check;
#[path = "../examples/prompt_and_reward.rs"]
mod prompt_and_reward;
#[path = "../examples/smatch_eval.rs"]
mod smatch_eval;
#[path = "../examples/retrieve_and_eval.rs"]
mod retrieve_and_eval;
#[path = "../examples/synthetic_dataset.rs"]
mod synthetic_dataset;
#[path = "../examples/train_synthetic.rs"]
mod train_synthetic;

#[test]
fn ingest_and_search_finds_distinct_hits() {
    let hits = ingest_and_search::run("please book the budget review").unwrap();
    assert_eq!(hits.dense.len(), 3);
    assert_eq!(hits.lexical.len(), 3);
}

#[test]
fn stratified_sampling_keeps_the_top_block() {
    let report = stratified_sampling::run().unwrap();
    assert_eq!(report.strata, vec![256, 255, 255]);
    assert_eq!(&report.candidates[..2], &[0, 1]);
    assert!(report.candidates[2..4].iter().all(|&id| (2..258).contains(&id)));
    assert!(report.top_choice_share > 0.0);
}

#[test]
fn gru_gradient_check_agrees() {
    assert!(gru_gradient_check::run(5).unwrap() < 1e-6);
}

#[test]
fn prompt_rewards_telescope() {
    let trace = prompt_and_reward::run().unwrap();
    let total: f64 = trace.rewards.iter().sum();
    assert!((total - (trace.full - trace.empty)).abs() < 1e-12);
    assert!(trace.rewards[0] > 0.0);
    assert_eq!(trace.rewards[1], 0.0);
    assert!(trace.rewards[2] > 0.0);
    assert!((trace.full - 1.0).abs() < 1e-12);
}

#[test]
fn smatch_eval_scores_the_dropped_triple() {
    let (em, score) = smatch_eval::run().unwrap();
    assert_eq!(em, 0);
    assert_eq!((score.matched, score.candidate_total, score.reference_total), (10, 10, 11));
}

#[test]
fn retrieve_and_eval_reports_every_retriever() {
    let table = retrieve_and_eval::run(32).unwrap();
    assert_eq!(table.len(), 3);
    for em in table.values() {
        assert!(em.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn synthetic_dataset_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset::run(dir.path(), 2).unwrap();
    let lines = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap().lines().count();
    assert_eq!((lines("exemplars.jsonl"), lines("test.jsonl")), (2000, 200));
}

#[test]
fn train_synthetic_reports_a_row_per_seed() {
    let runs = train_synthetic::run(&[3], 48).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].episodes, 48);
}
