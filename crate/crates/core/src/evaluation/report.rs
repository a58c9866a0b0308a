//! Evaluation report schema and corpus-level aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::evaluation::smatch::SmatchScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmatchAverage {
    /// Sum matched/candidate/reference counts over the corpus, then divide.
    #[default]
    Micro,
    /// Average per-example precision, recall and F1.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfTriple {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

impl From<&SmatchScore> for PrfTriple {
    fn from(s: &SmatchScore) -> Self {
        Self {
            p: s.precision,
            r: s.recall,
            f: s.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub query: String,
    pub reference: String,
    pub retrieved: Vec<usize>,
    pub hypotheses: Vec<String>,
    /// `em@1` .. `em@k`.
    pub em: BTreeMap<String, u8>,
    pub smatch: PrfTriple,
    pub smatch_counts: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub em: BTreeMap<String, f64>,
    pub smatch: PrfTriple,
    pub examples: Vec<ExampleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub em: BTreeMap<String, f64>,
    pub smatch: PrfTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverReport {
    pub runs: Vec<RunSummary>,
    pub mean: MeanSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub max_k: usize,
    pub repeats: usize,
    pub exemplars_per_prompt: usize,
    pub smatch_average: SmatchAverage,
    pub retrievers: BTreeMap<String, RetrieverReport>,
}

pub fn em_key(k: usize) -> String {
    format!("em@{k}")
}

pub fn summarize_run(examples: Vec<ExampleResult>, max_k: usize, average: SmatchAverage) -> RunSummary {
    let n = examples.len().max(1) as f64;
    let em = (1..=max_k)
        .map(|k| {
            let key = em_key(k);
            let hits: f64 = examples.iter().map(|e| f64::from(e.em.get(&key).copied().unwrap_or(0))).sum();
            (key, hits / n)
        })
        .collect();
    let smatch = match average {
        SmatchAverage::Micro => {
            let [m, c, r] = examples.iter().fold([0usize; 3], |acc, e| {
                [acc[0] + e.smatch_counts[0], acc[1] + e.smatch_counts[1], acc[2] + e.smatch_counts[2]]
            });
            PrfTriple::from(&SmatchScore::from_counts(m, c, r))
        }
        SmatchAverage::Macro => PrfTriple {
            p: examples.iter().map(|e| e.smatch.p).sum::<f64>() / n,
            r: examples.iter().map(|e| e.smatch.r).sum::<f64>() / n,
            f: examples.iter().map(|e| e.smatch.f).sum::<f64>() / n,
        },
    };
    RunSummary { em, smatch, examples }
}

pub fn mean_of_runs(runs: &[RunSummary]) -> MeanSummary {
    let n = runs.len().max(1) as f64;
    let mut em: BTreeMap<String, f64> = BTreeMap::new();
    for run in runs {
        for (k, v) in &run.em {
            *em.entry(k.clone()).or_default() += v / n;
        }
    }
    let smatch = PrfTriple {
        p: runs.iter().map(|r| r.smatch.p).sum::<f64>() / n,
        r: runs.iter().map(|r| r.smatch.r).sum::<f64>() / n,
        f: runs.iter().map(|r| r.smatch.f).sum::<f64>() / n,
    };
    MeanSummary { em, smatch }
}
