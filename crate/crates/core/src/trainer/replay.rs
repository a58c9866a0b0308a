use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// One step of collected experience. The state at the step is recomputed
/// from `query_embedding` and `history` when gradients are needed; `state`
/// keeps the value seen during collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub episode: u64,
    pub step: usize,
    /// Optimization round during which the record was collected.
    pub round: u64,
    pub query_embedding: Vec<f64>,
    /// Actions taken before this step, in order.
    pub history: Vec<usize>,
    pub state: Vec<f64>,
    pub candidate_ids: Vec<usize>,
    pub candidate_scores: Vec<f64>,
    pub action: usize,
    /// Probability of `action` under the behavior policy.
    pub behavior_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub advantage: f64,
    pub return_to_go: f64,
}

/// Bounded FIFO of transitions; the oldest record is evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<TransitionRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = TransitionRecord>) {
        for r in records {
            self.push(r);
        }
    }

    /// Drops records collected before round `min_round`.
    pub fn drop_older_than(&mut self, min_round: u64) {
        self.records.retain(|r| r.round >= min_round);
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter()
    }

    pub fn get(&self, index: usize) -> Option<&TransitionRecord> {
        self.records.get(index)
    }
}
