//! SMatch: triple-overlap F1 under the best one-to-one variable alignment,
//! searched by steepest-ascent hill climbing from a label-matching start
//! plus random restarts.
//!
//! Triples are compared as sets; a duplicate triple within one graph counts once.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::amr::{AmrGraph, Target};

pub const DEFAULT_RESTARTS: usize = 4;
const SEARCH_SEED: u64 = 0x5eed_a11e;
/// Equal-score moves allowed in a row before a climb gives up on a plateau.
const SIDEWAYS_STEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmatchScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub candidate_total: usize,
    pub reference_total: usize,
}

impl SmatchScore {
    pub fn from_counts(matched: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(matched, candidate_total);
        let recall = ratio(matched, reference_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            matched,
            candidate_total,
            reference_total,
        }
    }
}

#[derive(Default)]
struct Moves {
    best: Option<(Alignment, usize)>,
    /// First unvisited move that keeps the score.
    sideways: Option<Alignment>,
}

/// Candidate-entity → reference-entity partial injection.
pub type Alignment = Vec<Option<usize>>;

/// A candidate entity-to-entity triple's endpoints and the reference endpoint
/// pairs that share its relation.
type BinaryTriple = (usize, usize, BTreeSet<(usize, usize)>);

/// Precomputed match structure between two graphs.
pub struct AlignmentProblem {
    n_cand: usize,
    n_ref: usize,
    /// `unary[i][j]`: constant-target triples of candidate `i` present on reference `j`.
    unary: Vec<Vec<usize>>,
    binary: Vec<BinaryTriple>,
    cand_labels: Vec<Option<String>>,
    ref_labels: Vec<Option<String>>,
    pub candidate_total: usize,
    pub reference_total: usize,
}

type ConstTriple = (String, usize, String);
type EntityTriple = (String, usize, usize);

fn split(graph: &AmrGraph) -> (BTreeSet<ConstTriple>, BTreeSet<EntityTriple>) {
    let mut consts = BTreeSet::new();
    let mut ents = BTreeSet::new();
    for t in graph.triples() {
        match &t.target {
            Target::Constant(c) => {
                consts.insert((t.relation.clone(), t.source, c.clone()));
            }
            Target::Entity(e) => {
                ents.insert((t.relation.clone(), t.source, *e));
            }
        }
    }
    (consts, ents)
}

impl AlignmentProblem {
    pub fn new(candidate: &AmrGraph, reference: &AmrGraph) -> Self {
        let (c_const, c_ent) = split(candidate);
        let (r_const, r_ent) = split(reference);
        let n_cand = candidate.entity_count();
        let n_ref = reference.entity_count();

        let mut unary = vec![vec![0usize; n_ref]; n_cand];
        let mut by_rel_const: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
        for (rel, src, c) in &r_const {
            by_rel_const.entry((rel, c)).or_default().push(*src);
        }
        for (rel, src, c) in &c_const {
            if let Some(refs) = by_rel_const.get(&(rel.as_str(), c.as_str())) {
                for &j in refs {
                    unary[*src][j] += 1;
                }
            }
        }

        let mut by_rel: HashMap<&str, BTreeSet<(usize, usize)>> = HashMap::new();
        for (rel, a, b) in &r_ent {
            by_rel.entry(rel).or_default().insert((*a, *b));
        }
        let binary = c_ent
            .iter()
            .map(|(rel, a, b)| (*a, *b, by_rel.get(rel.as_str()).cloned().unwrap_or_default()))
            .collect();

        let labels = |g: &AmrGraph| -> Vec<Option<String>> {
            (0..g.entity_count()).map(|e| g.label(e).map(str::to_string)).collect()
        };
        Self {
            n_cand,
            n_ref,
            unary,
            binary,
            cand_labels: labels(candidate),
            ref_labels: labels(reference),
            candidate_total: c_const.len() + c_ent.len(),
            reference_total: r_const.len() + r_ent.len(),
        }
    }

    pub fn candidate_entities(&self) -> usize {
        self.n_cand
    }

    pub fn reference_entities(&self) -> usize {
        self.n_ref
    }

    /// Number of candidate triples matched under `alignment`.
    pub fn score(&self, alignment: &[Option<usize>]) -> usize {
        let unary: usize = alignment
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| self.unary[i][j]))
            .sum();
        let binary = self
            .binary
            .iter()
            .filter(|(a, b, pairs)| match (alignment[*a], alignment[*b]) {
                (Some(x), Some(y)) => pairs.contains(&(x, y)),
                _ => false,
            })
            .count();
        unary + binary
    }

    /// Maps each candidate entity to the first unused reference entity with
    /// the same instance label.
    pub fn smart_start(&self) -> Alignment {
        let mut used = vec![false; self.n_ref];
        self.cand_labels
            .iter()
            .map(|label| {
                let j = (0..self.n_ref).find(|&j| !used[j] && label.is_some() && self.ref_labels[j] == *label)?;
                used[j] = true;
                Some(j)
            })
            .collect()
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Alignment {
        let mut refs: Vec<usize> = (0..self.n_ref).collect();
        refs.shuffle(rng);
        (0..self.n_cand).map(|i| refs.get(i).copied()).collect()
    }

    /// Steepest-ascent hill climbing over reassignments (including unmapping),
    /// pairwise swaps and edge moves. When nothing improves, a few moves to
    /// unvisited alignments of equal score are taken before stopping.
    /// Returns the local optimum and its score.
    pub fn hill_climb(&self, mut alignment: Alignment) -> (Alignment, usize) {
        let mut current = self.score(&alignment);
        let mut visited = HashSet::from([alignment.clone()]);
        let mut sideways_left = SIDEWAYS_STEPS;
        loop {
            let mut moves = Moves::default();
            let consider = |candidate: Alignment, moves: &mut Moves| {
                let s = self.score(&candidate);
                if s > current && moves.best.as_ref().is_none_or(|(_, b)| s > *b) {
                    moves.best = Some((candidate, s));
                } else if s == current && moves.sideways.is_none() && !visited.contains(&candidate) {
                    moves.sideways = Some(candidate);
                }
            };
            // Edge moves place both ends of a candidate edge onto a reference
            // edge with the same relation, unmapping whoever held those
            // entities. They cross plateaus that single reassignments cannot,
            // so they come first and win ties for the sideways slot.
            for (a, b, pairs) in &self.binary {
                for &(x, y) in pairs {
                    if (a == b) != (x == y) || (alignment[*a] == Some(x) && alignment[*b] == Some(y)) {
                        continue;
                    }
                    let mut next = alignment.clone();
                    for m in next.iter_mut().filter(|m| **m == Some(x) || **m == Some(y)) {
                        *m = None;
                    }
                    next[*a] = Some(x);
                    next[*b] = Some(y);
                    consider(next, &mut moves);
                }
            }
            let mut used = vec![false; self.n_ref];
            for j in alignment.iter().flatten() {
                used[*j] = true;
            }
            for i in 0..self.n_cand {
                for j in (0..self.n_ref).filter(|&j| !used[j]) {
                    let mut next = alignment.clone();
                    next[i] = Some(j);
                    consider(next, &mut moves);
                }
                if alignment[i].is_some() {
                    let mut next = alignment.clone();
                    next[i] = None;
                    consider(next, &mut moves);
                }
                for k in i + 1..self.n_cand {
                    if alignment[i] != alignment[k] {
                        let mut next = alignment.clone();
                        next.swap(i, k);
                        consider(next, &mut moves);
                    }
                }
            }
            match moves {
                Moves { best: Some((next, s)), .. } => {
                    alignment = next;
                    current = s;
                    sideways_left = SIDEWAYS_STEPS;
                }
                Moves { sideways: Some(next), .. } if sideways_left > 0 => {
                    alignment = next;
                    sideways_left -= 1;
                }
                _ => return (alignment, current),
            }
            visited.insert(alignment.clone());
        }
    }

    /// Best alignment found from the smart start and `restarts` random starts.
    pub fn search(&self, restarts: usize) -> (Alignment, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(SEARCH_SEED);
        let mut best = self.hill_climb(self.smart_start());
        for _ in 0..restarts {
            let start = self.random_start(&mut rng);
            let result = self.hill_climb(start);
            if result.1 > best.1 {
                best = result;
            }
        }
        best
    }
}

/// SMatch of `candidate` against `reference`.
pub fn smatch(candidate: &AmrGraph, reference: &AmrGraph, restarts: usize) -> SmatchScore {
    let problem = AlignmentProblem::new(candidate, reference);
    let (_, matched) = problem.search(restarts);
    SmatchScore::from_counts(matched, problem.candidate_total, problem.reference_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::amr::to_amr;
    use crate::evaluation::sexpr::parse_sexpr;

    fn graph(text: &str) -> AmrGraph {
        to_amr(&parse_sexpr(text).unwrap()).unwrap()
    }

    #[test]
    fn graph_against_itself_is_perfect() {
        let g = graph("(a :x (b :y (c 1)) :z (b 2))");
        let s = smatch(&g, &g, DEFAULT_RESTARTS);
        assert_eq!(s.matched, s.candidate_total);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_graphs_score_zero() {
        let s = smatch(&AmrGraph::empty(), &AmrGraph::empty(), DEFAULT_RESTARTS);
        assert_eq!(s, SmatchScore::from_counts(0, 0, 0));
        assert_eq!(s.f1, 0.0);
        let g = graph("(a)");
        let s = smatch(&AmrGraph::empty(), &g, DEFAULT_RESTARTS);
        assert_eq!((s.matched, s.candidate_total, s.reference_total), (0, 0, 1));
    }

    #[test]
    fn label_swap_is_recovered() {
        let cand = graph("(a :x (c) :y (b))");
        let reference = graph("(a :y (b) :x (c))");
        let s = smatch(&cand, &reference, 0);
        assert_eq!(s.f1, 1.0);
    }

    #[test]
    fn f1_is_harmonic_mean() {
        let s = SmatchScore::from_counts(10, 10, 11);
        assert!((s.f1 - 20.0 / 21.0).abs() < 1e-12);
    }
}
