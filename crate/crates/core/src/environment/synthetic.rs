//! A deterministic stand-in for a language model, built so that the best
//! prompts are the ones whose exemplars demonstrate every structure the
//! reference parse needs.
//!
//! A parse's *productions* are its function applications, each written as the
//! head plus, per argument, the relation and the kind of the value (the nested
//! head, or `LIT` for literals). For a reference `y*` and a prompt whose
//! exemplar outputs demonstrate the production set `S`:
//!
//! ```text
//! coverage = |prod(y*) ∩ S| / |prod(y*)|
//! log P(y* | prompt) = -c · (1 - coverage)        (c = 5)
//! ```
//!
//! Decoding knows the gold parse for every query it was built with. The top
//! hypothesis gets every undemonstrated application wrong (its head replaced
//! by `UNK`); each following beam repairs one more, in pre-order, so the gold
//! parse sits at rank `m + 1` when `m` applications are undemonstrated. Further
//! beams corrupt one demonstrated application each.

use std::collections::{BTreeSet, HashMap};

use crate::environment::prompt::{parse_prompt, Prompt};
use crate::environment::{Hypothesis, LmEnvironment, ReferenceScore};
use crate::error::{Error, Result};
use crate::evaluation::metrics::normalize_whitespace;
use crate::evaluation::sexpr::{parse_sexpr, SExpr};

pub const DEFAULT_PENALTY: f64 = 5.0;
const CORRUPT_HEAD: &str = "UNK";

/// Production signature of one application node, or `None` for atoms and
/// lists without a symbol head.
fn production(node: &SExpr) -> Option<String> {
    let items = node.as_list()?;
    let head = match items.first()? {
        SExpr::Symbol(h) => h,
        _ => return None,
    };
    let mut sig = format!("{head}(");
    let mut positional = 0;
    let mut i = 1;
    let mut first = true;
    while i < items.len() {
        let (rel, value) = if items[i].is_keyword() && i + 1 < items.len() {
            i += 2;
            (items[i - 2].to_string()[1..].to_string(), &items[i - 1])
        } else {
            positional += 1;
            i += 1;
            (format!("ARG{}", positional - 1), &items[i - 1])
        };
        let kind = match value.as_list().and_then(|l| l.first()) {
            Some(SExpr::Symbol(h)) => h.as_str(),
            _ => "LIT",
        };
        if !first {
            sig.push(' ');
        }
        first = false;
        sig.push_str(&rel);
        sig.push(':');
        sig.push_str(kind);
    }
    sig.push(')');
    Some(sig)
}

/// Productions of every application node in pre-order (with repeats).
pub fn productions_in_order(parse: &SExpr) -> Vec<String> {
    let mut out = Vec::new();
    fn walk(node: &SExpr, out: &mut Vec<String>) {
        if let Some(p) = production(node) {
            out.push(p);
        }
        if let Some(items) = node.as_list() {
            items.iter().for_each(|c| walk(c, out));
        }
    }
    walk(parse, &mut out);
    out
}

pub fn production_set(parse: &SExpr) -> BTreeSet<String> {
    productions_in_order(parse).into_iter().collect()
}

/// Fraction of the reference's distinct productions demonstrated by `outputs`.
/// Outputs that do not parse demonstrate nothing. A reference without
/// productions is fully covered.
pub fn coverage<'a>(reference: &SExpr, outputs: impl IntoIterator<Item = &'a str>) -> f64 {
    let needed = production_set(reference);
    if needed.is_empty() {
        return 1.0;
    }
    let mut shown = BTreeSet::new();
    for out in outputs {
        if let Ok(expr) = parse_sexpr(out) {
            shown.extend(production_set(&expr));
        }
    }
    needed.intersection(&shown).count() as f64 / needed.len() as f64
}

#[derive(Debug, Clone)]
pub struct SyntheticOracleEnv {
    gold: HashMap<String, String>,
    penalty: f64,
}

impl SyntheticOracleEnv {
    /// `pairs` are the (query, gold parse) pairs decoding can answer.
    pub fn new<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let gold = pairs
            .into_iter()
            .map(|(x, y)| (normalize_whitespace(x), y.to_string()))
            .collect();
        Self {
            gold,
            penalty: DEFAULT_PENALTY,
        }
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn gold_for(&self, query: &str) -> Option<&str> {
        self.gold.get(&normalize_whitespace(query)).map(String::as_str)
    }
}

impl LmEnvironment for SyntheticOracleEnv {
    fn score(&self, prompt: &Prompt, reference: &str) -> Result<ReferenceScore> {
        let reference = parse_sexpr(reference)?;
        let parsed = parse_prompt(prompt);
        let cov = coverage(&reference, parsed.exemplar_outputs);
        Ok(ReferenceScore {
            log_prob: -self.penalty * (1.0 - cov),
            tokens: productions_in_order(&reference).len(),
        })
    }

    fn generate(&self, prompt: &Prompt, beams: usize) -> Result<Vec<Hypothesis>> {
        if beams == 0 {
            return Err(Error::InvalidArgument("beam size must be at least 1".into()));
        }
        let parsed = parse_prompt(prompt);
        let Some(gold_text) = parsed.query.and_then(|q| self.gold_for(q)) else {
            return Ok(Vec::new());
        };
        let gold = parse_sexpr(gold_text)?;
        let mut shown = BTreeSet::new();
        for out in &parsed.exemplar_outputs {
            if let Ok(expr) = parse_sexpr(out) {
                shown.extend(production_set(&expr));
            }
        }
        let prods = productions_in_order(&gold);
        let (missing, present): (Vec<usize>, Vec<usize>) = (0..prods.len()).partition(|&i| !shown.contains(&prods[i]));
        let cov = coverage(&gold, parsed.exemplar_outputs.iter().copied());
        let base = -self.penalty * (1.0 - cov);

        let mut corrupted_sets: Vec<Vec<usize>> = (0..=missing.len()).map(|t| missing[t..].to_vec()).collect();
        corrupted_sets.extend(present.iter().map(|&i| vec![i]));
        Ok(corrupted_sets
            .into_iter()
            .take(beams)
            .enumerate()
            .map(|(rank, nodes)| Hypothesis {
                text: corrupt(&gold, &nodes).to_string(),
                score: base - rank as f64,
            })
            .collect())
    }
}

/// Replaces the head of each listed application (pre-order index) with `UNK`.
fn corrupt(parse: &SExpr, nodes: &[usize]) -> SExpr {
    fn walk(node: &SExpr, counter: &mut usize, nodes: &[usize]) -> SExpr {
        match node {
            SExpr::List(items) if production(node).is_some() => {
                let idx = *counter;
                *counter += 1;
                let mut out: Vec<SExpr> = items.iter().map(|c| walk(c, counter, nodes)).collect();
                if nodes.contains(&idx) {
                    out[0] = SExpr::symbol(CORRUPT_HEAD);
                }
                SExpr::List(out)
            }
            SExpr::List(items) => SExpr::List(items.iter().map(|c| walk(c, counter, nodes)).collect()),
            atom => atom.clone(),
        }
    }
    let mut counter = 0;
    walk(parse, &mut counter, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::prompt::render_prompt;

    const GOLD: &str = "(Find :obj (Next :arg (Subject :value \"staff meeting\")))";

    fn env() -> SyntheticOracleEnv {
        SyntheticOracleEnv::new([("find staff meeting", GOLD)])
    }

    #[test]
    fn productions_abstract_literals() {
        let p = productions_in_order(&parse_sexpr(GOLD).unwrap());
        assert_eq!(p, vec!["Find(obj:Next)", "Next(arg:Subject)", "Subject(value:LIT)"]);
        let p = productions_in_order(&parse_sexpr("(f 1 (g))").unwrap());
        assert_eq!(p, vec!["f(ARG0:LIT ARG1:g)", "g()"]);
    }

    #[test]
    fn score_tracks_coverage() {
        let e = env();
        let zero = e.score(&render_prompt(std::iter::empty(), "find staff meeting"), GOLD).unwrap();
        assert!((zero.log_prob + 5.0).abs() < 1e-12);
        let partial = render_prompt([("a", "(Next :arg (Subject :value \"x\"))")], "find staff meeting");
        let s = e.score(&partial, GOLD).unwrap();
        assert!((s.log_prob + 5.0 / 3.0).abs() < 1e-12);
        let full = render_prompt([("a", "(Find :obj (Next :arg (Subject :value \"y\")))")], "q");
        assert_eq!(e.score(&full, GOLD).unwrap().log_prob, 0.0);
    }

    #[test]
    fn ignored_exemplar_changes_nothing() {
        let e = env();
        let a = render_prompt([("a", "(Next :arg (Subject :value \"x\"))")], "q");
        let b = render_prompt(
            [("a", "(Next :arg (Subject :value \"x\"))"), ("b", "(Other :z 1)"), ("c", "not a parse (")],
            "q",
        );
        assert_eq!(e.score(&a, GOLD).unwrap(), e.score(&b, GOLD).unwrap());
    }

    #[test]
    fn full_coverage_puts_gold_first() {
        let e = env();
        let prompt = render_prompt([("a", "(Find :obj (Next :arg (Subject :value \"y\")))")], "find staff meeting");
        let hyps = e.generate(&prompt, 3).unwrap();
        assert_eq!(hyps.len(), 3);
        assert_eq!(hyps[0].text, GOLD);
        assert!(hyps.windows(2).all(|w| w[0].score > w[1].score));
        let one = e.generate(&prompt, 1).unwrap();
        assert_eq!(one[..], hyps[..1]);
    }

    #[test]
    fn missing_structures_push_gold_down() {
        let e = env();
        let prompt = render_prompt([("a", "(Next :arg (Subject :value \"y\"))")], "find staff meeting");
        let hyps = e.generate(&prompt, 3).unwrap();
        assert_eq!(hyps[0].text, "(UNK :obj (Next :arg (Subject :value \"staff meeting\")))");
        assert_eq!(hyps[1].text, GOLD);
        let zero_shot = render_prompt(std::iter::empty(), "find staff meeting");
        let hyps = e.generate(&zero_shot, 3).unwrap();
        assert!(hyps.iter().all(|h| h.text != GOLD));
        assert!(hyps.iter().all(|h| h.score <= 0.0));
    }

    #[test]
    fn unknown_query_yields_nothing() {
        let e = env();
        let prompt = render_prompt(std::iter::empty(), "something else");
        assert!(e.generate(&prompt, 3).unwrap().is_empty());
        assert!(e.generate(&prompt, 0).is_err());
    }
}
