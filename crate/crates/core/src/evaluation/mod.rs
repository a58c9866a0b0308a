//! End-task metrics: exact match at k, and SMatch over AMR triples derived
//! from Lisp-formatted parses.

pub mod amr;
pub mod metrics;
pub mod report;
pub mod sexpr;
pub mod smatch;

pub use amr::{to_amr, AmrGraph, Target, Triple};
pub use metrics::{exact_match_at_k, normalize_whitespace};
pub use report::{EvalReport, ExampleResult, RetrieverReport, RunSummary, SmatchAverage};
pub use sexpr::{parse_sexpr, SExpr};
pub use smatch::{smatch, SmatchScore, DEFAULT_RESTARTS};

/// SMatch between two parse strings. A string that does not parse or convert
/// is scored as an empty graph.
pub fn smatch_strings(candidate: &str, reference: &str, restarts: usize) -> SmatchScore {
    let graph = |text: &str| {
        parse_sexpr(text)
            .and_then(|e| to_amr(&e))
            .unwrap_or_else(|_| AmrGraph::empty())
    };
    smatch(&graph(candidate), &graph(reference), restarts)
}
