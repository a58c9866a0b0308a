//! Scores a predicted parse against a reference: exact match after whitespace
//! normalization, and SMatch over the graphs' relation triples.
//!
//! ```sh
//! cargo run --example smatch_eval
//! ```

use iterative_retriever::evaluation::{exact_match_at_k, parse_sexpr, smatch, to_amr, SmatchScore, DEFAULT_RESTARTS};

pub fn run() -> Result<(u8, SmatchScore), Box<dyn std::error::Error>> {
    let reference = r#"(Yield :output (Event.start :obj (FindNumNextEvent :constraint (Event.subject_? :obj (?~= "staff meeting")) :number 1L)))"#;
    let predicted = r#"(Yield :output (Event.start :obj (FindNumNextEvent :constraint (Event.subject_? :obj (?~= "staff meeting")))))"#;

    let ref_graph = to_amr(&parse_sexpr(reference)?)?;
    println!("{}\n", parse_sexpr(reference)?.pretty(50));
    println!("reference triples:");
    for t in ref_graph.triples() {
        println!("  {t}");
    }
    let pred_graph = to_amr(&parse_sexpr(predicted)?)?;
    let score = smatch(&pred_graph, &ref_graph, DEFAULT_RESTARTS);
    let em = exact_match_at_k(&[predicted], reference, 1);
    println!(
        "prediction drops `:number 1L`: EM@1 {em}, matched {}/{} (P {:.3} R {:.3} F {:.3})",
        score.matched, score.reference_total, score.precision, score.recall, score.f1
    );
    Ok((em, score))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()?;
    Ok(())
}
