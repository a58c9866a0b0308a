//! Renders a few-shot prompt and shows how per-step rewards, the change in
//! reference probability, add up to the gain of the whole prompt.
//!
//! ```sh
//! cargo run --example prompt_and_reward
//! ```

use iterative_retriever::environment::{reference_probability, render_exemplars, reward};
use iterative_retriever::{Exemplar, SyntheticOracleEnv};

pub struct Trace {
    pub rewards: Vec<f64>,
    pub empty: f64,
    pub full: f64,
}

fn exemplar(id: usize, input: &str, output: &str) -> Exemplar {
    Exemplar {
        id,
        input_text: input.into(),
        output_text: output.into(),
    }
}

pub fn run() -> Result<Trace, Box<dyn std::error::Error>> {
    let query = "when is my next staff meeting";
    let reference = r#"(Yield :output (Event.start :obj (FindNumNextEvent :constraint (Event.subject_? :obj (?~= "staff meeting")) :number 1L)))"#;
    let env = SyntheticOracleEnv::new([(query, reference)]);
    let chosen = [
        exemplar(0, "what time is lunch", r#"(Yield :output (Event.start :obj (Event.subject_? :obj (?~= "lunch"))))"#),
        exemplar(1, "cancel my 3pm", "(DeleteEvent :time 3PM)"),
        exemplar(2, "when does my dentist visit start", r#"(Yield :output (Event.start :obj (FindNumNextEvent :constraint (Event.subject_? :obj (?~= "dentist")) :number 1L)))"#),
    ];

    println!("{}\n", render_exemplars(&chosen[..2], query));
    let empty = reference_probability(&env, query, reference, &[], false)?;
    let mut prefix: Vec<&Exemplar> = Vec::new();
    let mut rewards = Vec::new();
    println!("P(reference | no exemplars) = {empty:.4}");
    for e in &chosen {
        let r = reward(&env, query, reference, &prefix, e, false)?;
        prefix.push(e);
        println!("after \"{}\": reward {r:+.4}", e.input_text);
        rewards.push(r);
    }
    let full = reference_probability(&env, query, reference, &prefix, false)?;
    println!(
        "sum of rewards {:.4} = P(full) - P(empty) = {:.4}",
        rewards.iter().sum::<f64>(),
        full - empty
    );
    Ok(Trace { rewards, empty, full })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()?;
    Ok(())
}
