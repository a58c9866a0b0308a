use std::fmt;

pub const HEADER: &str = "Let's translate what a human user says\ninto what a computer might say.";

/// A rendered few-shot prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Prompt {
    pub text: String,
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Renders the header, one `Human:`/`Computer:` block per exemplar in order,
/// and the open `Human: <query>\nComputer:` slot. Blocks are separated by a
/// blank line; there is no trailing newline.
pub fn render_prompt<'a, I>(exemplars: I, query: &str) -> Prompt
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut text = String::from(HEADER);
    text.push_str("\n\n");
    for (input, output) in exemplars {
        text.push_str("Human: ");
        text.push_str(input);
        text.push_str("\nComputer: ");
        text.push_str(output);
        text.push_str("\n\n");
    }
    text.push_str("Human: ");
    text.push_str(query);
    text.push_str("\nComputer:");
    Prompt { text }
}

/// Pieces recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt<'a> {
    pub exemplar_outputs: Vec<&'a str>,
    pub query: Option<&'a str>,
}

/// Inverse of [`render_prompt`] for inputs and outputs without line breaks.
pub fn parse_prompt(prompt: &Prompt) -> ParsedPrompt<'_> {
    let mut outputs = Vec::new();
    let mut query = None;
    let mut last_human: Option<&str> = None;
    for line in prompt.text.lines() {
        if let Some(x) = line.strip_prefix("Human: ") {
            last_human = Some(x);
        } else if let Some(y) = line.strip_prefix("Computer: ") {
            outputs.push(y);
            last_human = None;
        } else if line == "Computer:" {
            query = last_human;
        }
    }
    ParsedPrompt {
        exemplar_outputs: outputs,
        query,
    }
}
