/// Collapses whitespace runs to one space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1 if any of the first `min(k, len)` hypotheses equals the reference after
/// whitespace normalization, else 0. `k = 0` always yields 0.
pub fn exact_match_at_k<S: AsRef<str>>(hypotheses: &[S], reference: &str, k: usize) -> u8 {
    let reference = normalize_whitespace(reference);
    u8::from(
        hypotheses
            .iter()
            .take(k)
            .any(|h| normalize_whitespace(h.as_ref()) == reference),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_membership() {
        let hyps = ["a", "b"];
        assert_eq!(exact_match_at_k(&hyps, "b", 1), 0);
        assert_eq!(exact_match_at_k(&hyps, "b", 2), 1);
        assert_eq!(exact_match_at_k(&hyps, "b", 10), 1);
        assert_eq!(exact_match_at_k::<&str>(&[], "b", 3), 0);
    }

    #[test]
    fn whitespace_is_normalized() {
        assert_eq!(exact_match_at_k(&["(f  :a\t1)  "], "(f :a 1)", 1), 1);
        assert_eq!(normalize_whitespace("  a \n b  "), "a b");
    }
}
