//! Answer-string normalization shared by exact-match scoring and the
//! normalizing stub entailment judge.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, deletes punctuation, drops leading articles and collapses
/// whitespace. Idempotent.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words: &[&str] = &lowered.split_whitespace().collect::<Vec<_>>();
    while let Some((first, rest)) = words.split_first() {
        if ARTICLES.contains(first) {
            words = rest;
        } else {
            break;
        }
    }
    words.join(" ")
}

/// Exact-match indicator after normalization: 1 on match, 0 otherwise.
pub fn exact_match(predicted: &str, golden: &str) -> u8 {
    u8::from(normalize_answer(predicted) == normalize_answer(golden))
}

/// Truncates to at most `max_chars` characters on a char boundary.
pub fn truncate_chars(s: &str, max_chars: usize) -> (&str, bool) {
    match s.char_indices().nth(max_chars) {
        Some((idx, _)) => (&s[..idx], true),
        None => (s, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn em_examples() {
        assert_eq!(exact_match("Bolton, England", "Bolton, England"), 1);
        assert_eq!(exact_match("the Bolton England", "Bolton, England"), 1);
        assert_eq!(exact_match("Gary Oldman", "Samuel L. Jackson"), 0);
        assert_eq!(exact_match("  PARIS. ", "paris"), 1);
    }

    #[test]
    fn only_leading_articles_drop() {
        assert_eq!(normalize_answer("The Who"), "who");
        assert_eq!(normalize_answer("the the an Band"), "band");
        assert_eq!(normalize_answer("Catcher in the Rye"), "catcher in the rye");
        assert_eq!(normalize_answer("the"), "");
    }

    #[test]
    fn truncation_is_char_safe() {
        assert_eq!(truncate_chars("héllo", 2), ("hé", true));
        assert_eq!(truncate_chars("abc", 3), ("abc", false));
        assert_eq!(truncate_chars("", 0), ("", false));
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once.clone());
        }
    }
}
