//! Word tokenizer shared by the set-of-words describers and the text metrics.

/// Lowercased maximal runs of alphanumeric characters.
///
/// Whitespace and punctuation both separate tokens and are dropped, so
/// `"scary-looking"` yields `["scary", "looking"]`.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Unique tokens of `texts` in first-occurrence order.
pub fn set_of_words<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for text in texts {
        for tok in tokens(text) {
            if seen.insert(tok.clone()) {
                out.push(tok);
            }
        }
    }
    out
}
