//! Surface-form normalization and tokenization shared by lookup, the hash
//! embedder and the TF-IDF baseline.

/// Lowercase, trim, collapse internal whitespace and strip punctuation at
/// token boundaries. Punctuation inside a token ("c++" excepted at the edge,
/// "e-commerce", "3d-printing") is kept.
pub fn normalize(surface: &str) -> String {
    let mut out = String::with_capacity(surface.len());
    for word in surface.split_whitespace() {
        let word = word.trim_matches(|c: char| !c.is_alphanumeric());
        if word.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Lowercase, split on any non-alphanumeric character, drop tokens shorter
/// than two characters. No stemming, no stop words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}
