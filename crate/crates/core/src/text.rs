//! Phrase tokenization shared by queries and concept labels.

/// Splits on whitespace, strips leading and trailing ASCII punctuation from
/// each piece and lowercases it. Pieces that are pure punctuation vanish.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Same as [`tokenize`] but keeps the original case. Used for labels whose
/// case carries meaning in the embedding vocabulary (synset terms).
pub fn tokenize_cased(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}
