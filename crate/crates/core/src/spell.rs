//! Frequency-ranked spelling correction against the embedding vocabulary.
//!
//! Candidates are generated by enumerating every deletion, insertion and
//! substitution of the misspelled token and probing the vocabulary hash, one
//! edit level at a time. Any distance-1 hit beats every distance-2 hit; within
//! a level the most frequent token wins, ties going to the lexicographically
//! smaller token.

use std::collections::HashSet;

use crate::embedding::{EmbeddingTable, OovFallback};

pub const MAX_EDIT_DISTANCE: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionCandidate {
    pub token: String,
    pub edit_distance: u8,
    pub frequency: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct SpellCorrector<'t> {
    table: &'t EmbeddingTable,
}

impl<'t> SpellCorrector<'t> {
    pub fn new(table: &'t EmbeddingTable) -> Self {
        Self { table }
    }

    /// In-vocabulary tokens at the smallest edit distance (1, else 2) from
    /// `token`, best first.
    pub fn candidates(&self, token: &str) -> Vec<CorrectionCandidate> {
        let chars: Vec<char> = token.chars().collect();
        if chars.is_empty() {
            return Vec::new();
        }
        let alphabet = alphabet_for(&chars);

        let level1 = edits(&chars, &alphabet);
        let hits = self.known(token, &level1, 1);
        if !hits.is_empty() {
            return hits;
        }

        let mut level2 = HashSet::new();
        for word in &level1 {
            let w: Vec<char> = word.chars().collect();
            level2.extend(edits(&w, &alphabet));
        }
        self.known(token, &level2, 2)
    }

    pub fn correct(&self, token: &str) -> Option<String> {
        self.candidates(token).into_iter().next().map(|c| c.token)
    }

    fn known(&self, token: &str, words: &HashSet<String>, distance: u8) -> Vec<CorrectionCandidate> {
        let mut out: Vec<CorrectionCandidate> = words
            .iter()
            .filter(|w| w.as_str() != token)
            .filter_map(|w| {
                self.table.frequency(w).map(|frequency| CorrectionCandidate {
                    token: w.clone(),
                    edit_distance: distance,
                    frequency,
                })
            })
            .collect();
        out.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.token.cmp(&b.token)));
        out
    }
}

impl OovFallback for SpellCorrector<'_> {
    fn correct(&self, token: &str) -> Option<String> {
        SpellCorrector::correct(self, token)
    }
}

/// Lowercase ASCII letters plus any other characters of the token itself, so
/// accented words can still be repaired.
fn alphabet_for(chars: &[char]) -> Vec<char> {
    let mut alphabet: Vec<char> = ('a'..='z').collect();
    for &c in chars {
        if !alphabet.contains(&c) {
            alphabet.push(c);
        }
    }
    alphabet
}

fn edits(chars: &[char], alphabet: &[char]) -> HashSet<String> {
    let n = chars.len();
    let mut out = HashSet::with_capacity(n * (2 * alphabet.len() + 1) + alphabet.len());
    let mut buf: Vec<char> = Vec::with_capacity(n + 1);
    let mut emit = |buf: &[char]| {
        out.insert(buf.iter().collect::<String>());
    };
    for i in 0..n {
        buf.clear();
        buf.extend_from_slice(&chars[..i]);
        buf.extend_from_slice(&chars[i + 1..]);
        if !buf.is_empty() {
            emit(&buf);
        }
        for &c in alphabet {
            if c != chars[i] {
                buf.clear();
                buf.extend_from_slice(chars);
                buf[i] = c;
                emit(&buf);
            }
        }
    }
    for i in 0..=n {
        for &c in alphabet {
            buf.clear();
            buf.extend_from_slice(&chars[..i]);
            buf.push(c);
            buf.extend_from_slice(&chars[i..]);
            emit(&buf);
        }
    }
    out
}
