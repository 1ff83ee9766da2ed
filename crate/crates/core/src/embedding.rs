//! Word-embedding table and unit-normalized phrase vectors.
//!
//! The table is read from the plain-text word2vec layout: one `token v1 .. vD`
//! entry per line, with an optional `COUNT DIM` header line. Token frequency
//! drives spelling correction; word2vec writes its vocabulary in descending
//! corpus-frequency order, so without a frequency sidecar the rank in the file
//! stands in for the count.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{tokenize, tokenize_cased};

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    frequency: Vec<u64>,
}

impl EmbeddingTable {
    /// Builds a table from in-memory entries. Later duplicates are ignored.
    pub fn from_entries<I, S>(dimension: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        if dimension == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        let mut table = Self::empty(dimension);
        for (i, (token, vector)) in entries.into_iter().enumerate() {
            if vector.len() != dimension {
                return Err(Error::DimensionMismatch {
                    line: i + 1,
                    expected: dimension,
                    found: vector.len(),
                });
            }
            table.push(token.into(), &vector);
        }
        if table.is_empty() {
            return Err(Error::NoEntries);
        }
        table.assign_rank_frequencies();
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut table: Option<Self> = None;
        let mut declared_dim: Option<usize> = None;
        let mut seen_content = false;
        let mut values = Vec::new();

        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            let line = line.trim_end_matches(['\r', '\n', ' ']);
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let token = match fields.next() {
                Some(t) => t,
                None => continue,
            };

            if !seen_content {
                seen_content = true;
                if let Some(dim) = parse_header(line) {
                    declared_dim = Some(dim);
                    continue;
                }
            }

            values.clear();
            for field in fields {
                let v: f32 = field
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("invalid float `{field}`")))?;
                values.push(v);
            }
            if values.is_empty() {
                return Err(Error::parse(line_no, format!("token `{token}` has no vector")));
            }

            let expected = table
                .as_ref()
                .map(|t| t.dimension)
                .or(declared_dim)
                .unwrap_or(values.len());
            if values.len() != expected {
                return Err(Error::DimensionMismatch {
                    line: line_no,
                    expected,
                    found: values.len(),
                });
            }
            table
                .get_or_insert_with(|| Self::empty(expected))
                .push(token.to_owned(), &values);
        }

        let mut table = table.ok_or(Error::NoEntries)?;
        table.assign_rank_frequencies();
        Ok(table)
    }

    /// Replaces rank-derived frequencies with counts from a `token count`
    /// sidecar. Tokens the sidecar does not mention get a count of zero.
    pub fn read_frequencies<R: BufRead>(&mut self, reader: R) -> Result<()> {
        let mut counts = vec![0u64; self.words.len()];
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<frequencies>", e))?;
            let mut fields = line.split_ascii_whitespace();
            let (Some(token), Some(count)) = (fields.next(), fields.next()) else {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::parse(i + 1, "expected `token count`"));
            };
            let count: u64 = count
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("invalid count `{count}`")))?;
            if let Some(&idx) = self.index.get(token) {
                counts[idx] = count;
            }
        }
        self.frequency = counts;
        Ok(())
    }

    pub fn load_frequencies(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_frequencies(BufReader::new(file))
    }

    fn empty(dimension: usize) -> Self {
        Self {
            dimension,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            frequency: Vec::new(),
        }
    }

    fn push(&mut self, token: String, vector: &[f32]) {
        if self.index.contains_key(&token) {
            return;
        }
        self.index.insert(token.clone(), self.words.len());
        self.words.push(token);
        self.vectors.extend_from_slice(vector);
    }

    fn assign_rank_frequencies(&mut self) {
        let n = self.words.len() as u64;
        self.frequency = (0..n).map(|rank| n - rank).collect();
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Case-sensitive lookup of a stored key.
    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    pub fn frequency(&self, token: &str) -> Option<u64> {
        self.index.get(token).map(|&i| self.frequency[i])
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Exact key first, then case variants: lowercase, capitalized, uppercase.
    /// Returns the stored key that matched along with its vector.
    pub fn lookup(&self, token: &str) -> Option<(&str, &[f32])> {
        let hit = |t: &str| self.index.get(t).map(|&i| (self.words[i].as_str(), self.row(i)));
        hit(token)
            .or_else(|| hit(&token.to_lowercase()))
            .or_else(|| hit(&capitalize(token)))
            .or_else(|| hit(&token.to_uppercase()))
    }
}

fn parse_header(line: &str) -> Option<usize> {
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    match fields.as_slice() {
        [count, dim] => {
            count.parse::<u64>().ok()?;
            dim.parse::<usize>().ok().filter(|&d| d > 0)
        }
        _ => None,
    }
}

fn capitalize(token: &str) -> String {
    let mut chars = token.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

/// Resolution of an out-of-vocabulary token to an in-vocabulary replacement.
pub trait OovFallback {
    fn correct(&self, token: &str) -> Option<String>;
}

/// One resolved token of a phrase: the token as written, the vocabulary key it
/// resolved to and that key's own unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVector {
    pub token: String,
    pub resolved: String,
    pub unit: Vec<f64>,
}

/// A unit vector standing for a query or concept label, or the no-vector
/// sentinel when nothing resolved.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhraseVector {
    values: Option<Vec<f64>>,
    contributing: Vec<TokenVector>,
}

impl PhraseVector {
    pub fn missing() -> Self {
        Self::default()
    }

    /// Normalizes `raw`. A zero vector has no direction and yields the sentinel.
    pub fn from_raw(raw: Vec<f64>) -> Self {
        Self {
            values: normalized(raw),
            contributing: Vec::new(),
        }
    }

    pub fn is_missing(&self) -> bool {
        self.values.is_none()
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    pub fn contributing_tokens(&self) -> &[TokenVector] {
        &self.contributing
    }
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

fn add_into(acc: &mut [f64], v: &[f32]) {
    acc.iter_mut().zip(v).for_each(|(a, &b)| *a += f64::from(b));
}

/// Resolves one token: exact and case-variant lookup, then the fallback.
pub fn resolve_token<'t>(
    table: &'t EmbeddingTable,
    token: &str,
    fallback: Option<&dyn OovFallback>,
) -> Option<(&'t str, &'t [f32])> {
    table.lookup(token).or_else(|| {
        let corrected = fallback?.correct(token)?;
        table.lookup(&corrected)
    })
}

/// Sum of the in-vocabulary token vectors, normalized to unit length.
pub fn phrase_vector(table: &EmbeddingTable, tokens: &[String], fallback: Option<&dyn OovFallback>) -> PhraseVector {
    let mut sum = vec![0.0; table.dimension()];
    let mut contributing = Vec::new();
    for token in tokens {
        let Some((key, v)) = resolve_token(table, token, fallback) else {
            continue;
        };
        add_into(&mut sum, v);
        if let Some(unit) = normalized(v.iter().map(|&x| f64::from(x)).collect()) {
            contributing.push(TokenVector {
                token: token.clone(),
                resolved: key.to_owned(),
                unit,
            });
        }
    }
    if contributing.is_empty() {
        return PhraseVector::missing();
    }
    PhraseVector {
        values: normalized(sum),
        contributing,
    }
}

/// Raw (unnormalized) vector of one label term. A multiword term is first
/// tried as a single underscore-joined vocabulary entry, the way word2vec
/// stores common phrases, then as the sum of its words.
fn term_sum(table: &EmbeddingTable, words: &[String]) -> Option<Vec<f64>> {
    if words.len() > 1 {
        if let Some((_, v)) = table.lookup(&words.join("_")) {
            return Some(v.iter().map(|&x| f64::from(x)).collect());
        }
    }
    let mut sum = vec![0.0; table.dimension()];
    let mut any = false;
    for word in words {
        if let Some((_, v)) = table.lookup(word) {
            add_into(&mut sum, v);
            any = true;
        }
    }
    any.then_some(sum)
}

/// Vector for a plain detector label such as `"person"` or `"Human face"`.
pub fn label_vector(table: &EmbeddingTable, label: &str) -> PhraseVector {
    term_sum(table, &tokenize(label)).map_or_else(PhraseVector::missing, PhraseVector::from_raw)
}

/// Vector for a synset-labelled concept: the normalized sum over every term
/// of the synset. Terms keep their case.
pub fn synset_vector(table: &EmbeddingTable, terms: &[String]) -> PhraseVector {
    let mut sum = vec![0.0; table.dimension()];
    let mut any = false;
    for term in terms {
        if let Some(v) = term_sum(table, &tokenize_cased(term)) {
            sum.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            any = true;
        }
    }
    if any {
        PhraseVector::from_raw(sum)
    } else {
        PhraseVector::missing()
    }
}

/// Cosine similarity of two unit vectors.
pub fn cosine(a: &PhraseVector, b: &PhraseVector) -> Result<f64> {
    match (a.values(), b.values()) {
        (Some(a), Some(b)) => Ok(dot(a, b)),
        _ => Err(Error::NoRepresentation),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
