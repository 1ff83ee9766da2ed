//! Ranking an image's concepts against a query phrase.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::detection::ConceptGroup;
use crate::embedding::{dot, phrase_vector, EmbeddingTable, OovFallback, PhraseVector, TokenVector};
use crate::error::{Error, Result};
use crate::text::tokenize;

/// How the words of a query are combined before comparison with labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryMode {
    /// One normalized vector for the whole phrase.
    Avg,
    /// Each word on its own; a concept takes its best word's similarity.
    Max,
    /// Only the last resolvable word.
    Last,
}

impl QueryMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            QueryMode::Avg => "w2v_avg",
            QueryMode::Max => "w2v_max",
            QueryMode::Last => "w2v_last",
        }
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "w2v_avg" | "avg" => Ok(QueryMode::Avg),
            "w2v_max" | "max" => Ok(QueryMode::Max),
            "w2v_last" | "last" => Ok(QueryMode::Last),
            _ => Err(Error::Invalid(format!("unknown similarity mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRepresentation {
    pub mode: QueryMode,
    pub phrase: PhraseVector,
    pub tokens: Vec<TokenVector>,
}

impl QueryRepresentation {
    /// True when nothing usable resolved; callers fall back to the whole image.
    pub fn is_empty(&self) -> bool {
        match self.mode {
            QueryMode::Avg => self.phrase.is_missing(),
            QueryMode::Max | QueryMode::Last => self.tokens.is_empty(),
        }
    }
}

pub fn represent_query(
    table: &EmbeddingTable,
    fallback: Option<&dyn OovFallback>,
    phrase: &str,
    mode: QueryMode,
) -> QueryRepresentation {
    let words = tokenize(phrase);
    let phrase = phrase_vector(table, &words, fallback);
    let mut tokens = phrase.contributing_tokens().to_vec();
    if mode == QueryMode::Last {
        tokens.drain(..tokens.len().saturating_sub(1));
    }
    QueryRepresentation { mode, phrase, tokens }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredConcept<'g> {
    pub group: &'g ConceptGroup,
    pub score: f64,
    /// The query word behind the score, for the per-word modes.
    pub matched_token: Option<String>,
}

/// Scores every scoreable group and sorts by descending similarity, equal
/// scores ordered by label.
pub fn score_concepts<'g>(query: &QueryRepresentation, groups: &'g [ConceptGroup]) -> Result<Vec<ScoredConcept<'g>>> {
    if query.is_empty() {
        return Err(Error::NoRepresentation);
    }
    let mut scored: Vec<ScoredConcept<'g>> = groups
        .iter()
        .filter_map(|group| {
            let label = group.vector.values()?;
            let (score, matched_token) = match query.mode {
                QueryMode::Avg => (dot(query.phrase.values()?, label), None),
                QueryMode::Max | QueryMode::Last => {
                    let mut best: Option<(f64, &TokenVector)> = None;
                    for t in &query.tokens {
                        let s = dot(&t.unit, label);
                        // strict comparison keeps the earliest word on ties
                        if best.is_none_or(|(b, _)| s > b) {
                            best = Some((s, t));
                        }
                    }
                    let (s, t) = best?;
                    (s, Some(t.token.clone()))
                }
            };
            Some(ScoredConcept {
                group,
                score,
                matched_token,
            })
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.group.label.cmp(&b.group.label))
    });
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{ConceptLabel, Detection, DetectorId};
    use crate::embedding::label_vector;
    use crate::geometry::BoundingBox;

    fn table() -> EmbeddingTable {
        EmbeddingTable::from_entries(
            3,
            [
                ("dog", vec![1.0, 0.0, 0.0]),
                ("puppy", vec![0.9, 0.1, 0.0]),
                ("car", vec![0.0, 1.0, 0.0]),
                ("brown", vec![0.0, 0.2, 1.0]),
                ("shirt", vec![0.0, 0.0, 1.0]),
                ("a", vec![0.3, 0.3, 0.3]),
                ("long", vec![0.5, 0.5, 0.0]),
                ("green", vec![0.1, 0.8, 0.1]),
                ("man", vec![0.6, 0.6, 0.1]),
                ("person", vec![0.6, 0.6, 0.1]),
            ],
        )
        .unwrap()
    }

    fn group(t: &EmbeddingTable, label: &str) -> ConceptGroup {
        ConceptGroup {
            label: label.into(),
            vector: label_vector(t, label),
            instances: vec![Detection {
                label: ConceptLabel::Plain(label.into()),
                bbox: BoundingBox::new(0, 0, 1, 1).unwrap(),
                confidence: 1.0,
                detector: DetectorId::Tfcoco,
            }],
        }
    }

    #[test]
    fn last_word_modes() {
        let t = table();
        let q = represent_query(&t, None, "a brown dog", QueryMode::Last);
        assert_eq!(q.tokens.len(), 1);
        assert_eq!(q.tokens[0].token, "dog");
        let q = represent_query(&t, None, "a long green shirt.", QueryMode::Last);
        assert_eq!(q.tokens[0].token, "shirt");
        let q = represent_query(&t, None, "a brown qzxv", QueryMode::Last);
        assert_eq!(q.tokens[0].token, "brown");
    }

    #[test]
    fn unresolvable_queries_are_empty() {
        let t = table();
        for mode in [QueryMode::Avg, QueryMode::Max, QueryMode::Last] {
            let q = represent_query(&t, None, "qzxv zzq", mode);
            assert!(q.is_empty());
            assert!(matches!(score_concepts(&q, &[]), Err(Error::NoRepresentation)));
        }
    }

    #[test]
    fn self_similarity_ranks_first() {
        let t = table();
        let groups = vec![group(&t, "car"), group(&t, "dog")];
        let q = represent_query(&t, None, "dog", QueryMode::Avg);
        let s = score_concepts(&q, &groups).unwrap();
        assert_eq!(s[0].group.label, "dog");
        assert!((s[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_records_matching_word() {
        let t = table();
        let groups = vec![group(&t, "dog"), group(&t, "car")];
        let q = represent_query(&t, None, "brown dog", QueryMode::Max);
        let s = score_concepts(&q, &groups).unwrap();
        assert_eq!(s[0].group.label, "dog");
        assert_eq!(s[0].matched_token.as_deref(), Some("dog"));
        assert_eq!(s[1].matched_token.as_deref(), Some("brown"));
    }

    #[test]
    fn max_ties_keep_earliest_word() {
        let t = table();
        let groups = vec![group(&t, "person")];
        let q = represent_query(&t, None, "man person", QueryMode::Max);
        let s = score_concepts(&q, &groups).unwrap();
        assert_eq!(s[0].matched_token.as_deref(), Some("man"));
    }

    #[test]
    fn equal_scores_order_by_label() {
        let t = table();
        let groups = vec![group(&t, "person"), group(&t, "man")];
        let q = represent_query(&t, None, "dog", QueryMode::Avg);
        let s = score_concepts(&q, &groups).unwrap();
        assert_eq!(s[0].score, s[1].score);
        assert_eq!(s[0].group.label, "man");
    }

    #[test]
    fn unscoreable_groups_are_skipped() {
        let t = table();
        let groups = vec![group(&t, "qzxv"), group(&t, "dog")];
        let q = represent_query(&t, None, "puppy", QueryMode::Avg);
        let s = score_concepts(&q, &groups).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn mode_names() {
        assert_eq!("w2v-max".parse::<QueryMode>().unwrap(), QueryMode::Max);
        assert_eq!("w2v_avg".parse::<QueryMode>().unwrap(), QueryMode::Avg);
        assert!("cosine".parse::<QueryMode>().is_err());
    }
}
