use groundcast::spell::SpellCorrector;
use groundcast::EmbeddingTable;
use proptest::prelude::*;

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Full vocabulary scan: nearest distance first, then frequency, then text.
fn brute_force(table: &EmbeddingTable, token: &str) -> Option<String> {
    table
        .words()
        .filter(|w| *w != token)
        .map(|w| (levenshtein(token, w), w))
        .filter(|(d, _)| *d <= 2)
        .min_by(|(da, a), (db, b)| {
            da.cmp(db)
                .then_with(|| table.frequency(b).cmp(&table.frequency(a)))
                .then_with(|| a.cmp(b))
        })
        .map(|(_, w)| w.to_owned())
}

fn vocab() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]{1,5}", 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn matches_full_scan(words in vocab(), token in "[a-f]{1,6}") {
        let table = EmbeddingTable::from_entries(1, words.iter().map(|w| (w.clone(), vec![1.0f32]))).unwrap();
        let corrector = SpellCorrector::new(&table);
        prop_assert_eq!(corrector.correct(&token), brute_force(&table, &token));
    }

    #[test]
    fn candidates_share_one_distance(words in vocab(), token in "[a-e]{1,6}") {
        let table = EmbeddingTable::from_entries(1, words.iter().map(|w| (w.clone(), vec![1.0f32]))).unwrap();
        let cands = SpellCorrector::new(&table).candidates(&token);
        for c in &cands {
            prop_assert_eq!(usize::from(c.edit_distance), levenshtein(&token, &c.token));
            prop_assert_eq!(c.edit_distance, cands[0].edit_distance);
        }
    }
}

#[test]
fn frequency_sidecar_overrides_rank() {
    let mut table = EmbeddingTable::from_entries(1, [("bat", vec![1.0f32]), ("cat", vec![1.0])]).unwrap();
    assert_eq!(SpellCorrector::new(&table).correct("hat").as_deref(), Some("bat"));
    table.read_frequencies("cat 900\nbat 10\n".as_bytes()).unwrap();
    assert_eq!(SpellCorrector::new(&table).correct("hat").as_deref(), Some("cat"));
}
