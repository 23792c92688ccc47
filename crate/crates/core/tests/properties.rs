use std::collections::BTreeSet;

use aar_core::corpus::idf_weights;
use aar_core::metrics::{contains_answer, delete_answers_from_text, exact_match_rate, mrr_at_k, set_overlap, Qrels};
use aar_core::{tokenize, Corpus, Document, QueryRecord, RetrievalResult, Run, ScoredDoc, TokenizerConfig};
use proptest::prelude::*;

fn doc_set(max: usize) -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set((0..max).prop_map(|i| format!("d{i}")), 0..max)
}

fn ranking(n: usize) -> RetrievalResult {
    RetrievalResult {
        entries: (0..n).map(|i| ScoredDoc { doc_id: format!("d{i}"), score: -(i as f64) }).collect(),
        requested_k: n,
    }
}

proptest! {
    #[test]
    fn token_ids_stay_in_range(text in "[ -~]{0,80}", vocab in 2u32..5000, max_len in 0usize..20) {
        let tok = TokenizerConfig::new(vocab, max_len);
        let seq = tokenize(&text, &tok);
        prop_assert!(seq.len() <= max_len);
        prop_assert!(seq.ids.iter().all(|&id| id < vocab));
        prop_assert_eq!(&seq, &tokenize(&text, &tok));
    }

    #[test]
    fn ascii_case_does_not_matter(text in "[a-zA-Z ,.]{0,60}") {
        let tok = TokenizerConfig::new(1000, 64);
        prop_assert_eq!(tokenize(&text, &tok), tokenize(&text.to_uppercase(), &tok));
    }

    #[test]
    fn overlap_is_a_symmetric_fraction(a in doc_set(12), b in doc_set(12)) {
        match (set_overlap(&a, &b), set_overlap(&b, &a)) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x, y);
                prop_assert!(x.shared <= x.total && x.total >= 1);
                prop_assert_eq!(x.total, a.union(&b).count());
            }
            (Err(_), Err(_)) => prop_assert!(a.is_empty() && b.is_empty()),
            _ => prop_assert!(false, "asymmetric outcome"),
        }
    }

    #[test]
    fn mrr_never_falls_as_depth_grows(
        relevant in prop::collection::vec(doc_set(20), 1..6),
        k in 1usize..20,
    ) {
        let run: Run = (0..relevant.len()).map(|i| (format!("q{i}"), ranking(20))).collect();
        let qrels: Qrels = relevant.iter().enumerate().map(|(i, r)| (format!("q{i}"), r.clone())).collect();
        let shallow = mrr_at_k(&run, &qrels, k).unwrap().value;
        let deep = mrr_at_k(&run, &qrels, k + 1).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&shallow));
        prop_assert!(deep >= shallow);
    }

    #[test]
    fn deletion_is_idempotent_and_complete(
        words in prop::collection::vec(prop::sample::select(vec!["paris", "is", "the", "capital", "Paris,", "cat", "a"]), 0..12),
        answer in prop::sample::select(vec!["paris", "a", "the capital", "cat"]),
    ) {
        let text = words.join(" ");
        let answers = vec![answer.to_string()];
        let once = delete_answers_from_text(&text, &answers);
        prop_assert_eq!(delete_answers_from_text(&once, &answers), once.clone());
        prop_assert!(!contains_answer(&once, answer));
        if !contains_answer(&text, answer) {
            prop_assert_eq!(once, text);
        }
    }

    #[test]
    fn exact_match_is_a_fraction(hits in prop::collection::vec(any::<bool>(), 1..10)) {
        let docs: Vec<Document> = hits
            .iter()
            .enumerate()
            .map(|(i, &h)| Document::new(format!("d{i}"), if h { "the answer is red" } else { "nothing here" }))
            .collect();
        let corpus = Corpus::new(docs, "p").unwrap();
        let queries: Vec<QueryRecord> = (0..hits.len())
            .map(|i| QueryRecord { gold_answers: vec!["red".into()], ..QueryRecord::new(format!("q{i}"), "colour?") })
            .collect();
        let run: Run = (0..hits.len())
            .map(|i| {
                let entries = vec![ScoredDoc { doc_id: format!("d{i}"), score: 1.0 }];
                (format!("q{i}"), RetrievalResult { entries, requested_k: 1 })
            })
            .collect();
        let expected = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
        prop_assert_eq!(exact_match_rate(&run, &corpus, &queries, 1).unwrap(), expected);
    }
}

#[test]
fn idf_rewards_rare_tokens() {
    let docs = vec![
        Document::new("a", "common rare"),
        Document::new("b", "common"),
        Document::new("c", "common"),
    ];
    let corpus = Corpus::new(docs, "t").unwrap();
    let tok = TokenizerConfig::new(4096, 16);
    let idf = idf_weights(&corpus, &tok);
    let common = idf[tok.token_id("common") as usize];
    let rare = idf[tok.token_id("rare") as usize];
    assert!((common - (4.0f64 / 4.0).ln()).abs() < 1e-12);
    assert!((rare - (4.0f64 / 2.0).ln()).abs() < 1e-12);
}
