use std::collections::{BTreeMap, BTreeSet};

use aar_core::encoder::{batch_loss_and_grads, AdamConfig, LossInstance};
use aar_core::reader::{aggregate_fidatt, fid_forward, render_prompt};
use aar_core::trainer::{
    annotate_source_task, sample_negatives, train, AatConfig, PositiveSource, RefreshEvery, TrainingInstance,
};
use aar_core::{seed, tokenize, Corpus, Document, EncoderParams, Index, IndexMode, QueryRecord, ReaderConfig};
use aar_core::{ReaderModel, TokenizerConfig};
use proptest::prelude::*;

const VOCAB: u32 = 8192;

fn corpus() -> Corpus {
    let docs = vec![
        Document::new("d1", "the old lighthouse keeper painted the tower red"),
        Document::new("d2", "zeta the lighthouse tower stands on the northern cape"),
        Document::new("d3", "a fishing village lies south of the bay"),
        Document::new("d4", "merchants trade salt and copper at the harbour"),
        Document::new("d5", "the northern cape is windy through winter"),
    ];
    Corpus::new(docs, "fixture").unwrap()
}

fn query(human: &[&str]) -> QueryRecord {
    QueryRecord {
        human_positive_ids: human.iter().map(|s| s.to_string()).collect(),
        gold_answers: vec!["red".into()],
        ..QueryRecord::new("q1", "what colour is the lighthouse tower")
    }
}

fn zeta_reader() -> ReaderModel {
    let base = ReaderModel::init(ReaderConfig { seed: 3, ..ReaderConfig::default() }).unwrap();
    base.plant_preference(&BTreeMap::from([("zeta".to_string(), 6.0)]))
}

fn config(k: usize, source: PositiveSource) -> AatConfig {
    AatConfig { n_retrieved: 5, k_preferred: k, m_depth: 5, positive_source: source, max_len: 32, ..AatConfig::default() }
}

fn setup() -> (Corpus, EncoderParams, Index) {
    let corpus = corpus();
    let params = EncoderParams::init(VOCAB, 8, 1);
    let index = Index::build(&corpus, &params, 32, IndexMode::Exact, 0).unwrap();
    (corpus, params, index)
}

#[test]
fn planted_preference_becomes_a_positive() {
    let (corpus, params, index) = setup();
    let reader = zeta_reader();
    let q = query(&["d1"]);
    let ann = annotate_source_task(std::slice::from_ref(&q), &corpus, &params, &index, &reader, &config(1, PositiveSource::Union))
        .unwrap();
    let inst = &ann.instances[0];
    assert_eq!(inst.positives, BTreeSet::from(["d1".to_string(), "d2".to_string()]));
    assert!(!inst.negatives.contains(&"d2".to_string()));

    let retrieved: Vec<String> = index.search(&params.encode_text(&q.text, 32).0, 5).unwrap().doc_ids().map(String::from).collect();
    let docs: Vec<Document> = retrieved.iter().map(|id| corpus.get(id).unwrap().clone()).collect();
    let prompt = render_prompt(aar_core::reader::PromptTemplate::PopQa, &q, None).unwrap();
    let oracle = aggregate_fidatt(&fid_forward(&reader, &prompt, &docs, 1).unwrap(), "q1", &retrieved).unwrap();
    assert_eq!(ann.records[0], oracle);
    let best = oracle.scores.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(best.0, "d2");
}

#[test]
fn zero_k_union_keeps_only_human_positives() {
    let (corpus, params, index) = setup();
    let ann =
        annotate_source_task(&[query(&["d4"])], &corpus, &params, &index, &zeta_reader(), &config(0, PositiveSource::Union))
            .unwrap();
    assert_eq!(ann.instances[0].positives, BTreeSet::from(["d4".to_string()]));
}

#[test]
fn missing_human_positive_drops_the_query() {
    let (corpus, params, index) = setup();
    let queries = [query(&["d9"]), QueryRecord { id: "q2".into(), ..query(&["d1"]) }];
    let ann = annotate_source_task(&queries, &corpus, &params, &index, &zeta_reader(), &config(1, PositiveSource::Union))
        .unwrap();
    assert_eq!(ann.dropped.len(), 1);
    assert_eq!(ann.dropped[0].query_id, "q1");
    assert_eq!(ann.instances.len(), 1);
}

fn instance(corpus: &Corpus, positives: &[&str]) -> TrainingInstance {
    let tok = TokenizerConfig::new(VOCAB, 32);
    TrainingInstance {
        query_id: "q1".into(),
        query_tokens: tokenize("what colour is the lighthouse tower", &tok),
        positives: positives.iter().map(|s| s.to_string()).collect(),
        negatives: corpus.iter().map(|d| d.id.clone()).filter(|id| !positives.contains(&id.as_str())).collect(),
    }
}

fn loss_on(params: &EncoderParams, corpus: &Corpus, inst: &TrainingInstance) -> f64 {
    let tok = TokenizerConfig::new(VOCAB, 32);
    let seqs: BTreeMap<&str, _> = corpus.iter().map(|d| (d.id.as_str(), tokenize(&d.full_text(), &tok))).collect();
    let batch = [LossInstance {
        query_id: "q1",
        query: &inst.query_tokens,
        positives: inst.positives.iter().map(|id| &seqs[id.as_str()]).collect(),
        negatives: inst.negatives.iter().map(|id| &seqs[id.as_str()]).collect(),
    }];
    batch_loss_and_grads(params, &batch).unwrap().value
}

#[test]
fn one_step_lowers_the_loss() {
    let (corpus, params, _) = setup();
    let inst = instance(&corpus, &["d1"]);
    let cfg = AatConfig {
        epochs: 1,
        full_negative_sum: true,
        adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
        ..config(1, PositiveSource::HumanOnly)
    };
    let before = loss_on(&params, &corpus, &inst);
    let out = train(params, vec![inst.clone()], &corpus, &[query(&["d1"])], IndexMode::Exact, &cfg).unwrap();
    assert_eq!(out.log.records.len(), 1);
    assert!((out.log.records[0].loss - before).abs() < 1e-12);
    assert!(loss_on(&out.params, &corpus, &inst) < before);
}

#[test]
fn static_negatives_without_refresh() {
    let (corpus, params, _) = setup();
    let cfg = AatConfig { epochs: 3, refresh_every: RefreshEvery::Never, ..config(1, PositiveSource::HumanOnly) };
    let out = train(params, vec![instance(&corpus, &["d1"])], &corpus, &[query(&["d1"])], IndexMode::Exact, &cfg).unwrap();
    assert_eq!(out.log.refreshes.len(), 1);
    assert!(out.log.records.iter().all(|r| r.refresh_id == 0));
}

#[test]
fn refresh_cadences() {
    let (corpus, params, _) = setup();
    let instances: Vec<TrainingInstance> = (0..4)
        .map(|i| TrainingInstance { query_id: format!("q{i}"), ..instance(&corpus, &["d1"]) })
        .collect();
    let monitor = [query(&["d1"])];
    let run = |refresh_every| {
        let cfg = AatConfig { epochs: 2, batch_size: 1, refresh_every, ..config(1, PositiveSource::HumanOnly) };
        train(params.clone(), instances.clone(), &corpus, &monitor, IndexMode::Exact, &cfg).unwrap().log
    };
    let steps: Vec<u64> = run(RefreshEvery::Steps(3)).refreshes.iter().map(|r| r.step).collect();
    assert_eq!(steps, [0, 3, 6]);
    let epochs: Vec<u64> = run(RefreshEvery::Epoch).refreshes.iter().map(|r| r.step).collect();
    assert_eq!(epochs, [0, 4, 8]);
}

#[test]
fn training_is_deterministic() {
    let (corpus, params, index) = setup();
    let cfg = AatConfig { epochs: 2, ..config(1, PositiveSource::Union) };
    let queries = [query(&["d1"]), QueryRecord { id: "q2".into(), ..query(&["d3"]) }];
    let once = || {
        let ann = annotate_source_task(&queries, &corpus, &params, &index, &zeta_reader(), &cfg).unwrap();
        train(params.clone(), ann.instances, &corpus, &queries, IndexMode::Exact, &cfg).unwrap()
    };
    assert_eq!(once(), once());
}

#[test]
fn unknown_document_is_rejected() {
    let (corpus, params, _) = setup();
    let mut inst = instance(&corpus, &["d1"]);
    inst.negatives.push("d42".into());
    let cfg = config(1, PositiveSource::HumanOnly);
    assert!(train(params, vec![inst], &corpus, &[], IndexMode::Exact, &cfg).is_err());
}

proptest! {
    #[test]
    fn sampled_negatives_are_an_ordered_subset(
        mined_len in 1usize..40,
        n_pos in 1usize..4,
        per in 1usize..6,
        s in 0u64..1000,
    ) {
        let mined: Vec<String> = (0..mined_len).map(|i| format!("d{i:02}")).collect();
        let picked = sample_negatives(&mined, n_pos, per, &mut seed::rng(s));
        prop_assert_eq!(picked.len(), (n_pos * per).min(mined_len));
        let positions: Vec<usize> = picked.iter().map(|p| mined.iter().position(|m| m == p).unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(picked, sample_negatives(&mined, n_pos, per, &mut seed::rng(s)));
    }
}
