//! Source-task annotation with a reader's attention.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::positives::{build_positive_set, mine_negatives, sample_negatives};
use super::{AatConfig, AatError, TrainingInstance};
use crate::ann::Index;
use crate::corpus::{Corpus, Document, QueryRecord};
use crate::encoder::EncoderParams;
use crate::reader::{aggregate_fidatt, fid_forward, render_prompt, FidAttRecord, ReaderModel};
use crate::seed;
use crate::tokenizer::{tokenize, TokenizerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedQuery {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    pub instances: Vec<TrainingInstance>,
    /// Attention scores for every query that reached the reader.
    pub records: Vec<FidAttRecord>,
    pub dropped: Vec<DroppedQuery>,
}

fn check_index(index: &Index, corpus: &Corpus, encoder: &EncoderParams) -> Result<(), AatError> {
    if index.dim() != encoder.embed_dim() {
        return Err(AatError::CorpusMismatch(format!(
            "index dim {} but encoder dim {}",
            index.dim(),
            encoder.embed_dim()
        )));
    }
    if index.len() != corpus.len() {
        return Err(AatError::CorpusMismatch(format!(
            "index has {} documents, corpus has {}",
            index.len(),
            corpus.len()
        )));
    }
    if let Some(id) = index.doc_ids().iter().find(|id| !corpus.contains(id)) {
        return Err(AatError::CorpusMismatch(format!("document {id} is not in the corpus")));
    }
    Ok(())
}

/// Retrieves, reads and labels every source query. Queries that cannot be
/// annotated are dropped and listed with the reason.
pub fn annotate_source_task(
    queries: &[QueryRecord],
    corpus: &Corpus,
    encoder: &EncoderParams,
    index: &Index,
    reader: &ReaderModel,
    config: &AatConfig,
) -> Result<Annotation, AatError> {
    config.validate()?;
    check_index(index, corpus, encoder)?;
    let tok = TokenizerConfig::new(encoder.vocab_size(), config.max_len);
    let mut rng = seed::stage_rng(config.seed, "annotate/negatives");
    let mut out = Annotation::default();
    for query in queries {
        let drop = |reason: String| DroppedQuery { query_id: query.id.clone(), reason };
        if config.positive_source.uses_human() {
            if let Some(missing) = query.human_positive_ids.iter().find(|id| !corpus.contains(id)) {
                out.dropped.push(drop(format!("human positive {missing} is not in the corpus")));
                continue;
            }
        }
        let query_tokens = tokenize(&query.text, &tok);
        let q_emb = encoder.encode(&query_tokens)?;
        let retrieved = index.search(&q_emb.0, config.n_retrieved)?;
        let doc_ids: Vec<String> = retrieved.doc_ids().map(String::from).collect();
        let docs: Vec<Document> = doc_ids.iter().filter_map(|id| corpus.get(id).cloned()).collect();
        let choices = (!query.choices.is_empty()).then_some(query.choices.as_slice());
        let prompt = match render_prompt(config.template, query, choices) {
            Ok(p) => p,
            Err(e) => {
                out.dropped.push(drop(e.to_string()));
                continue;
            }
        };
        let output = fid_forward(reader, &prompt, &docs, 1)?;
        let record = aggregate_fidatt(&output, &query.id, &doc_ids)?;
        let labelled = build_positive_set(&query.human_positive_ids, &record, config.k_preferred, config.positive_source)
            .and_then(|positives| {
                mine_negatives(index, &q_emb.0, config.m_depth, &positives, &query.id).map(|mined| (positives, mined))
            });
        out.records.push(record);
        let (positives, mined) = match labelled {
            Ok(pair) => pair,
            Err(e) => {
                out.dropped.push(drop(e.to_string()));
                continue;
            }
        };
        let negatives = if config.full_negative_sum {
            mined
        } else {
            sample_negatives(&mined, positives.len(), config.negatives_per_positive, &mut rng)
        };
        out.instances.push(TrainingInstance { query_id: query.id.clone(), query_tokens, positives, negatives });
    }
    Ok(out)
}
