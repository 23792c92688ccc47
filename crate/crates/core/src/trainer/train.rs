//! The training loop with periodic index refresh.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::positives::{mine_negatives, sample_negatives};
use super::{AatConfig, AatError, RefreshEvery, TrainingInstance};
use crate::ann::{Index, IndexMode, Run};
use crate::corpus::{Corpus, QueryRecord};
use crate::encoder::{apply_update, batch_loss_and_grads, AdamState, EncoderParams, LossInstance};
use crate::metrics::{mrr_at_k, Qrels};
use crate::seed;
use crate::tokenizer::{tokenize, TokenSequence, TokenizerConfig};

/// Batch losses above this abort training.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    /// Summed pairwise loss of the batch, before the update.
    pub loss: f64,
    pub refresh_id: usize,
    /// Human-label MRR@10 measured at the latest refresh.
    pub mrr_at_10: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefreshRecord {
    pub refresh_id: usize,
    /// Number of updates applied before the rebuild; 0 for the initial index.
    pub step: u64,
    pub mrr_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub refreshes: Vec<RefreshRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: TrainLog,
}

/// MRR@`k` of the human positives of `queries` under the given index.
/// Queries without human positives are skipped.
pub fn human_mrr(
    index: &Index,
    params: &EncoderParams,
    queries: &[QueryRecord],
    max_len: usize,
    k: usize,
) -> Result<f64, AatError> {
    let mut run = Run::new();
    let mut qrels = Qrels::new();
    for q in queries.iter().filter(|q| !q.human_positive_ids.is_empty()) {
        let emb = params.encode_text(&q.text, max_len);
        run.insert(q.id.clone(), index.search(&emb.0, k)?);
        qrels.insert(q.id.clone(), q.human_positive_ids.clone());
    }
    if run.is_empty() {
        return Ok(0.0);
    }
    Ok(mrr_at_k(&run, &qrels, k).map_err(|_| AatError::InvalidConfig("k must be at least 1"))?.value)
}

struct Workspace<'a> {
    corpus: &'a Corpus,
    monitor: &'a [QueryRecord],
    mode: IndexMode,
    doc_tokens: Vec<TokenSequence>,
    row: BTreeMap<&'a str, usize>,
}

impl<'a> Workspace<'a> {
    fn new(corpus: &'a Corpus, monitor: &'a [QueryRecord], mode: IndexMode, vocab: u32, max_len: usize) -> Self {
        let tok = TokenizerConfig::new(vocab, max_len);
        let doc_tokens = corpus.iter().map(|d| tokenize(&d.full_text(), &tok)).collect();
        let row = corpus.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        Self { corpus, monitor, mode, doc_tokens, row }
    }

    fn tokens(&self, id: &str) -> &TokenSequence {
        &self.doc_tokens[self.row[id]]
    }

    /// Rebuilds the index with the current parameters, measures MRR and
    /// re-mines negatives. A query whose mining fails keeps its negatives.
    fn refresh(
        &self,
        params: &EncoderParams,
        instances: &mut [TrainingInstance],
        config: &AatConfig,
        refresh_id: usize,
    ) -> Result<f64, AatError> {
        let index_seed = seed::derive(config.seed, &format!("index/{refresh_id}"));
        let index = Index::build(self.corpus, params, config.max_len, self.mode, index_seed)?;
        if refresh_id > 0 {
            let mut rng = seed::stage_rng(config.seed, &format!("negatives/{refresh_id}"));
            for inst in instances.iter_mut() {
                let q = params.encode(&inst.query_tokens)?;
                let Ok(mined) = mine_negatives(&index, &q.0, config.m_depth, &inst.positives, &inst.query_id) else {
                    continue;
                };
                inst.negatives = if config.full_negative_sum {
                    mined
                } else {
                    sample_negatives(&mined, inst.positives.len(), config.negatives_per_positive, &mut rng)
                };
            }
        }
        human_mrr(&index, params, self.monitor, config.max_len, 10)
    }
}

/// Trains `params` on `instances`. The index over `corpus` is rebuilt on
/// the configured cadence; each rebuild re-mines negatives and records the
/// human-label MRR@10 of the `monitor` queries.
pub fn train(
    mut params: EncoderParams,
    mut instances: Vec<TrainingInstance>,
    corpus: &Corpus,
    monitor: &[QueryRecord],
    mode: IndexMode,
    config: &AatConfig,
) -> Result<TrainOutcome, AatError> {
    config.validate()?;
    if instances.is_empty() {
        return Err(AatError::NoInstances);
    }
    let ws = Workspace::new(corpus, monitor, mode, params.vocab_size(), config.max_len);
    for inst in &instances {
        if inst.positives.is_empty() {
            return Err(AatError::Annotation { query_id: inst.query_id.clone(), reason: "no positives".into() });
        }
        if let Some(id) = inst.positives.iter().chain(&inst.negatives).find(|id| !ws.row.contains_key(id.as_str())) {
            return Err(AatError::CorpusMismatch(format!("document {id} of query {} is not in the corpus", inst.query_id)));
        }
    }

    let mut log = TrainLog::default();
    let mut adam = AdamState::new(&params);
    let mut refresh_id = 0;
    let mut mrr = ws.refresh(&params, &mut instances, config, 0)?;
    log.refreshes.push(RefreshRecord { refresh_id, step: 0, mrr_at_10: mrr });
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..instances.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::stage_rng(config.seed, &format!("shuffle/{epoch}")));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<LossInstance<'_>> = chunk
                .iter()
                .map(|&i| {
                    let inst = &instances[i];
                    LossInstance {
                        query_id: &inst.query_id,
                        query: &inst.query_tokens,
                        positives: inst.positives.iter().map(|id| ws.tokens(id)).collect(),
                        negatives: inst.negatives.iter().map(|id| ws.tokens(id)).collect(),
                    }
                })
                .collect();
            let loss = batch_loss_and_grads(&params, &batch)?;
            if !loss.value.is_finite() || loss.value > DIVERGENCE_LIMIT {
                return Err(AatError::Diverged {
                    step: step + 1,
                    loss: loss.value,
                    queries: batch.iter().map(|b| String::from(b.query_id)).collect(),
                });
            }
            drop(batch);
            apply_update(&mut params, &loss.grads, &mut adam, &config.adam)?;
            step += 1;
            log.records.push(LogRecord { step, epoch, loss: loss.value, refresh_id, mrr_at_10: mrr });
            if let RefreshEvery::Steps(n) = config.refresh_every {
                if step.is_multiple_of(n) {
                    refresh_id += 1;
                    mrr = ws.refresh(&params, &mut instances, config, refresh_id)?;
                    log.refreshes.push(RefreshRecord { refresh_id, step, mrr_at_10: mrr });
                }
            }
        }
        if config.refresh_every == RefreshEvery::Epoch {
            refresh_id += 1;
            mrr = ws.refresh(&params, &mut instances, config, refresh_id)?;
            log.refreshes.push(RefreshRecord { refresh_id, step, mrr_at_10: mrr });
        }
    }
    Ok(TrainOutcome { params, log })
}
