//! Augmentation-adapted training of the dual encoder.
//!
//! A source reader annotates which retrieved documents it attends to; those
//! documents (optionally merged with the human labels) become positives,
//! hard negatives come from the retriever's own ranking, and the encoder is
//! trained with the pairwise loss while its index is periodically rebuilt.

mod annotate;
mod positives;
mod train;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ann::IndexError;
use crate::encoder::{AdamConfig, EncoderError};
use crate::reader::{PromptTemplate, ReaderError};
use crate::tokenizer::{TokenSequence, DEFAULT_MAX_LEN};

pub use annotate::{annotate_source_task, Annotation, DroppedQuery};
pub use positives::{build_positive_set, mine_negatives, sample_negatives, top_k_preferred};
pub use train::{human_mrr, train, LogRecord, RefreshRecord, TrainLog, TrainOutcome};

/// Where the positive set of a training instance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositiveSource {
    HumanOnly,
    LmOnly,
    #[default]
    Union,
}

impl PositiveSource {
    pub fn uses_human(self) -> bool {
        matches!(self, Self::HumanOnly | Self::Union)
    }

    pub fn uses_lm(self) -> bool {
        matches!(self, Self::LmOnly | Self::Union)
    }
}

/// When the document index is rebuilt and negatives re-mined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefreshEvery {
    Steps(u64),
    #[default]
    Epoch,
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AatConfig {
    /// Documents retrieved and annotated per query.
    pub n_retrieved: usize,
    /// Reader-preferred documents added as positives.
    pub k_preferred: usize,
    /// Depth of the ranking negatives are mined from.
    pub m_depth: usize,
    pub negatives_per_positive: usize,
    /// Use every mined negative instead of sampling.
    pub full_negative_sum: bool,
    pub refresh_every: RefreshEvery,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub positive_source: PositiveSource,
    pub template: PromptTemplate,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for AatConfig {
    fn default() -> Self {
        Self {
            n_retrieved: 10,
            k_preferred: 2,
            m_depth: 100,
            negatives_per_positive: 4,
            full_negative_sum: false,
            refresh_every: RefreshEvery::Epoch,
            batch_size: 8,
            epochs: 6,
            adam: AdamConfig::default(),
            positive_source: PositiveSource::Union,
            template: PromptTemplate::PopQa,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
        }
    }
}

impl AatConfig {
    /// Settings for an ANCE-style retriever (the default).
    pub fn ance() -> Self {
        Self::default()
    }

    /// Settings for a Contriever-style retriever.
    pub fn contriever() -> Self {
        Self { adam: AdamConfig { lr: 1e-5, ..AdamConfig::default() }, epochs: 3, ..Self::default() }
    }

    /// `k_preferred` may be 0, which leaves only the human positives.
    pub fn validate(&self) -> Result<(), AatError> {
        let bad = |msg| Err(AatError::InvalidConfig(msg));
        if self.n_retrieved == 0 || self.m_depth == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("counts must be at least 1");
        }
        if self.negatives_per_positive == 0 || self.max_len == 0 {
            return bad("counts must be at least 1");
        }
        if self.k_preferred > self.n_retrieved {
            return bad("k_preferred exceeds n_retrieved");
        }
        if self.m_depth < self.n_retrieved {
            return bad("m_depth is smaller than n_retrieved");
        }
        if self.refresh_every == RefreshEvery::Steps(0) {
            return bad("refresh_every must be at least 1 step");
        }
        let a = &self.adam;
        if !(a.lr.is_finite() && a.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps.is_nan() || a.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// One query ready for the pairwise loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub query_id: String,
    pub query_tokens: TokenSequence,
    pub positives: BTreeSet<String>,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AatError {
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("annotation of query {query_id} failed: {reason}")]
    Annotation { query_id: String, reason: String },
    #[error("no negatives left for query {query_id} after removing positives")]
    Mining { query_id: String },
    #[error("index and corpus disagree: {0}")]
    CorpusMismatch(String),
    #[error("no training instances")]
    NoInstances,
    #[error("training diverged at step {step}: loss {loss} on queries {queries:?}")]
    Diverged { step: u64, loss: f64, queries: Vec<String> },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let a = AatConfig::ance();
        assert_eq!((a.n_retrieved, a.k_preferred, a.m_depth), (10, 2, 100));
        assert_eq!((a.batch_size, a.epochs, a.adam.lr), (8, 6, 5e-6));
        let c = AatConfig::contriever();
        assert_eq!((c.epochs, c.adam.lr), (3, 1e-5));
        assert!(a.validate().is_ok() && c.validate().is_ok());
    }

    #[test]
    fn validation() {
        let bad = |c: AatConfig| c.validate().is_err();
        assert!(bad(AatConfig { k_preferred: 11, ..AatConfig::default() }));
        assert!(bad(AatConfig { m_depth: 9, ..AatConfig::default() }));
        assert!(bad(AatConfig { batch_size: 0, ..AatConfig::default() }));
        assert!(bad(AatConfig { refresh_every: RefreshEvery::Steps(0), ..AatConfig::default() }));
        assert!(!bad(AatConfig { k_preferred: 0, ..AatConfig::default() }));
    }
}
