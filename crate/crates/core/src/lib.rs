//! Algorithmic core for augmentation-adapted retriever (AAR) training.
//!
//! Everything here is pure computation over in-memory values: the hashed
//! tokenizer, the dual-encoder retriever with exact gradients and Adam, the
//! inner-product ANN index, a small fusion-in-decoder reader with
//! cross-attention extraction, the annotation/mining/training loop and the
//! evaluation metrics. File formats, checkpoints and the command line live in
//! the `aar` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

pub mod ann;
pub mod corpus;
pub mod encoder;
pub mod math;
pub mod metrics;
pub mod reader;
pub mod seed;
pub mod tokenizer;
pub mod trainer;

pub use ann::{Index, IndexError, IndexMode, RetrievalResult, Run, ScoredDoc};
pub use corpus::{Corpus, CorpusError, Document, QueryRecord};
pub use encoder::{EncoderParams, Embedding};
pub use reader::{ReaderConfig, ReaderModel};
pub use tokenizer::{tokenize, TokenSequence, TokenizerConfig};
