//! Hashed word tokenizer shared by the retriever and the reader.
//!
//! Text is lowercased and split at Unicode whitespace; every character that is
//! neither whitespace nor alphanumeric ends the current word and becomes a
//! token of its own. Words map to ids through 64-bit FNV-1a modulo the
//! vocabulary size, so no vocabulary file is needed.

use alloc::string::String;
use alloc::vec::Vec;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Default truncation length for queries and documents.
pub const DEFAULT_MAX_LEN: usize = 64;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerConfig {
    pub vocab_size: u32,
    pub max_len: usize,
}

impl TokenizerConfig {
    pub fn new(vocab_size: u32, max_len: usize) -> Self {
        assert!(vocab_size >= 2, "vocab_size must be at least 2");
        Self { vocab_size, max_len }
    }

    pub fn token_id(&self, word: &str) -> u32 {
        (fnv1a64(word.as_bytes()) % u64::from(self.vocab_size)) as u32
    }
}

/// Token ids of one text, already truncated.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lowercased word pieces of `text`, before hashing or truncation.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut out);
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            flush(&mut current, &mut out);
            let mut p = String::new();
            p.extend(ch.to_lowercase());
            out.push(p);
        }
    }
    flush(&mut current, &mut out);
    out
}

fn flush(current: &mut String, out: &mut Vec<String>) {
    if !current.is_empty() {
        out.push(core::mem::take(current));
    }
}

pub fn tokenize(text: &str, config: &TokenizerConfig) -> TokenSequence {
    let ids = words(text)
        .iter()
        .take(config.max_len)
        .map(|w| config.token_id(w))
        .collect();
    TokenSequence { ids }
}
