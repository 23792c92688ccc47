//! Positive-set construction and hard-negative mining.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;

use super::{AatError, PositiveSource};
use crate::ann::Index;
use crate::reader::FidAttRecord;
use crate::seed::Rng;

/// The `k` highest-scoring documents of a record, ties by ascending id.
pub fn top_k_preferred(record: &FidAttRecord, k: usize) -> Vec<String> {
    let mut scored: Vec<&(String, f64)> = record.scores.iter().collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(id, _)| id.clone()).collect()
}

pub fn build_positive_set(
    human: &BTreeSet<String>,
    record: &FidAttRecord,
    k: usize,
    source: PositiveSource,
) -> Result<BTreeSet<String>, AatError> {
    let fail = |reason: &str| AatError::Annotation { query_id: record.query_id.clone(), reason: reason.to_string() };
    if source.uses_human() && human.is_empty() {
        return Err(fail("no human positives"));
    }
    if source.uses_lm() && k > record.scores.len() {
        return Err(fail("fewer scored documents than k"));
    }
    let mut out = BTreeSet::new();
    if source.uses_human() {
        out.extend(human.iter().cloned());
    }
    if source.uses_lm() {
        out.extend(top_k_preferred(record, k));
    }
    if out.is_empty() {
        return Err(fail("empty positive set"));
    }
    Ok(out)
}

/// Top-`m` documents for the query embedding in rank order, positives
/// removed. A depth larger than the index is cut to the index size.
pub fn mine_negatives(
    index: &Index,
    query: &[f64],
    m: usize,
    positives: &BTreeSet<String>,
    query_id: &str,
) -> Result<Vec<String>, AatError> {
    let ranked = index.search(query, m.min(index.len()))?;
    let mined: Vec<String> = ranked.doc_ids().filter(|id| !positives.contains(*id)).map(String::from).collect();
    if mined.is_empty() {
        return Err(AatError::Mining { query_id: query_id.into() });
    }
    Ok(mined)
}

/// Draws `per_positive × n_positives` negatives without replacement (all of
/// them when the list is shorter), returned in mined order.
pub fn sample_negatives(mined: &[String], n_positives: usize, per_positive: usize, rng: &mut Rng) -> Vec<String> {
    let want = (n_positives * per_positive).min(mined.len());
    let mut picked = sample(rng, mined.len(), want).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| mined[i].clone()).collect()
}
