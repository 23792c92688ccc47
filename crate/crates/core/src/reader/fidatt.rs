//! Per-document FiD cross-attention scores.

use alloc::string::String;
use alloc::vec::Vec;

use super::{FidOutput, ReaderError};

/// Average first-step cross-attention per retrieved document.
#[derive(Debug, Clone, PartialEq)]
pub struct FidAttRecord {
    pub query_id: String,
    /// `(doc_id, score)` in retrieval order.
    pub scores: Vec<(String, f64)>,
}

/// Scores segment `i` by the attention it receives at decoder step 0, summed
/// over all layers, heads and the segment's own tokens, then divided by
/// `layers · heads · segment_len`.
pub fn aggregate_fidatt(
    output: &FidOutput,
    query_id: &str,
    doc_ids: &[String],
) -> Result<FidAttRecord, ReaderError> {
    if output.segments.len() != doc_ids.len() {
        return Err(ReaderError::SegmentMismatch { segments: output.segments.len(), doc_ids: doc_ids.len() });
    }
    let p = output.positions();
    let mut sums = alloc::vec![0.0; output.segments.len()];
    for layer in 0..output.layers {
        for head in 0..output.heads {
            let base = ((layer * output.heads + head) * output.steps) * p;
            let row = &output.cross_attention[base..base + p];
            for (sum, span) in sums.iter_mut().zip(&output.segments) {
                *sum += row[span.start..span.start + span.len].iter().sum::<f64>();
            }
        }
    }
    let scores = doc_ids
        .iter()
        .zip(sums)
        .zip(&output.segments)
        .map(|((id, sum), span)| (id.clone(), sum / (output.layers * output.heads * span.len) as f64))
        .collect();
    Ok(FidAttRecord { query_id: query_id.into(), scores })
}
