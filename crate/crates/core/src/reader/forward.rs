//! Encoder, decoder and the FiD forward pass.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::log;

use super::nn::AttendOpts;
use super::{ReaderError, ReaderModel, MAX_DECODE_LEN};
use crate::corpus::Document;
use crate::math::{sigmoid, softmax_in_place};
use crate::tokenizer::{tokenize, TokenSequence, TokenizerConfig};

/// How retrieved documents are laid out for the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContextMode {
    /// One segment per document, each followed by the prompt.
    #[default]
    Fid,
    /// All documents concatenated into a single segment before the prompt,
    /// standing in for a decoder-only reader.
    Concat,
}

/// Tokenizes `doc ⊕ prompt` segments. A segment is cut to `max_seg_len`
/// tokens by shortening the document part, so the prompt always survives
/// (unless the prompt alone is longer, then its prefix is kept). With no
/// documents the prompt alone forms the single segment.
pub fn build_segments(
    model: &ReaderModel,
    prompt: &str,
    doc_texts: &[String],
    mode: ContextMode,
) -> Vec<TokenSequence> {
    let max = model.config.max_seg_len;
    let tok = model.config.tokenizer();
    let prompt_ids = tokenize(prompt, &tok).ids;
    let budget = max - prompt_ids.len();
    let doc_tok = TokenizerConfig::new(model.config.vocab_size, budget);
    let join = |doc: Vec<u32>| {
        let mut ids = doc;
        ids.extend_from_slice(&prompt_ids);
        TokenSequence::new(ids)
    };
    if doc_texts.is_empty() {
        return vec![join(Vec::new())];
    }
    match mode {
        ContextMode::Fid => doc_texts.iter().map(|t| join(tokenize(t, &doc_tok).ids)).collect(),
        ContextMode::Concat => {
            let mut ids: Vec<u32> = Vec::new();
            for t in doc_texts {
                ids.extend(tokenize(t, &TokenizerConfig::new(model.config.vocab_size, usize::MAX)).ids);
            }
            ids.truncate(budget);
            vec![join(ids)]
        }
    }
}

/// Encoder positions `start..start + len` belong to one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpan {
    pub start: usize,
    pub len: usize,
}

struct Context {
    hidden: Vec<f64>,
    tokens: Vec<u32>,
    spans: Vec<SegmentSpan>,
    key_bias: Vec<f64>,
    flops: u64,
}

impl ReaderModel {
    fn encode_segment(&self, ids: &[u32], flops: &mut u64) -> Vec<f64> {
        let d = self.config.d_model;
        let n = ids.len();
        let mut x = vec![0.0; n * d];
        for (p, &id) in ids.iter().enumerate() {
            let e = &self.token_embedding[id as usize * d..(id as usize + 1) * d];
            let pos = &self.enc_position[p * d..(p + 1) * d];
            for i in 0..d {
                x[p * d + i] = e[i] + pos[i];
            }
        }
        let opts = AttendOpts { heads: self.config.heads, causal: false, key_bias: None };
        for layer in &self.encoder {
            let h = layer.norm_attn.apply(&x, d);
            let (a, _) = layer.attn.apply(&h, &h, n, n, d, &opts, flops);
            x.iter_mut().zip(&a).for_each(|(xi, ai)| *xi += ai);
            let h = layer.norm_mlp.apply(&x, d);
            let m = layer.mlp.apply(&h, n, d, flops);
            x.iter_mut().zip(&m).for_each(|(xi, mi)| *xi += mi);
        }
        self.enc_norm.apply(&x, d)
    }

    fn encode_context(&self, segments: &[TokenSequence]) -> Result<Context, ReaderError> {
        if segments.is_empty() {
            return Err(ReaderError::NoSegments);
        }
        let mut ctx = Context { hidden: Vec::new(), tokens: Vec::new(), spans: Vec::new(), key_bias: Vec::new(), flops: 0 };
        for (i, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(ReaderError::EmptySegment(i));
            }
            let ids = &seg.ids[..seg.len().min(self.config.max_seg_len)];
            if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(ReaderError::TokenOutOfRange(bad));
            }
            let h = self.encode_segment(ids, &mut ctx.flops);
            ctx.spans.push(SegmentSpan { start: ctx.tokens.len(), len: ids.len() });
            ctx.tokens.extend_from_slice(ids);
            ctx.key_bias.extend(ids.iter().map(|&id| self.key_bias[id as usize]));
            ctx.hidden.extend(h);
        }
        Ok(ctx)
    }

    /// Runs the decoder over `[start] ++ inputs`, returning per-step output
    /// log-probabilities and the cross-attention of every layer.
    fn decode(&self, ctx: &Context, inputs: &[u32]) -> DecoderPass {
        let d = self.config.d_model;
        let v = self.config.vocab_size as usize;
        let heads = self.config.heads;
        let steps = inputs.len() + 1;
        let positions = ctx.tokens.len();
        let mut y = vec![0.0; steps * d];
        for s in 0..steps {
            let e = if s == 0 {
                &self.dec_start[..]
            } else {
                let id = inputs[s - 1] as usize;
                &self.token_embedding[id * d..(id + 1) * d]
            };
            let pos = &self.dec_position[s * d..(s + 1) * d];
            for i in 0..d {
                y[s * d + i] = e[i] + pos[i];
            }
        }
        let mut flops = 0;
        let mut cross = Vec::with_capacity(self.config.layers * heads * steps * positions);
        let self_opts = AttendOpts { heads, causal: true, key_bias: None };
        let cross_opts = AttendOpts { heads, causal: false, key_bias: Some(&ctx.key_bias) };
        for layer in &self.decoder {
            let h = layer.norm_self.apply(&y, d);
            let (a, _) = layer.self_attn.apply(&h, &h, steps, steps, d, &self_opts, &mut flops);
            y.iter_mut().zip(&a).for_each(|(yi, ai)| *yi += ai);
            let h = layer.norm_cross.apply(&y, d);
            let (a, probs) = layer.cross_attn.apply(&h, &ctx.hidden, steps, positions, d, &cross_opts, &mut flops);
            y.iter_mut().zip(&a).for_each(|(yi, ai)| *yi += ai);
            cross.extend(probs);
            let h = layer.norm_mlp.apply(&y, d);
            let m = layer.mlp.apply(&h, steps, d, &mut flops);
            y.iter_mut().zip(&m).for_each(|(yi, mi)| *yi += mi);
        }
        let z = self.dec_norm.apply(&y, d);

        let gate = sigmoid(self.copy_gate[0]);
        let last = (self.config.layers - 1) * heads * steps * positions;
        let mut log_probs = vec![0.0; steps * v];
        for s in 0..steps {
            let zs = &z[s * d..(s + 1) * d];
            let row = &mut log_probs[s * v..(s + 1) * v];
            for (t, out) in row.iter_mut().enumerate() {
                let e = &self.token_embedding[t * d..(t + 1) * d];
                *out = zs.iter().zip(e).map(|(a, b)| a * b).sum();
            }
            softmax_in_place(row);
            row.iter_mut().for_each(|p| *p *= 1.0 - gate);
            for span in &ctx.spans {
                let mut mass = 0.0;
                for h in 0..heads {
                    let base = last + (h * steps + s) * positions;
                    mass += cross[base + span.start..base + span.start + span.len].iter().sum::<f64>();
                }
                let share = gate * mass / (heads as f64 * span.len as f64);
                for &tok in &ctx.tokens[span.start..span.start + span.len] {
                    row[tok as usize] += share;
                }
            }
            row.iter_mut().for_each(|p| *p = log(*p));
        }
        DecoderPass { log_probs, cross, steps }
    }
}

struct DecoderPass {
    log_probs: Vec<f64>,
    cross: Vec<f64>,
    steps: usize,
}

/// Result of a FiD forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FidOutput {
    /// Output log-probabilities, `steps × vocab`.
    pub decoder_logits: Vec<f64>,
    /// Post-softmax cross-attention, `[layer][head][step][position]`.
    pub cross_attention: Vec<f64>,
    pub layers: usize,
    pub heads: usize,
    pub steps: usize,
    pub vocab: usize,
    /// Encoder positions of each segment, in input order.
    pub segments: Vec<SegmentSpan>,
    /// Token id at every encoder position.
    pub encoder_tokens: Vec<u32>,
    /// Final encoder hidden states, `positions × d_model`.
    pub encoder_hidden: Vec<f64>,
    /// Greedy tokens, one per decoding step.
    pub generated: Vec<u32>,
    /// Multiply-adds spent in the encoder.
    pub encoder_flops: u64,
}

impl FidOutput {
    pub fn positions(&self) -> usize {
        self.encoder_tokens.len()
    }

    pub fn attention(&self, layer: usize, head: usize, step: usize, position: usize) -> f64 {
        let p = self.positions();
        self.cross_attention[((layer * self.heads + head) * self.steps + step) * p + position]
    }

    /// Attention row over encoder positions.
    pub fn attention_row(&self, layer: usize, head: usize, step: usize) -> &[f64] {
        let p = self.positions();
        let start = ((layer * self.heads + head) * self.steps + step) * p;
        &self.cross_attention[start..start + p]
    }

    /// `(segment index, token index within the segment)` of an encoder position.
    pub fn segment_of(&self, position: usize) -> Option<(usize, usize)> {
        self.segments
            .iter()
            .enumerate()
            .find(|(_, s)| position >= s.start && position < s.start + s.len)
            .map(|(i, s)| (i, position - s.start))
    }

    pub fn step_log_probs(&self, step: usize) -> &[f64] {
        &self.decoder_logits[step * self.vocab..(step + 1) * self.vocab]
    }
}

fn argmax(xs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as u32
}

/// Encodes each segment separately and greedily decodes `decode_steps` steps
/// while the decoder attends to all segments.
pub fn forward_segments(
    model: &ReaderModel,
    segments: &[TokenSequence],
    decode_steps: usize,
) -> Result<FidOutput, ReaderError> {
    if decode_steps == 0 || decode_steps > MAX_DECODE_LEN {
        return Err(ReaderError::DecodeSteps { max: MAX_DECODE_LEN });
    }
    let ctx = model.encode_context(segments)?;
    let v = model.config.vocab_size as usize;
    let mut inputs = Vec::new();
    let pass = loop {
        let pass = model.decode(&ctx, &inputs);
        if pass.steps == decode_steps {
            break pass;
        }
        let last = pass.steps - 1;
        inputs.push(argmax(&pass.log_probs[last * v..(last + 1) * v]));
    };
    let last = pass.steps - 1;
    inputs.push(argmax(&pass.log_probs[last * v..(last + 1) * v]));
    Ok(FidOutput {
        decoder_logits: pass.log_probs,
        cross_attention: pass.cross,
        layers: model.config.layers,
        heads: model.config.heads,
        steps: decode_steps,
        vocab: v,
        segments: ctx.spans,
        encoder_tokens: ctx.tokens,
        encoder_hidden: ctx.hidden,
        generated: inputs,
        encoder_flops: ctx.flops,
    })
}

/// FiD forward for a query over documents (one segment per document).
pub fn fid_forward(
    model: &ReaderModel,
    query: &str,
    docs: &[Document],
    decode_steps: usize,
) -> Result<FidOutput, ReaderError> {
    if docs.is_empty() {
        return Err(ReaderError::NoSegments);
    }
    let texts: Vec<String> = docs.iter().map(Document::full_text).collect();
    let segments = build_segments(model, query, &texts, ContextMode::Fid);
    forward_segments(model, &segments, decode_steps)
}

/// Classic encoder-decoder call on a single input sequence.
pub fn forward_plain(model: &ReaderModel, input: &TokenSequence, decode_steps: usize) -> Result<FidOutput, ReaderError> {
    forward_segments(model, core::slice::from_ref(input), decode_steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub best_index: usize,
    pub log_likelihoods: Vec<f64>,
}

/// Teacher-forced log-likelihood of each tokenized candidate given the
/// segments. Ties go to the lowest index.
pub fn score_candidates_tokens(
    model: &ReaderModel,
    segments: &[TokenSequence],
    candidates: &[TokenSequence],
) -> Result<CandidateScores, ReaderError> {
    if candidates.is_empty() {
        return Err(ReaderError::NoCandidates);
    }
    if let Some(i) = candidates.iter().position(TokenSequence::is_empty) {
        return Err(ReaderError::EmptyCandidate(i));
    }
    let ctx = model.encode_context(segments)?;
    let v = model.config.vocab_size as usize;
    let mut log_likelihoods = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let target = &cand.ids[..cand.len().min(MAX_DECODE_LEN)];
        let pass = model.decode(&ctx, &target[..target.len() - 1]);
        let ll = target.iter().enumerate().map(|(s, &t)| pass.log_probs[s * v + t as usize]).sum();
        log_likelihoods.push(ll);
    }
    let mut best_index = 0;
    for (i, &ll) in log_likelihoods.iter().enumerate() {
        if ll > log_likelihoods[best_index] {
            best_index = i;
        }
    }
    Ok(CandidateScores { best_index, log_likelihoods })
}

/// Scores answer candidates for `prompt` with `docs` as FiD context.
pub fn score_candidates(
    model: &ReaderModel,
    prompt: &str,
    docs: &[Document],
    candidates: &[String],
) -> Result<CandidateScores, ReaderError> {
    let texts: Vec<String> = docs.iter().map(Document::full_text).collect();
    let segments = build_segments(model, prompt, &texts, ContextMode::Fid);
    let tok = TokenizerConfig::new(model.config.vocab_size, MAX_DECODE_LEN);
    let cands: Vec<TokenSequence> = candidates.iter().map(|c| tokenize(c, &tok)).collect();
    score_candidates_tokens(model, &segments, &cands)
}
