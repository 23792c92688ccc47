//! Dual-encoder retriever: mean-pooled hashed embeddings followed by one
//! linear projection, scored by raw dot product.
//!
//! The same encoder embeds queries and documents. Because the model is a
//! closed-form function of its two parameter blocks, loss gradients are exact
//! and can be checked against finite differences.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{pow, sqrt};
use rand::Rng as _;
use thiserror::Error;

use crate::math::{dot, sigmoid, softplus, to_f32_grid, vec_mat};
use crate::seed;
use crate::tokenizer::{tokenize, TokenSequence, TokenizerConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: u32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter block {block} has {got} entries, expected {expected}")]
    ShapeMismatch { block: &'static str, expected: usize, got: usize },
    #[error("parameter block {block} contains a non-finite value")]
    NonFiniteParameter { block: &'static str },
    #[error("query {query_id:?} has no positive documents")]
    EmptyPositives { query_id: String },
    #[error("query {query_id:?} has no negative documents")]
    EmptyNegatives { query_id: String },
    #[error("non-finite gradient in {block}")]
    NonFiniteGradient { block: &'static str },
}

/// Dense vector produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Retriever parameters.
///
/// `embedding_table` is `vocab_size × embed_dim` and `projection` is
/// `embed_dim × embed_dim`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    vocab_size: u32,
    embed_dim: usize,
    pub embedding_table: Vec<f64>,
    pub projection: Vec<f64>,
}

impl EncoderParams {
    /// Seeded initialization: table entries uniform in (−0.05, 0.05),
    /// projection is identity plus uniform (−0.01, 0.01) noise.
    pub fn init(vocab_size: u32, embed_dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let embedding_table = (0..vocab_size as usize * embed_dim)
            .map(|_| to_f32_grid(rng.random_range(-0.05..0.05)))
            .collect();
        let mut projection = vec![0.0; embed_dim * embed_dim];
        for i in 0..embed_dim {
            for j in 0..embed_dim {
                let noise: f64 = rng.random_range(-0.01..0.01);
                let base = if i == j { 1.0 } else { 0.0 };
                projection[i * embed_dim + j] = to_f32_grid(base + noise);
            }
        }
        Self { vocab_size, embed_dim, embedding_table, projection }
    }

    /// [`init`](Self::init) with every embedding row multiplied by its
    /// entry in `row_scale`, e.g. inverse document frequencies.
    pub fn init_scaled(vocab_size: u32, embed_dim: usize, seed: u64, row_scale: &[f64]) -> Result<Self, EncoderError> {
        if row_scale.len() != vocab_size as usize {
            return Err(EncoderError::ShapeMismatch { block: "row_scale", expected: vocab_size as usize, got: row_scale.len() });
        }
        if !row_scale.iter().all(|x| x.is_finite()) {
            return Err(EncoderError::NonFiniteParameter { block: "row_scale" });
        }
        let mut params = Self::init(vocab_size, embed_dim, seed);
        for (row, &s) in params.embedding_table.chunks_mut(embed_dim).zip(row_scale) {
            row.iter_mut().for_each(|x| *x = to_f32_grid(*x * s));
        }
        Ok(params)
    }

    pub fn from_parts(
        vocab_size: u32,
        embed_dim: usize,
        embedding_table: Vec<f64>,
        projection: Vec<f64>,
    ) -> Result<Self, EncoderError> {
        let expected = vocab_size as usize * embed_dim;
        if embedding_table.len() != expected {
            return Err(EncoderError::ShapeMismatch { block: "embedding_table", expected, got: embedding_table.len() });
        }
        if projection.len() != embed_dim * embed_dim {
            return Err(EncoderError::ShapeMismatch {
                block: "projection",
                expected: embed_dim * embed_dim,
                got: projection.len(),
            });
        }
        if !embedding_table.iter().all(|x| x.is_finite()) {
            return Err(EncoderError::NonFiniteParameter { block: "embedding_table" });
        }
        if !projection.iter().all(|x| x.is_finite()) {
            return Err(EncoderError::NonFiniteParameter { block: "projection" });
        }
        Ok(Self { vocab_size, embed_dim, embedding_table, projection })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn row(&self, id: u32) -> &[f64] {
        let d = self.embed_dim;
        &self.embedding_table[id as usize * d..(id as usize + 1) * d]
    }

    fn check_tokens(&self, tokens: &TokenSequence) -> Result<(), EncoderError> {
        match tokens.ids.iter().find(|&&id| id >= self.vocab_size) {
            Some(&id) => Err(EncoderError::TokenOutOfRange { id, vocab_size: self.vocab_size }),
            None => Ok(()),
        }
    }

    /// Mean of the embedding rows, before projection.
    fn pooled(&self, tokens: &TokenSequence) -> Result<Vec<f64>, EncoderError> {
        self.check_tokens(tokens)?;
        let mut mean = vec![0.0; self.embed_dim];
        if tokens.is_empty() {
            return Ok(mean);
        }
        for &id in &tokens.ids {
            for (m, &e) in mean.iter_mut().zip(self.row(id)) {
                *m += e;
            }
        }
        let n = tokens.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    fn project(&self, pooled: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.embed_dim];
        vec_mat(pooled, &self.projection, self.embed_dim, &mut out);
        out
    }

    /// Tokenizes with this encoder's vocabulary and embeds.
    pub fn encode_text(&self, text: &str, max_len: usize) -> Embedding {
        let tokens = tokenize(text, &TokenizerConfig::new(self.vocab_size, max_len));
        self.encode(&tokens).expect("tokenizer ids are always in range")
    }

    /// Embeds a token sequence; the empty sequence maps to the zero vector.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Embedding, EncoderError> {
        let pooled = self.pooled(tokens)?;
        Ok(Embedding(self.project(&pooled)))
    }
}

/// Raw dot-product relevance score.
pub fn score(q: &Embedding, d: &Embedding) -> Result<f64, EncoderError> {
    if q.dim() != d.dim() {
        return Err(EncoderError::DimensionMismatch { expected: q.dim(), got: d.dim() });
    }
    Ok(dot(&q.0, &d.0))
}

/// Gradient buffers shaped like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding_table: Vec<f64>,
    pub projection: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            embedding_table: vec![0.0; params.embedding_table.len()],
            projection: vec![0.0; params.projection.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.embedding_table.iter_mut().zip(&other.embedding_table) {
            *a += b;
        }
        for (a, b) in self.projection.iter_mut().zip(&other.projection) {
            *a += b;
        }
    }

    fn check_finite(&self) -> Result<(), EncoderError> {
        if !self.embedding_table.iter().all(|g| g.is_finite()) {
            return Err(EncoderError::NonFiniteGradient { block: "embedding_table" });
        }
        if !self.projection.iter().all(|g| g.is_finite()) {
            return Err(EncoderError::NonFiniteGradient { block: "projection" });
        }
        Ok(())
    }
}

/// Loss value together with its exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grads: Gradients,
}

/// One encoded sequence plus the gradient flowing into its output embedding.
struct Encoded<'a> {
    tokens: &'a TokenSequence,
    pooled: Vec<f64>,
    emb: Vec<f64>,
    upstream: Vec<f64>,
}

impl<'a> Encoded<'a> {
    fn new(params: &EncoderParams, tokens: &'a TokenSequence) -> Result<Self, EncoderError> {
        let pooled = params.pooled(tokens)?;
        let emb = params.project(&pooled);
        let upstream = vec![0.0; params.embed_dim];
        Ok(Self { tokens, pooled, emb, upstream })
    }

    /// Pushes `upstream` back through projection and mean pooling.
    fn backprop(&self, params: &EncoderParams, grads: &mut Gradients) {
        let d = params.embed_dim;
        if self.upstream.iter().all(|&g| g == 0.0) {
            return;
        }
        for i in 0..d {
            let pi = self.pooled[i];
            if pi != 0.0 {
                let row = &mut grads.projection[i * d..(i + 1) * d];
                for (g, &u) in row.iter_mut().zip(&self.upstream) {
                    *g += pi * u;
                }
            }
        }
        if self.tokens.is_empty() {
            return;
        }
        let g_pooled: Vec<f64> = params.projection.chunks_exact(d).map(|row| dot(row, &self.upstream)).collect();
        let inv_len = 1.0 / self.tokens.len() as f64;
        for &id in &self.tokens.ids {
            let row = &mut grads.embedding_table[id as usize * d..(id as usize + 1) * d];
            for (g, &gp) in row.iter_mut().zip(&g_pooled) {
                *g += gp * inv_len;
            }
        }
    }
}

/// Two-way softmax cross entropy with the positive as the true class:
/// `ln(1 + exp(−(s⁺ − s⁻)))`.
pub fn pair_loss(
    params: &EncoderParams,
    q: &TokenSequence,
    d_pos: &TokenSequence,
    d_neg: &TokenSequence,
) -> Result<PairLoss, EncoderError> {
    let mut eq = Encoded::new(params, q)?;
    let mut ep = Encoded::new(params, d_pos)?;
    let mut en = Encoded::new(params, d_neg)?;
    let value = accumulate_pair(&mut eq, &mut ep, &mut en);
    let mut grads = Gradients::zeros_like(params);
    for e in [&eq, &ep, &en] {
        e.backprop(params, &mut grads);
    }
    Ok(PairLoss { value, grads })
}

/// Adds one pair's loss gradient into the three upstream buffers and returns
/// the pair's loss.
fn accumulate_pair(q: &mut Encoded<'_>, p: &mut Encoded<'_>, n: &mut Encoded<'_>) -> f64 {
    let margin = dot(&q.emb, &p.emb) - dot(&q.emb, &n.emb);
    let value = softplus(-margin);
    // dL/dmargin
    let c = -sigmoid(-margin);
    for i in 0..q.emb.len() {
        q.upstream[i] += c * (p.emb[i] - n.emb[i]);
        p.upstream[i] += c * q.emb[i];
        n.upstream[i] -= c * q.emb[i];
    }
    value
}

/// One query with its positive and negative documents.
#[derive(Debug, Clone)]
pub struct LossInstance<'a> {
    pub query_id: &'a str,
    pub query: &'a TokenSequence,
    pub positives: Vec<&'a TokenSequence>,
    pub negatives: Vec<&'a TokenSequence>,
}

/// Sum of [`pair_loss`] over every query, positive and negative.
pub fn batch_loss_and_grads(
    params: &EncoderParams,
    batch: &[LossInstance<'_>],
) -> Result<PairLoss, EncoderError> {
    let mut grads = Gradients::zeros_like(params);
    let mut value = 0.0;
    for inst in batch {
        if inst.positives.is_empty() {
            return Err(EncoderError::EmptyPositives { query_id: inst.query_id.into() });
        }
        if inst.negatives.is_empty() {
            return Err(EncoderError::EmptyNegatives { query_id: inst.query_id.into() });
        }
        let mut q = Encoded::new(params, inst.query)?;
        let mut pos = inst
            .positives
            .iter()
            .map(|t| Encoded::new(params, t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut neg = inst
            .negatives
            .iter()
            .map(|t| Encoded::new(params, t))
            .collect::<Result<Vec<_>, _>>()?;
        for p in pos.iter_mut() {
            for n in neg.iter_mut() {
                value += accumulate_pair(&mut q, p, n);
            }
        }
        q.backprop(params, &mut grads);
        for e in pos.iter().chain(neg.iter()) {
            e.backprop(params, &mut grads);
        }
    }
    Ok(PairLoss { value, grads })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-6, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            step: 0,
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
        }
    }
}

/// One Adam step. Parameters stay on the `f32` grid afterwards.
pub fn apply_update(
    params: &mut EncoderParams,
    grads: &Gradients,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), EncoderError> {
    if grads.embedding_table.len() != params.embedding_table.len() {
        return Err(EncoderError::ShapeMismatch {
            block: "embedding_table",
            expected: params.embedding_table.len(),
            got: grads.embedding_table.len(),
        });
    }
    if grads.projection.len() != params.projection.len() {
        return Err(EncoderError::ShapeMismatch {
            block: "projection",
            expected: params.projection.len(),
            got: grads.projection.len(),
        });
    }
    grads.check_finite()?;
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - pow(config.beta1, t);
    let bias2 = 1.0 - pow(config.beta2, t);
    let blocks = [
        (&mut params.embedding_table, &grads.embedding_table, &mut state.first_moment.embedding_table, &mut state.second_moment.embedding_table),
        (&mut params.projection, &grads.projection, &mut state.first_moment.projection, &mut state.second_moment.projection),
    ];
    for (p, g, m, v) in blocks {
        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            if m[i] == 0.0 {
                continue;
            }
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] = to_f32_grid(p[i] - config.lr * m_hat / (sqrt(v_hat) + config.eps));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::new(ids.to_vec())
    }

    #[test]
    fn empty_sequence_is_zero_vector() {
        let p = EncoderParams::init(10, 4, 1);
        assert_eq!(p.encode(&seq(&[])).unwrap().0, vec![0.0; 4]);
    }

    #[test]
    fn identity_projection_returns_row() {
        let mut p = EncoderParams::init(10, 3, 1);
        p.projection = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(p.encode(&seq(&[4])).unwrap().0, p.embedding_table[12..15].to_vec());
    }

    #[test]
    fn two_token_hand_example() {
        // table rows: 0 -> [1, 2], 1 -> [3, -1]; projection [[2, 0], [1, 1]].
        // mean = [2, 0.5]; mean · P = [2*2 + 0.5*1, 2*0 + 0.5*1] = [4.5, 0.5].
        let p = EncoderParams::from_parts(2, 2, vec![1.0, 2.0, 3.0, -1.0], vec![2.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.encode(&seq(&[0, 1])).unwrap().0, vec![4.5, 0.5]);
    }

    #[test]
    fn out_of_range_token() {
        let p = EncoderParams::init(5, 2, 0);
        assert_eq!(p.encode(&seq(&[5])), Err(EncoderError::TokenOutOfRange { id: 5, vocab_size: 5 }));
    }

    #[test]
    fn score_examples() {
        let a = Embedding(vec![1.0, 0.0]);
        let b = Embedding(vec![0.0, 1.0]);
        assert_eq!(score(&a, &b).unwrap(), 0.0);
        assert_eq!(score(&Embedding(vec![1.0, 2.0]), &Embedding(vec![3.0, 4.0])).unwrap(), 11.0);
        let v = Embedding(vec![0.5, -2.0, 3.0]);
        assert_eq!(score(&v, &v).unwrap(), 0.25 + 4.0 + 9.0);
        assert!(score(&a, &Embedding(vec![1.0])).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(EncoderParams::init(50, 8, 3), EncoderParams::init(50, 8, 3));
        assert_ne!(EncoderParams::init(50, 8, 3), EncoderParams::init(50, 8, 4));
    }

    #[test]
    fn empty_sets_rejected() {
        let p = EncoderParams::init(10, 2, 0);
        let q = seq(&[1]);
        let d = seq(&[2]);
        let inst = LossInstance { query_id: "q7", query: &q, positives: vec![], negatives: vec![&d] };
        assert_eq!(
            batch_loss_and_grads(&p, &[inst]).unwrap_err(),
            EncoderError::EmptyPositives { query_id: "q7".into() }
        );
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = EncoderParams::init(4, 2, 0);
        let mut g = Gradients::zeros_like(&p);
        g.projection[1] = f64::NAN;
        let mut s = AdamState::new(&p);
        let err = apply_update(&mut p, &g, &mut s, &AdamConfig::default()).unwrap_err();
        assert_eq!(err, EncoderError::NonFiniteGradient { block: "projection" });
        assert_eq!(s.step, 0);
    }
}
