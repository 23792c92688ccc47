//! Toy fusion-in-decoder reader.
//!
//! A pre-norm encoder-decoder transformer with learned absolute positions and
//! tied input/output embeddings. Each (document ⊕ prompt) segment is encoded
//! on its own; the decoder cross-attends over the concatenation of all
//! encoded segments. The output distribution mixes the language-model head
//! with a segment copy head: the last decoder layer's cross-attention mass on
//! each segment is spread over that segment's tokens. A reader therefore
//! answers from the documents it attends to.
//!
//! Weight shapes for `layers = L`, `d_model = d`, vocabulary `V`, `F = 4d`:
//!
//! | tensor | shape |
//! |---|---|
//! | `token_embedding` | `V × d` |
//! | `enc.position` | `max_seg_len × d` |
//! | `dec.position` | `MAX_DECODE_LEN × d` |
//! | `dec.start` | `d` |
//! | `enc.{l}.attn.{wq,wk,wv,wo}` | `d × d` |
//! | `enc.{l}.mlp.w_in` / `w_out` | `d × F` / `F × d` |
//! | `dec.{l}.self.*`, `dec.{l}.cross.*` | `d × d` |
//! | layer norms | `d` gain and bias |
//! | `copy_gate` | `1` (logit of the copy-head weight) |
//! | `key_bias` | `V` (cross-attention affinity per token) |

mod fidatt;
mod forward;
pub mod nn;
mod prompt;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use thiserror::Error;

pub use fidatt::{aggregate_fidatt, FidAttRecord};
pub use forward::{
    build_segments, fid_forward, forward_plain, forward_segments, score_candidates, score_candidates_tokens,
    CandidateScores, ContextMode, FidOutput, SegmentSpan,
};
pub use prompt::{render_prompt, PromptTemplate};

use crate::seed;
use crate::tokenizer::{words, TokenizerConfig};
use nn::{uniform, Attention, LayerNorm, Mlp};

type Visitor<'a> = dyn FnMut(String, Vec<usize>, &mut Vec<f64>) + 'a;

/// Decoder positions available for teacher forcing and greedy decoding.
pub const MAX_DECODE_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReaderError {
    #[error("d_model {d_model} is not divisible by {heads} heads")]
    HeadsDoNotDivide { d_model: usize, heads: usize },
    #[error("invalid reader config: {0}")]
    InvalidConfig(&'static str),
    #[error("reader needs at least one document segment")]
    NoSegments,
    #[error("token id {0} outside the reader vocabulary")]
    TokenOutOfRange(u32),
    #[error("segment {0} is empty")]
    EmptySegment(usize),
    #[error("no candidates to score")]
    NoCandidates,
    #[error("candidate {0} tokenizes to nothing")]
    EmptyCandidate(usize),
    #[error("decode_steps must be in 1..={max}")]
    DecodeSteps { max: usize },
    #[error("multiple-choice prompt needs exactly 4 choices, got {0}")]
    ChoiceCount(usize),
    #[error("{segments} segments but {doc_ids} document ids")]
    SegmentMismatch { segments: usize, doc_ids: usize },
    #[error("tensor {name}: {problem}")]
    Tensor { name: String, problem: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReaderConfig {
    /// Transformer layers in the encoder and in the decoder.
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab_size: u32,
    pub max_seg_len: usize,
    pub seed: u64,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 2, d_model: 32, vocab_size: 8192, max_seg_len: 64, seed: 0 }
    }
}

impl ReaderConfig {
    pub fn validate(&self) -> Result<(), ReaderError> {
        if self.layers == 0 {
            return Err(ReaderError::InvalidConfig("layers must be at least 1"));
        }
        if self.heads == 0 {
            return Err(ReaderError::InvalidConfig("heads must be at least 1"));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(ReaderError::HeadsDoNotDivide { d_model: self.d_model, heads: self.heads });
        }
        if self.vocab_size < 2 {
            return Err(ReaderError::InvalidConfig("vocab_size must be at least 2"));
        }
        if self.max_seg_len == 0 {
            return Err(ReaderError::InvalidConfig("max_seg_len must be at least 1"));
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig::new(self.vocab_size, self.max_seg_len)
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: Attention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: Attention,
    pub norm_cross: LayerNorm,
    pub cross_attn: Attention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderModel {
    pub config: ReaderConfig,
    pub token_embedding: Vec<f64>,
    pub enc_position: Vec<f64>,
    pub dec_position: Vec<f64>,
    pub dec_start: Vec<f64>,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: LayerNorm,
    pub copy_gate: Vec<f64>,
    pub key_bias: Vec<f64>,
}

/// One named weight tensor, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ReaderModel {
    /// Seeded random initialization; equal configs give bit-identical models.
    pub fn init(config: ReaderConfig) -> Result<Self, ReaderError> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.ff_dim();
        let v = config.vocab_size as usize;
        let mut rng = seed::rng(config.seed);
        let emb_bound = 1.0 / sqrt(d as f64);
        let token_embedding = uniform(&mut rng, v * d, emb_bound);
        let enc_position = uniform(&mut rng, config.max_seg_len * d, 0.1);
        let dec_position = uniform(&mut rng, MAX_DECODE_LEN * d, 0.1);
        let dec_start = uniform(&mut rng, d, emb_bound);
        let encoder = (0..config.layers)
            .map(|_| EncoderLayer {
                norm_attn: LayerNorm::new(d),
                attn: Attention::init(&mut rng, d),
                norm_mlp: LayerNorm::new(d),
                mlp: Mlp::init(&mut rng, d, ff),
            })
            .collect();
        let decoder = (0..config.layers)
            .map(|_| DecoderLayer {
                norm_self: LayerNorm::new(d),
                self_attn: Attention::init(&mut rng, d),
                norm_cross: LayerNorm::new(d),
                cross_attn: Attention::init(&mut rng, d),
                norm_mlp: LayerNorm::new(d),
                mlp: Mlp::init(&mut rng, d, ff),
            })
            .collect();
        Ok(Self {
            config,
            token_embedding,
            enc_position,
            dec_position,
            dec_start,
            encoder,
            enc_norm: LayerNorm::new(d),
            decoder,
            dec_norm: LayerNorm::new(d),
            copy_gate: vec![0.0],
            key_bias: vec![0.0; v],
        })
    }

    /// Returns a copy whose cross-attention favours keys holding the listed
    /// tokens: each token's affinity is added to its attention logit in every
    /// layer and head. Segments containing such tokens collect more of the
    /// decoder's attention, and through the copy head, more of its answer.
    pub fn plant_preference(&self, affinity: &BTreeMap<String, f64>) -> Self {
        let mut model = self.clone();
        let tok = self.config.tokenizer();
        for (token, weight) in affinity {
            for w in words(token) {
                model.key_bias[tok.token_id(&w) as usize] += weight;
            }
        }
        model
    }

    fn visit_mut(&mut self, f: &mut Visitor<'_>) {
        let c = self.config;
        let (d, ff, v) = (c.d_model, c.ff_dim(), c.vocab_size as usize);
        f("token_embedding".into(), vec![v, d], &mut self.token_embedding);
        f("enc.position".into(), vec![c.max_seg_len, d], &mut self.enc_position);
        f("dec.position".into(), vec![MAX_DECODE_LEN, d], &mut self.dec_position);
        f("dec.start".into(), vec![d], &mut self.dec_start);
        let norm = |f: &mut Visitor<'_>, name: String, n: &mut LayerNorm| {
            f(format!("{name}.gain"), vec![d], &mut n.gain);
            f(format!("{name}.bias"), vec![d], &mut n.bias);
        };
        let attn = |f: &mut Visitor<'_>, name: String, a: &mut Attention| {
            f(format!("{name}.wq"), vec![d, d], &mut a.wq);
            f(format!("{name}.wk"), vec![d, d], &mut a.wk);
            f(format!("{name}.wv"), vec![d, d], &mut a.wv);
            f(format!("{name}.wo"), vec![d, d], &mut a.wo);
        };
        let mlp = |f: &mut Visitor<'_>, name: String, m: &mut Mlp| {
            f(format!("{name}.w_in"), vec![d, ff], &mut m.w_in);
            f(format!("{name}.b_in"), vec![ff], &mut m.b_in);
            f(format!("{name}.w_out"), vec![ff, d], &mut m.w_out);
            f(format!("{name}.b_out"), vec![d], &mut m.b_out);
        };
        for (l, layer) in self.encoder.iter_mut().enumerate() {
            norm(f, format!("enc.{l}.norm_attn"), &mut layer.norm_attn);
            attn(f, format!("enc.{l}.attn"), &mut layer.attn);
            norm(f, format!("enc.{l}.norm_mlp"), &mut layer.norm_mlp);
            mlp(f, format!("enc.{l}.mlp"), &mut layer.mlp);
        }
        norm(f, "enc.norm".into(), &mut self.enc_norm);
        for (l, layer) in self.decoder.iter_mut().enumerate() {
            norm(f, format!("dec.{l}.norm_self"), &mut layer.norm_self);
            attn(f, format!("dec.{l}.self"), &mut layer.self_attn);
            norm(f, format!("dec.{l}.norm_cross"), &mut layer.norm_cross);
            attn(f, format!("dec.{l}.cross"), &mut layer.cross_attn);
            norm(f, format!("dec.{l}.norm_mlp"), &mut layer.norm_mlp);
            mlp(f, format!("dec.{l}.mlp"), &mut layer.mlp);
        }
        norm(f, "dec.norm".into(), &mut self.dec_norm);
        f("copy_gate".into(), vec![1], &mut self.copy_gate);
        f("key_bias".into(), vec![v], &mut self.key_bias);
    }

    /// Every weight tensor in a fixed order.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.clone().visit_mut(&mut |name, shape, data| {
            out.push(NamedTensor { name, shape, data: data.clone() });
        });
        out
    }

    /// Rebuilds a model from a config and a full set of named tensors.
    pub fn from_tensors(config: ReaderConfig, tensors: Vec<NamedTensor>) -> Result<Self, ReaderError> {
        let mut model = Self::init(config)?;
        let mut by_name: BTreeMap<String, NamedTensor> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let mut failure: Option<ReaderError> = None;
        model.visit_mut(&mut |name, shape, data| {
            if failure.is_some() {
                return;
            }
            match by_name.remove(&name) {
                None => failure = Some(ReaderError::Tensor { name, problem: "missing" }),
                Some(t) if t.shape != shape => failure = Some(ReaderError::Tensor { name, problem: "shape mismatch" }),
                Some(t) if !t.data.iter().all(|x| x.is_finite()) => {
                    failure = Some(ReaderError::Tensor { name, problem: "non-finite value" })
                }
                Some(t) => *data = t.data,
            }
        });
        if let Some(err) = failure {
            return Err(err);
        }
        if let Some(name) = by_name.into_keys().next() {
            return Err(ReaderError::Tensor { name, problem: "unexpected tensor" });
        }
        Ok(model)
    }
}
