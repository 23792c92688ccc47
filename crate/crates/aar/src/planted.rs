//! The planted end-to-end experiment.
//!
//! A source reader planted to attend to marker words annotates the source
//! queries of a synthetic world; retrievers trained on its preferences are
//! then handed to a differently initialised target reader on unseen target
//! queries. The starting retriever is first fitted to the human labels,
//! playing the part of a retriever pretrained on human relevance data.

use std::collections::{BTreeMap, BTreeSet};

use aar_core::corpus::idf_weights;
use aar_core::encoder::AdamConfig;
use aar_core::metrics::{exact_match_rate, AnswerMode};
use aar_core::reader::{FidAttRecord, PromptTemplate};
use aar_core::trainer::{annotate_source_task, top_k_preferred, train, AatConfig, PositiveSource, TrainLog, TrainingInstance};
use aar_core::{EncoderParams, Index, IndexMode, ReaderConfig, ReaderModel, RetrievalResult, Run, ScoredDoc, TokenizerConfig};

use crate::error::Result;
use crate::experiment::{read_all, retrieve_all, ReadSettings};
use crate::synth::{generate, planted_reader, World, WorldConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub world: WorldConfig,
    pub source_reader: ReaderConfig,
    pub target_reader: ReaderConfig,
    /// A second source-like reader for comparing LM preferences.
    pub second_reader: ReaderConfig,
    pub affinity: f64,
    pub second_affinity: f64,
    pub embed_dim: usize,
    /// Encoder rows start scaled by corpus IDF to this power.
    pub idf_power: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub adapt_epochs: usize,
    pub adapt_lr: f64,
    pub read: ReadSettings,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig { seed: 1, ..WorldConfig::default() },
            source_reader: ReaderConfig { seed: 11, ..ReaderConfig::default() },
            target_reader: ReaderConfig { seed: 23, heads: 4, d_model: 48, ..ReaderConfig::default() },
            second_reader: ReaderConfig { seed: 31, ..ReaderConfig::default() },
            affinity: 5.0,
            second_affinity: 4.5,
            embed_dim: 256,
            idf_power: 2.0,
            pretrain_epochs: 6,
            pretrain_lr: 2e-3,
            adapt_epochs: 6,
            adapt_lr: 3e-4,
            read: ReadSettings { template: PromptTemplate::PopQa, mode: AnswerMode::OpenQa, docs: 5, max_len: 64 },
            max_len: 64,
            seed: 1,
        }
    }
}

impl PlantedConfig {
    /// The adaptation config of one ablation arm; N, K and M keep their
    /// defaults.
    pub fn adapt(&self, source: PositiveSource) -> AatConfig {
        AatConfig {
            positive_source: source,
            epochs: self.adapt_epochs,
            adam: AdamConfig { lr: self.adapt_lr, ..AdamConfig::default() },
            max_len: self.max_len,
            seed: self.seed,
            ..AatConfig::default()
        }
    }
}

/// Everything the arms share: the world, the readers and the retriever
/// fitted to human labels.
pub struct Fixture {
    pub config: PlantedConfig,
    pub world: World,
    pub source: ReaderModel,
    pub target: ReaderModel,
    pub second: ReaderModel,
    pub base: EncoderParams,
    pub base_index: Index,
    pub pretrain_log: TrainLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub plain: f64,
    /// With each query's answers deleted from its retrieved documents.
    pub deleted: f64,
}

impl Accuracy {
    pub fn drop(&self) -> f64 {
        self.plain - self.deleted
    }
}

pub struct ArmOutcome {
    pub source: PositiveSource,
    pub params: EncoderParams,
    pub log: TrainLog,
    pub instances: Vec<TrainingInstance>,
    pub records: Vec<FidAttRecord>,
    pub accuracy: Accuracy,
}

fn index(corpus: &aar_core::Corpus, params: &EncoderParams, max_len: usize) -> Result<Index> {
    Ok(Index::build(corpus, params, max_len, IndexMode::Exact, 0)?)
}

impl Fixture {
    /// Generates the world and fits the starting retriever to the human
    /// labels of the source queries.
    pub fn prepare(config: PlantedConfig) -> Result<Self> {
        let world = generate(&config.world);
        let markers = &config.world.markers;
        let source = planted_reader(config.source_reader, markers, config.affinity);
        let target = planted_reader(config.target_reader, markers, config.affinity);
        let second = planted_reader(config.second_reader, markers, config.second_affinity);
        let vocab = config.source_reader.vocab_size;
        let idf: Vec<f64> = idf_weights(&world.corpus, &TokenizerConfig::new(vocab, config.max_len))
            .into_iter()
            .map(|w| w.powf(config.idf_power))
            .collect();
        let init = EncoderParams::init_scaled(vocab, config.embed_dim, config.seed, &idf)
            .expect("one weight per vocabulary entry");
        let pretrain = AatConfig {
            positive_source: PositiveSource::HumanOnly,
            epochs: config.pretrain_epochs,
            adam: AdamConfig { lr: config.pretrain_lr, ..AdamConfig::default() },
            max_len: config.max_len,
            seed: config.seed,
            ..AatConfig::default()
        };
        let init_index = index(&world.corpus, &init, config.max_len)?;
        let ann = annotate_source_task(&world.source, &world.corpus, &init, &init_index, &source, &pretrain)?;
        let out = train(init, ann.instances, &world.corpus, &world.source, IndexMode::Exact, &pretrain)?;
        let base_index = index(&world.corpus, &out.params, config.max_len)?;
        Ok(Self { config, world, source, target, second, base: out.params, base_index, pretrain_log: out.log })
    }

    /// Target-reader accuracy on the target queries with `params` as the
    /// retriever.
    pub fn accuracy(&self, params: &EncoderParams) -> Result<Accuracy> {
        let c = &self.config;
        let idx = index(&self.world.corpus, params, c.max_len)?;
        let run = retrieve_all(&idx, params, &self.world.target, 10, c.max_len)?;
        let read = |delete| read_all(&self.target, &c.read, &self.world.corpus, &self.world.target, &run, delete);
        Ok(Accuracy { plain: read(false)?.report.accuracy, deleted: read(true)?.report.accuracy })
    }

    /// Annotates with the source reader over the base retriever, trains one
    /// arm and evaluates it.
    pub fn train_arm(&self, source: PositiveSource) -> Result<ArmOutcome> {
        let cfg = self.config.adapt(source);
        let w = &self.world;
        let ann = annotate_source_task(&w.source, &w.corpus, &self.base, &self.base_index, &self.source, &cfg)?;
        let instances = ann.instances.clone();
        let out = train(self.base.clone(), ann.instances, &w.corpus, &w.source, IndexMode::Exact, &cfg)?;
        let accuracy = self.accuracy(&out.params)?;
        Ok(ArmOutcome { source, params: out.params, log: out.log, instances, records: ann.records, accuracy })
    }

    /// Top-K preferences of `reader` over the base retriever's top-N.
    pub fn preferences(&self, reader: &ReaderModel) -> Result<BTreeMap<String, BTreeSet<String>>> {
        let cfg = self.config.adapt(PositiveSource::LmOnly);
        let w = &self.world;
        let ann = annotate_source_task(&w.source, &w.corpus, &self.base, &self.base_index, reader, &cfg)?;
        Ok(ann.records.iter().map(|r| (r.query_id.clone(), top_k_preferred(r, cfg.k_preferred).into_iter().collect())).collect())
    }

    pub fn human_positives(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.world.source.iter().map(|q| (q.id.clone(), q.human_positive_ids.clone())).collect()
    }

    /// Fraction of source queries whose given documents contain an answer.
    pub fn exact_match(&self, sets: &BTreeMap<String, BTreeSet<String>>) -> Result<f64> {
        let run: Run = sets
            .iter()
            .map(|(q, docs)| {
                let entries = docs.iter().map(|d| ScoredDoc { doc_id: d.clone(), score: 0.0 }).collect();
                (q.clone(), RetrievalResult { entries, requested_k: docs.len() })
            })
            .collect();
        let top = sets.values().map(BTreeSet::len).max().unwrap_or(1).max(1);
        let queries: Vec<_> = self.world.source.iter().filter(|q| sets.contains_key(&q.id)).cloned().collect();
        Ok(exact_match_rate(&run, &self.world.corpus, &queries, top)?)
    }
}

