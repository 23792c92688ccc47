//! Command-line pipeline: argument definitions and command runners.
//!
//! Every command resolves its configuration (defaults, then `--config`,
//! then `--set key=value` and the dedicated flags), prints it together with
//! the run seed, and writes its artifacts under `--out-dir`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use aar_core::corpus::idf_weights;
use aar_core::seed;
use aar_core::trainer::{annotate_source_task, train};
use aar_core::{Corpus, EncoderParams, Index, TokenizerConfig};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{export_retriever, load_encoder, load_index, load_reader, save_encoder, save_index, save_reader};
use crate::config::{parse_overrides, PipelineConfig, Setting};
use crate::error::{AarError, Result};
use crate::experiment::{retrieve_all, run_experiment, Arm, ExperimentSpec};
use crate::formats::{
    load_corpus, load_query_sets, read_instances, write_corpus, write_fidatt, write_file, write_instances,
    write_queries, write_run_file, write_train_log,
};
use crate::synth::{generate, planted_reader, WorldConfig};

#[derive(Debug, Parser)]
#[command(name = "aar", version, about = "Augmentation-adapted retriever training and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a seeded initial encoder checkpoint.
    Init {
        /// Corpus for IDF-scaled initialization (needs init_idf_power > 0).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Writes a planted synthetic world and its readers.
    Synth {
        #[arg(long, default_value_t = 200)]
        source_queries: usize,
        #[arg(long, default_value_t = 150)]
        target_queries: usize,
        /// Minimum document count; each query's own documents always fit.
        #[arg(long, default_value_t = 2000)]
        corpus_size: usize,
        #[arg(long, default_value_t = 5.0)]
        affinity: f64,
    },
    /// Builds and saves a document index.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
    },
    /// Retrieves the top k documents for every query into a run file.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long, required = true, value_delimiter = ',')]
        queries: Vec<PathBuf>,
        /// Defaults to the configured n_retrieved.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Labels source queries with a reader's attention and mines negatives.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required = true, value_delimiter = ',')]
        queries: Vec<PathBuf>,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        reader: PathBuf,
        /// Prebuilt index; built from the encoder when absent.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Trains the retriever on annotated instances.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Queries whose human labels are monitored at each refresh, and
        /// annotated when no instances are given.
        #[arg(long, required = true, value_delimiter = ',')]
        queries: Vec<PathBuf>,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Source reader for annotating on the fly.
        #[arg(long)]
        reader: Option<PathBuf>,
    },
    /// Evaluates one retriever with a reader.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required = true, value_delimiter = ',')]
        queries: Vec<PathBuf>,
        #[arg(long)]
        reader: PathBuf,
        /// Omit to let the reader answer without retrieval.
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Runs a comparative experiment file.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
    },
}

pub const INDEX_FILE: &str = "index.aidx";
pub const RUN_FILE: &str = "run.txt";
pub const FIDATT_FILE: &str = "fidatt.txt";
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const ENCODER_FILE: &str = "encoder.aenc";
pub const TRAINED_FILE: &str = "retriever.aenc";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.txt";

fn resolve(common: &Common) -> Result<PipelineConfig> {
    let mut overrides = parse_overrides(&common.set)?;
    let flag = |v: String| Setting { value: v, origin: "command line".into() };
    if let Some(s) = common.seed {
        overrides.insert("seed".into(), flag(s.to_string()));
    }
    if let Some(d) = &common.out_dir {
        overrides.insert("out_dir".into(), flag(d.display().to_string()));
    }
    PipelineConfig::load(common.config.as_deref(), &overrides)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| AarError::io(Path::new("<stdout>"), e))
}

fn build_index(corpus: &Corpus, encoder: &EncoderParams, cfg: &PipelineConfig) -> Result<Index> {
    Ok(Index::build(corpus, encoder, cfg.train.max_len, cfg.index_mode, seed::derive(cfg.seed, "index"))?)
}

/// Runs a parsed command line, writing progress and reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    let dir = cfg.out_dir.clone();
    emit(out, &format!("seed = {}\n[resolved config]\n{}\n", cfg.seed, cfg.render()))?;
    match &cli.command {
        Command::Init { corpus } => {
            let init_seed = seed::derive(cfg.seed, "encoder/init");
            let params = match (corpus, cfg.init_idf_power > 0.0) {
                (Some(path), true) => {
                    let corpus = load_corpus(path)?;
                    let idf: Vec<f64> = idf_weights(&corpus, &TokenizerConfig::new(cfg.vocab_size, cfg.train.max_len))
                        .into_iter()
                        .map(|w| w.powf(cfg.init_idf_power))
                        .collect();
                    EncoderParams::init_scaled(cfg.vocab_size, cfg.embed_dim, init_seed, &idf)
                        .map_err(|e| AarError::Data(e.to_string()))?
                }
                (None, true) => return Err(AarError::Usage("init_idf_power > 0 needs --corpus".into())),
                _ => EncoderParams::init(cfg.vocab_size, cfg.embed_dim, init_seed),
            };
            let path = dir.join(ENCODER_FILE);
            save_encoder(&params, &path)?;
            emit(out, &format!("wrote {} (vocab {}, dim {})\n", path.display(), cfg.vocab_size, cfg.embed_dim))
        }
        Command::Synth { source_queries, target_queries, corpus_size, affinity } => {
            let world_cfg = WorldConfig {
                source_queries: *source_queries,
                target_queries: *target_queries,
                corpus_size: *corpus_size,
                seed: seed::derive(cfg.seed, "synth"),
                ..WorldConfig::default()
            };
            let world = generate(&world_cfg);
            write_corpus(&world.corpus, &dir.join("corpus.jsonl"))?;
            write_queries(&world.source, &dir.join("source.jsonl"))?;
            write_queries(&world.target, &dir.join("target.jsonl"))?;
            let reader_cfg = |label: &str| aar_core::ReaderConfig {
                vocab_size: cfg.vocab_size,
                max_seg_len: cfg.read.max_len,
                seed: seed::derive(cfg.seed, label),
                ..aar_core::ReaderConfig::default()
            };
            let source = planted_reader(reader_cfg("reader/source"), &world_cfg.markers, *affinity);
            let target = planted_reader(reader_cfg("reader/target"), &world_cfg.markers, *affinity);
            save_reader(&source, &dir.join("source.afid"))?;
            save_reader(&target, &dir.join("target.afid"))?;
            emit(
                out,
                &format!(
                    "wrote {} documents, {} source and {} target queries to {}\n",
                    world.corpus.len(),
                    world.source.len(),
                    world.target.len(),
                    dir.display()
                ),
            )
        }
        Command::Index { corpus, encoder } => {
            let corpus = load_corpus(corpus)?;
            let encoder = load_encoder(encoder)?;
            let index = build_index(&corpus, &encoder, &cfg)?;
            let path = dir.join(INDEX_FILE);
            save_index(&index, &path)?;
            emit(out, &format!("indexed {} documents of dim {} into {}\n", index.len(), index.dim(), path.display()))
        }
        Command::Retrieve { index, encoder, queries, k } => {
            let index = load_index(index)?;
            let encoder = load_encoder(encoder)?;
            let queries = load_query_sets(queries)?;
            let k = k.unwrap_or(cfg.train.n_retrieved);
            let run = retrieve_all(&index, &encoder, &queries, k, cfg.train.max_len)?;
            let path = dir.join(RUN_FILE);
            write_run_file(&run, "aar", &path)?;
            emit(out, &format!("retrieved top {k} for {} queries into {}\n", run.len(), path.display()))
        }
        Command::Annotate { corpus, queries, encoder, reader, index } => {
            let corpus = load_corpus(corpus)?;
            let queries = load_query_sets(queries)?;
            let encoder = load_encoder(encoder)?;
            let reader = load_reader(reader)?;
            let index = match index {
                Some(p) => load_index(p)?,
                None => build_index(&corpus, &encoder, &cfg)?,
            };
            let ann = annotate_source_task(&queries, &corpus, &encoder, &index, &reader, &cfg.train)
                .map_err(|e| AarError::from(e).context("annotate"))?;
            write_fidatt(&ann.records, &dir.join(FIDATT_FILE))?;
            write_instances(&ann.instances, &dir.join(INSTANCES_FILE))?;
            for d in &ann.dropped {
                emit(out, &format!("dropped {}: {}\n", d.query_id, d.reason))?;
            }
            emit(out, &format!("annotated {} queries, dropped {}\n", ann.instances.len(), ann.dropped.len()))
        }
        Command::Train { corpus, queries, encoder, instances, reader } => {
            let corpus = load_corpus(corpus)?;
            let queries = load_query_sets(queries)?;
            let encoder = load_encoder(encoder)?;
            let instances = match (instances, reader) {
                (Some(p), _) => read_instances(p)?,
                (None, Some(r)) => {
                    let reader = load_reader(r)?;
                    let index = build_index(&corpus, &encoder, &cfg)?;
                    let ann = annotate_source_task(&queries, &corpus, &encoder, &index, &reader, &cfg.train)
                        .map_err(|e| AarError::from(e).context("annotate"))?;
                    ann.instances
                }
                (None, None) => return Err(AarError::Usage("train needs --instances or --reader".into())),
            };
            let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let outcome = train(encoder, instances, &corpus, &queries, cfg.index_mode, &cfg.train)
                .map_err(|e| AarError::from(e).context("train"))?;
            write_train_log(&outcome.log, cfg.seed, started, &cfg.settings(), &dir.join(LOG_FILE))?;
            let path = dir.join(TRAINED_FILE);
            export_retriever(&outcome.params, &path)?;
            let last = outcome.log.refreshes.last().map_or(0.0, |r| r.mrr_at_10);
            emit(
                out,
                &format!(
                    "trained {} steps, final human-label MRR@10 {last:.6}; wrote {}\n",
                    outcome.log.records.len(),
                    path.display()
                ),
            )
        }
        Command::Eval { corpus, queries, reader, encoder } => {
            let mut read = cfg.read;
            if encoder.is_none() {
                read.docs = 0;
            }
            let spec = ExperimentSpec {
                corpus: corpus.clone(),
                queries: queries.clone(),
                reader: reader.clone(),
                arms: encoder
                    .iter()
                    .map(|e| Arm { name: "retriever".into(), retriever: e.clone(), index: None, positives: None })
                    .collect(),
                read,
                delete_answers: cfg.delete_answers,
                include_human: false,
                seed: cfg.seed,
            };
            report(&spec, &dir, out)
        }
        Command::Experiment { spec } => {
            let mut spec = ExperimentSpec::load(spec)?;
            if cli.common.seed.is_some() {
                spec.seed = cfg.seed;
            }
            report(&spec, &dir, out)
        }
    }
}

fn report(spec: &ExperimentSpec, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let report = run_experiment(spec)?;
    let text = report.render();
    let path = dir.join(REPORT_FILE);
    write_file(&path, text.as_bytes())?;
    emit(out, &text)?;
    emit(out, &format!("wrote {}\n", path.display()))
}

