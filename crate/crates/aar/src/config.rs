//! Flat `key = value` configuration with layered precedence: built-in
//! defaults, then a config file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aar_core::metrics::AnswerMode;
use aar_core::reader::PromptTemplate;
use aar_core::trainer::{AatConfig, PositiveSource, RefreshEvery};
use aar_core::IndexMode;

use crate::error::{AarError, Result};
use crate::experiment::ReadSettings;

/// One `key = value` line and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub value: String,
    pub origin: String,
}

pub type Settings = BTreeMap<String, Setting>;

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// skipped; a key may appear once per file.
pub fn parse_settings(text: &str, origin: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| AarError::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(AarError::Config(format!("{origin}:{}: empty key", i + 1)));
        }
        let setting = Setting { value: value.trim().to_string(), origin: format!("{origin}:{}", i + 1) };
        if out.insert(key.to_string(), setting).is_some() {
            return Err(AarError::Config(format!("{origin}:{}: key {key} set twice", i + 1)));
        }
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Settings> {
    let text = fs::read_to_string(path).map_err(|e| AarError::io(path, e))?;
    parse_settings(&text, &path.display().to_string())
}

/// Parses command-line `key=value` overrides.
pub fn parse_overrides(pairs: &[String]) -> Result<Settings> {
    let mut out = Settings::new();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| AarError::Usage(format!("override {p:?} must look like key=value")))?;
        out.insert(k.trim().to_string(), Setting { value: v.trim().to_string(), origin: "command line".into() });
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, s: &Setting) -> Result<T> {
    s.value
        .parse()
        .map_err(|_| AarError::Config(format!("{}: {key} = {:?} is not a valid value", s.origin, s.value)))
}

fn parse_bool(key: &str, s: &Setting) -> Result<bool> {
    match s.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(AarError::Config(format!("{}: {key} = {:?} is not a boolean", s.origin, s.value))),
    }
}

fn choose<T: Copy>(key: &str, s: &Setting, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(name, _)| *name == s.value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        AarError::Config(format!("{}: {key} = {:?}; expected one of {}", s.origin, s.value, names.join(", ")))
    })
}

const POSITIVE_SOURCES: &[(&str, PositiveSource)] =
    &[("union", PositiveSource::Union), ("lm_only", PositiveSource::LmOnly), ("human_only", PositiveSource::HumanOnly)];
const TEMPLATES: &[(&str, PromptTemplate)] = &[("popqa", PromptTemplate::PopQa), ("mmlu", PromptTemplate::Mmlu)];
const ANSWER_MODES: &[(&str, AnswerMode)] = &[("open", AnswerMode::OpenQa), ("choice", AnswerMode::MultiChoice)];

pub fn positive_source_name(s: PositiveSource) -> &'static str {
    POSITIVE_SOURCES.iter().find(|(_, v)| *v == s).map(|(n, _)| *n).expect("listed")
}

pub fn template_name(t: PromptTemplate) -> &'static str {
    TEMPLATES.iter().find(|(_, v)| *v == t).map(|(n, _)| *n).expect("listed")
}

pub fn answer_mode_name(m: AnswerMode) -> &'static str {
    ANSWER_MODES.iter().find(|(_, v)| *v == m).map(|(n, _)| *n).expect("listed")
}

/// Every setting a pipeline command understands.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub preset: String,
    pub train: AatConfig,
    pub vocab_size: u32,
    pub embed_dim: usize,
    /// Encoder rows start scaled by corpus IDF to this power; 0 disables.
    pub init_idf_power: f64,
    pub index_mode: IndexMode,
    pub read: ReadSettings,
    pub delete_answers: bool,
}

pub const KEYS: &[&str] = &[
    "seed",
    "out_dir",
    "preset",
    "n_retrieved",
    "k_preferred",
    "m_depth",
    "negatives_per_positive",
    "full_negative_sum",
    "refresh_every",
    "batch_size",
    "epochs",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "positive_source",
    "template",
    "max_len",
    "vocab_size",
    "embed_dim",
    "init_idf_power",
    "index_mode",
    "n_lists",
    "n_probe",
    "answer_mode",
    "docs",
    "delete_answers",
];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            preset: "ance".into(),
            train: AatConfig::ance(),
            vocab_size: 8192,
            embed_dim: 32,
            init_idf_power: 0.0,
            index_mode: IndexMode::Exact,
            read: ReadSettings { template: PromptTemplate::PopQa, mode: AnswerMode::OpenQa, docs: 3, max_len: 64 },
            delete_answers: false,
        }
    }
}

impl PipelineConfig {
    /// Defaults, overlaid by `file`, overlaid by `overrides`. Unknown keys
    /// are errors wherever they appear.
    pub fn resolve(file: &Settings, overrides: &Settings) -> Result<Self> {
        let mut merged = file.clone();
        merged.extend(overrides.clone());
        if let Some((key, s)) = merged.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
            return Err(AarError::Config(format!("{}: unknown key {key}", s.origin)));
        }
        let mut c = Self::default();
        if let Some(s) = merged.get("preset") {
            c.train = choose("preset", s, &[("ance", 0u8), ("contriever", 1)]).map(|p| match p {
                0 => AatConfig::ance(),
                _ => AatConfig::contriever(),
            })?;
            c.preset = s.value.clone();
        }
        let (mut n_lists, mut n_probe) = (None, None);
        for (key, s) in &merged {
            let k = key.as_str();
            match k {
                "seed" => c.seed = parse(k, s)?,
                "out_dir" => c.out_dir = PathBuf::from(&s.value),
                "preset" => {}
                "n_retrieved" => c.train.n_retrieved = parse(k, s)?,
                "k_preferred" => c.train.k_preferred = parse(k, s)?,
                "m_depth" => c.train.m_depth = parse(k, s)?,
                "negatives_per_positive" => c.train.negatives_per_positive = parse(k, s)?,
                "full_negative_sum" => c.train.full_negative_sum = parse_bool(k, s)?,
                "refresh_every" => {
                    c.train.refresh_every = match s.value.as_str() {
                        "epoch" => RefreshEvery::Epoch,
                        "never" => RefreshEvery::Never,
                        _ => RefreshEvery::Steps(parse(k, s)?),
                    }
                }
                "batch_size" => c.train.batch_size = parse(k, s)?,
                "epochs" => c.train.epochs = parse(k, s)?,
                "lr" => c.train.adam.lr = parse(k, s)?,
                "beta1" => c.train.adam.beta1 = parse(k, s)?,
                "beta2" => c.train.adam.beta2 = parse(k, s)?,
                "eps" => c.train.adam.eps = parse(k, s)?,
                "positive_source" => c.train.positive_source = choose(k, s, POSITIVE_SOURCES)?,
                "template" => {
                    c.train.template = choose(k, s, TEMPLATES)?;
                    c.read.template = c.train.template;
                }
                "max_len" => {
                    c.train.max_len = parse(k, s)?;
                    c.read.max_len = c.train.max_len;
                }
                "vocab_size" => c.vocab_size = parse(k, s)?,
                "embed_dim" => c.embed_dim = parse(k, s)?,
                "init_idf_power" => c.init_idf_power = parse(k, s)?,
                "index_mode" => {
                    c.index_mode = choose(k, s, &[("exact", IndexMode::Exact), ("ivf", IndexMode::Ivf { n_lists: 16, n_probe: 4 })])?
                }
                "n_lists" => n_lists = Some(parse(k, s)?),
                "n_probe" => n_probe = Some(parse(k, s)?),
                "answer_mode" => c.read.mode = choose(k, s, ANSWER_MODES)?,
                "docs" => c.read.docs = parse(k, s)?,
                "delete_answers" => c.delete_answers = parse_bool(k, s)?,
                _ => unreachable!("checked against KEYS"),
            }
        }
        match (&mut c.index_mode, n_lists, n_probe) {
            (IndexMode::Ivf { n_lists: l, n_probe: p }, nl, np) => {
                *l = nl.unwrap_or(*l);
                *p = np.unwrap_or(*p);
            }
            (IndexMode::Exact, None, None) => {}
            (IndexMode::Exact, _, _) => {
                return Err(AarError::Config("n_lists and n_probe need index_mode = ivf".into()));
            }
        }
        c.train.seed = c.seed;
        c.train.validate().map_err(|e| AarError::Config(e.to_string()))?;
        if c.vocab_size < 2 || c.embed_dim == 0 {
            return Err(AarError::Config("vocab_size must be at least 2 and embed_dim at least 1".into()));
        }
        if !c.init_idf_power.is_finite() || c.init_idf_power < 0.0 {
            return Err(AarError::Config("init_idf_power must be a non-negative number".into()));
        }
        Ok(c)
    }

    /// Loads `path` when given, then applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Settings) -> Result<Self> {
        let file = match path {
            Some(p) => read_settings(p)?,
            None => Settings::new(),
        };
        Self::resolve(&file, overrides)
    }

    /// The fully resolved configuration, one entry per key.
    pub fn settings(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("seed", self.seed.to_string());
        kv.insert("out_dir", self.out_dir.display().to_string());
        kv.insert("preset", self.preset.clone());
        kv.insert("n_retrieved", t.n_retrieved.to_string());
        kv.insert("k_preferred", t.k_preferred.to_string());
        kv.insert("m_depth", t.m_depth.to_string());
        kv.insert("negatives_per_positive", t.negatives_per_positive.to_string());
        kv.insert("full_negative_sum", t.full_negative_sum.to_string());
        kv.insert(
            "refresh_every",
            match t.refresh_every {
                RefreshEvery::Epoch => "epoch".into(),
                RefreshEvery::Never => "never".into(),
                RefreshEvery::Steps(n) => n.to_string(),
            },
        );
        kv.insert("batch_size", t.batch_size.to_string());
        kv.insert("epochs", t.epochs.to_string());
        kv.insert("lr", format!("{:e}", t.adam.lr));
        kv.insert("beta1", t.adam.beta1.to_string());
        kv.insert("beta2", t.adam.beta2.to_string());
        kv.insert("eps", format!("{:e}", t.adam.eps));
        kv.insert("positive_source", positive_source_name(t.positive_source).into());
        kv.insert("template", template_name(t.template).into());
        kv.insert("max_len", t.max_len.to_string());
        kv.insert("vocab_size", self.vocab_size.to_string());
        kv.insert("embed_dim", self.embed_dim.to_string());
        kv.insert("init_idf_power", self.init_idf_power.to_string());
        match self.index_mode {
            IndexMode::Exact => {
                kv.insert("index_mode", "exact".into());
            }
            IndexMode::Ivf { n_lists, n_probe } => {
                kv.insert("index_mode", "ivf".into());
                kv.insert("n_lists", n_lists.to_string());
                kv.insert("n_probe", n_probe.to_string());
            }
        }
        kv.insert("answer_mode", answer_mode_name(self.read.mode).into());
        kv.insert("docs", self.read.docs.to_string());
        kv.insert("delete_answers", self.delete_answers.to_string());
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// [`settings`](Self::settings) as sorted `key = value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.settings() {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }
}
