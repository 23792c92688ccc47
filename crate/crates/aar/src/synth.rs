//! Planted synthetic world for end-to-end experiments.
//!
//! Every query asks for the `relation` of a made-up `entity`; the answer is a
//! two-word name. Each query owns five documents:
//!
//! * a human-labelled document stating the full answer next to
//!   `human_decoys` decoy names, followed by filler;
//! * two marker documents, each holding one word of the answer and a marker
//!   word readers are planted to attend to, but never the full answer span;
//! * two distractors that repeat the entity and relation without the answer,
//!   one of them naming the last decoy.
//!
//! The rest of the corpus is filler. Candidates are the answer plus three
//! decoys, so a reader that copies from the human document alone is torn
//! between names while the marker documents point at one.

use std::collections::{BTreeMap, BTreeSet};

use aar_core::seed::{self, Rng};
use aar_core::{Corpus, Document, QueryRecord, ReaderConfig, ReaderModel};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

const SOURCE_RELATIONS: &[&str] = &["mother", "father", "mentor", "rival", "sister", "brother", "teacher", "partner"];
const TARGET_RELATIONS: &[&str] = &["founder", "author", "inventor", "captain", "director", "composer"];
const FILLER: &[&str] = &[
    "river", "stone", "market", "winter", "garden", "letter", "harbor", "bridge", "village", "candle", "forest",
    "window", "silver", "valley", "record", "season", "engine", "orchard", "lantern", "meadow", "castle", "signal",
    "ledger", "compass", "thread", "mirror", "anchor", "pocket", "summit", "island", "velvet", "ribbon", "quarry",
    "tavern", "beacon", "canyon", "fabric", "glacier", "hollow", "journal", "kettle", "mosaic", "nectar", "oyster",
    "parcel", "quiver", "saddle", "timber", "vessel", "wagon", "banner", "cellar", "dune", "ember", "fjord", "grove",
    "hamlet", "ivory", "jasper", "kernel", "lagoon", "marble", "nickel", "onyx", "pebble", "quartz", "rafter",
    "spire", "trellis", "umber", "vista", "willow", "yarrow", "zenith", "almanac", "bramble", "cobalt", "dapple",
    "estuary", "flint", "gable", "heath", "inlet", "juniper", "knoll", "loom", "moss", "notch", "ochre", "plinth",
];
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "te", "vo", "su", "ne", "pa", "di", "go", "ba", "ri", "fe", "to", "mu", "sa", "le", "no",
    "ve", "ju", "ha", "qi", "xo", "wy", "ze", "ty", "ro", "ma", "ki", "da", "po",
];

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub source_queries: usize,
    pub target_queries: usize,
    pub corpus_size: usize,
    pub markers: Vec<String>,
    pub filler_per_doc: usize,
    /// Decoy names sharing the human document with the answer, at most 2.
    pub human_decoys: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            source_queries: 200,
            target_queries: 150,
            corpus_size: 2000,
            markers: vec!["zeta".into(), "notably".into()],
            filler_per_doc: 12,
            human_decoys: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub corpus: Corpus,
    pub source: Vec<QueryRecord>,
    pub target: Vec<QueryRecord>,
    /// Marker documents of each query, the ones a planted reader prefers.
    pub marker_docs: BTreeMap<String, BTreeSet<String>>,
}

/// Fresh made-up words, unique across the whole world.
struct Lexicon {
    used: BTreeSet<String>,
}

impl Lexicon {
    fn new() -> Self {
        let used = FILLER.iter().chain(SOURCE_RELATIONS).chain(TARGET_RELATIONS).map(|s| s.to_string()).collect();
        Self { used }
    }

    fn word(&mut self, rng: &mut Rng) -> String {
        loop {
            let n = rng.random_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn name(&mut self, rng: &mut Rng) -> String {
        format!("{} {}", self.word(rng), self.word(rng))
    }
}

fn filler(rng: &mut Rng, n: usize) -> String {
    (0..n).map(|_| *FILLER.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

struct Drafted {
    query: QueryRecord,
    docs: Vec<(String, Kind)>,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Human,
    Marker,
    Other,
}

fn draft(lex: &mut Lexicon, rng: &mut Rng, config: &WorldConfig, relations: &[&str], tag: &str, n: usize) -> Drafted {
    let entity = lex.word(rng);
    let relation = *relations.choose(rng).expect("non-empty");
    let answer = lex.name(rng);
    let decoys: Vec<String> = (0..3).map(|_| lex.name(rng)).collect();
    let (first, last) = answer.split_once(' ').expect("two-word name");
    let fill = config.filler_per_doc;
    let marker = |rng: &mut Rng| config.markers.choose(rng).expect("markers").clone();
    let linked = match config.human_decoys.min(2) {
        0 => String::new(),
        1 => format!("{} was also linked to {entity} . ", decoys[0]),
        _ => format!("{} and {} were also linked to {entity} . ", decoys[0], decoys[1]),
    };
    let docs = vec![
        (format!("{answer} is the {relation} of {entity} . {linked}{}", filler(rng, fill)), Kind::Human),
        (format!("{entity} {} {} {last} {}", filler(rng, 2), marker(rng), filler(rng, 3)), Kind::Marker),
        (format!("{entity} {} {} {first} {}", filler(rng, 2), marker(rng), filler(rng, 3)), Kind::Marker),
        (format!("the {relation} of {entity} is {} . {}", filler(rng, 2), filler(rng, fill / 2)), Kind::Other),
        (format!("{entity} {relation} {} {} {}", filler(rng, 3), decoys[2], filler(rng, fill / 2)), Kind::Other),
    ];
    let mut choices: Vec<String> = std::iter::once(answer.clone()).chain(decoys).collect();
    choices.shuffle(rng);
    let query = QueryRecord {
        id: format!("{tag}{n:04}"),
        text: format!("who is the {relation} of {entity} ?"),
        gold_answers: vec![answer],
        human_positive_ids: BTreeSet::new(),
        task_tag: tag.to_string(),
        choices,
    };
    Drafted { query, docs }
}

/// Builds the corpus and both query sets.
pub fn generate(config: &WorldConfig) -> World {
    let mut rng = seed::stage_rng(config.seed, "synth/world");
    let mut lex = Lexicon::new();
    let mut drafts: Vec<Drafted> = Vec::new();
    for i in 0..config.source_queries {
        drafts.push(draft(&mut lex, &mut rng, config, SOURCE_RELATIONS, "src", i));
    }
    for i in 0..config.target_queries {
        drafts.push(draft(&mut lex, &mut rng, config, TARGET_RELATIONS, "tgt", i));
    }
    let owned: usize = drafts.iter().map(|d| d.docs.len()).sum();
    let n_docs = config.corpus_size.max(owned);
    let mut slots: Vec<usize> = (0..n_docs).collect();
    slots.shuffle(&mut rng);
    let mut slots = slots.into_iter();
    let mut docs: Vec<Document> = Vec::with_capacity(n_docs);
    let mut marker_docs = BTreeMap::new();
    let mut queries = Vec::new();
    for mut d in drafts {
        let mut markers = BTreeSet::new();
        for (text, kind) in d.docs {
            let id = format!("doc{:05}", slots.next().expect("enough slots"));
            match kind {
                Kind::Human => {
                    d.query.human_positive_ids.insert(id.clone());
                }
                Kind::Marker => {
                    markers.insert(id.clone());
                }
                Kind::Other => {}
            }
            docs.push(Document::new(id, text));
        }
        marker_docs.insert(d.query.id.clone(), markers);
        queries.push(d.query);
    }
    for slot in slots {
        let n = config.filler_per_doc + rng.random_range(0..8);
        docs.push(Document::new(format!("doc{slot:05}"), filler(&mut rng, n)));
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let corpus = Corpus::new(docs, "synth").expect("generated ids are unique");
    let target = queries.split_off(config.source_queries);
    World { corpus, source: queries, target, marker_docs }
}

/// A reader planted to attend to the marker words with the given strength.
pub fn planted_reader(config: ReaderConfig, markers: &[String], affinity: f64) -> ReaderModel {
    let model = ReaderModel::init(config).expect("valid reader config");
    let prefs: BTreeMap<String, f64> = markers.iter().map(|m| (m.clone(), affinity)).collect();
    model.plant_preference(&prefs)
}
