//! Seeded templated-facts task.
//!
//! Every made-up entity gets one fact document:
//!
//! ```text
//! {entity} is a {adjective} {noun} . {entity} lives in {place} .
//! ```
//!
//! The language model is trained on held-out text with the same templates
//! but independently drawn pairings, so it knows the sentence shapes and
//! nothing about any particular entity. A generation prompted with an
//! entity can only state its true facts by chance, unless decoding is
//! steered by retrieved knowledge.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::knowledge::{triplets_from_text, Triplet};
use crate::lm::{LmError, NgramLm};
use crate::retriever::Document;
use crate::text::lm_tokens;

const ADJECTIVES: &[&str] = &[
    "amber", "ancient", "bright", "calm", "clever", "copper", "crimson", "distant", "dusty",
    "gentle", "golden", "green", "hollow", "humble", "icy", "quiet", "rapid", "silent",
    "silver", "velvet",
];

const NOUNS: &[&str] = &[
    "baker", "banker", "captain", "carpenter", "dancer", "doctor", "farmer", "gardener",
    "hunter", "painter", "pilot", "poet", "potter", "sailor", "singer", "smith", "tailor",
    "teacher", "weaver", "writer",
];

const PLACES: &[&str] = &[
    "arden", "belmora", "calder", "dunmore", "elmstead", "farrow", "glenhaven", "harrow",
    "ivywood", "juniper", "kestrel", "lindon", "marsh", "northby", "oakridge", "pellham",
    "quarry", "rivermouth", "stonebridge", "thornfield",
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub entities: usize,
    /// Held-out LM training documents.
    pub lm_documents: usize,
    pub lm_order: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            entities: 200,
            lm_documents: 4000,
            lm_order: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub entity: String,
    pub adjective: String,
    pub noun: String,
    pub place: String,
}

impl Fact {
    pub fn text(&self) -> String {
        fact_text(&self.entity, &self.adjective, &self.noun, &self.place)
    }
}

fn fact_text(entity: &str, adjective: &str, noun: &str, place: &str) -> String {
    format!("{entity} is a {adjective} {noun} . {entity} lives in {place} .")
}

/// One prompt of the task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticItem {
    pub context: String,
    pub gold_doc: String,
    pub reference: String,
    pub provenance: Vec<Triplet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub config: SyntheticConfig,
    pub facts: Vec<Fact>,
    pub documents: Vec<Document>,
    pub items: Vec<SyntheticItem>,
    /// Tokenized held-out LM training text.
    pub lm_corpus: Vec<Vec<String>>,
}

fn entity_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut names = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut name = String::new();
        for _ in 0..syllables {
            name.push_str(ONSETS.choose(rng).copied().unwrap_or("b"));
            name.push_str(VOWELS.choose(rng).copied().unwrap_or("a"));
        }
        name.push_str(["x", "n", "r", "l"].choose(rng).copied().unwrap_or("x"));
        let taken = ADJECTIVES.contains(&name.as_str()) || NOUNS.contains(&name.as_str()) || PLACES.contains(&name.as_str());
        if !taken && names.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, list: &[&str]) -> String {
    String::from(list[rng.gen_range(0..list.len())])
}

impl SyntheticTask {
    pub fn generate(config: SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let names = entity_names(&mut rng, config.entities);
        let facts: Vec<Fact> = names
            .iter()
            .map(|e| Fact {
                entity: e.clone(),
                adjective: pick(&mut rng, ADJECTIVES),
                noun: pick(&mut rng, NOUNS),
                place: pick(&mut rng, PLACES),
            })
            .collect();
        let documents = facts
            .iter()
            .enumerate()
            .map(|(i, f)| Document {
                id: format!("fact-{i:04}"),
                title: f.entity.clone(),
                text: f.text(),
            })
            .collect::<Vec<_>>();
        let items = facts
            .iter()
            .zip(&documents)
            .map(|(f, d)| SyntheticItem {
                context: f.entity.clone(),
                gold_doc: d.id.clone(),
                reference: d.text.clone(),
                provenance: triplets_from_text(&d.text, false),
            })
            .collect();
        let lm_corpus = (0..config.lm_documents)
            .map(|_| {
                let e = names[rng.gen_range(0..names.len())].as_str();
                let text = fact_text(e, &pick(&mut rng, ADJECTIVES), &pick(&mut rng, NOUNS), &pick(&mut rng, PLACES));
                lm_tokens(&text)
            })
            .collect();
        Self {
            config,
            facts,
            documents,
            items,
            lm_corpus,
        }
    }

    /// n-gram LM over the held-out text with the given add-k constant.
    pub fn train_lm(&self, smoothing: f64) -> Result<NgramLm, LmError> {
        NgramLm::train(&self.lm_corpus, self.config.lm_order, smoothing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{is_stopword, stem};

    #[test]
    fn word_lists_are_plain_content_words() {
        for w in ADJECTIVES.iter().chain(NOUNS).chain(PLACES) {
            assert!(!is_stopword(w), "{w}");
            assert!(!crate::knowledge::is_relation_verb(w), "{w}");
            assert_eq!(stem(&stem(w)), stem(w));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig {
            entities: 20,
            lm_documents: 50,
            ..SyntheticConfig::default()
        };
        assert_eq!(SyntheticTask::generate(cfg), SyntheticTask::generate(cfg));
        let other = SyntheticTask::generate(SyntheticConfig { seed: 1, ..cfg });
        assert_ne!(other.facts, SyntheticTask::generate(cfg).facts);
    }

    #[test]
    fn provenance_has_two_triplets() {
        let task = SyntheticTask::generate(SyntheticConfig {
            entities: 10,
            lm_documents: 10,
            ..SyntheticConfig::default()
        });
        for (item, fact) in task.items.iter().zip(&task.facts) {
            assert_eq!(
                item.provenance,
                [
                    Triplet::new([fact.entity.as_str()], ["is"], [fact.adjective.as_str(), fact.noun.as_str()]),
                    Triplet::new([fact.entity.as_str()], ["lives"], [fact.place.as_str()]),
                ]
            );
        }
    }
}
