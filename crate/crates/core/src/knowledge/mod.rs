//! From retrieved text to a queryable knowledge trie.
//!
//! [`normalize_text`] cleans raw passages (links, markup, case) and can
//! optionally replace pronouns by the nearest preceding subject.
//! [`extract_triplets`] turns normalized text into subject / relation /
//! object triplets with a fixed verb-pattern list, and [`KnowledgeTrie`]
//! indexes the triplets by subject stem with multi-hop links.

mod extract;
mod normalize;
mod trie;

pub use extract::{extract_triplets, is_relation_verb, Triplet};
pub use normalize::normalize_text;
pub use trie::{KnowledgeTrie, QueryResult, TrieEntry, TrieIntegrityError};

/// Normalize and extract in one go.
pub fn triplets_from_text(raw: &str, resolve_pronouns: bool) -> alloc::vec::Vec<Triplet> {
    extract_triplets(&normalize_text(raw, resolve_pronouns))
}
