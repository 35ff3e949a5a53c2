//! Local entity memory: a bounded FIFO of recently mentioned entity stems.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::knowledge::KnowledgeTrie;
use crate::text::{is_stopword, stem};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("memory capacity must be at least 1")]
    ZeroCapacity,
    #[error("cannot push an empty entity stem")]
    EmptyStem,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalMemory {
    entries: VecDeque<String>,
    capacity: usize,
}

impl LocalMemory {
    pub fn new(capacity: usize) -> Result<Self, MemoryError> {
        if capacity == 0 {
            return Err(MemoryError::ZeroCapacity);
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    /// Memory holding the stems of the last `capacity` entity words of
    /// `context`, in order of appearance.
    pub fn from_context<S, F>(context: &[S], is_entity: F, capacity: usize) -> Result<Self, MemoryError>
    where
        S: AsRef<str>,
        F: Fn(&str) -> bool,
    {
        let mut memory = Self::new(capacity)?;
        for word in context {
            let word = word.as_ref();
            if is_entity(word) {
                let s = stem(word);
                if !s.is_empty() {
                    memory.push_stem(s);
                }
            }
        }
        Ok(memory)
    }

    /// Append a stem, evicting the oldest entry when full. Duplicates are kept.
    pub fn push(&mut self, stem: impl Into<String>) -> Result<(), MemoryError> {
        let stem = stem.into();
        if stem.is_empty() {
            return Err(MemoryError::EmptyStem);
        }
        self.push_stem(stem);
        Ok(())
    }

    fn push_stem(&mut self, stem: String) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(stem);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn snapshot(&self) -> Vec<String> {
        self.entries.iter().cloned().collect()
    }
}

/// Decides which words are entities worth remembering.
///
/// A word is an entity when its stem is a key of the trie, when it is in
/// the user lexicon, or (if the heuristic is enabled) when it is purely
/// alphabetic, not a stopword and at least three characters long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPredicate {
    pub lexicon: BTreeSet<String>,
    pub heuristic: bool,
}

impl Default for EntityPredicate {
    fn default() -> Self {
        Self {
            lexicon: BTreeSet::new(),
            heuristic: true,
        }
    }
}

impl EntityPredicate {
    pub fn trie_only() -> Self {
        Self {
            lexicon: BTreeSet::new(),
            heuristic: false,
        }
    }

    pub fn is_entity(&self, word: &str, trie: Option<&KnowledgeTrie>) -> bool {
        if word.is_empty() {
            return false;
        }
        if trie.is_some_and(|t| t.contains_word(word)) {
            return true;
        }
        if self.lexicon.contains(word) {
            return true;
        }
        self.heuristic
            && word.chars().count() >= 3
            && word.chars().all(char::is_alphabetic)
            && !is_stopword(word)
    }
}
