use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Triplet;
use crate::text::stem;

/// One object stored under a subject key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrieEntry {
    /// Object tokens, kept as words (not stems); split into single tokens at query time.
    pub value: Vec<String>,
    pub relation: Vec<String>,
    /// Keys whose stem appears in `value`, sorted.
    pub next: Vec<String>,
}

/// (value, relation) pair.
type ValueRelation = (Vec<String>, Vec<String>);

/// Stem-keyed knowledge trie with value-to-key links.
///
/// Every triplet is stored under the stem of the last subject token and,
/// as aliases, under the stem of every other subject token. A value that
/// mentions another key (by stem) links to it, which is what multi-hop
/// queries follow.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeTrie {
    entries: BTreeMap<String, Vec<TrieEntry>>,
    max_depth: BTreeMap<String, usize>,
    triplet_count: usize,
}

/// Tokens gathered per hop by a single query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryResult {
    /// `hops[i]` are the deduplicated value tokens found at hop `i + 1`.
    pub hops: Vec<Vec<String>>,
    /// Number of keys dereferenced.
    pub keys_touched: usize,
    /// Number of entries read.
    pub entries_touched: usize,
}

impl QueryResult {
    pub fn is_empty(&self) -> bool {
        self.hops.iter().all(Vec::is_empty)
    }
}

impl KnowledgeTrie {
    pub fn build(triplets: &[Triplet]) -> Self {
        let mut raw: BTreeMap<String, BTreeSet<ValueRelation>> = BTreeMap::new();
        let mut stored = 0;
        for t in triplets {
            let Some(head) = t.subj.last() else { continue };
            if t.obj.is_empty() {
                continue;
            }
            stored += 1;
            let mut keys = BTreeSet::new();
            keys.insert(stem(head));
            keys.extend(t.subj.iter().map(|w| stem(w)));
            for key in keys {
                raw.entry(key).or_default().insert((t.obj.clone(), t.rel.clone()));
            }
        }

        let mut entries: BTreeMap<String, Vec<TrieEntry>> = BTreeMap::new();
        for (key, values) in &raw {
            let list = values
                .iter()
                .map(|(value, relation)| {
                    let next: BTreeSet<String> = value
                        .iter()
                        .map(|w| stem(w))
                        .filter(|s| raw.contains_key(s))
                        .collect();
                    TrieEntry {
                        value: value.clone(),
                        relation: relation.clone(),
                        next: next.into_iter().collect(),
                    }
                })
                .collect();
            entries.insert(key.clone(), list);
        }
        let max_depth = branch_depths(&entries);
        Self {
            entries,
            max_depth,
            triplet_count: stored,
        }
    }

    /// Reassemble a trie from stored parts, checking link integrity.
    pub fn from_parts(
        entries: BTreeMap<String, Vec<TrieEntry>>,
        max_depth: BTreeMap<String, usize>,
        triplet_count: usize,
    ) -> Result<Self, TrieIntegrityError> {
        for (key, list) in &entries {
            for entry in list {
                if let Some(missing) = entry.next.iter().find(|n| !entries.contains_key(*n)) {
                    return Err(TrieIntegrityError::DanglingLink {
                        key: key.clone(),
                        next: missing.clone(),
                    });
                }
            }
            if !max_depth.contains_key(key) {
                return Err(TrieIntegrityError::MissingDepth { key: key.clone() });
            }
        }
        Ok(Self {
            entries,
            max_depth,
            triplet_count,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn key_count(&self) -> usize {
        self.entries.len()
    }

    /// Triplets accepted by [`KnowledgeTrie::build`] (before deduplication).
    pub fn triplet_count(&self) -> usize {
        self.triplet_count
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Whether the stem of `word` is a key.
    pub fn contains_word(&self, word: &str) -> bool {
        self.entries.contains_key(stem(word).as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self, key: &str) -> &[TrieEntry] {
        self.entries.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[TrieEntry])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Longest next-hop chain starting at `key`, counted in keys (a key with
    /// no links has depth 1). Absent keys have depth 0.
    pub fn max_child_depth(&self, key: &str) -> usize {
        self.max_depth.get(key).copied().unwrap_or(0)
    }

    /// Demonstrations for `word` up to `h_max` hops.
    ///
    /// The word is stemmed and looked up; hop 1 holds the tokens of every
    /// value under that key, hop `i + 1` the tokens under the keys linked
    /// from hop `i` entries. Each key is expanded at most once per query and
    /// tokens are deduplicated within a hop (first occurrence order). The
    /// walk stops early once a hop comes back empty.
    pub fn query(&self, word: &str, h_max: usize) -> QueryResult {
        let mut result = QueryResult::default();
        let key = stem(word);
        if h_max == 0 || !self.entries.contains_key(key.as_str()) {
            return result;
        }
        let mut visited: BTreeSet<&str> = BTreeSet::new();
        let mut frontier: Vec<&str> = Vec::new();
        if let Some((k, _)) = self.entries.get_key_value(key.as_str()) {
            visited.insert(k.as_str());
            frontier.push(k.as_str());
        }
        for _ in 0..h_max {
            let mut seen: BTreeSet<&str> = BTreeSet::new();
            let mut tokens: Vec<String> = Vec::new();
            let mut next_frontier: Vec<&str> = Vec::new();
            for k in &frontier {
                result.keys_touched += 1;
                for entry in self.entries(k) {
                    result.entries_touched += 1;
                    for tok in &entry.value {
                        if seen.insert(tok.as_str()) {
                            tokens.push(tok.clone());
                        }
                    }
                    for n in &entry.next {
                        if visited.insert(n.as_str()) {
                            next_frontier.push(n.as_str());
                        }
                    }
                }
            }
            if tokens.is_empty() {
                break;
            }
            result.hops.push(tokens);
            if next_frontier.is_empty() {
                break;
            }
            frontier = next_frontier;
        }
        result
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrieIntegrityError {
    #[error("entry under key {key:?} links to missing key {next:?}")]
    DanglingLink { key: String, next: String },
    #[error("key {key:?} has no recorded depth")]
    MissingDepth { key: String },
}

/// Depth-first search over value-to-key links, memoized per key. A link back
/// to a key still on the DFS stack is ignored, so cycles terminate; on
/// acyclic link structures this is the exact longest chain.
fn branch_depths(entries: &BTreeMap<String, Vec<TrieEntry>>) -> BTreeMap<String, usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Fresh,
        OnStack,
        Done(usize),
    }
    let keys: Vec<&str> = entries.keys().map(String::as_str).collect();
    let index: BTreeMap<&str, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let links: Vec<Vec<usize>> = keys
        .iter()
        .map(|k| {
            let set: BTreeSet<usize> = entries[*k]
                .iter()
                .flat_map(|e| e.next.iter())
                .filter_map(|n| index.get(n.as_str()).copied())
                .collect();
            set.into_iter().collect()
        })
        .collect();

    let mut state = alloc::vec![State::Fresh; keys.len()];
    // (node, next link position, best child depth so far)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..keys.len() {
        if state[root] != State::Fresh {
            continue;
        }
        state[root] = State::OnStack;
        stack.push((root, 0, 0));
        while let Some(top) = stack.last_mut() {
            let (node, pos, best) = *top;
            if pos < links[node].len() {
                top.1 += 1;
                let child = links[node][pos];
                match state[child] {
                    State::Fresh => {
                        state[child] = State::OnStack;
                        stack.push((child, 0, 0));
                    }
                    State::Done(d) => top.2 = best.max(d),
                    State::OnStack => {}
                }
            } else {
                let depth = best + 1;
                state[node] = State::Done(depth);
                stack.pop();
                if let Some(parent) = stack.last_mut() {
                    parent.2 = parent.2.max(depth);
                }
            }
        }
    }
    keys.iter()
        .zip(state)
        .map(|(k, s)| {
            let d = match s {
                State::Done(d) => d,
                _ => 0,
            };
            (String::from(*k), d)
        })
        .collect()
}
