//! Context in, knowledge trie out: retrieve, normalize, extract, build.

use alloc::string::String;
use alloc::vec::Vec;

use crate::knowledge::{triplets_from_text, KnowledgeTrie, Triplet};
use crate::retriever::{ChunkStore, RetrievalError, RetrievalResult, Scorer};
use crate::text::lm_tokens;

/// Everything retrieved for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextKnowledge {
    pub retrieved: Vec<RetrievalResult>,
    pub triplets: Vec<Triplet>,
    pub trie: KnowledgeTrie,
}

/// Retrieve the top `k` chunks for `context`, extract triplets from each
/// chunk and build their trie.
pub fn knowledge_for_context(
    store: &ChunkStore,
    context: &str,
    k: usize,
    scorer: &dyn Scorer,
    resolve_pronouns: bool,
) -> Result<ContextKnowledge, RetrievalError> {
    let query: Vec<String> = lm_tokens(context);
    let retrieved = store.retrieve(&query, k, scorer)?;
    let mut triplets = Vec::new();
    for r in &retrieved {
        if let Some(chunk) = store.get(&r.doc_id, r.chunk_index) {
            triplets.extend(triplets_from_text(&chunk.text(), resolve_pronouns));
        }
    }
    let trie = KnowledgeTrie::build(&triplets);
    Ok(ContextKnowledge {
        retrieved,
        triplets,
        trie,
    })
}
