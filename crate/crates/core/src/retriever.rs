//! Chunked corpus and top-k retrieval.
//!
//! Documents are split on whitespace into fixed-size chunks. The default
//! [`TfIdfScorer`] ranks chunks by cosine similarity of TF-IDF vectors over
//! stemmed, stopword-free terms; [`DenseScorer`] plugs in any embedding and
//! ranks by inner product.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::text::terms_of;

pub const DEFAULT_CHUNK_SIZE: usize = 100;
pub const DEFAULT_K_DOCS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("document {0:?} has empty text")]
    EmptyDocument(String),
    #[error("document id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("chunk size must be at least 1")]
    ZeroChunkSize,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query has no searchable terms")]
    DegenerateQuery,
    #[error("chunk {doc_id:?}#{chunk_index} is invalid: {reason}")]
    InvalidChunk {
        doc_id: String,
        chunk_index: usize,
        reason: &'static str,
    },
    #[error("scorer returned {got} scores for {expected} chunks")]
    ScoreCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub tokens: Vec<String>,
}

impl Chunk {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc_id: String,
    pub chunk_index: usize,
    pub score: f64,
}

/// Sparse unit-normalized TF-IDF vector, sorted by term.
type SparseVec = Vec<(String, f64)>;

/// Immutable chunk collection with its TF-IDF index.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStore {
    chunk_size: usize,
    chunks: Vec<Chunk>,
    /// Number of chunks containing each term.
    document_frequencies: BTreeMap<String, usize>,
    vectors: Vec<SparseVec>,
}

impl ChunkStore {
    /// Chunk every document into runs of at most `chunk_size` whitespace tokens.
    pub fn ingest(documents: &[Document], chunk_size: usize) -> Result<Self, RetrievalError> {
        if documents.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        if chunk_size == 0 {
            return Err(RetrievalError::ZeroChunkSize);
        }
        let mut ids = BTreeSet::new();
        let mut chunks = Vec::new();
        for doc in documents {
            if !ids.insert(doc.id.as_str()) {
                return Err(RetrievalError::DuplicateId(doc.id.clone()));
            }
            let tokens: Vec<&str> = doc.text.split_whitespace().collect();
            if tokens.is_empty() {
                return Err(RetrievalError::EmptyDocument(doc.id.clone()));
            }
            for (chunk_index, piece) in tokens.chunks(chunk_size).enumerate() {
                chunks.push(Chunk {
                    doc_id: doc.id.clone(),
                    chunk_index,
                    tokens: piece.iter().map(|t| String::from(*t)).collect(),
                });
            }
        }
        Ok(Self::index(chunk_size, chunks))
    }

    /// Rebuild a store from previously ingested chunks.
    pub fn from_chunks(chunk_size: usize, chunks: Vec<Chunk>) -> Result<Self, RetrievalError> {
        if chunk_size == 0 {
            return Err(RetrievalError::ZeroChunkSize);
        }
        if chunks.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut seen = BTreeSet::new();
        for c in &chunks {
            let bad = |reason| RetrievalError::InvalidChunk {
                doc_id: c.doc_id.clone(),
                chunk_index: c.chunk_index,
                reason,
            };
            if c.tokens.is_empty() {
                return Err(bad("no tokens"));
            }
            if c.tokens.len() > chunk_size {
                return Err(bad("longer than the chunk size"));
            }
            if !seen.insert((c.doc_id.as_str(), c.chunk_index)) {
                return Err(bad("duplicate chunk"));
            }
        }
        Ok(Self::index(chunk_size, chunks))
    }

    fn index(chunk_size: usize, chunks: Vec<Chunk>) -> Self {
        let term_counts: Vec<BTreeMap<String, usize>> = chunks.iter().map(|c| count_terms(&c.tokens)).collect();
        let mut document_frequencies: BTreeMap<String, usize> = BTreeMap::new();
        for counts in &term_counts {
            for term in counts.keys() {
                *document_frequencies.entry(term.clone()).or_default() += 1;
            }
        }
        let n = chunks.len();
        let vectors = term_counts
            .iter()
            .map(|counts| weigh(counts, &document_frequencies, n))
            .collect();
        Self {
            chunk_size,
            chunks,
            document_frequencies,
            vectors,
        }
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn document_frequencies(&self) -> &BTreeMap<String, usize> {
        &self.document_frequencies
    }

    pub fn get(&self, doc_id: &str, chunk_index: usize) -> Option<&Chunk> {
        self.chunks
            .iter()
            .find(|c| c.doc_id == doc_id && c.chunk_index == chunk_index)
    }

    /// `ln((N + 1) / (df + 1)) + 1`; unseen terms get `df = 0`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.document_frequencies.get(term).copied().unwrap_or(0);
        idf(self.chunks.len(), df)
    }

    /// Unit TF-IDF vector of arbitrary tokens against this store's statistics.
    pub fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(String, f64)> {
        weigh(&count_terms(tokens), &self.document_frequencies, self.chunks.len())
    }

    /// Top `k` chunks for `context` under `scorer`, best first, ties by
    /// `(doc_id, chunk_index)`.
    pub fn retrieve<S: AsRef<str>>(
        &self,
        context: &[S],
        k: usize,
        scorer: &dyn Scorer,
    ) -> Result<Vec<RetrievalResult>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let context: Vec<String> = context.iter().map(|s| String::from(s.as_ref())).collect();
        let scores = scorer.score_chunks(self, &context)?;
        if scores.len() != self.chunks.len() {
            return Err(RetrievalError::ScoreCount {
                expected: self.chunks.len(),
                got: scores.len(),
            });
        }
        let mut order: Vec<usize> = (0..self.chunks.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.chunks[a].doc_id.cmp(&self.chunks[b].doc_id))
                .then(self.chunks[a].chunk_index.cmp(&self.chunks[b].chunk_index))
        });
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| RetrievalResult {
                doc_id: self.chunks[i].doc_id.clone(),
                chunk_index: self.chunks[i].chunk_index,
                score: scores[i],
            })
            .collect())
    }
}

fn idf(n: usize, df: usize) -> f64 {
    math::ln((n as f64 + 1.0) / (df as f64 + 1.0)) + 1.0
}

fn count_terms<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in terms_of(tokens) {
        *counts.entry(t).or_default() += 1;
    }
    counts
}

fn weigh(counts: &BTreeMap<String, usize>, df: &BTreeMap<String, usize>, n: usize) -> SparseVec {
    let raw: SparseVec = counts
        .iter()
        .map(|(t, &c)| (t.clone(), c as f64 * idf(n, df.get(t).copied().unwrap_or(0))))
        .collect();
    let norm = math::sqrt(raw.iter().map(|(_, w)| w * w).sum());
    if norm == 0.0 {
        return raw;
    }
    raw.into_iter().map(|(t, w)| (t, w / norm)).collect()
}

fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Relevance of every chunk in a store to a context. Higher is better.
pub trait Scorer {
    /// One score per chunk, in store order.
    fn score_chunks(&self, store: &ChunkStore, context: &[String]) -> Result<Vec<f64>, RetrievalError>;
}

/// Cosine similarity of TF-IDF vectors over stemmed, stopword-free terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct TfIdfScorer;

impl Scorer for TfIdfScorer {
    fn score_chunks(&self, store: &ChunkStore, context: &[String]) -> Result<Vec<f64>, RetrievalError> {
        let mut counts = count_terms(context);
        if counts.is_empty() {
            return Err(RetrievalError::DegenerateQuery);
        }
        // terms the corpus never saw cannot match and are left out of the norm
        counts.retain(|t, _| store.document_frequencies.contains_key(t));
        let q = weigh(&counts, &store.document_frequencies, store.len());
        Ok(store.vectors.iter().map(|v| sparse_dot(&q, v)).collect())
    }
}

/// Query encoder for [`DenseScorer`].
pub type QueryEncoder = Box<dyn Fn(&[String]) -> Vec<f64> + Send + Sync>;

/// Inner product between an encoded query and precomputed chunk vectors.
pub struct DenseScorer {
    chunk_vectors: Vec<Vec<f64>>,
    encoder: QueryEncoder,
}

impl DenseScorer {
    /// `chunk_vectors[i]` embeds chunk `i` of the store it will score.
    pub fn new(chunk_vectors: Vec<Vec<f64>>, encoder: QueryEncoder) -> Self {
        Self { chunk_vectors, encoder }
    }
}

impl Scorer for DenseScorer {
    fn score_chunks(&self, store: &ChunkStore, context: &[String]) -> Result<Vec<f64>, RetrievalError> {
        if self.chunk_vectors.len() != store.len() {
            return Err(RetrievalError::ScoreCount {
                expected: store.len(),
                got: self.chunk_vectors.len(),
            });
        }
        if context.is_empty() {
            return Err(RetrievalError::DegenerateQuery);
        }
        let q = (self.encoder)(context);
        Ok(self
            .chunk_vectors
            .iter()
            .map(|v| v.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn doc(id: &str, n: usize) -> Document {
        let text: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        Document {
            id: id.into(),
            title: String::new(),
            text: text.join(" "),
        }
    }

    fn text_doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            title: String::new(),
            text: text.into(),
        }
    }

    #[test]
    fn chunk_counts() {
        let s = ChunkStore::ingest(&[doc("a", 250)], 100).unwrap();
        assert_eq!(s.chunks().iter().map(|c| c.tokens.len()).collect::<Vec<_>>(), [100, 100, 50]);
        assert_eq!(ChunkStore::ingest(&[doc("a", 100)], 100).unwrap().len(), 1);
        let three = ChunkStore::ingest(&[doc("a", 40), doc("b", 150), doc("c", 100)], 100).unwrap();
        assert_eq!(three.len(), 4);
    }

    #[test]
    fn chunks_reassemble_documents() {
        let d = doc("a", 237);
        let s = ChunkStore::ingest(core::slice::from_ref(&d), 17).unwrap();
        let joined: Vec<String> = s.chunks().iter().flat_map(|c| c.tokens.clone()).collect();
        assert_eq!(joined.join(" "), d.text);
    }

    #[test]
    fn ingest_errors() {
        assert_eq!(ChunkStore::ingest(&[], 10), Err(RetrievalError::EmptyCorpus));
        assert_eq!(
            ChunkStore::ingest(&[text_doc("x", "  ")], 10),
            Err(RetrievalError::EmptyDocument("x".into()))
        );
        assert_eq!(ChunkStore::ingest(&[doc("a", 3)], 0), Err(RetrievalError::ZeroChunkSize));
        assert_eq!(
            ChunkStore::ingest(&[doc("a", 3), doc("a", 2)], 10),
            Err(RetrievalError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn single_chunk_is_top() {
        let s = ChunkStore::ingest(&[text_doc("x", "helium is a gas")], 100).unwrap();
        let r = s.retrieve(&["gas"], 5, &TfIdfScorer).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].doc_id, "x");
        assert!(r[0].score > 0.0);
    }

    #[test]
    fn retrieve_errors() {
        let s = ChunkStore::ingest(&[text_doc("x", "helium is a gas")], 100).unwrap();
        assert_eq!(s.retrieve(&["gas"], 0, &TfIdfScorer), Err(RetrievalError::ZeroK));
        let empty: [&str; 0] = [];
        assert_eq!(s.retrieve(&empty, 1, &TfIdfScorer), Err(RetrievalError::DegenerateQuery));
        assert_eq!(s.retrieve(&["the", "of"], 1, &TfIdfScorer), Err(RetrievalError::DegenerateQuery));
    }

    #[test]
    fn ranking_and_ties() {
        let docs = [
            text_doc("b", "marijuana impairs driving"),
            text_doc("a", "marijuana impairs driving"),
            text_doc("c", "helium is a gas"),
        ];
        let s = ChunkStore::ingest(&docs, 100).unwrap();
        let r = s.retrieve(&["marijuana", "driving"], 10, &TfIdfScorer).unwrap();
        assert_eq!(r.iter().map(|x| x.doc_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(r[2].score, 0.0);
    }

    #[test]
    fn dense_hook_ranks_by_inner_product() {
        let s = ChunkStore::ingest(&[doc("a", 3), doc("b", 3)], 100).unwrap();
        let scorer = DenseScorer::new(vec![vec![1.0, 0.0], vec![0.0, 2.0]], Box::new(|_| vec![1.0, 1.0]));
        let r = s.retrieve(&["q"], 2, &scorer).unwrap();
        assert_eq!(r[0].doc_id, "b");
        assert_eq!(r[0].score, 2.0);
        let wrong = DenseScorer::new(vec![vec![1.0]], Box::new(|_| vec![1.0]));
        assert!(s.retrieve(&["q"], 1, &wrong).is_err());
    }

    #[test]
    fn from_chunks_matches_ingest() {
        let s = ChunkStore::ingest(&[doc("a", 30), text_doc("b", "marijuana slows drivers")], 8).unwrap();
        let back = ChunkStore::from_chunks(8, s.chunks().to_vec()).unwrap();
        assert_eq!(back, s);
        assert!(ChunkStore::from_chunks(2, s.chunks().to_vec()).is_err());
    }
}
