//! Knowledge-infused decoding.
//!
//! At every generation step the decoder queries a knowledge trie built from
//! retrieved documents, seeded by a small FIFO memory of recent entities, and
//! reshapes the language model's next-token distribution towards the
//! retrieved tokens with a KL-regularized policy update.
//!
//! The crate is `no_std` compatible (it needs `alloc`). File formats, the
//! remote LM client and the command-line tools live in the `kid` crate.
//!
//! Module map:
//!
//! * [`text`]: tokenization, stopwords and the stemmer shared by every stage.
//! * [`retriever`]: chunking and top-k retrieval behind a [`retriever::Scorer`].
//! * [`knowledge`]: text normalization, triplet extraction and the knowledge trie.
//! * [`memory`]: the bounded local entity memory.
//! * [`lm`]: vocabularies, the policy-provider contract and built-in LMs.
//! * [`policy`]: knowledge gain, KL, the guided policy update and β adaptation.
//! * [`sampling`]: top-p / top-k truncated sampling.
//! * [`decoder`]: the guided generation loop plus greedy, sampling and beam baselines.
//! * [`metrics`]: BLEU-1, ROUGE-L, unigram F1, coverage and precision@1.
//! * [`synthetic`]: a seeded templated-facts task for benchmarking.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod decoder;
pub mod knowledge;
pub mod lm;
pub mod math;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod retriever;
pub mod sampling;
pub mod synthetic;
pub mod text;

pub use decoder::{DecodingConfig, DecodingSession, GenerationResult, StepDiagnostics};
pub use knowledge::{KnowledgeTrie, Triplet};
pub use lm::{NgramLm, PolicyDistribution, PolicyProvider, TokenId, UniformLm, Vocabulary};
pub use memory::{EntityPredicate, LocalMemory};
pub use policy::{DemonstrationSet, Estimator, GuidanceConfig, StepOutcome};
pub use retriever::{ChunkStore, Document, RetrievalResult};
