//! Generation loops.
//!
//! [`DecodingSession::decode_kid`] runs knowledge-guided decoding: at every
//! step the trie is queried with each local-memory entity, the retrieved
//! value words become per-hop demonstration ids, [`guide_step`] reshapes
//! the LM policy towards them, a token is sampled from the reshaped policy
//! and the memory is updated when that token is an entity. β carries over
//! between steps and restarts at `beta_init` for every call.
//!
//! The baselines share the same provider, prefix handling and stopping rule:
//! [`DecodingSession::decode_sampling`] (top-p then top-k),
//! [`DecodingSession::decode_greedy`] and [`DecodingSession::decode_beam`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::knowledge::KnowledgeTrie;
use crate::lm::{LmError, PolicyDistribution, PolicyProvider, TokenId};
use crate::memory::{EntityPredicate, LocalMemory, MemoryError};
use crate::policy::{guide_step, DemonstrationSet, GuidanceConfig, PolicyError};
use crate::sampling::sample_from;
use crate::text::{stem, words};

pub const DEFAULT_H_MAX: usize = 4;
pub const DEFAULT_MAX_LENGTH: usize = 128;
pub const DEFAULT_TOP_P: f64 = 0.9;
pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_BEAM_SIZE: usize = 4;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    /// Hops per trie query.
    pub h_max: usize,
    /// Local memory capacity.
    pub w_max: usize,
    /// Retrieved chunks per context (used by pipelines that build the trie).
    pub k_docs: usize,
    /// Maximum generated tokens L, EOS included.
    pub max_length: usize,
    pub top_p: f64,
    /// 0 disables top-k.
    pub top_k: usize,
    pub beam_size: usize,
    pub seed: u64,
    pub guidance: GuidanceConfig,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            h_max: DEFAULT_H_MAX,
            w_max: DEFAULT_H_MAX,
            k_docs: crate::retriever::DEFAULT_K_DOCS,
            max_length: DEFAULT_MAX_LENGTH,
            top_p: DEFAULT_TOP_P,
            top_k: DEFAULT_TOP_K,
            beam_size: DEFAULT_BEAM_SIZE,
            seed: DEFAULT_SEED,
            guidance: GuidanceConfig::default(),
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.max_length == 0 {
            return Err(DecoderError::Config("max_length must be at least 1"));
        }
        if self.w_max == 0 {
            return Err(DecoderError::Config("w_max must be at least 1"));
        }
        if self.k_docs == 0 {
            return Err(DecoderError::Config("k_docs must be at least 1"));
        }
        if self.beam_size == 0 {
            return Err(DecoderError::Config("beam_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(DecoderError::Config("top_p must lie in [0, 1]"));
        }
        if self.top_p == 0.0 && self.top_k == 0 {
            return Err(DecoderError::Config("top_p = 0 with top_k = 0 leaves no tokens"));
        }
        self.guidance.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecoderError {
    #[error("invalid decoding config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("language model failed before generation: {0}")]
    Lm(#[from] LmError),
}

/// What happened at one generation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub token: TokenId,
    /// Memory at the start of the step, oldest first.
    pub memory: Vec<String>,
    /// Demonstration ids per hop.
    pub demonstrations: Vec<Vec<TokenId>>,
    /// Demonstration words with no usable vocabulary id.
    pub unmapped: usize,
    pub kl: f64,
    pub beta: f64,
    pub beta_next: f64,
    pub knowledge_gain: f64,
    pub demo_mass_before: f64,
    pub demo_mass_after: f64,
    /// (memory entity, hop) levels expanded; at most `|memory| * h_max`.
    pub hop_expansions: usize,
    pub keys_touched: usize,
    /// The sampled token was an entity and was pushed to memory.
    pub entity_pushed: bool,
    /// The policy update hit a non-finite value and was skipped.
    pub aborted: bool,
    /// Truncation removed every token and the argmax was taken.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub steps: Vec<StepDiagnostics>,
    /// Set when the LM failed mid-generation; `tokens` holds what was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<LmError>,
}

/// A decoder bound to one LM, one knowledge trie and one entity predicate.
pub struct DecodingSession<'a> {
    provider: &'a dyn PolicyProvider,
    trie: &'a KnowledgeTrie,
    predicate: EntityPredicate,
}

/// Per-call memo of provider round trips.
#[derive(Default)]
struct Cache {
    words: BTreeMap<TokenId, String>,
    ids: BTreeMap<String, Option<TokenId>>,
}

impl<'a> DecodingSession<'a> {
    pub fn new(provider: &'a dyn PolicyProvider, trie: &'a KnowledgeTrie, predicate: EntityPredicate) -> Self {
        Self {
            provider,
            trie,
            predicate,
        }
    }

    pub fn provider(&self) -> &'a dyn PolicyProvider {
        self.provider
    }

    pub fn trie(&self) -> &'a KnowledgeTrie {
        self.trie
    }

    pub fn predicate(&self) -> &EntityPredicate {
        &self.predicate
    }

    /// Knowledge-guided decoding.
    pub fn decode_kid(&self, context: &[TokenId], cfg: &DecodingConfig) -> Result<GenerationResult, DecoderError> {
        self.run(context, cfg, true)
    }

    /// Top-p / top-k ancestral sampling without guidance.
    pub fn decode_sampling(&self, context: &[TokenId], cfg: &DecodingConfig) -> Result<GenerationResult, DecoderError> {
        self.run(context, cfg, false)
    }

    fn next(&self, prefix: &[TokenId]) -> Result<PolicyDistribution, LmError> {
        let pi = self.provider.next_distribution(prefix)?;
        let expected = self.provider.vocabulary().len();
        if pi.len() != expected {
            return Err(LmError::LogitLength {
                expected,
                got: pi.len(),
            });
        }
        Ok(pi)
    }

    /// Lowercased surface form of a token.
    fn word(&self, cache: &mut Cache, id: TokenId) -> Result<String, LmError> {
        if let Some(w) = cache.words.get(&id) {
            return Ok(w.clone());
        }
        let w = self.provider.decode(&[id])?.trim().to_lowercase();
        cache.words.insert(id, w.clone());
        Ok(w)
    }

    /// First id of the encoded word, unless it encodes to nothing or to UNK.
    fn demo_id(&self, cache: &mut Cache, word: &str) -> Result<Option<TokenId>, LmError> {
        if let Some(id) = cache.ids.get(word) {
            return Ok(*id);
        }
        let unk = self.provider.vocabulary().unk();
        let id = self.provider.encode(word)?.first().copied().filter(|&i| i != unk);
        cache.ids.insert(String::from(word), id);
        Ok(id)
    }

    /// Stems of the entity words inside token `id`.
    fn entity_stems(&self, cache: &mut Cache, id: TokenId) -> Result<Vec<String>, LmError> {
        if self.provider.vocabulary().is_special(id) {
            return Ok(Vec::new());
        }
        let surface = self.word(cache, id)?;
        Ok(words(&surface)
            .into_iter()
            .filter(|w| self.predicate.is_entity(w, Some(self.trie)))
            .map(|w| stem(&w))
            .filter(|s| !s.is_empty())
            .collect())
    }

    fn initial_memory(&self, cache: &mut Cache, context: &[TokenId], w_max: usize) -> Result<LocalMemory, DecoderError> {
        let mut memory = LocalMemory::new(w_max)?;
        for &id in context {
            for s in self.entity_stems(cache, id)? {
                memory.push(s)?;
            }
        }
        Ok(memory)
    }

    /// Per-hop demonstration ids for the current memory.
    fn demonstrations(
        &self,
        cache: &mut Cache,
        memory: &LocalMemory,
        h_max: usize,
    ) -> Result<(DemonstrationSet, usize, usize, usize), LmError> {
        let mut hops: Vec<Vec<String>> = Vec::new();
        let mut seen: Vec<BTreeSet<String>> = Vec::new();
        let (mut expansions, mut keys) = (0, 0);
        let mut queried = BTreeSet::new();
        for entity in memory.iter() {
            if !queried.insert(entity) {
                continue;
            }
            let r = self.trie.query(entity, h_max);
            expansions += r.hops.len();
            keys += r.keys_touched;
            for (i, hop) in r.hops.into_iter().enumerate() {
                if hops.len() <= i {
                    hops.push(Vec::new());
                    seen.push(BTreeSet::new());
                }
                for w in hop {
                    if seen[i].insert(w.clone()) {
                        hops[i].push(w);
                    }
                }
            }
        }
        let mut unmapped = 0;
        let mut id_hops = Vec::with_capacity(hops.len());
        for hop in &hops {
            let mut ids = Vec::new();
            for w in hop {
                match self.demo_id(cache, w)? {
                    Some(id) => ids.push(id),
                    None => unmapped += 1,
                }
            }
            id_hops.push(ids);
        }
        Ok((DemonstrationSet::new(id_hops), unmapped, expansions, keys))
    }

    fn finish(&self, tokens: Vec<TokenId>, steps: Vec<StepDiagnostics>, mut error: Option<LmError>) -> GenerationResult {
        let text = match self.provider.decode(&tokens) {
            Ok(t) => t,
            Err(e) => {
                error.get_or_insert(e);
                String::new()
            }
        };
        GenerationResult {
            tokens,
            text,
            steps,
            error,
        }
    }

    fn run(&self, context: &[TokenId], cfg: &DecodingConfig, guided: bool) -> Result<GenerationResult, DecoderError> {
        cfg.validate()?;
        let mut cache = Cache::default();
        let mut memory = self.initial_memory(&mut cache, context, cfg.w_max)?;
        let eos = self.provider.vocabulary().eos();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut mc_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        mc_rng.set_stream(1);
        let mut beta = cfg.guidance.beta_init;
        let mut prefix: Vec<TokenId> = context.to_vec();
        let mut tokens = Vec::new();
        let mut steps = Vec::new();

        while tokens.len() < cfg.max_length {
            let base = match self.next(&prefix) {
                Ok(pi) => pi,
                Err(e) => return Ok(self.finish(tokens, steps, Some(e))),
            };
            let mut diag = StepDiagnostics {
                step: tokens.len(),
                token: 0,
                memory: memory.snapshot(),
                demonstrations: Vec::new(),
                unmapped: 0,
                kl: 0.0,
                beta,
                beta_next: beta,
                knowledge_gain: 0.0,
                demo_mass_before: 0.0,
                demo_mass_after: 0.0,
                hop_expansions: 0,
                keys_touched: 0,
                entity_pushed: false,
                aborted: false,
                fallback: false,
            };
            let policy = if guided {
                let (demos, unmapped, expansions, keys) = match self.demonstrations(&mut cache, &memory, cfg.h_max) {
                    Ok(d) => d,
                    Err(e) => return Ok(self.finish(tokens, steps, Some(e))),
                };
                let out = guide_step(&base, &demos, &cfg.guidance, beta, &mut mc_rng)?;
                diag.demonstrations = demos.hops().to_vec();
                diag.unmapped = unmapped;
                diag.hop_expansions = expansions;
                diag.keys_touched = keys;
                diag.kl = out.kl;
                diag.beta_next = out.beta_next;
                diag.knowledge_gain = out.knowledge_gain;
                diag.demo_mass_before = out.demo_mass_before;
                diag.demo_mass_after = out.demo_mass_after;
                diag.aborted = out.aborted;
                beta = out.beta_next;
                out.updated
            } else {
                base
            };
            let s = sample_from(&policy, cfg.top_p, cfg.top_k, &mut rng);
            diag.token = s.token;
            diag.fallback = s.fallback;
            tokens.push(s.token);
            prefix.push(s.token);
            if s.token == eos {
                steps.push(diag);
                break;
            }
            match self.entity_stems(&mut cache, s.token) {
                Ok(stems) => {
                    diag.entity_pushed = !stems.is_empty();
                    for st in stems {
                        memory.push(st)?;
                    }
                }
                Err(e) => {
                    steps.push(diag);
                    return Ok(self.finish(tokens, steps, Some(e)));
                }
            }
            steps.push(diag);
        }
        Ok(self.finish(tokens, steps, None))
    }

    /// Argmax at every step (lowest id on ties).
    pub fn decode_greedy(&self, context: &[TokenId], cfg: &DecodingConfig) -> Result<GenerationResult, DecoderError> {
        cfg.validate()?;
        let eos = self.provider.vocabulary().eos();
        let mut prefix = context.to_vec();
        let mut tokens = Vec::new();
        while tokens.len() < cfg.max_length {
            let pi = match self.next(&prefix) {
                Ok(pi) => pi,
                Err(e) => return Ok(self.finish(tokens, Vec::new(), Some(e))),
            };
            let t = pi.argmax().unwrap_or(eos);
            tokens.push(t);
            prefix.push(t);
            if t == eos {
                break;
            }
        }
        Ok(self.finish(tokens, Vec::new(), None))
    }

    /// Beam search over cumulative log-probability.
    ///
    /// Each step extends every live hypothesis by every token except BOS and
    /// keeps the `beam_size` best by cumulative log-probability (stable:
    /// earlier hypotheses, then lower ids, win ties). Hypotheses ending in
    /// EOS, and all live ones once `max_length` is reached, are finished and
    /// scored by log-probability divided by length; the best finished one is
    /// returned.
    pub fn decode_beam(&self, context: &[TokenId], cfg: &DecodingConfig) -> Result<GenerationResult, DecoderError> {
        cfg.validate()?;
        let vocab = self.provider.vocabulary();
        let (eos, bos) = (vocab.eos(), vocab.bos());
        let mut live: Vec<(Vec<TokenId>, f64)> = alloc::vec![(Vec::new(), 0.0)];
        let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();
        for depth in 0..cfg.max_length {
            let mut candidates: Vec<(usize, TokenId, f64)> = Vec::new();
            for (h, (toks, score)) in live.iter().enumerate() {
                let mut prefix = context.to_vec();
                prefix.extend_from_slice(toks);
                let lp = match self.next(&prefix) {
                    Ok(pi) => pi.log_probs(),
                    Err(e) => {
                        let best = live.into_iter().next().map(|x| x.0).unwrap_or_default();
                        return Ok(self.finish(best, Vec::new(), Some(e)));
                    }
                };
                for (t, &l) in lp.iter().enumerate() {
                    if t as TokenId != bos && l.is_finite() {
                        candidates.push((h, t as TokenId, score + l));
                    }
                }
            }
            candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
            candidates.truncate(cfg.beam_size);
            let last = depth + 1 == cfg.max_length;
            let mut next_live = Vec::new();
            for (h, t, score) in candidates {
                let mut toks = live[h].0.clone();
                toks.push(t);
                if t == eos || last {
                    finished.push((toks, score));
                } else {
                    next_live.push((toks, score));
                }
            }
            live = next_live;
            if live.is_empty() {
                break;
            }
        }
        let mut best: Option<(Vec<TokenId>, f64)> = None;
        for (toks, score) in finished {
            let norm = score / toks.len() as f64;
            if best.as_ref().is_none_or(|b| norm > b.1) {
                best = Some((toks, norm));
            }
        }
        Ok(self.finish(best.map(|b| b.0).unwrap_or_default(), Vec::new(), None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::Triplet;
    use crate::lm::{NgramLm, UniformLm, Vocabulary};
    use alloc::vec;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    fn helium_lm() -> NgramLm {
        NgramLm::train(&corpus(&["helium is gas", "helium is solid"]), 3, 0.01).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DecodingConfig::default().validate().is_ok());
        let bad = DecodingConfig {
            max_length: 0,
            ..DecodingConfig::default()
        };
        assert!(bad.validate().is_err());
        let none = DecodingConfig {
            top_p: 0.0,
            top_k: 0,
            ..DecodingConfig::default()
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn defaults() {
        let d = DecodingConfig::default();
        assert_eq!((d.h_max, d.w_max, d.k_docs, d.max_length), (4, 4, 5, 128));
        assert_eq!((d.top_p, d.top_k), (0.9, 20));
    }

    #[test]
    fn empty_trie_matches_sampling() {
        let lm = helium_lm();
        let trie = KnowledgeTrie::default();
        let session = DecodingSession::new(&lm, &trie, EntityPredicate::default());
        let ctx = lm.encode("helium").unwrap();
        for seed in 0..10 {
            let cfg = DecodingConfig {
                seed,
                top_p: 1.0,
                top_k: 0,
                ..DecodingConfig::default()
            };
            let a = session.decode_kid(&ctx, &cfg).unwrap();
            let b = session.decode_sampling(&ctx, &cfg).unwrap();
            assert_eq!(a.tokens, b.tokens);
        }
    }

    #[test]
    fn trie_breaks_symmetric_tie() {
        let lm = helium_lm();
        let trie = KnowledgeTrie::build(&[Triplet::new(["helium"], ["is"], ["gas"])]);
        let session = DecodingSession::new(&lm, &trie, EntityPredicate::default());
        let ctx = lm.encode("helium is").unwrap();
        let gas = lm.vocabulary().id("gas").unwrap();
        let hits = (0..100)
            .filter(|&seed| {
                let cfg = DecodingConfig {
                    seed,
                    max_length: 1,
                    ..DecodingConfig::default()
                };
                session.decode_kid(&ctx, &cfg).unwrap().tokens == [gas]
            })
            .count();
        assert!(hits > 90, "{hits}");
    }

    #[test]
    fn stops_at_eos_and_length() {
        let lm = helium_lm();
        let trie = KnowledgeTrie::default();
        let session = DecodingSession::new(&lm, &trie, EntityPredicate::default());
        let g = session.decode_greedy(&[], &DecodingConfig::default()).unwrap();
        assert_eq!(g.text, "helium is gas");
        assert_eq!(g.tokens.last(), Some(&lm.vocabulary().eos()));
        let short = DecodingConfig {
            max_length: 2,
            ..DecodingConfig::default()
        };
        assert_eq!(session.decode_sampling(&[], &short).unwrap().tokens.len(), 2);
    }

    #[test]
    fn beam_one_is_greedy() {
        let lm = NgramLm::train(&corpus(&["a b c", "a c b", "b a c", "a b b"]), 2, 0.5).unwrap();
        let trie = KnowledgeTrie::default();
        let session = DecodingSession::new(&lm, &trie, EntityPredicate::default());
        let cfg = DecodingConfig {
            beam_size: 1,
            max_length: 6,
            ..DecodingConfig::default()
        };
        for ctx in [vec![], lm.encode("a").unwrap(), lm.encode("b c").unwrap()] {
            assert_eq!(
                session.decode_beam(&ctx, &cfg).unwrap().tokens,
                session.decode_greedy(&ctx, &cfg).unwrap().tokens
            );
        }
    }

    #[test]
    fn memory_updates_only_on_entities() {
        let lm = NgramLm::train(&corpus(&["the helium is a gas", "a gas is the helium"]), 2, 0.1).unwrap();
        let trie = KnowledgeTrie::build(&[Triplet::new(["helium"], ["is"], ["gas"])]);
        let session = DecodingSession::new(&lm, &trie, EntityPredicate::trie_only());
        let cfg = DecodingConfig {
            top_p: 1.0,
            top_k: 0,
            max_length: 30,
            ..DecodingConfig::default()
        };
        for seed in 0..20 {
            let r = session.decode_kid(&[], &DecodingConfig { seed, ..cfg }).unwrap();
            for w in r.steps.windows(2) {
                let word = lm.vocabulary().token(w[0].token).unwrap();
                assert_eq!(w[0].entity_pushed, word == "helium");
                if !w[0].entity_pushed {
                    assert_eq!(w[0].memory, w[1].memory);
                }
            }
            for s in &r.steps {
                assert!(s.hop_expansions <= s.memory.len() * cfg.h_max);
            }
        }
    }

    #[test]
    fn unmapped_demonstrations_are_counted() {
        let vocab = Vocabulary::from_words(["helium"]);
        let lm = UniformLm::new(vocab);
        let trie = KnowledgeTrie::build(&[Triplet::new(["helium"], ["is"], ["argon", "helium"])]);
        let session = DecodingSession::new(&lm, &trie, EntityPredicate::default());
        let ctx = lm.encode("helium").unwrap();
        let cfg = DecodingConfig {
            max_length: 1,
            ..DecodingConfig::default()
        };
        let r = session.decode_kid(&ctx, &cfg).unwrap();
        assert_eq!(r.steps[0].unmapped, 1);
        assert_eq!(r.steps[0].demonstrations, [vec![lm.vocabulary().id("helium").unwrap()]]);
    }

    struct Failing(NgramLm);

    impl PolicyProvider for Failing {
        fn vocabulary(&self) -> &Vocabulary {
            self.0.vocabulary()
        }
        fn next_distribution(&self, prefix: &[TokenId]) -> Result<PolicyDistribution, LmError> {
            if prefix.len() >= 2 {
                return Err(LmError::Unavailable("gone".into()));
            }
            self.0.next_distribution(prefix)
        }
    }

    #[test]
    fn lm_failure_returns_partial_result() {
        let lm = Failing(helium_lm());
        let trie = KnowledgeTrie::default();
        let session = DecodingSession::new(&lm, &trie, EntityPredicate::default());
        let r = session.decode_kid(&[], &DecodingConfig::default()).unwrap();
        assert_eq!(r.tokens.len(), 2);
        assert_eq!(r.error, Some(LmError::Unavailable("gone".into())));
    }
}
