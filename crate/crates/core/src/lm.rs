//! Policy providers: anything that maps a token prefix to next-token logits.
//!
//! Built in are an add-k smoothed word n-gram model and a uniform model.
//! Remote neural models speak the newline-delimited JSON protocol handled
//! by the `kid` crate and implement the same [`PolicyProvider`] trait.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::text::lm_tokens;

pub type TokenId = u32;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Logit given to tokens outside a model's support (BOS for the n-gram
/// model). Finite, but its probability underflows to exactly zero.
pub const EXCLUDED_LOGIT: f64 = -1.0e9;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum LmError {
    #[error("token id {id} is outside the vocabulary of size {size}")]
    InvalidToken { id: TokenId, size: usize },
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("n-gram order {0} is outside 2..=5")]
    InvalidOrder(usize),
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("provider returned {got} logits for a vocabulary of {expected}")]
    LogitLength { expected: usize, got: usize },
    #[error("provider returned a non-finite logit at index {0}")]
    NonFinite(usize),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Bijective token <-> id map with reserved BOS / EOS / UNK entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "VocabularyRepr", try_from = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
    unk: TokenId,
}

impl Vocabulary {
    /// Reserved tokens take ids 0, 1, 2; the distinct words follow in sorted order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut sorted: alloc::collections::BTreeSet<String> = alloc::collections::BTreeSet::new();
        for w in words {
            let w = w.as_ref();
            if w != BOS_TOKEN && w != EOS_TOKEN && w != UNK_TOKEN {
                sorted.insert(w.to_string());
            }
        }
        let mut tokens = alloc::vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(sorted);
        // reserved ids are fixed and words are distinct
        Self::new(tokens, 0, 1, 2).expect("well-formed vocabulary")
    }

    /// Vocabulary from an explicit token list, as announced by a remote provider.
    pub fn new(tokens: Vec<String>, bos: TokenId, eos: TokenId, unk: TokenId) -> Result<Self, LmError> {
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(LmError::InvalidVocabulary(alloc::format!("duplicate token {t:?}")));
            }
        }
        let size = tokens.len();
        for (name, id) in [("bos", bos), ("eos", eos), ("unk", unk)] {
            if id as usize >= size {
                return Err(LmError::InvalidVocabulary(alloc::format!("{name} id {id} out of range")));
            }
        }
        if bos == eos || bos == unk || eos == unk {
            return Err(LmError::InvalidVocabulary("reserved ids must be distinct".into()));
        }
        Ok(Self {
            tokens,
            ids,
            bos,
            eos,
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.bos || id == self.eos || id == self.unk
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn check(&self, id: TokenId) -> Result<(), LmError> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(LmError::InvalidToken {
                id,
                size: self.tokens.len(),
            })
        }
    }

    /// Word-level encoding; out-of-vocabulary words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        lm_tokens(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(self.unk))
            .collect()
    }

    /// Space-joined tokens. BOS and EOS are skipped, UNK is rendered as `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == self.bos || id == self.eos {
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    bos: TokenId,
    eos: TokenId,
    unk: TokenId,
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            tokens: v.tokens,
            bos: v.bos,
            eos: v.eos,
            unk: v.unk,
        }
    }
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = LmError;

    fn try_from(r: VocabularyRepr) -> Result<Self, LmError> {
        Vocabulary::new(r.tokens, r.bos, r.eos, r.unk)
    }
}

/// A next-token policy: one logit per vocabulary entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistribution {
    logits: Vec<f64>,
}

impl PolicyDistribution {
    pub fn new(logits: Vec<f64>) -> Result<Self, LmError> {
        if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
            return Err(LmError::NonFinite(i));
        }
        Ok(Self { logits })
    }

    /// Uniform policy over `size` tokens.
    pub fn uniform(size: usize) -> Self {
        Self {
            logits: alloc::vec![0.0; size],
        }
    }

    /// Policy whose softmax equals `probs` (zeros map to [`EXCLUDED_LOGIT`]).
    pub fn from_probs(probs: &[f64]) -> Self {
        Self {
            logits: probs
                .iter()
                .map(|&p| if p > 0.0 { math::ln(p) } else { EXCLUDED_LOGIT })
                .collect(),
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn into_logits(self) -> Vec<f64> {
        self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        math::softmax(&self.logits)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        math::log_softmax(&self.logits)
    }

    pub fn argmax(&self) -> Option<TokenId> {
        math::argmax(&self.logits).map(|i| i as TokenId)
    }
}

/// Prefix in, next-token distribution out.
///
/// Implementations must be deterministic for a fixed internal state.
pub trait PolicyProvider {
    fn vocabulary(&self) -> &Vocabulary;

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<PolicyDistribution, LmError>;

    fn encode(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        Ok(self.vocabulary().encode(text))
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, LmError> {
        Ok(self.vocabulary().decode(ids))
    }
}

impl<P: PolicyProvider + ?Sized> PolicyProvider for &P {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }
    fn next_distribution(&self, prefix: &[TokenId]) -> Result<PolicyDistribution, LmError> {
        (**self).next_distribution(prefix)
    }
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        (**self).encode(text)
    }
    fn decode(&self, ids: &[TokenId]) -> Result<String, LmError> {
        (**self).decode(ids)
    }
}

/// Every token equally likely.
#[derive(Debug, Clone)]
pub struct UniformLm {
    vocab: Vocabulary,
}

impl UniformLm {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl PolicyProvider for UniformLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<PolicyDistribution, LmError> {
        for &id in prefix {
            self.vocab.check(id)?;
        }
        Ok(PolicyDistribution::uniform(self.vocab.len()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

/// Word n-gram model with add-k smoothing and no backoff.
///
/// `P(w | h) = (c(h, w) + k) / (c(h) + k * |V'|)` where `h` is the previous
/// `order - 1` tokens (BOS-padded) and `V'` is the vocabulary without BOS,
/// which is never predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramLm {
    vocab: Vocabulary,
    order: usize,
    k: f64,
    counts: BTreeMap<Vec<TokenId>, ContextCounts>,
}

/// Default add-k constant.
pub const DEFAULT_SMOOTHING: f64 = 0.01;

impl NgramLm {
    /// Train on pre-tokenized sentences; each is wrapped in BOS padding and EOS.
    pub fn train<S: AsRef<str>>(corpus: &[Vec<S>], order: usize, k: f64) -> Result<Self, LmError> {
        if corpus.iter().all(Vec::is_empty) {
            return Err(LmError::EmptyCorpus);
        }
        let vocab = Vocabulary::from_words(corpus.iter().flatten().map(|s| s.as_ref()));
        Self::train_with_vocab(corpus, vocab, order, k)
    }

    /// Train over a fixed vocabulary; words outside it count as UNK.
    pub fn train_with_vocab<S: AsRef<str>>(
        corpus: &[Vec<S>],
        vocab: Vocabulary,
        order: usize,
        k: f64,
    ) -> Result<Self, LmError> {
        if !(2..=5).contains(&order) {
            return Err(LmError::InvalidOrder(order));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(LmError::InvalidSmoothing(k));
        }
        if corpus.iter().all(Vec::is_empty) {
            return Err(LmError::EmptyCorpus);
        }
        let mut counts: BTreeMap<Vec<TokenId>, ContextCounts> = BTreeMap::new();
        for sentence in corpus.iter().filter(|s| !s.is_empty()) {
            let mut seq: Vec<TokenId> = alloc::vec![vocab.bos(); order - 1];
            seq.extend(sentence.iter().map(|w| vocab.id(w.as_ref()).unwrap_or(vocab.unk())));
            seq.push(vocab.eos());
            for window in seq.windows(order) {
                let (ctx, next) = window.split_at(order - 1);
                let entry = counts.entry(ctx.to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(next[0]).or_default() += 1;
            }
        }
        Ok(Self { vocab, order, k, counts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    fn context(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let n = self.order - 1;
        let mut ctx = alloc::vec![self.vocab.bos(); n.saturating_sub(prefix.len())];
        ctx.extend_from_slice(&prefix[prefix.len().saturating_sub(n)..]);
        ctx
    }

    /// `P(next | prefix)` under the smoothed model.
    pub fn probability(&self, prefix: &[TokenId], next: TokenId) -> f64 {
        if next == self.vocab.bos() {
            return 0.0;
        }
        let support = (self.vocab.len() - 1) as f64;
        let ctx = self.context(prefix);
        let (total, count) = match self.counts.get(&ctx) {
            Some(c) => (c.total, c.next.get(&next).copied().unwrap_or(0)),
            None => (0, 0),
        };
        (count as f64 + self.k) / (total as f64 + self.k * support)
    }

    /// Per-token perplexity of held-out sentences (EOS included, BOS not).
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> f64 {
        let mut log_sum = 0.0;
        let mut n = 0usize;
        for s in sentences {
            let mut prefix: Vec<TokenId> = Vec::new();
            let ids = s
                .iter()
                .map(|w| self.vocab.id(w.as_ref()).unwrap_or(self.vocab.unk()))
                .chain(core::iter::once(self.vocab.eos()));
            for id in ids {
                log_sum += math::ln(self.probability(&prefix, id));
                n += 1;
                prefix.push(id);
            }
        }
        if n == 0 {
            return 1.0;
        }
        math::exp(-log_sum / n as f64)
    }
}

impl PolicyProvider for NgramLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<PolicyDistribution, LmError> {
        for &id in prefix {
            self.vocab.check(id)?;
        }
        let support = (self.vocab.len() - 1) as f64;
        let ctx = self.context(prefix);
        let (total, seen) = match self.counts.get(&ctx) {
            Some(c) => (c.total as f64, Some(&c.next)),
            None => (0.0, None),
        };
        let denom = total + self.k * support;
        let base = math::ln(self.k / denom);
        let mut logits = alloc::vec![base; self.vocab.len()];
        if let Some(next) = seen {
            for (&id, &c) in next {
                logits[id as usize] = math::ln((c as f64 + self.k) / denom);
            }
        }
        logits[self.vocab.bos() as usize] = EXCLUDED_LOGIT;
        Ok(PolicyDistribution { logits })
    }
}
