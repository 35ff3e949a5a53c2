//! Generation and retrieval metrics.
//!
//! Text metrics first normalize every token the same way the knowledge
//! pipeline does: lowercase and split into alphanumeric runs, so
//! punctuation disappears. Coverage additionally drops stopwords and stems.
//!
//! * BLEU-1: clipped unigram precision times the brevity penalty
//!   `exp(1 - r/c)` (1 when `c > r`), where `r` is the reference length
//!   closest to the hypothesis length `c` (ties go to the shorter one).
//! * ROUGE-L: `F = (1 + b²)·P·R / (R + b²·P)` with `b = 1.2`, `P = LCS/|hyp|`,
//!   `R = LCS/|ref|`, maximized over references.
//! * Unigram F1: bag-of-words overlap F1, maximized over references.
//! * Coverage: percentage of distinct provenance-triplet terms present in
//!   the hypothesis terms.
//! * Precision@1: whether the top-ranked document is the gold one.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::knowledge::Triplet;
use crate::math;
use crate::text::{terms_of, words};

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("at least one reference is required")]
    NoReferences,
    #[error("coverage needs provenance triplets with at least one content word")]
    NoTripletTerms,
    #[error("ranking is empty")]
    EmptyRanking,
}

/// Lowercased alphanumeric word tokens of already-tokenized input.
pub fn normalize_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens.iter().flat_map(|t| words(t.as_ref())).collect()
}

fn bag(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_default() += 1;
    }
    m
}

fn overlap(a: &BTreeMap<&str, usize>, b: &BTreeMap<&str, usize>) -> usize {
    a.iter().map(|(t, &n)| n.min(b.get(t).copied().unwrap_or(0))).sum()
}

fn normalized_refs<S: AsRef<str>>(refs: &[Vec<S>]) -> Result<Vec<Vec<String>>, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    Ok(refs.iter().map(|r| normalize_tokens(r)).collect())
}

pub fn bleu1<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], refs: &[Vec<R>]) -> Result<f64, MetricError> {
    let refs = normalized_refs(refs)?;
    let hyp = normalize_tokens(hyp);
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let hyp_bag = bag(&hyp);
    let mut max_ref: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &refs {
        for (t, n) in bag(r) {
            let e = max_ref.entry(t).or_default();
            *e = (*e).max(n);
        }
    }
    let precision = overlap(&hyp_bag, &max_ref) as f64 / hyp.len() as f64;
    let c = hyp.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { math::exp(1.0 - r as f64 / c as f64) };
    Ok(precision * bp)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], refs: &[Vec<R>]) -> Result<f64, MetricError> {
    let refs = normalized_refs(refs)?;
    let hyp = normalize_tokens(hyp);
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok(refs
        .iter()
        .map(|r| {
            let l = lcs_len(&hyp, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / hyp.len() as f64;
            let rec = l / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max))
}

pub fn unigram_f1<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], refs: &[Vec<R>]) -> Result<f64, MetricError> {
    let refs = normalized_refs(refs)?;
    let hyp = normalize_tokens(hyp);
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let hb = bag(&hyp);
    Ok(refs
        .iter()
        .map(|r| {
            let common = overlap(&hb, &bag(r)) as f64;
            if common == 0.0 {
                return 0.0;
            }
            let p = common / hyp.len() as f64;
            let rec = common / r.len() as f64;
            2.0 * p * rec / (p + rec)
        })
        .fold(0.0, f64::max))
}

/// Distinct stemmed content terms of the triplets (subject, relation and object).
pub fn triplet_terms(triplets: &[Triplet]) -> BTreeSet<String> {
    triplets
        .iter()
        .flat_map(|t| terms_of(&t.tokens().collect::<Vec<_>>()))
        .collect()
}

/// Percentage in `[0, 100]`.
pub fn coverage<S: AsRef<str>>(hyp: &[S], triplets: &[Triplet]) -> Result<f64, MetricError> {
    let wanted = triplet_terms(triplets);
    if wanted.is_empty() {
        return Err(MetricError::NoTripletTerms);
    }
    let have: BTreeSet<String> = terms_of(hyp).into_iter().collect();
    let hit = wanted.iter().filter(|t| have.contains(*t)).count();
    Ok(100.0 * hit as f64 / wanted.len() as f64)
}

/// 1 if the first ranked document id equals `gold`, else 0.
pub fn precision_at_1<S: AsRef<str>>(ranked_doc_ids: &[S], gold: &str) -> Result<f64, MetricError> {
    match ranked_doc_ids.first() {
        None => Err(MetricError::EmptyRanking),
        Some(top) => Ok(if top.as_ref() == gold { 1.0 } else { 0.0 }),
    }
}

/// One line of a batch evaluation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub hypothesis: Vec<String>,
    #[serde(default)]
    pub references: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance_triplets: Option<Vec<Triplet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_chunk_id: Option<String>,
    /// Retrieved document ids, best first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked_doc_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub count: usize,
}

pub const BLEU1: &str = "bleu1";
pub const ROUGE_L: &str = "rouge_l";
pub const UNIGRAM_F1: &str = "unigram_f1";
pub const COVERAGE: &str = "coverage";
pub const PRECISION_AT_1: &str = "precision_at_1";

/// Mean of every metric that applies to each record. Text metrics need
/// references, coverage needs triplets, precision@1 needs a gold id and a
/// non-empty ranking; records lacking an input are skipped for that metric.
pub fn evaluate(records: &[EvalRecord]) -> Result<BTreeMap<String, MetricSummary>, MetricError> {
    let mut sums: BTreeMap<&'static str, (f64, usize)> = BTreeMap::new();
    let mut add = |name: &'static str, v: f64| {
        let e = sums.entry(name).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    };
    for r in records {
        if !r.references.is_empty() {
            add(BLEU1, bleu1(&r.hypothesis, &r.references)?);
            add(ROUGE_L, rouge_l(&r.hypothesis, &r.references)?);
            add(UNIGRAM_F1, unigram_f1(&r.hypothesis, &r.references)?);
        }
        if let Some(t) = r.provenance_triplets.as_deref().filter(|t| !t.is_empty()) {
            add(COVERAGE, coverage(&r.hypothesis, t)?);
        }
        if let (Some(gold), Some(ranked)) = (&r.gold_chunk_id, &r.ranked_doc_ids) {
            if !ranked.is_empty() {
                add(PRECISION_AT_1, precision_at_1(ranked, gold)?);
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, n))| (String::from(k), MetricSummary { mean: s / n as f64, count: n }))
        .collect())
}
