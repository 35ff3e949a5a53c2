//! Decoding runs over many contexts and the decoder comparison report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use kid_core::decoder::{DecodingConfig, DecodingSession, GenerationResult};
use kid_core::knowledge::{KnowledgeTrie, Triplet};
use kid_core::lm::PolicyProvider;
use kid_core::memory::EntityPredicate;
use kid_core::metrics::{self, EvalRecord, MetricSummary};
use kid_core::pipeline::knowledge_for_context;
use kid_core::retriever::{ChunkStore, RetrievalError, RetrievalResult, TfIdfScorer};
use kid_core::synthetic::SyntheticTask;
use serde::{Deserialize, Serialize};

use crate::config::DecoderKind;
use crate::error::{KidError, Result};

/// Where per-context knowledge comes from.
#[derive(Clone, Copy)]
pub enum KnowledgeSource<'a> {
    /// Retrieve `k_docs` chunks per context and build a fresh trie.
    Retrieve { store: &'a ChunkStore, resolve_pronouns: bool },
    /// The same trie for every context.
    Fixed(&'a KnowledgeTrie),
}

pub struct Knowledge {
    pub trie: KnowledgeTrie,
    pub retrieved: Vec<RetrievalResult>,
}

impl KnowledgeSource<'_> {
    pub fn for_context(&self, context: &str, k_docs: usize) -> Result<Knowledge> {
        match *self {
            Self::Fixed(trie) => Ok(Knowledge {
                trie: trie.clone(),
                retrieved: Vec::new(),
            }),
            Self::Retrieve { store, resolve_pronouns } => {
                match knowledge_for_context(store, context, k_docs, &TfIdfScorer, resolve_pronouns) {
                    Ok(k) => Ok(Knowledge {
                        trie: k.trie,
                        retrieved: k.retrieved,
                    }),
                    Err(RetrievalError::DegenerateQuery) => {
                        log::warn!("context {context:?} has no searchable terms; decoding without knowledge");
                        Ok(Knowledge {
                            trie: KnowledgeTrie::default(),
                            retrieved: Vec::new(),
                        })
                    }
                    Err(e) => Err(e.into()),
                }
            }
        }
    }
}

pub fn run_decoder(session: &DecodingSession<'_>, kind: DecoderKind, context: &[u32], cfg: &DecodingConfig) -> Result<GenerationResult> {
    let r = match kind {
        DecoderKind::Kid => session.decode_kid(context, cfg),
        DecoderKind::Sampling => session.decode_sampling(context, cfg),
        DecoderKind::Greedy => session.decode_greedy(context, cfg),
        DecoderKind::Beam => session.decode_beam(context, cfg),
    }?;
    Ok(r)
}

/// Context `i` of a run decodes with seed `base + i`.
pub fn item_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// One benchmark prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub context: String,
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance_triplets: Option<Vec<Triplet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_doc: Option<String>,
}

impl TaskItem {
    pub fn from_synthetic(task: &SyntheticTask) -> Vec<Self> {
        task.items
            .iter()
            .map(|it| TaskItem {
                context: it.context.clone(),
                references: vec![it.reference.clone()],
                provenance_triplets: Some(it.provenance.clone()),
                gold_doc: Some(it.gold_doc.clone()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderReport {
    pub decoder: DecoderKind,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Median KL over every step (guided decoders only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_kl: Option<f64>,
    /// Median KL over steps that had at least one demonstration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_guided_kl: Option<f64>,
    pub steps: usize,
    pub fallbacks: usize,
    pub aborted_updates: usize,
    /// Generations cut short by an LM failure.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub items: usize,
    pub seed: u64,
    pub decoders: Vec<DecoderReport>,
}

impl BenchmarkReport {
    pub fn decoder(&self, kind: DecoderKind) -> Option<&DecoderReport> {
        self.decoders.iter().find(|d| d.decoder == kind)
    }

    /// Fixed-width text table, one row per decoder.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}", "decoder", "Cov", "BLEU-1", "ROUGE-L", "F1", "P@1");
        for d in &self.decoders {
            let cell = |name: &str, scale: f64| {
                d.metrics
                    .get(name)
                    .map_or_else(|| "-".to_string(), |m| format!("{:.2}", m.mean * scale))
            };
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}",
                d.decoder.name(),
                cell(metrics::COVERAGE, 1.0),
                cell(metrics::BLEU1, 100.0),
                cell(metrics::ROUGE_L, 100.0),
                cell(metrics::UNIGRAM_F1, 100.0),
                cell(metrics::PRECISION_AT_1, 100.0),
            );
        }
        out
    }
}

struct ItemOutcome {
    ranked_doc_ids: Vec<String>,
    results: Vec<GenerationResult>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 })
}

/// Shared inputs of a benchmark run.
pub struct Benchmark<'a> {
    pub provider: &'a (dyn PolicyProvider + Sync),
    pub knowledge: KnowledgeSource<'a>,
    pub predicate: EntityPredicate,
    pub config: DecodingConfig,
    pub decoders: Vec<DecoderKind>,
    pub jobs: usize,
}

impl Benchmark<'_> {
    fn run_item(&self, index: usize, item: &TaskItem) -> Result<ItemOutcome> {
        let knowledge = self.knowledge.for_context(&item.context, self.config.k_docs)?;
        let session = DecodingSession::new(self.provider, &knowledge.trie, self.predicate.clone());
        let context = self.provider.encode(&item.context)?;
        let cfg = DecodingConfig {
            seed: item_seed(self.config.seed, index),
            ..self.config
        };
        let results = self
            .decoders
            .iter()
            .map(|&kind| run_decoder(&session, kind, &context, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut ranked = Vec::new();
        for r in &knowledge.retrieved {
            if !ranked.contains(&r.doc_id) {
                ranked.push(r.doc_id.clone());
            }
        }
        Ok(ItemOutcome {
            ranked_doc_ids: ranked,
            results,
        })
    }

    /// Decode every item with every decoder and score the generations.
    /// Items are spread over up to `jobs` threads; results merge in input order.
    pub fn run(&self, items: &[TaskItem]) -> Result<BenchmarkReport> {
        let jobs = self.jobs.clamp(1, items.len().max(1));
        let mut slots: Vec<Option<Result<ItemOutcome>>> = (0..items.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|worker| {
                    scope.spawn(move || {
                        (worker..items.len())
                            .step_by(jobs)
                            .map(|i| (i, self.run_item(i, &items[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                match h.join() {
                    Ok(done) => {
                        for (i, r) in done {
                            slots[i] = Some(r);
                        }
                    }
                    Err(_) => log::error!("benchmark worker panicked"),
                }
            }
        });
        let outcomes = slots
            .into_iter()
            .map(|s| s.unwrap_or_else(|| Err(KidError::Internal("benchmark worker panicked".into()))))
            .collect::<Result<Vec<_>>>()?;
        self.report(items, &outcomes)
    }

    fn report(&self, items: &[TaskItem], outcomes: &[ItemOutcome]) -> Result<BenchmarkReport> {
        let mut decoders = Vec::new();
        for (d, &kind) in self.decoders.iter().enumerate() {
            let mut records = Vec::with_capacity(items.len());
            let (mut kls, mut guided) = (Vec::new(), Vec::new());
            let (mut steps, mut fallbacks, mut aborted, mut failures) = (0, 0, 0, 0);
            for (item, outcome) in items.iter().zip(outcomes) {
                let result = &outcome.results[d];
                steps += result.steps.len();
                failures += usize::from(result.error.is_some());
                for s in &result.steps {
                    fallbacks += usize::from(s.fallback);
                    aborted += usize::from(s.aborted);
                    if kind == DecoderKind::Kid {
                        kls.push(s.kl);
                        if s.demonstrations.iter().any(|h| !h.is_empty()) {
                            guided.push(s.kl);
                        }
                    }
                }
                records.push(EvalRecord {
                    hypothesis: result.text.split_whitespace().map(String::from).collect(),
                    references: item
                        .references
                        .iter()
                        .map(|r| r.split_whitespace().map(String::from).collect())
                        .collect(),
                    provenance_triplets: item.provenance_triplets.clone(),
                    gold_chunk_id: item.gold_doc.clone(),
                    ranked_doc_ids: (!outcome.ranked_doc_ids.is_empty()).then(|| outcome.ranked_doc_ids.clone()),
                });
            }
            decoders.push(DecoderReport {
                decoder: kind,
                metrics: metrics::evaluate(&records)?,
                median_kl: median(kls),
                median_guided_kl: median(guided),
                steps,
                fallbacks,
                aborted_updates: aborted,
                failures,
            });
        }
        Ok(BenchmarkReport {
            items: items.len(),
            seed: self.config.seed,
            decoders,
        })
    }
}
