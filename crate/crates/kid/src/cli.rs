//! Command-line interface.

use std::fmt::Display;
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kid_core::decoder::{DecodingConfig, DecodingSession, GenerationResult};
use kid_core::knowledge::{triplets_from_text, KnowledgeTrie, Triplet};
use kid_core::metrics::{self, EvalRecord};
use kid_core::retriever::{ChunkStore, RetrievalResult, TfIdfScorer};
use kid_core::synthetic::{SyntheticConfig, SyntheticTask};
use serde::Serialize;

use crate::benchmark::{item_seed, run_decoder, Benchmark, KnowledgeSource, TaskItem};
use crate::config::{DecoderKind, EstimatorKind, ProviderKind, RunConfig};
use crate::error::{KidError, Result};
use crate::formats;
use crate::protocol;

fn with_default(text: &str, value: impl Display) -> String {
    format!("{text} [default: {value}]")
}

fn defaults() -> RunConfig {
    RunConfig::default()
}

const FORMATS_HELP: &str = "\
File formats (UTF-8, one JSON object per line unless noted):
  corpus       {\"id\": str, \"title\": str, \"text\": str}
  chunk store  header {version, chunk_size, chunk_count, vocabulary, document_frequencies}
               then {\"doc_id\": str, \"chunk_index\": int, \"tokens\": [str]} per chunk
  trie         header {version, key_count, triplet_count}
               then {\"key\": str, \"max_depth\": int, \"entries\": [{\"value\", \"rel\", \"next\"}]} per key, keys ascending
  contexts     plain text, one context per line
  task         {\"context\": str, \"references\": [str], \"provenance_triplets\": [triplet]?, \"gold_doc\": str?}
  eval records {\"hypothesis\": [str], \"references\": [[str]], \"provenance_triplets\"?, \"gold_chunk_id\"?, \"ranked_doc_ids\"?}
  triplet      {\"subj\": [str], \"rel\": [str], \"obj\": [str]}
  config       flat JSON object keyed by long flag name ('_' for '-', --out is output); flags override it

Exit codes: 0 ok, 2 bad config or input, 3 io, 4 provider protocol, 5 internal.
Set KID_LOG=error|warn|info|debug for diagnostics on standard error.";

#[derive(Debug, Parser)]
#[command(
    name = "kid",
    version,
    about = "Knowledge-infused decoding: retrieval, knowledge tries and KL-guided generation",
    long_about = "Knowledge-infused decoding: retrieval, knowledge tries and KL-guided generation.\n\n\
Shipped defaults: sigma 0.02, inner_steps 3, h_max 4, w_max 4, k_docs 5.",
    after_help = FORMATS_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a JSON-lines corpus into chunks and write the indexed chunk store.
    #[command(after_help = FORMATS_HELP)]
    Ingest(IngestArgs),
    /// Retrieve knowledge for a context (or take every chunk) and write a trie file.
    #[command(after_help = FORMATS_HELP)]
    BuildTrie(BuildTrieArgs),
    /// Decode every context of a file and write one GenerationResult per line.
    #[command(after_help = FORMATS_HELP)]
    Decode(DecodeArgs),
    /// Compare decoders on the built-in synthetic task or a task file.
    #[command(after_help = FORMATS_HELP)]
    Benchmark(BenchmarkArgs),
    /// Score hypotheses against references and provenance triplets.
    #[command(after_help = FORMATS_HELP)]
    Eval(EvalArgs),
    /// Serve the configured n-gram or uniform LM over the provider protocol.
    #[command(after_help = FORMATS_HELP)]
    ServeLm(ServeArgs),
    /// Print the default run configuration as JSON.
    Defaults,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON run configuration; its corpus, chunks and chunk_size keys apply.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Corpus, JSON lines of {id, title, text}.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Chunk store to write (config key: chunks).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N", help = with_default("Whitespace tokens per chunk", defaults().chunk_size))]
    pub chunk_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildTrieArgs {
    /// Chunk store to retrieve from.
    #[arg(long, value_name = "FILE", required_unless_present = "text")]
    pub chunks: Option<PathBuf>,
    /// Raw text file to extract triplets from directly, bypassing retrieval.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["chunks", "context", "context_file"])]
    pub text: Option<PathBuf>,
    /// Retrieve for this context; without a context every chunk is used.
    #[arg(long, value_name = "TEXT", conflicts_with = "context_file")]
    pub context: Option<String>,
    /// Read the context from a file.
    #[arg(long, value_name = "FILE")]
    pub context_file: Option<PathBuf>,
    #[arg(long, value_name = "N", help = with_default("Chunks retrieved per context", defaults().k_docs))]
    pub k_docs: Option<usize>,
    /// Replace pronouns with the nearest preceding subject before extraction.
    #[arg(long)]
    pub resolve_pronouns: bool,
    /// Trie file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Flags shared by every command that decodes. Each overrides the
/// matching key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags take precedence over its keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N", help = with_default("Seed for every random choice; context i uses seed + i", defaults().seed))]
    pub seed: Option<u64>,
    #[arg(long, value_name = "KIND", help = with_default("Decoder: kid, sampling, greedy or beam", "kid"))]
    pub decoder: Option<DecoderKind>,
    #[arg(long, value_name = "N", help = with_default("Hops per trie query (h_max)", defaults().h_max))]
    pub h_max: Option<usize>,
    #[arg(long, value_name = "N", help = with_default("Local memory capacity (w_max)", defaults().w_max))]
    pub w_max: Option<usize>,
    #[arg(long, value_name = "N", help = with_default("Chunks retrieved per context (k_docs)", defaults().k_docs))]
    pub k_docs: Option<usize>,
    #[arg(long, value_name = "N", help = with_default("Maximum generated tokens, EOS included", defaults().max_length))]
    pub max_length: Option<usize>,
    #[arg(long, value_name = "P", help = with_default("Nucleus mass; 1 disables", defaults().top_p))]
    pub top_p: Option<f64>,
    #[arg(long, value_name = "N", help = with_default("Top-k cut after the nucleus; 0 disables", defaults().top_k))]
    pub top_k: Option<usize>,
    #[arg(long, value_name = "N", help = with_default("Beam width for the beam decoder", defaults().beam_size))]
    pub beam_size: Option<usize>,
    #[arg(long, value_name = "F", help = with_default("KL target sigma for the trust region", defaults().sigma))]
    pub sigma: Option<f64>,
    #[arg(long, value_name = "F", help = with_default("KL weight beta at the start of each generation", defaults().beta_init))]
    pub beta_init: Option<f64>,
    #[arg(long, value_name = "K", help = with_default("Policy update steps K per token", defaults().inner_steps))]
    pub inner_steps: Option<usize>,
    #[arg(long, value_name = "F", help = with_default("Adam learning rate of the policy update", defaults().learning_rate))]
    pub learning_rate: Option<f64>,
    #[arg(long, value_name = "KIND", help = with_default("Update objective: exact or monte_carlo", "exact"))]
    pub estimator: Option<EstimatorKind>,
    #[arg(long, value_name = "N", help = with_default("Samples per step for the monte-carlo estimator", defaults().mc_samples))]
    pub mc_samples: Option<usize>,
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true",
          help = with_default("Resolve pronouns before triplet extraction", defaults().resolve_pronouns))]
    pub resolve_pronouns: Option<bool>,
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true",
          help = with_default("Count any alphabetic non-stopword of 3+ letters as an entity", defaults().entity_heuristic))]
    pub entity_heuristic: Option<bool>,
    /// Extra entity word; repeatable.
    #[arg(long = "lexicon", value_name = "WORD")]
    pub lexicon: Vec<String>,
    #[arg(long, value_name = "KIND", help = with_default("LM provider: ngram, uniform or remote", "ngram"))]
    pub provider: Option<ProviderKind>,
    /// Remote provider endpoint, tcp:HOST:PORT or stdio:COMMAND ARGS.
    #[arg(long, value_name = "ENDPOINT")]
    pub remote: Option<String>,
    #[arg(long, value_name = "MS", help = with_default("Read timeout for TCP providers; 0 waits forever", defaults().remote_timeout_ms))]
    pub remote_timeout_ms: Option<u64>,
    /// LM training text for the ngram and uniform providers, one sentence per line.
    #[arg(long, value_name = "FILE")]
    pub lm_corpus: Option<PathBuf>,
    #[arg(long, value_name = "N", help = with_default("n-gram order, 2 to 5", defaults().lm_order))]
    pub lm_order: Option<usize>,
    #[arg(long, value_name = "F", help = with_default("Add-k smoothing constant", defaults().lm_smoothing))]
    pub lm_smoothing: Option<f64>,
    /// Chunk store; a trie is built per context from its top k_docs chunks.
    #[arg(long, value_name = "FILE")]
    pub chunks: Option<PathBuf>,
    /// Fixed trie used for every context (wins over --chunks).
    #[arg(long, value_name = "FILE")]
    pub trie: Option<PathBuf>,
    #[arg(long, value_name = "N", help = with_default("Worker threads for benchmark", defaults().jobs))]
    pub jobs: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($cfg:ident, $args:ident, $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        overlay!(
            cfg,
            self,
            seed,
            decoder,
            h_max,
            w_max,
            k_docs,
            max_length,
            top_p,
            top_k,
            beam_size,
            sigma,
            beta_init,
            inner_steps,
            learning_rate,
            estimator,
            mc_samples,
            resolve_pronouns,
            entity_heuristic,
            provider,
            remote_timeout_ms,
            lm_order,
            lm_smoothing,
            jobs,
        );
        if !self.lexicon.is_empty() {
            cfg.lexicon = self.lexicon.clone();
        }
        for (slot, flag) in [
            (&mut cfg.lm_corpus, &self.lm_corpus),
            (&mut cfg.chunks, &self.chunks),
            (&mut cfg.trie, &self.trie),
            (&mut cfg.output, &self.out),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if self.remote.is_some() {
            cfg.remote.clone_from(&self.remote);
            if self.provider.is_none() {
                cfg.provider = ProviderKind::Remote;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Contexts, one per line.
    #[arg(long, value_name = "FILE")]
    pub contexts: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Task file; the built-in synthetic task (which brings its own trigram LM,
    /// corpus and provenance) is used when absent.
    #[arg(long, value_name = "FILE")]
    pub task: Option<PathBuf>,
    #[arg(long, value_name = "N", help = with_default("Seed of the synthetic task generator", SyntheticConfig::default().seed))]
    pub task_seed: Option<u64>,
    #[arg(long, value_name = "N", help = with_default("Synthetic entities, one prompt each", SyntheticConfig::default().entities))]
    pub entities: Option<usize>,
    /// Only the first N items.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    /// Decoders to compare [default: kid,sampling,greedy,beam]
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub decoders: Vec<DecoderKind>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Evaluation records, JSON lines.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["hyps", "refs", "triplets"], required_unless_present = "hyps")]
    pub records: Option<PathBuf>,
    /// Hypotheses, one per line.
    #[arg(long, value_name = "FILE", requires = "refs")]
    pub hyps: Option<PathBuf>,
    /// References, one line per hypothesis; alternatives separated by " ||| ".
    #[arg(long, value_name = "FILE")]
    pub refs: Option<PathBuf>,
    /// Provenance triplets, one JSON array of triplets per hypothesis line.
    #[arg(long, value_name = "FILE")]
    pub triplets: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// stdio, or tcp:ADDR to accept one connection (the bound address is
    /// printed on standard output first) [default: stdio]
    #[arg(long, value_name = "WHERE", default_value = "stdio", hide_default_value = true)]
    pub listen: String,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Writes to `--out` or standard output.
fn sink(path: Option<&Path>) -> Result<(Box<dyn Write>, PathBuf)> {
    match path {
        Some(p) => Ok((Box::new(formats::create(p)?), p.to_path_buf())),
        None => Ok((Box::new(io::BufWriter::new(io::stdout().lock())), PathBuf::from("<stdout>"))),
    }
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let (mut w, name) = sink(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| KidError::Internal(e.to_string()))?;
    writeln!(w, "{text}").and_then(|()| w.flush()).map_err(|e| KidError::io(&name, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::BuildTrie(a) => build_trie(&a),
        Command::Decode(a) => decode(&a),
        Command::Benchmark(a) => benchmark(&a),
        Command::Eval(a) => eval(&a),
        Command::ServeLm(a) => serve_lm(&a),
        Command::Defaults => emit_json(&RunConfig::default(), None),
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let missing = |what: &str| KidError::Config(format!("ingest needs {what}"));
    let corpus = a.corpus.as_ref().or(cfg.corpus.as_ref()).ok_or_else(|| missing("--corpus"))?;
    let out = a.out.as_ref().or(cfg.chunks.as_ref()).ok_or_else(|| missing("--out"))?;
    let docs = formats::read_corpus(corpus)?;
    let store = ChunkStore::ingest(&docs, a.chunk_size.unwrap_or(cfg.chunk_size))?;
    log::info!("{} documents, {} chunks", docs.len(), store.len());
    formats::save_chunk_store(out, &store)
}

fn build_trie(a: &BuildTrieArgs) -> Result<()> {
    let resolve = a.resolve_pronouns;
    let triplets: Vec<Triplet> = if let Some(path) = &a.text {
        let text = std::fs::read_to_string(path).map_err(|e| KidError::io(path, e))?;
        triplets_from_text(&text, resolve)
    } else {
        let path = a.chunks.as_deref().ok_or_else(|| KidError::Config("--chunks or --text is required".into()))?;
        let store = formats::read_chunk_store(path)?;
        let context = match (&a.context, &a.context_file) {
            (Some(c), _) => Some(c.clone()),
            (None, Some(p)) => Some(std::fs::read_to_string(p).map_err(|e| KidError::io(p, e))?),
            (None, None) => None,
        };
        match context {
            Some(context) => {
                let k = a.k_docs.unwrap_or(defaults().k_docs);
                let hits = store.retrieve(&kid_core::text::lm_tokens(&context), k, &TfIdfScorer)?;
                hits.iter()
                    .filter_map(|r| store.get(&r.doc_id, r.chunk_index))
                    .flat_map(|c| triplets_from_text(&c.text(), resolve))
                    .collect()
            }
            None => store.chunks().iter().flat_map(|c| triplets_from_text(&c.text(), resolve)).collect(),
        }
    };
    let trie = KnowledgeTrie::build(&triplets);
    log::info!("{} triplets, {} keys", trie.triplet_count(), trie.key_count());
    formats::save_trie(&a.out, &trie)
}

/// One line of `decode` output.
#[derive(Debug, Serialize)]
struct DecodeRecord<'a> {
    index: usize,
    context: &'a str,
    decoder: DecoderKind,
    seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    retrieved: Vec<RetrievalResult>,
    #[serde(flatten)]
    result: GenerationResult,
}

fn load_knowledge(cfg: &RunConfig) -> Result<(Option<ChunkStore>, Option<KnowledgeTrie>)> {
    let trie = cfg.trie.as_deref().map(formats::read_trie).transpose()?;
    let store = match (&trie, &cfg.chunks) {
        (None, Some(p)) => Some(formats::read_chunk_store(p)?),
        _ => None,
    };
    Ok((store, trie))
}

fn source<'a>(cfg: &RunConfig, store: &'a Option<ChunkStore>, trie: &'a Option<KnowledgeTrie>, empty: &'a KnowledgeTrie) -> KnowledgeSource<'a> {
    match (store, trie) {
        (_, Some(t)) => KnowledgeSource::Fixed(t),
        (Some(s), None) => KnowledgeSource::Retrieve {
            store: s,
            resolve_pronouns: cfg.resolve_pronouns,
        },
        (None, None) => KnowledgeSource::Fixed(empty),
    }
}

fn decode(a: &DecodeArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let contexts = formats::read_lines(&a.contexts)?;
    let provider = cfg.provider()?;
    let (store, trie) = load_knowledge(&cfg)?;
    let empty = KnowledgeTrie::default();
    let knowledge = source(&cfg, &store, &trie, &empty);
    let (mut w, name) = sink(cfg.output.as_deref())?;
    let base = cfg.decoding();
    for (index, context) in contexts.iter().enumerate() {
        let k = knowledge.for_context(context, base.k_docs)?;
        let session = DecodingSession::new(provider.as_ref(), &k.trie, cfg.predicate());
        let ids = provider.encode(context)?;
        let dc = DecodingConfig {
            seed: item_seed(cfg.seed, index),
            ..base
        };
        let result = run_decoder(&session, cfg.decoder, &ids, &dc)?;
        let failed = result.error.clone();
        let record = DecodeRecord {
            index,
            context,
            decoder: cfg.decoder,
            seed: dc.seed,
            retrieved: k.retrieved,
            result,
        };
        writeln!(w, "{}", formats::to_line(&record)?).map_err(|e| KidError::io(&name, e))?;
        if let Some(e) = failed {
            w.flush().map_err(|e| KidError::io(&name, e))?;
            return Err(e.into());
        }
    }
    w.flush().map_err(|e| KidError::io(&name, e))
}

fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let decoders = if a.decoders.is_empty() {
        DecoderKind::ALL.to_vec()
    } else {
        a.decoders.clone()
    };
    let report = match &a.task {
        None => {
            let task = SyntheticTask::generate(SyntheticConfig {
                seed: a.task_seed.unwrap_or(SyntheticConfig::default().seed),
                entities: a.entities.unwrap_or(SyntheticConfig::default().entities),
                ..SyntheticConfig::default()
            });
            let lm = task.train_lm(cfg.lm_smoothing)?;
            let store = ChunkStore::ingest(&task.documents, cfg.chunk_size)?;
            let mut items = TaskItem::from_synthetic(&task);
            items.truncate(a.limit.unwrap_or(items.len()));
            Benchmark {
                provider: &lm,
                knowledge: KnowledgeSource::Retrieve {
                    store: &store,
                    resolve_pronouns: cfg.resolve_pronouns,
                },
                predicate: cfg.predicate(),
                config: cfg.decoding(),
                decoders,
                jobs: cfg.jobs,
            }
            .run(&items)?
        }
        Some(path) => {
            let mut items: Vec<TaskItem> = formats::read_jsonl(path)?;
            items.truncate(a.limit.unwrap_or(items.len()));
            let provider = cfg.provider()?;
            let (store, trie) = load_knowledge(&cfg)?;
            let empty = KnowledgeTrie::default();
            Benchmark {
                provider: provider.as_ref(),
                knowledge: source(&cfg, &store, &trie, &empty),
                predicate: cfg.predicate(),
                config: cfg.decoding(),
                decoders,
                jobs: cfg.jobs,
            }
            .run(&items)?
        }
    };
    if let Some(out) = &cfg.output {
        emit_json(&report, Some(out))?;
    }
    if a.json {
        emit_json(&report, None)
    } else {
        print!("{}", report.table());
        Ok(())
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let records: Vec<EvalRecord> = match (&a.records, &a.hyps, &a.refs) {
        (Some(path), _, _) => formats::read_jsonl(path)?,
        (None, Some(hyps), Some(refs)) => {
            let hyps = formats::read_lines(hyps)?;
            let refs = formats::read_lines(refs)?;
            if hyps.len() != refs.len() {
                return Err(KidError::Config(format!("{} hypotheses but {} reference lines", hyps.len(), refs.len())));
            }
            let triplets: Option<Vec<Vec<Triplet>>> = a.triplets.as_deref().map(formats::read_jsonl).transpose()?;
            if let Some(t) = &triplets {
                if t.len() != hyps.len() {
                    return Err(KidError::Config(format!("{} hypotheses but {} triplet lines", hyps.len(), t.len())));
                }
            }
            let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
            hyps.iter()
                .zip(&refs)
                .enumerate()
                .map(|(i, (h, r))| EvalRecord {
                    hypothesis: split(h),
                    references: r.split(" ||| ").map(split).collect(),
                    provenance_triplets: triplets.as_ref().map(|t| t[i].clone()),
                    gold_chunk_id: None,
                    ranked_doc_ids: None,
                })
                .collect()
        }
        _ => return Err(KidError::Config("give --records, or --hyps with --refs".into())),
    };
    let summary = metrics::evaluate(&records)?;
    emit_json(&summary, a.out.as_deref())
}

fn serve_lm(a: &ServeArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    if cfg.provider == ProviderKind::Remote {
        return Err(KidError::Config("serve-lm serves a local provider; remote is not allowed".into()));
    }
    let provider = cfg.provider()?;
    let served = if a.listen == "stdio" {
        protocol::serve(provider.as_ref(), io::stdin().lock(), io::stdout().lock())
            .map_err(|e| KidError::io("<stdio>", e))?
    } else if let Some(addr) = a.listen.strip_prefix("tcp:") {
        let listener = TcpListener::bind(addr).map_err(|e| KidError::io(addr, e))?;
        let local = listener.local_addr().map_err(|e| KidError::io(addr, e))?;
        println!("listening on {local}");
        io::stdout().flush().map_err(|e| KidError::io("<stdout>", e))?;
        let (stream, peer) = listener.accept().map_err(|e| KidError::io(addr, e))?;
        log::info!("serving {peer}");
        stream.set_nodelay(true).map_err(|e| KidError::io(addr, e))?;
        let reader = BufReader::new(stream.try_clone().map_err(|e| KidError::io(addr, e))?);
        protocol::serve(provider.as_ref(), reader, stream).map_err(|e| KidError::io(addr, e))?
    } else {
        return Err(KidError::Config(format!("--listen {:?} must be stdio or tcp:ADDR", a.listen)));
    };
    log::info!("answered {served} requests");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::try_parse_from(["kid", "decode", "--contexts", "c.txt", "--sigma", "0.05", "--resolve-pronouns", "--lexicon", "Helium"]).unwrap();
        let Command::Decode(a) = cli.command else { panic!() };
        let cfg = a.run.resolve().unwrap();
        assert_eq!(cfg.sigma, 0.05);
        assert!(cfg.resolve_pronouns);
        assert_eq!(cfg.h_max, 4);
        assert!(cfg.predicate().lexicon.contains("helium"));
    }

    #[test]
    fn remote_flag_selects_remote_provider() {
        let cli = Cli::try_parse_from(["kid", "decode", "--contexts", "c", "--remote", "tcp:127.0.0.1:1"]).unwrap();
        let Command::Decode(a) = cli.command else { panic!() };
        assert_eq!(a.run.resolve().unwrap().provider, ProviderKind::Remote);
    }

    #[test]
    fn help_shows_every_default() {
        let help = Cli::command().find_subcommand_mut("decode").unwrap().render_help().to_string();
        let d = RunConfig::default();
        for (flag, value) in [
            ("--sigma", d.sigma.to_string()),
            ("--inner-steps", d.inner_steps.to_string()),
            ("--h-max", d.h_max.to_string()),
            ("--w-max", d.w_max.to_string()),
            ("--k-docs", d.k_docs.to_string()),
            ("--learning-rate", d.learning_rate.to_string()),
        ] {
            let line = help.lines().find(|l| l.contains(flag)).unwrap();
            assert!(line.contains(&format!("[default: {value}]")), "{line}");
        }
    }
}
