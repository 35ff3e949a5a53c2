//! Run configuration: a flat JSON object whose keys mirror the CLI flags.
//! Missing keys take the defaults below; flags override the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use kid_core::decoder::{self, DecodingConfig};
use kid_core::lm::{NgramLm, PolicyProvider, UniformLm, Vocabulary, DEFAULT_SMOOTHING};
use kid_core::memory::EntityPredicate;
use kid_core::policy::{self, Estimator, GuidanceConfig};
use kid_core::retriever::{DEFAULT_CHUNK_SIZE, DEFAULT_K_DOCS};
use kid_core::text::lm_tokens;
use serde::{Deserialize, Serialize};

use crate::error::{KidError, Result};
use crate::formats;
use crate::remote::{Endpoint, RemoteProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Kid,
    Sampling,
    Greedy,
    Beam,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 4] = [Self::Kid, Self::Sampling, Self::Greedy, Self::Beam];

    pub fn name(self) -> &'static str {
        match self {
            Self::Kid => "kid",
            Self::Sampling => "sampling",
            Self::Greedy => "greedy",
            Self::Beam => "beam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Ngram,
    Uniform,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Exact,
    #[value(name = "monte_carlo")]
    MonteCarlo,
}

pub const DEFAULT_LM_ORDER: usize = 3;
pub const DEFAULT_REMOTE_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub h_max: usize,
    pub w_max: usize,
    pub k_docs: usize,
    pub max_length: usize,
    pub top_p: f64,
    pub top_k: usize,
    pub beam_size: usize,
    pub sigma: f64,
    pub beta_init: f64,
    pub inner_steps: usize,
    pub learning_rate: f64,
    pub estimator: EstimatorKind,
    pub mc_samples: usize,
    pub chunk_size: usize,
    pub resolve_pronouns: bool,
    /// Treat any alphabetic non-stopword of 3+ letters as an entity.
    pub entity_heuristic: bool,
    /// Extra entity words.
    pub lexicon: Vec<String>,
    pub decoder: DecoderKind,
    pub provider: ProviderKind,
    /// Endpoint for the remote provider.
    pub remote: Option<String>,
    pub remote_timeout_ms: u64,
    /// Training text for the n-gram and uniform providers, one sentence per line.
    pub lm_corpus: Option<PathBuf>,
    pub lm_order: usize,
    pub lm_smoothing: f64,
    pub corpus: Option<PathBuf>,
    pub chunks: Option<PathBuf>,
    pub trie: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DecodingConfig::default();
        let g = GuidanceConfig::default();
        Self {
            seed: decoder::DEFAULT_SEED,
            h_max: d.h_max,
            w_max: d.w_max,
            k_docs: DEFAULT_K_DOCS,
            max_length: d.max_length,
            top_p: d.top_p,
            top_k: d.top_k,
            beam_size: d.beam_size,
            sigma: g.sigma,
            beta_init: g.beta_init,
            inner_steps: g.inner_steps,
            learning_rate: g.learning_rate,
            estimator: EstimatorKind::Exact,
            mc_samples: policy::DEFAULT_MC_SAMPLES,
            chunk_size: DEFAULT_CHUNK_SIZE,
            resolve_pronouns: false,
            entity_heuristic: true,
            lexicon: Vec::new(),
            decoder: DecoderKind::Kid,
            provider: ProviderKind::Ngram,
            remote: None,
            remote_timeout_ms: DEFAULT_REMOTE_TIMEOUT_MS,
            lm_corpus: None,
            lm_order: DEFAULT_LM_ORDER,
            lm_smoothing: DEFAULT_SMOOTHING,
            corpus: None,
            chunks: None,
            trie: None,
            output: None,
            jobs: 1,
        }
    }
}

/// Provider handle usable from benchmark worker threads.
pub type SharedProvider = Box<dyn PolicyProvider + Send + Sync>;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KidError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| KidError::format(path, e.line(), e.to_string()))
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            sigma: self.sigma,
            beta_init: self.beta_init,
            inner_steps: self.inner_steps,
            learning_rate: self.learning_rate,
            estimator: match self.estimator {
                EstimatorKind::Exact => Estimator::Exact,
                EstimatorKind::MonteCarlo => Estimator::MonteCarlo { samples: self.mc_samples },
            },
        }
    }

    pub fn decoding(&self) -> DecodingConfig {
        DecodingConfig {
            h_max: self.h_max,
            w_max: self.w_max,
            k_docs: self.k_docs,
            max_length: self.max_length,
            top_p: self.top_p,
            top_k: self.top_k,
            beam_size: self.beam_size,
            seed: self.seed,
            guidance: self.guidance(),
        }
    }

    pub fn predicate(&self) -> EntityPredicate {
        EntityPredicate {
            lexicon: self.lexicon.iter().map(|w| w.to_lowercase()).collect(),
            heuristic: self.entity_heuristic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decoding().validate().map_err(|e| KidError::Config(e.to_string()))?;
        let fail = |m: &str| Err(KidError::Config(m.to_string()));
        if self.chunk_size == 0 {
            return fail("chunk_size must be at least 1");
        }
        if self.jobs == 0 {
            return fail("jobs must be at least 1");
        }
        if self.estimator == EstimatorKind::MonteCarlo && self.mc_samples == 0 {
            return fail("mc_samples must be at least 1");
        }
        if self.provider == ProviderKind::Remote && self.remote.is_none() {
            return fail("provider remote needs a remote endpoint");
        }
        Ok(())
    }

    pub fn remote_endpoint(&self) -> Result<Endpoint> {
        let raw = self
            .remote
            .as_deref()
            .ok_or_else(|| KidError::Config("no remote endpoint configured".into()))?;
        raw.parse().map_err(KidError::Config)
    }

    /// Build the configured LM.
    pub fn provider(&self) -> Result<SharedProvider> {
        match self.provider {
            ProviderKind::Remote => {
                let timeout = (self.remote_timeout_ms > 0).then(|| Duration::from_millis(self.remote_timeout_ms));
                Ok(Box::new(RemoteProvider::connect(&self.remote_endpoint()?, timeout)?))
            }
            ProviderKind::Ngram => Ok(Box::new(self.ngram()?)),
            ProviderKind::Uniform => {
                let corpus = self.lm_sentences()?;
                Ok(Box::new(UniformLm::new(Vocabulary::from_words(corpus.iter().flatten()))))
            }
        }
    }

    pub fn ngram(&self) -> Result<NgramLm> {
        Ok(NgramLm::train(&self.lm_sentences()?, self.lm_order, self.lm_smoothing)?)
    }

    fn lm_sentences(&self) -> Result<Vec<Vec<String>>> {
        let path = self
            .lm_corpus
            .as_deref()
            .ok_or_else(|| KidError::Config("the ngram and uniform providers need lm_corpus".into()))?;
        Ok(formats::read_lines(path)?.iter().map(|l| lm_tokens(l)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_core_crate() {
        let c = RunConfig::default();
        assert_eq!(c.decoding(), DecodingConfig::default());
        assert_eq!((c.sigma, c.inner_steps, c.h_max, c.w_max, c.k_docs), (0.02, 3, 4, 4, 5));
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"sigma":0.05,"decoder":"beam","estimator":"monte_carlo"}"#).unwrap();
        assert_eq!(c.sigma, 0.05);
        assert_eq!(c.decoder, DecoderKind::Beam);
        assert_eq!(c.guidance().estimator, Estimator::MonteCarlo { samples: 8 });
        assert_eq!(c.h_max, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sigmaa":0.05}"#).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let bad = RunConfig {
            top_p: 1.5,
            ..RunConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
        let remote = RunConfig {
            provider: ProviderKind::Remote,
            ..RunConfig::default()
        };
        assert!(remote.validate().is_err());
    }
}
