use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dense::{EmbeddingConfig, HashingEmbedder};
use crate::error::{Error, Result};
use crate::eval::MetricConfig;
use crate::expansion::{ExpansionSettings, DEFAULT_REPEAT_FACTOR};
use crate::llm::ProviderConfig;
use crate::sparse::{Bm25Params, TokenizerConfig};

/// Topic count used for an expansion direction when the mode enables it
/// and no explicit count is configured.
pub const DEFAULT_TOPICS: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retriever {
    #[default]
    Sparse,
    Dense,
}

impl Retriever {
    pub fn as_str(self) -> &'static str {
        match self {
            Retriever::Sparse => "sparse",
            Retriever::Dense => "dense",
        }
    }
}

impl FromStr for Retriever {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" | "bm25" => Ok(Retriever::Sparse),
            "dense" => Ok(Retriever::Dense),
            other => Err(Error::Config(format!("unknown retriever `{other}`"))),
        }
    }
}

/// Which sides of retrieval are expanded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Tqe,
    Tde,
    #[default]
    Tcde,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Tqe, Mode::Tde, Mode::Tcde];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Tqe => "tqe",
            Mode::Tde => "tde",
            Mode::Tcde => "tcde",
        }
    }

    pub fn for_counts(n_query: usize, n_doc: usize) -> Self {
        match (n_query > 0, n_doc > 0) {
            (false, false) => Mode::Baseline,
            (true, false) => Mode::Tqe,
            (false, true) => Mode::Tde,
            (true, true) => Mode::Tcde,
        }
    }

    fn expands_queries(self) -> bool {
        matches!(self, Mode::Tqe | Mode::Tcde)
    }

    fn expands_documents(self) -> bool {
        matches!(self, Mode::Tde | Mode::Tcde)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetPaths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    /// Use the offline mock instead of the HTTP provider.
    pub mock: bool,
    /// Scripted topics for the mock, one `{"match", "topics"}` record per line.
    pub mock_topics: Option<PathBuf>,
    pub expansion: ExpansionSettings,
    pub provider: ProviderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    /// Use the feature-hashing embedder instead of the HTTP provider.
    pub mock: bool,
    pub hashing_dimension: usize,
    pub remote: EmbeddingConfig,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            mock: false,
            hashing_dimension: HashingEmbedder::DEFAULT_DIMENSION,
            remote: EmbeddingConfig::default(),
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetPaths,
    pub retriever: Retriever,
    pub mode: Mode,
    /// Query-side topic count; derived from `mode` when absent.
    pub n_query: Option<usize>,
    /// Document-side topic count; derived from `mode` when absent.
    pub n_doc: Option<usize>,
    pub repeat_factor: usize,
    /// Apply query repetition on the dense path as well.
    pub repeat_for_dense: bool,
    pub bm25: Bm25Params,
    pub tokenizer: TokenizerConfig,
    pub pad_zero_scores: bool,
    pub metrics: MetricConfig,
    pub llm: LlmSettings,
    pub embedding: EmbeddingSettings,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub run_tag: String,
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    /// Largest tolerated fraction of items whose expansion failed.
    pub failure_ceiling: f64,
    /// Retrieve only queries that have judgments when qrels are configured.
    pub only_judged_queries: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetPaths::default(),
            retriever: Retriever::Sparse,
            mode: Mode::Tcde,
            n_query: None,
            n_doc: None,
            repeat_factor: DEFAULT_REPEAT_FACTOR,
            repeat_for_dense: true,
            bm25: Bm25Params::default(),
            tokenizer: TokenizerConfig::default(),
            pad_zero_scores: false,
            metrics: MetricConfig::default(),
            llm: LlmSettings::default(),
            embedding: EmbeddingSettings::default(),
            cache_dir: PathBuf::from(".tcde-cache"),
            out_dir: PathBuf::from("runs"),
            run_tag: "tcde".to_string(),
            seed: 0,
            workers: 0,
            failure_ceiling: 0.01,
            only_judged_queries: true,
        }
    }
}

impl ExperimentConfig {
    /// Loads a TOML (or `.json`) config. Relative paths are resolved against
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.corpus);
        fix(&mut self.dataset.queries);
        if let Some(q) = &mut self.dataset.qrels {
            fix(q);
        }
        if let Some(m) = &mut self.llm.mock_topics {
            fix(m);
        }
        fix(&mut self.cache_dir);
        fix(&mut self.out_dir);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config serializes")
    }

    /// Effective `(n_query, n_doc)`, checked against `mode`.
    pub fn topic_counts(&self) -> Result<(usize, usize)> {
        let mode = self.mode;
        let resolve = |given: Option<usize>, enabled: bool, side: &str| -> Result<usize> {
            match (given, enabled) {
                (None, true) => Ok(DEFAULT_TOPICS),
                (None, false) => Ok(0),
                (Some(0), true) => Err(Error::Config(format!("mode {mode} requires {side} >= 1"))),
                (Some(n), false) if n > 0 => Err(Error::Config(format!("mode {mode} requires {side} = 0, got {n}"))),
                (Some(n), _) => Ok(n),
            }
        };
        Ok((
            resolve(self.n_query, mode.expands_queries(), "n_query")?,
            resolve(self.n_doc, mode.expands_documents(), "n_doc")?,
        ))
    }

    /// Copy of this config set to the given topic counts, with the mode
    /// that matches them.
    pub fn with_counts(&self, n_query: usize, n_doc: usize) -> Self {
        Self {
            mode: Mode::for_counts(n_query, n_doc),
            n_query: Some(n_query),
            n_doc: Some(n_doc),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topic_counts()?;
        self.bm25.validate()?;
        self.metrics.validate()?;
        if self.repeat_factor == 0 {
            return Err(Error::Config("repeat_factor must be >= 1".into()));
        }
        if self.run_tag.is_empty() || self.run_tag.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid run tag `{}`", self.run_tag)));
        }
        if !(0.0..=1.0).contains(&self.failure_ceiling) {
            return Err(Error::Config("failure_ceiling must lie in [0, 1]".into()));
        }
        if self.dataset.corpus.as_os_str().is_empty() || self.dataset.queries.as_os_str().is_empty() {
            return Err(Error::Config("dataset.corpus and dataset.queries are required".into()));
        }
        if self.llm.provider.max_concurrent_requests == 0 {
            return Err(Error::Config("max_concurrent_requests must be >= 1".into()));
        }
        if !self.llm.mock && self.llm.provider.endpoint.is_empty() {
            let (nq, nd) = self.topic_counts()?;
            if nq + nd > 0 {
                return Err(Error::Config("llm.provider.endpoint is required unless the mock LLM is used".into()));
            }
        }
        if self.retriever == Retriever::Dense && !self.embedding.mock && self.embedding.remote.provider.endpoint.is_empty() {
            return Err(Error::Config(
                "embedding.remote.provider.endpoint is required unless the hashing embedder is used".into(),
            ));
        }
        Ok(())
    }

    /// Query repetition applied on this config's retrieval path.
    pub fn effective_repeat(&self) -> usize {
        if self.retriever == Retriever::Dense && !self.repeat_for_dense {
            1
        } else {
            self.repeat_factor
        }
    }
}
