use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, Retriever};
use crate::corpus::{load_corpus, load_qrels, load_queries, write_run, Corpus, Qrels, Query, Run};
use crate::dense::{self, Embedder, HashingEmbedder, HttpEmbedder, VectorIndex};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport};
use crate::expansion::{ExpandedDocument, ExpandedQuery, ExpansionCache, ExpansionSettings, Expander, TDE_PROMPT_VERSION};
use crate::hash::FieldDigest;
use crate::llm::{LlmClient, MockLlm};
use crate::sparse::{self, InvertedIndex, SearchOptions};

const FINGERPRINT_SCHEME: &str = "tcde-index-v1";
const COMPLETE_MARKER: &str = "COMPLETE";

#[derive(Debug, Clone)]
pub enum IndexKind {
    Sparse(InvertedIndex),
    Dense(VectorIndex),
}

/// A built (or reloaded) document index and where it lives on disk.
#[derive(Debug, Clone)]
pub struct IndexHandle {
    pub fingerprint: String,
    pub dir: PathBuf,
    pub kind: IndexKind,
    /// Loaded from disk rather than built in this process.
    pub reused: bool,
    pub expansion_failures: usize,
}

/// Files and counters produced by one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub mode: Mode,
    pub retriever: Retriever,
    pub n_query: usize,
    pub n_doc: usize,
    pub run_path: PathBuf,
    pub metrics_csv: Option<PathBuf>,
    pub metrics_text: Option<PathBuf>,
    pub config_snapshot: PathBuf,
    pub index_fingerprint: String,
    pub index_reused: bool,
    pub llm_model: String,
    pub prompt_versions: Vec<String>,
    pub doc_expansion_failures: usize,
    pub query_expansion_failures: usize,
    /// LLM calls and cache hits made by this experiment.
    pub provider_calls: u64,
    pub cache_hits: u64,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    #[serde(skip)]
    pub report: Option<MetricReport>,
}

/// Loaded data and shared providers. Several experiment variants can run
/// against one workspace so that caches, counters and indices are shared.
pub struct Workspace {
    base: ExperimentConfig,
    corpus: Corpus,
    queries: Vec<Query>,
    qrels: Option<Qrels>,
    expander: Arc<Expander>,
    embedder: Arc<dyn Embedder>,
    pool: rayon::ThreadPool,
}

fn build_expander(config: &ExperimentConfig) -> Result<Expander> {
    let mut settings: ExpansionSettings = config.llm.expansion.clone();
    let client = if config.llm.mock {
        let mock = match &config.llm.mock_topics {
            Some(path) => MockLlm::from_fixture(path)?,
            None => MockLlm::new(),
        };
        settings.model_id = mock.model_id();
        LlmClient::mock(mock)
    } else {
        LlmClient::http(config.llm.provider.clone())
    };
    let cache = ExpansionCache::open(config.cache_dir.join("expansions"))?;
    Ok(Expander::new(Arc::new(client), Arc::new(cache), settings))
}

fn build_embedder(config: &ExperimentConfig) -> Arc<dyn Embedder> {
    if config.embedding.mock {
        Arc::new(HashingEmbedder::new(config.embedding.hashing_dimension))
    } else {
        Arc::new(HttpEmbedder::new(config.embedding.remote.clone()))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

impl Workspace {
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let corpus = load_corpus(&config.dataset.corpus)?;
        if corpus.is_empty() {
            return Err(Error::DegenerateCorpus);
        }
        let mut queries = load_queries(&config.dataset.queries)?;
        let qrels = config.dataset.qrels.as_ref().map(load_qrels).transpose()?;
        if let (Some(qrels), true) = (&qrels, config.only_judged_queries) {
            let before = queries.len();
            queries.retain(|q| qrels.get(&q.id).is_some());
            if queries.len() < before {
                log::info!("retrieving {} judged of {before} queries", queries.len());
            }
        }
        let expander = Arc::new(build_expander(&config)?);
        let embedder = build_embedder(&config);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            base: config,
            corpus,
            queries,
            qrels,
            expander,
            embedder,
            pool,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.base
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn qrels(&self) -> Option<&Qrels> {
        self.qrels.as_ref()
    }

    pub fn expander(&self) -> &Expander {
        &self.expander
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    /// LLM completions requested so far through this workspace.
    pub fn provider_calls(&self) -> u64 {
        self.expander.client().calls()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Digest of everything that determines the document index contents.
    pub fn index_fingerprint(&self, config: &ExperimentConfig) -> Result<String> {
        let (_, n_doc) = config.topic_counts()?;
        let mut d = FieldDigest::new()
            .field(FINGERPRINT_SCHEME)
            .field(self.corpus.digest())
            .field(config.retriever.as_str())
            .field(n_doc.to_string());
        if n_doc > 0 {
            let settings = self.expander.settings();
            d = d
                .field(&settings.model_id)
                .field(TDE_PROMPT_VERSION)
                .field(settings.doc_budget.to_string());
        }
        match config.retriever {
            Retriever::Sparse => {
                d = d
                    .field(serde_json::to_string(&config.tokenizer).expect("tokenizer config serializes"))
                    .field(serde_json::to_string(&config.bm25).expect("bm25 params serialize"));
            }
            Retriever::Dense => {
                let e = &self.embedder;
                d = d
                    .field(e.model_id())
                    .field(e.dimension().to_string())
                    .field(e.passage_prefix());
            }
        }
        Ok(d.hex())
    }

    /// Expands every document with `n_doc` topics, cache first. Items whose
    /// expansion fails fall back to their original text; the stage aborts
    /// when the failure rate exceeds the configured ceiling.
    pub fn expand_corpus(&self, n_doc: usize) -> Result<(Vec<ExpandedDocument>, usize)> {
        let results: Vec<Result<ExpandedDocument>> = self.install(|| {
            self.corpus
                .documents()
                .par_iter()
                .map(|d| self.expander.expand_document(d, n_doc))
                .collect()
        });
        self.collect_with_budget(results, self.corpus.documents(), n_doc, ExpandedDocument::identity, |e| {
            e.topics.is_none()
        })
    }

    pub fn expand_queries(&self, n_query: usize, repeat_factor: usize) -> Result<(Vec<ExpandedQuery>, usize)> {
        let results: Vec<Result<ExpandedQuery>> = self.install(|| {
            self.queries
                .par_iter()
                .map(|q| self.expander.expand_query(q, n_query, repeat_factor))
                .collect()
        });
        self.collect_with_budget(results, &self.queries, n_query, ExpandedQuery::identity, |e| {
            e.topics.is_none()
        })
    }

    fn collect_with_budget<S, T>(
        &self,
        results: Vec<Result<T>>,
        sources: &[S],
        n: usize,
        identity: impl Fn(&S) -> T,
        degraded: impl Fn(&T) -> bool,
    ) -> Result<(Vec<T>, usize)> {
        if n == 0 {
            return Ok((results.into_iter().collect::<Result<_>>()?, 0));
        }
        let mut out = Vec::with_capacity(results.len());
        let mut failures = 0usize;
        let mut first_error = None;
        for (result, source) in results.into_iter().zip(sources) {
            match result {
                Ok(item) => {
                    if degraded(&item) {
                        failures += 1;
                    }
                    out.push(item);
                }
                Err(Error::Provider(e)) => {
                    log::warn!("expansion failed, using original text: {e}");
                    self.expander.record_failure();
                    failures += 1;
                    first_error.get_or_insert(e);
                    out.push(identity(source));
                }
                Err(e) => return Err(e),
            }
        }
        let rate = failures as f64 / sources.len().max(1) as f64;
        if rate > self.base.failure_ceiling {
            return Err(match first_error {
                Some(e) => Error::Provider(e),
                None => Error::InvalidData(format!(
                    "{failures} of {} expansions produced no topics (ceiling {})",
                    sources.len(),
                    self.base.failure_ceiling
                )),
            });
        }
        Ok((out, failures))
    }

    /// Builds or reloads the document index for `config`.
    pub fn offline_stage(&self, config: &ExperimentConfig) -> Result<IndexHandle> {
        let (_, n_doc) = config.topic_counts()?;
        let fingerprint = self.index_fingerprint(config)?;
        let dir = self.base.cache_dir.join("indices").join(&fingerprint);
        if dir.join(COMPLETE_MARKER).exists() {
            let kind = match config.retriever {
                Retriever::Sparse => IndexKind::Sparse(sparse::load_index(&dir)?.0),
                Retriever::Dense => IndexKind::Dense(dense::load_vector_index(&dir)?),
            };
            log::info!("reusing index {}", &fingerprint[..12]);
            return Ok(IndexHandle {
                fingerprint,
                dir,
                kind,
                reused: true,
                expansion_failures: 0,
            });
        }

        let (expanded, failures) = self.expand_corpus(n_doc)?;
        let docs: Vec<(String, String)> = expanded.iter().map(|e| (e.source.id.clone(), e.index_text())).collect();
        let staging = dir.with_extension(format!("tmp{}", std::process::id()));
        let kind = match config.retriever {
            Retriever::Sparse => {
                let index = self.install(|| sparse::build_index(&docs, &config.tokenizer))?;
                sparse::save_index(&index, &config.bm25, &staging)?;
                IndexKind::Sparse(index)
            }
            Retriever::Dense => {
                let index = self.install(|| dense::build_vector_index(&docs, self.embedder.as_ref()))?;
                dense::save_vector_index(&index, &staging)?;
                IndexKind::Dense(index)
            }
        };
        write_file(&staging.join(COMPLETE_MARKER), fingerprint.as_bytes())?;
        if fs::rename(&staging, &dir).is_err() {
            // another process finished the same index first
            let _ = fs::remove_dir_all(&staging);
        }
        Ok(IndexHandle {
            fingerprint,
            dir,
            kind,
            reused: false,
            expansion_failures: failures,
        })
    }

    /// Expands queries and retrieves `max(k)` documents for each.
    pub fn online_stage(&self, config: &ExperimentConfig, index: &IndexHandle) -> Result<(Run, usize)> {
        let expected = self.index_fingerprint(config)?;
        if index.fingerprint != expected {
            return Err(Error::Config(format!(
                "index {} does not match this configuration ({})",
                &index.fingerprint[..12],
                &expected[..12]
            )));
        }
        let (n_query, _) = config.topic_counts()?;
        let (expanded, failures) = self.expand_queries(n_query, config.effective_repeat())?;
        let k = config.metrics.max_k();
        let options = SearchOptions {
            pad_zero_scores: config.pad_zero_scores,
        };
        let rankings: Vec<Result<Vec<(String, f64)>>> = self.install(|| {
            expanded
                .par_iter()
                .map(|q| match &index.kind {
                    IndexKind::Sparse(idx) => Ok(sparse::search(idx, &q.surface_text, k, &config.bm25, options)),
                    IndexKind::Dense(idx) => dense::search(idx, &q.surface_text, k, self.embedder.as_ref()),
                })
                .collect()
        });
        let mut run = Run::new(config.run_tag.clone());
        for (q, ranking) in expanded.iter().zip(rankings) {
            run.insert(q.source.id.clone(), ranking?)?;
        }
        Ok((run, failures))
    }

    /// Offline stage, online stage and evaluation, with every artifact
    /// written under `config.out_dir`.
    pub fn run_experiment(&self, config: &ExperimentConfig) -> Result<RunArtifacts> {
        config.validate()?;
        let (n_query, n_doc) = config.topic_counts()?;
        let calls_before = self.provider_calls();
        let hits_before = self.expander.stats().cache_hits;
        let mut timings = BTreeMap::new();

        let t = Instant::now();
        let index = self.offline_stage(config)?;
        timings.insert("offline".to_string(), t.elapsed().as_secs_f64());

        let t = Instant::now();
        let (run, query_failures) = self.online_stage(config, &index)?;
        timings.insert("online".to_string(), t.elapsed().as_secs_f64());

        let out = &config.out_dir;
        let run_path = out.join("run.trec");
        write_run(&run, &run_path)?;

        let t = Instant::now();
        let (report, metrics_csv, metrics_text) = match &self.qrels {
            Some(qrels) => {
                let report = evaluate(&run, qrels, &config.metrics)?;
                let csv = out.join("metrics.csv");
                let txt = out.join("metrics.txt");
                write_file(&csv, report.to_csv())?;
                write_file(&txt, report.to_text())?;
                (Some(report), Some(csv), Some(txt))
            }
            None => (None, None, None),
        };
        timings.insert("evaluate".to_string(), t.elapsed().as_secs_f64());

        let mut snapshot = config.clone();
        snapshot.mode = Mode::for_counts(n_query, n_doc);
        snapshot.n_query = Some(n_query);
        snapshot.n_doc = Some(n_doc);
        let config_snapshot = out.join("config.toml");
        write_file(&config_snapshot, snapshot.to_toml())?;

        let mut prompt_versions = Vec::new();
        if n_query > 0 {
            prompt_versions.push(crate::expansion::TQE_PROMPT_VERSION.to_string());
        }
        if n_doc > 0 {
            prompt_versions.push(TDE_PROMPT_VERSION.to_string());
        }
        let artifacts = RunArtifacts {
            mode: snapshot.mode,
            retriever: config.retriever,
            n_query,
            n_doc,
            run_path,
            metrics_csv,
            metrics_text,
            config_snapshot,
            index_fingerprint: index.fingerprint.clone(),
            index_reused: index.reused,
            llm_model: self.expander.settings().model_id.clone(),
            prompt_versions,
            doc_expansion_failures: index.expansion_failures,
            query_expansion_failures: query_failures,
            provider_calls: self.provider_calls() - calls_before,
            cache_hits: self.expander.stats().cache_hits - hits_before,
            timings,
            report,
        };
        write_file(
            &out.join("artifacts.json"),
            serde_json::to_string_pretty(&artifacts).expect("artifacts serialize"),
        )?;
        Ok(artifacts)
    }
}

pub fn offline_stage(config: &ExperimentConfig) -> Result<IndexHandle> {
    Workspace::open(config.clone())?.offline_stage(config)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    Workspace::open(config.clone())?.run_experiment(config)
}
