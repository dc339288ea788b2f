//! Topic-centric query and document expansion.
//!
//! Queries are expanded with `N` topic-focused pseudo-documents and the
//! original query repeated `repeat_factor` times; documents are expanded by
//! appending `N` one-sentence topic summaries. `N = 0` always yields the
//! unexpanded text without touching the LLM.

mod cache;
mod compose;
mod parse;
mod prompts;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CacheRecord, ExpansionCache};
pub use compose::{compose_expanded_document, compose_expanded_query, DEFAULT_REPEAT_FACTOR};
pub use parse::parse_topics;
pub use prompts::{
    build_tde_prompt, build_tqe_prompt, truncate_chars, DEFAULT_DOC_BUDGET, TDE_PROMPT_VERSION, TDE_TEMPLATE,
    TQE_PROMPT_VERSION, TQE_TEMPLATE,
};

use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicKind {
    /// Query-side topic pseudo-documents.
    Tqe,
    /// Document-side topic sentences.
    Tde,
}

impl TopicKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopicKind::Tqe => "tqe",
            TopicKind::Tde => "tde",
        }
    }

    pub fn prompt_version(self) -> &'static str {
        match self {
            TopicKind::Tqe => TQE_PROMPT_VERSION,
            TopicKind::Tde => TDE_PROMPT_VERSION,
        }
    }
}

/// Topics produced by one LLM call, in generation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSet {
    pub topics: Vec<String>,
    pub kind: TopicKind,
    pub requested: usize,
    pub model_id: String,
    pub prompt_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedQuery {
    pub source: Query,
    pub topics: Option<TopicSet>,
    pub surface_text: String,
    pub repeat_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedDocument {
    pub source: Document,
    pub topics: Option<TopicSet>,
    pub surface_text: String,
}

/// LLM decoding and prompt settings used by [`Expander`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    /// Characters of document text substituted into the document prompt.
    pub doc_budget: usize,
}

impl Default for ExpansionSettings {
    fn default() -> Self {
        Self {
            model_id: "qwen-turbo".to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: 1024,
            timeout_secs: 60,
            doc_budget: DEFAULT_DOC_BUDGET,
        }
    }
}

/// Counters describing one expander's activity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionStats {
    pub cache_hits: u64,
    pub generated: u64,
    pub failures: u64,
}

/// Cache-first expansion driver.
pub struct Expander {
    client: Arc<LlmClient>,
    cache: Arc<ExpansionCache>,
    settings: ExpansionSettings,
    cache_hits: AtomicU64,
    generated: AtomicU64,
    failures: AtomicU64,
}

impl Expander {
    pub fn new(client: Arc<LlmClient>, cache: Arc<ExpansionCache>, settings: ExpansionSettings) -> Self {
        Self {
            client,
            cache,
            settings,
            cache_hits: AtomicU64::new(0),
            generated: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        }
    }

    pub fn settings(&self) -> &ExpansionSettings {
        &self.settings
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    pub fn cache(&self) -> &ExpansionCache {
        &self.cache
    }

    pub fn stats(&self) -> ExpansionStats {
        ExpansionStats {
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            generated: self.generated.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }

    /// Counts an item that fell back to its unexpanded text.
    pub fn record_failure(&self) {
        self.failures.fetch_add(1, Ordering::Relaxed);
    }

    /// Topics for `source_text`, or `None` when the LLM output held none.
    fn topics(&self, kind: TopicKind, source_id: &str, source_text: &str, prompt: String, n: usize) -> Result<Option<TopicSet>> {
        let model_id = &self.settings.model_id;
        let key = cache_key(kind, kind.prompt_version(), model_id, n, source_text);
        if let Some(record) = self.cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Some(record.topic_set()));
        }
        let request = CompletionRequest {
            model_id: model_id.clone(),
            prompt,
            temperature: self.settings.temperature,
            max_output_tokens: self.settings.max_output_tokens,
            timeout: Duration::from_secs(self.settings.timeout_secs),
        };
        let raw = self.client.complete(&request)?;
        match TopicSet::parse(&raw, n, kind, model_id) {
            Ok(set) => {
                self.generated.fetch_add(1, Ordering::Relaxed);
                self.cache.put(CacheRecord::new(key, source_id, raw, &set))?;
                Ok(Some(set))
            }
            Err(Error::EmptyExpansion) => {
                log::warn!("{kind:?} expansion of `{source_id}` produced no topics; using original text");
                self.record_failure();
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn expand_query(&self, query: &Query, n: usize, repeat_factor: usize) -> Result<ExpandedQuery> {
        if n == 0 {
            return Ok(ExpandedQuery::identity(query));
        }
        let prompt = build_tqe_prompt(&query.text, n);
        Ok(match self.topics(TopicKind::Tqe, &query.id, &query.text, prompt, n)? {
            Some(set) => compose_expanded_query(query, set, repeat_factor),
            None => ExpandedQuery::identity(query),
        })
    }

    pub fn expand_document(&self, doc: &Document, n: usize) -> Result<ExpandedDocument> {
        if n == 0 {
            return Ok(ExpandedDocument::identity(doc));
        }
        let budget = self.settings.doc_budget;
        let source = truncate_chars(&doc.text, budget);
        let prompt = build_tde_prompt(&doc.text, n, budget);
        Ok(match self.topics(TopicKind::Tde, &doc.id, source, prompt, n)? {
            Some(set) => compose_expanded_document(doc, set),
            None => ExpandedDocument::identity(doc),
        })
    }
}
