use super::{ExpandedDocument, ExpandedQuery, TopicKind, TopicSet};
use crate::corpus::{Document, Query};

pub const DEFAULT_REPEAT_FACTOR: usize = 5;

/// Expanded query text: the original query repeated `repeat_factor` times
/// (space separated), a newline, then the topics one per line.
pub fn compose_expanded_query(query: &Query, topics: TopicSet, repeat_factor: usize) -> ExpandedQuery {
    debug_assert_eq!(topics.kind, TopicKind::Tqe);
    let repeat_factor = repeat_factor.max(1);
    let repeated = vec![query.text.as_str(); repeat_factor].join(" ");
    let surface_text = format!("{repeated}\n{}", topics.topics.join("\n"));
    ExpandedQuery {
        source: query.clone(),
        topics: Some(topics),
        surface_text,
        repeat_factor,
    }
}

pub fn compose_expanded_document(doc: &Document, topics: TopicSet) -> ExpandedDocument {
    debug_assert_eq!(topics.kind, TopicKind::Tde);
    let surface_text = format!("{}\n{}", doc.text, topics.topics.join("\n"));
    ExpandedDocument {
        source: doc.clone(),
        topics: Some(topics),
        surface_text,
    }
}

impl ExpandedQuery {
    /// The unexpanded query; no repetition is applied.
    pub fn identity(query: &Query) -> Self {
        Self {
            source: query.clone(),
            topics: None,
            surface_text: query.text.clone(),
            repeat_factor: 1,
        }
    }
}

impl ExpandedDocument {
    pub fn identity(doc: &Document) -> Self {
        Self {
            source: doc.clone(),
            topics: None,
            surface_text: doc.text.clone(),
        }
    }

    /// Text handed to the retrievers: the title (when present) followed by
    /// the surface text.
    pub fn index_text(&self) -> String {
        if self.source.title.is_empty() {
            self.surface_text.clone()
        } else {
            format!("{}\n{}", self.source.title, self.surface_text)
        }
    }
}
