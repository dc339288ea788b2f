//! Topic-centric dual expansion (TCDE) for retrieval experiments.
//!
//! Queries are expanded with LLM-generated topic pseudo-documents, documents
//! with LLM-generated topic sentences, and the expanded pair is matched by
//! BM25 or by embedding cosine similarity. The crate also carries the
//! evaluation, ablation, sweep and alignment harnesses used to study the
//! effect of each expansion direction.

pub mod alignment;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod hash;
pub mod llm;
pub mod rank;
pub mod runner;
pub mod sparse;

pub use error::{Error, Result};
