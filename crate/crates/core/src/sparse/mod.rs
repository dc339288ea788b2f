//! Sparse retrieval: tokenization, inverted index and BM25 ranking.

mod index;
mod persist;
mod tokenizer;

pub use index::{bm25_score, build_index, search, Bm25Params, InvertedIndex, SearchOptions};
pub use persist::{load_index, save_index, INDEX_FORMAT_VERSION};
pub use tokenizer::{tokenize, TokenizerConfig, ENGLISH_STOPWORDS};
