//! Dense retrieval: embedding providers, an exact vector index and cosine
//! top-k search.

mod embedder;
mod index;
mod persist;

pub use embedder::{
    cosine, embed, EmbedRole, Embedder, EmbeddingConfig, HashingEmbedder, HttpEmbedder, DEFAULT_EMBED_CREDENTIAL_ENV,
};
pub use index::{build_vector_index, search, VectorIndex};
pub use persist::{load_vector_index, save_vector_index, VECTOR_FORMAT_VERSION};
