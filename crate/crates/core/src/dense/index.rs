use super::embedder::{embed, EmbedRole, Embedder};
use crate::error::{Error, Result};
use crate::rank::top_k;

/// Exact vector index. Stored vectors are unit-norm; documents whose
/// embedding is the zero vector are kept as zeros and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    pub(crate) doc_ids: Vec<String>,
    pub(crate) vectors: Vec<f32>,
    pub(crate) zero: Vec<bool>,
    pub(crate) model_id: String,
    pub(crate) dimension: usize,
}

pub(crate) fn normalize(v: &[f32]) -> (Vec<f32>, bool) {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (v.to_vec(), true);
    }
    (v.iter().map(|x| (f64::from(*x) / norm) as f32).collect(), false)
}

impl VectorIndex {
    pub fn from_vectors(doc_ids: Vec<String>, vectors: Vec<Vec<f32>>, model_id: String, dimension: usize) -> Self {
        let mut flat = Vec::with_capacity(vectors.len() * dimension);
        let mut zero = Vec::with_capacity(vectors.len());
        for v in &vectors {
            let (unit, is_zero) = normalize(v);
            flat.extend(unit);
            zero.push(is_zero);
        }
        Self {
            doc_ids,
            vectors: flat,
            zero,
            model_id,
            dimension,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vector(&self, ordinal: usize) -> &[f32] {
        &self.vectors[ordinal * self.dimension..(ordinal + 1) * self.dimension]
    }

    pub fn is_zero(&self, ordinal: usize) -> bool {
        self.zero[ordinal]
    }

    /// Cosine of a unit query vector against every stored vector.
    pub fn scores(&self, unit_query: &[f32]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                if self.zero[i] {
                    return 0.0;
                }
                self.vector(i)
                    .iter()
                    .zip(unit_query)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum()
            })
            .collect()
    }
}

/// Embeds `(doc id, text)` pairs as passages and stores them in input order.
pub fn build_vector_index(docs: &[(String, String)], embedder: &dyn Embedder) -> Result<VectorIndex> {
    if docs.is_empty() {
        return Err(Error::DegenerateCorpus);
    }
    let texts: Vec<String> = docs.iter().map(|(_, t)| t.clone()).collect();
    let vectors = embed(&texts, EmbedRole::Passage, embedder)?;
    let index = VectorIndex::from_vectors(
        docs.iter().map(|(id, _)| id.clone()).collect(),
        vectors,
        embedder.model_id().to_string(),
        embedder.dimension(),
    );
    let zeros = index.zero.iter().filter(|z| **z).count();
    if zeros > 0 {
        log::warn!("{zeros} documents embedded to the zero vector");
    }
    Ok(index)
}

/// Exhaustive cosine search returning exactly `min(k, len)` results,
/// descending by score with ties broken by ascending doc id.
pub fn search(index: &VectorIndex, query_text: &str, k: usize, embedder: &dyn Embedder) -> Result<Vec<(String, f64)>> {
    if embedder.model_id() != index.model_id || embedder.dimension() != index.dimension {
        return Err(Error::Config(format!(
            "index built with `{}` ({}d) but provider is `{}` ({}d)",
            index.model_id,
            index.dimension,
            embedder.model_id(),
            embedder.dimension()
        )));
    }
    let query = embed(&[query_text.to_string()], EmbedRole::Query, embedder)?;
    let (unit, _) = normalize(&query[0]);
    let scores = index.scores(&unit);
    Ok(top_k(scores.into_iter().enumerate(), &index.doc_ids, k))
}
