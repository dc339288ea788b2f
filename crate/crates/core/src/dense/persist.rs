//! On-disk layout: `meta.json`, `doc_ids.json` and `vectors.f32`, a packed
//! little-endian row-major `count x dimension` matrix.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::index::VectorIndex;
use crate::error::{Error, Result};

pub const VECTOR_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    model_id: String,
    dimension: usize,
    count: usize,
}

pub fn save_vector_index(index: &VectorIndex, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        format_version: VECTOR_FORMAT_VERSION,
        model_id: index.model_id.clone(),
        dimension: index.dimension,
        count: index.len(),
    };
    let write = |name: &str, bytes: Vec<u8>| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write("meta.json", serde_json::to_vec_pretty(&meta).expect("metadata serializes"))?;
    write("doc_ids.json", serde_json::to_vec(&index.doc_ids).expect("ids serialize"))?;
    let mut packed = vec![0u8; index.vectors.len() * 4];
    LittleEndian::write_f32_into(&index.vectors, &mut packed);
    write("vectors.f32", packed)
}

pub fn load_vector_index(dir: impl AsRef<Path>) -> Result<VectorIndex> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    };
    let meta: Meta = serde_json::from_slice(&read("meta.json")?)
        .map_err(|e| Error::format(dir.join("meta.json"), 0, format!("invalid metadata: {e}")))?;
    if meta.format_version != VECTOR_FORMAT_VERSION {
        return Err(Error::InvalidData(format!(
            "{}: vector index format version {} does not match supported version {VECTOR_FORMAT_VERSION}",
            dir.display(),
            meta.format_version
        )));
    }
    let doc_ids: Vec<String> = serde_json::from_slice(&read("doc_ids.json")?)
        .map_err(|e| Error::format(dir.join("doc_ids.json"), 0, format!("invalid doc ids: {e}")))?;
    let packed = read("vectors.f32")?;
    if doc_ids.len() != meta.count || packed.len() != meta.count * meta.dimension * 4 {
        return Err(Error::InvalidData(format!("{}: vector index files disagree on size", dir.display())));
    }
    let mut vectors = vec![0f32; meta.count * meta.dimension];
    LittleEndian::read_f32_into(&packed, &mut vectors);
    let zero = vectors
        .chunks(meta.dimension.max(1))
        .map(|row| row.iter().all(|x| *x == 0.0))
        .collect();
    Ok(VectorIndex {
        doc_ids,
        vectors,
        zero,
        model_id: meta.model_id,
        dimension: meta.dimension,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{build_vector_index, HashingEmbedder};

    #[test]
    fn round_trip() {
        let e = HashingEmbedder::new(8);
        let docs = vec![("a".to_string(), "alpha".to_string()), ("b".to_string(), "beta".to_string())];
        let idx = build_vector_index(&docs, &e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_vector_index(&idx, dir.path()).unwrap();
        assert_eq!(load_vector_index(dir.path()).unwrap(), idx);
    }

    #[test]
    fn zero_vectors_stay_flagged() {
        let idx = VectorIndex::from_vectors(
            vec!["a".into(), "z".into()],
            vec![vec![3.0, 4.0], vec![0.0, 0.0]],
            "m".into(),
            2,
        );
        assert!(idx.is_zero(1) && !idx.is_zero(0));
        assert_eq!(idx.vector(0), &[0.6, 0.8]);
        let dir = tempfile::tempdir().unwrap();
        save_vector_index(&idx, dir.path()).unwrap();
        assert!(load_vector_index(dir.path()).unwrap().is_zero(1));
    }
}
