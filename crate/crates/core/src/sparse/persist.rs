//! On-disk layout: `meta.json` plus a little-endian `postings.bin`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::index::{Bm25Params, InvertedIndex, Posting};
use super::tokenizer::TokenizerConfig;
use crate::error::{Error, Result};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TCDEPST1";

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    doc_count: usize,
    avgdl: f64,
    params: Bm25Params,
    tokenizer: TokenizerConfig,
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn save_index(index: &InvertedIndex, params: &Bm25Params, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        format_version: INDEX_FORMAT_VERSION,
        doc_count: index.doc_count(),
        avgdl: index.avgdl,
        params: *params,
        tokenizer: index.tokenizer.clone(),
    };
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta).expect("index metadata serializes");
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;

    let bin_path = dir.join("postings.bin");
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&bin_path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(index.doc_ids.len() as u32)?;
        for (id, len) in index.doc_ids.iter().zip(&index.doc_lengths) {
            write_str(&mut w, id)?;
            w.write_u32::<LittleEndian>(*len)?;
        }
        w.write_u32::<LittleEndian>(index.terms.len() as u32)?;
        for (term, list) in index.terms.iter().zip(&index.postings) {
            write_str(&mut w, term)?;
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for p in list {
                w.write_u32::<LittleEndian>(p.doc)?;
                w.write_u32::<LittleEndian>(p.tf)?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(&bin_path, e))
}

pub fn load_index(dir: impl AsRef<Path>) -> Result<(InvertedIndex, Bm25Params)> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text)
        .map_err(|e| Error::format(&meta_path, 0, format!("invalid index metadata: {e}")))?;
    if meta.format_version != INDEX_FORMAT_VERSION {
        return Err(Error::InvalidData(format!(
            "{}: index format version {} does not match supported version {INDEX_FORMAT_VERSION}",
            meta_path.display(),
            meta.format_version
        )));
    }

    let bin_path = dir.join("postings.bin");
    let read = || -> std::io::Result<InvertedIndex> {
        let mut r = BufReader::new(File::open(&bin_path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "bad postings magic"));
        }
        let n_docs = r.read_u32::<LittleEndian>()? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs);
        let mut doc_lengths = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            doc_ids.push(read_str(&mut r)?);
            doc_lengths.push(r.read_u32::<LittleEndian>()?);
        }
        let n_terms = r.read_u32::<LittleEndian>()? as usize;
        let mut terms = Vec::with_capacity(n_terms);
        let mut vocab = HashMap::with_capacity(n_terms);
        let mut postings = Vec::with_capacity(n_terms);
        for t in 0..n_terms {
            let term = read_str(&mut r)?;
            let n = r.read_u32::<LittleEndian>()? as usize;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let doc = r.read_u32::<LittleEndian>()?;
                let tf = r.read_u32::<LittleEndian>()?;
                list.push(Posting { doc, tf });
            }
            vocab.insert(term.clone(), t as u32);
            terms.push(term);
            postings.push(list);
        }
        Ok(InvertedIndex {
            terms,
            vocab,
            postings,
            doc_lengths,
            doc_ids,
            avgdl: meta.avgdl,
            tokenizer: meta.tokenizer.clone(),
        })
    };
    let index = read().map_err(|e| Error::io(&bin_path, e))?;
    if index.doc_count() != meta.doc_count {
        return Err(Error::InvalidData(format!(
            "{}: metadata lists {} documents, postings hold {}",
            dir.display(),
            meta.doc_count,
            index.doc_count()
        )));
    }
    Ok((index, meta.params))
}
