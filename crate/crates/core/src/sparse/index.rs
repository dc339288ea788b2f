use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenizer::{tokenize, TokenizerConfig};
use crate::error::{Error, Result};
use crate::rank::top_k;

/// Lucene-style BM25 parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::Config(format!("bm25 k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("bm25 b must lie in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Fill the result list with zero-score documents up to `k`.
    pub pad_zero_scores: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub(crate) terms: Vec<String>,
    pub(crate) vocab: HashMap<String, u32>,
    pub(crate) postings: Vec<Vec<Posting>>,
    pub(crate) doc_lengths: Vec<u32>,
    pub(crate) doc_ids: Vec<String>,
    pub(crate) avgdl: f64,
    pub(crate) tokenizer: TokenizerConfig,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, ordinal: usize) -> u32 {
        self.doc_lengths[ordinal]
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.vocab.get(term).map_or(0, |&t| self.postings[t as usize].len())
    }

    /// `(doc ordinal, term frequency)` pairs for `term`, ascending by ordinal.
    pub fn postings(&self, term: &str) -> Vec<(usize, u32)> {
        self.vocab.get(term).map_or_else(Vec::new, |&t| {
            self.postings[t as usize]
                .iter()
                .map(|p| (p.doc as usize, p.tf))
                .collect()
        })
    }

    pub fn term_frequency(&self, term: &str, ordinal: usize) -> u32 {
        let Some(&t) = self.vocab.get(term) else { return 0 };
        let list = &self.postings[t as usize];
        list.binary_search_by_key(&(ordinal as u32), |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, qtf: u32, df: usize, tf: u32, doc_len: u32, params: &Bm25Params) -> f64 {
        let tf = f64::from(tf);
        let norm = 1.0 - params.b + params.b * f64::from(doc_len) / self.avgdl;
        f64::from(qtf) * self.idf(df) * (tf * (params.k1 + 1.0)) / (tf + params.k1 * norm)
    }
}

/// Builds an index over `(doc id, text)` pairs; ordinals follow input order.
pub fn build_index(docs: &[(String, String)], config: &TokenizerConfig) -> Result<InvertedIndex> {
    let tokenized: Vec<Vec<String>> = docs.par_iter().map(|(_, text)| tokenize(text, config)).collect();

    let mut terms: Vec<String> = Vec::new();
    let mut vocab: HashMap<String, u32> = HashMap::new();
    let mut postings: Vec<Vec<Posting>> = Vec::new();
    let mut doc_lengths = Vec::with_capacity(docs.len());
    let mut total: u64 = 0;

    for (ordinal, tokens) in tokenized.into_iter().enumerate() {
        let mut counts: Vec<(u32, u32)> = Vec::new();
        let mut slot: HashMap<u32, usize> = HashMap::new();
        doc_lengths.push(tokens.len() as u32);
        total += tokens.len() as u64;
        for token in tokens {
            let next_id = terms.len() as u32;
            let term_id = *vocab.entry(token.clone()).or_insert_with(|| {
                terms.push(token);
                postings.push(Vec::new());
                next_id
            });
            match slot.get(&term_id) {
                Some(&i) => counts[i].1 += 1,
                None => {
                    slot.insert(term_id, counts.len());
                    counts.push((term_id, 1));
                }
            }
        }
        for (term_id, tf) in counts {
            postings[term_id as usize].push(Posting {
                doc: ordinal as u32,
                tf,
            });
        }
    }

    if total == 0 {
        return Err(Error::DegenerateCorpus);
    }
    Ok(InvertedIndex {
        terms,
        vocab,
        postings,
        doc_lengths,
        doc_ids: docs.iter().map(|(id, _)| id.clone()).collect(),
        avgdl: total as f64 / docs.len() as f64,
        tokenizer: config.clone(),
    })
}

/// Distinct query terms with their query-side counts, in first-occurrence order.
fn query_term_counts(tokens: &[String]) -> Vec<(&str, u32)> {
    let mut counts: Vec<(&str, u32)> = Vec::new();
    for token in tokens {
        match counts.iter_mut().find(|(t, _)| *t == token.as_str()) {
            Some((_, c)) => *c += 1,
            None => counts.push((token.as_str(), 1)),
        }
    }
    counts
}

/// BM25 score of one document for an already tokenized query. Query terms
/// are weighted by their raw count in `query_tokens`.
pub fn bm25_score(index: &InvertedIndex, query_tokens: &[String], ordinal: usize, params: &Bm25Params) -> f64 {
    let doc_len = index.doc_lengths[ordinal];
    let mut score = 0.0;
    for (term, qtf) in query_term_counts(query_tokens) {
        let Some(&t) = index.vocab.get(term) else { continue };
        let list = &index.postings[t as usize];
        if let Ok(i) = list.binary_search_by_key(&(ordinal as u32), |p| p.doc) {
            score += index.term_weight(qtf, list.len(), list[i].tf, doc_len, params);
        }
    }
    score
}

/// Ranks documents for `query_text`. Ties are broken by ascending doc id.
pub fn search(
    index: &InvertedIndex,
    query_text: &str,
    k: usize,
    params: &Bm25Params,
    options: SearchOptions,
) -> Vec<(String, f64)> {
    let tokens = tokenize(query_text, &index.tokenizer);
    if tokens.is_empty() {
        log::warn!("query tokenized to nothing; returning no results");
        return Vec::new();
    }
    let mut scores = vec![0.0f64; index.doc_count()];
    let mut touched = vec![false; index.doc_count()];
    for (term, qtf) in query_term_counts(&tokens) {
        let Some(&t) = index.vocab.get(term) else { continue };
        let list = &index.postings[t as usize];
        for p in list {
            let d = p.doc as usize;
            scores[d] += index.term_weight(qtf, list.len(), p.tf, index.doc_lengths[d], params);
            touched[d] = true;
        }
    }
    let candidates = scores
        .iter()
        .enumerate()
        .filter(|&(d, _)| options.pad_zero_scores || touched[d])
        .map(|(d, &s)| (d, s));
    top_k(candidates, &index.doc_ids, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> InvertedIndex {
        let docs = vec![
            ("d1".to_string(), "the cat sat".to_string()),
            ("d2".to_string(), "the dog".to_string()),
        ];
        build_index(&docs, &TokenizerConfig::default()).unwrap()
    }

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn counts_on_toy_corpus() {
        let idx = toy();
        assert_eq!(idx.doc_count(), 2);
        assert_eq!(idx.avgdl(), 2.5);
        assert_eq!(idx.doc_freq("the"), 2);
        assert_eq!(idx.doc_freq("cat"), 1);
    }

    #[test]
    fn repeated_token_posting() {
        let idx = build_index(&[("x".into(), "a a a".into())], &TokenizerConfig::default()).unwrap();
        assert_eq!(idx.postings("a"), vec![(0, 3)]);
    }

    #[test]
    fn worked_example_score() {
        let idx = toy();
        let p = Bm25Params::default();
        // ln(2) * 2.5 / (1 + 1.5 * (0.25 + 0.75 * 3 / 2.5))
        let expected = 2f64.ln() * 2.5 / 2.725;
        assert!((bm25_score(&idx, &toks(&["cat"]), 0, &p) - expected).abs() < 1e-12);
        assert!((expected - 0.6359).abs() < 1e-4);
        let hits = search(&idx, "cat", 10, &p, SearchOptions::default());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "d1");
        assert!((hits[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_scores_zero() {
        let idx = toy();
        let p = Bm25Params::default();
        assert_eq!(bm25_score(&idx, &toks(&["zebra"]), 0, &p), 0.0);
        assert_eq!(bm25_score(&idx, &toks(&["zebra"]), 1, &p), 0.0);
        assert!(search(&idx, "zebra", 10, &p, SearchOptions::default()).is_empty());
        let padded = search(&idx, "zebra", 10, &p, SearchOptions { pad_zero_scores: true });
        assert_eq!(padded, vec![("d1".to_string(), 0.0), ("d2".to_string(), 0.0)]);
    }

    #[test]
    fn query_term_count_is_linear() {
        let idx = toy();
        let p = Bm25Params::default();
        let once = bm25_score(&idx, &toks(&["cat"]), 0, &p);
        let twice = bm25_score(&idx, &toks(&["cat", "cat"]), 0, &p);
        assert_eq!(twice, 2.0 * once);
    }

    #[test]
    fn ties_broken_by_doc_id() {
        let docs = vec![
            ("b".to_string(), "same words".to_string()),
            ("a".to_string(), "same words".to_string()),
            ("c".to_string(), "other".to_string()),
        ];
        let idx = build_index(&docs, &TokenizerConfig::default()).unwrap();
        let hits = search(&idx, "same", 1, &Bm25Params::default(), SearchOptions::default());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "a");
    }

    #[test]
    fn degenerate_corpus_rejected() {
        let docs = vec![("a".to_string(), "!!".to_string()), ("b".to_string(), " ".to_string())];
        assert!(matches!(
            build_index(&docs, &TokenizerConfig::default()),
            Err(Error::DegenerateCorpus)
        ));
        assert!(matches!(build_index(&[], &TokenizerConfig::default()), Err(Error::DegenerateCorpus)));
    }

    #[test]
    fn params_validated() {
        assert!(Bm25Params { k1: -1.0, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
        assert!(Bm25Params::default().validate().is_ok());
    }
}
