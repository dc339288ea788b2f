//! Topic-centric alignment diagnostics.
//!
//! For a `(query, relevant doc, irrelevant doc)` triple, measures keyword
//! overlap and embedding cosine before and after expansion, and reports
//! whether expansion moved the relevant pair closer and the irrelevant pair
//! apart. Both outcomes are observations, not guarantees.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Corpus, Document, Qrels, Query};
use crate::dense::{embed, cosine, EmbedRole, Embedder};
use crate::error::{Error, Result};
use crate::expansion::Expander;
use crate::sparse::{tokenize, TokenizerConfig};

pub const STOPWORD_LIST_ID: &str = "bundled-english-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTriple {
    pub query: Query,
    pub positive: Document,
    pub negative: Document,
}

impl AlignmentTriple {
    pub fn new(query: Query, positive: Document, negative: Document) -> Result<Self> {
        if positive.id == negative.id {
            return Err(Error::InvalidData(format!(
                "triple for `{}` uses `{}` as both positive and negative",
                query.id, positive.id
            )));
        }
        if query.text.trim().is_empty() || positive.text.trim().is_empty() || negative.text.trim().is_empty() {
            return Err(Error::InvalidData(format!("triple for `{}` has an empty text", query.id)));
        }
        Ok(Self {
            query,
            positive,
            negative,
        })
    }
}

/// Content tokens shared by `a` and `b`, stopwords removed.
pub fn lexical_overlap(a: &str, b: &str) -> BTreeSet<String> {
    let config = TokenizerConfig::with_english_stopwords();
    let left: BTreeSet<String> = tokenize(a, &config).into_iter().collect();
    let right: BTreeSet<String> = tokenize(b, &config).into_iter().collect();
    left.intersection(&right).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAlignment {
    pub overlap_before: BTreeSet<String>,
    pub overlap_after: BTreeSet<String>,
    pub cosine_before: f64,
    pub cosine_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub query_id: String,
    pub positive_id: String,
    pub negative_id: String,
    pub positive: PairAlignment,
    pub negative: PairAlignment,
    /// Expansion raised the relevant pair's cosine.
    pub positive_holds: bool,
    /// Expansion lowered the irrelevant pair's cosine.
    pub negative_holds: bool,
}

/// Expands all three texts with `n` topics (query and documents alike) and
/// compares overlap and cosine before and after.
pub fn analyze_triple(
    triple: &AlignmentTriple,
    expander: &Expander,
    embedder: &dyn Embedder,
    n: usize,
    repeat_factor: usize,
) -> Result<AlignmentReport> {
    let q_plus = expander.expand_query(&triple.query, n, repeat_factor)?;
    let pos_plus = expander.expand_document(&triple.positive, n)?;
    let neg_plus = expander.expand_document(&triple.negative, n)?;

    let pos_before = crate::expansion::ExpandedDocument::identity(&triple.positive).index_text();
    let neg_before = crate::expansion::ExpandedDocument::identity(&triple.negative).index_text();
    let pos_after = pos_plus.index_text();
    let neg_after = neg_plus.index_text();

    let queries = embed(
        &[triple.query.text.clone(), q_plus.surface_text.clone()],
        EmbedRole::Query,
        embedder,
    )?;
    let docs = embed(
        &[pos_before.clone(), pos_after.clone(), neg_before.clone(), neg_after.clone()],
        EmbedRole::Passage,
        embedder,
    )?;

    let positive = PairAlignment {
        overlap_before: lexical_overlap(&triple.query.text, &pos_before),
        overlap_after: lexical_overlap(&q_plus.surface_text, &pos_after),
        cosine_before: cosine(&queries[0], &docs[0])?,
        cosine_after: cosine(&queries[1], &docs[1])?,
    };
    let negative = PairAlignment {
        overlap_before: lexical_overlap(&triple.query.text, &neg_before),
        overlap_after: lexical_overlap(&q_plus.surface_text, &neg_after),
        cosine_before: cosine(&queries[0], &docs[2])?,
        cosine_after: cosine(&queries[1], &docs[3])?,
    };
    Ok(AlignmentReport {
        query_id: triple.query.id.clone(),
        positive_id: triple.positive.id.clone(),
        negative_id: triple.negative.id.clone(),
        positive_holds: positive.cosine_after > positive.cosine_before,
        negative_holds: negative.cosine_after < negative.cosine_before,
        positive,
        negative,
    })
}

/// Reports for a set of triples plus the fraction satisfying each inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentSummary {
    pub embedder_model: String,
    pub topics: usize,
    pub reports: Vec<AlignmentReport>,
    pub positive_fraction: f64,
    pub negative_fraction: f64,
}

impl AlignmentSummary {
    pub fn new(embedder_model: &str, topics: usize, reports: Vec<AlignmentReport>) -> Self {
        let n = reports.len().max(1) as f64;
        let frac = |f: fn(&AlignmentReport) -> bool| reports.iter().filter(|r| f(r)).count() as f64 / n;
        Self {
            embedder_model: embedder_model.to_string(),
            topics,
            positive_fraction: frac(|r| r.positive_holds),
            negative_fraction: frac(|r| r.negative_holds),
            reports,
        }
    }

    fn header(&self) -> String {
        format!(
            "embedder={} topics={} stopwords={STOPWORD_LIST_ID}",
            self.embedder_model, self.topics
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n", self.header());
        for r in &self.reports {
            let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(" ");
            let _ = writeln!(out, "query {} (+{} / -{})", r.query_id, r.positive_id, r.negative_id);
            let _ = writeln!(
                out,
                "  cos(q, d_pos) = {:.4} -> {:.4}   [{}]",
                r.positive.cosine_before,
                r.positive.cosine_after,
                if r.positive_holds { "closer" } else { "not closer" }
            );
            let _ = writeln!(
                out,
                "  cos(q, d_neg) = {:.4} -> {:.4}   [{}]",
                r.negative.cosine_before,
                r.negative.cosine_after,
                if r.negative_holds { "farther" } else { "not farther" }
            );
            let _ = writeln!(out, "  overlap(q, d_pos) before: {{{}}}", join(&r.positive.overlap_before));
            let _ = writeln!(out, "  overlap(q, d_pos) after:  {{{}}}", join(&r.positive.overlap_after));
        }
        let _ = writeln!(
            out,
            "positive pair closer: {:.4}   negative pair farther: {:.4}",
            self.positive_fraction, self.negative_fraction
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\n", self.header());
        out.push_str(
            "query_id,pos_id,neg_id,overlap_pos_before,overlap_pos_after,overlap_neg_before,overlap_neg_after,\
cos_pos_before,cos_pos_after,cos_neg_before,cos_neg_after,positive_holds,negative_holds\n",
        );
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.query_id,
                r.positive_id,
                r.negative_id,
                r.positive.overlap_before.len(),
                r.positive.overlap_after.len(),
                r.negative.overlap_before.len(),
                r.negative.overlap_after.len(),
                r.positive.cosine_before,
                r.positive.cosine_after,
                r.negative.cosine_before,
                r.negative.cosine_after,
                r.positive_holds,
                r.negative_holds
            );
        }
        let _ = writeln!(out, "# positive_fraction={:.6}", self.positive_fraction);
        let _ = writeln!(out, "# negative_fraction={:.6}", self.negative_fraction);
        out
    }
}

/// Reads `query_id<TAB>pos_doc_id<TAB>neg_doc_id` rows.
pub fn load_triples(path: impl AsRef<Path>, queries: &[Query], corpus: &Corpus) -> Result<Vec<AlignmentTriple>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [qid, pos, neg] = fields.as_slice() else {
            return Err(Error::format(path, i + 1, "expected query_id, pos_doc_id, neg_doc_id"));
        };
        let query = queries
            .iter()
            .find(|q| q.id == *qid)
            .ok_or_else(|| Error::format(path, i + 1, format!("unknown query `{qid}`")))?;
        let lookup = |id: &str| {
            corpus
                .get(id)
                .cloned()
                .ok_or_else(|| Error::format(path, i + 1, format!("unknown document `{id}`")))
        };
        triples.push(AlignmentTriple::new(query.clone(), lookup(pos)?, lookup(neg)?)?);
    }
    Ok(triples)
}

/// One triple per judged query: its highest-graded document as positive and
/// a uniformly drawn grade-0 judged document as negative. Queries without
/// a grade-0 judgment are skipped.
pub fn sample_triples(queries: &[Query], corpus: &Corpus, qrels: &Qrels, seed: u64) -> Vec<AlignmentTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for query in queries {
        let Some(judged) = qrels.get(&query.id) else { continue };
        let best = judged
            .iter()
            .filter(|(d, g)| **g > 0 && corpus.get(d).is_some())
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
        let negatives: Vec<&String> = judged
            .iter()
            .filter(|(d, g)| **g == 0 && corpus.get(d).is_some())
            .map(|(d, _)| d)
            .collect();
        let (Some((pos, _)), Some(neg)) = (best, negatives.choose(&mut rng)) else {
            continue;
        };
        if let Ok(t) = AlignmentTriple::new(query.clone(), corpus.get(pos).unwrap().clone(), corpus.get(neg).unwrap().clone()) {
            triples.push(t);
        }
    }
    triples
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dense::HashingEmbedder;
    use crate::expansion::{ExpansionCache, ExpansionSettings};
    use crate::llm::{LlmClient, MockLlm, ScriptedTopics};

    #[test]
    fn overlap_examples() {
        assert_eq!(lexical_overlap("the cat sat", "a cat ran"), BTreeSet::from(["cat".to_string()]));
        assert!(lexical_overlap("red apples", "blue sky").is_empty());
        assert_eq!(
            lexical_overlap("the quick fox", "the quick fox"),
            BTreeSet::from(["fox".to_string(), "quick".to_string()])
        );
    }

    fn expander(scripted: Vec<ScriptedTopics>) -> Expander {
        let mock = MockLlm::with_scripted(scripted);
        let settings = ExpansionSettings {
            model_id: mock.model_id(),
            ..ExpansionSettings::default()
        };
        Expander::new(
            Arc::new(LlmClient::mock(mock)),
            Arc::new(ExpansionCache::in_memory()),
            settings,
        )
    }

    fn triple() -> AlignmentTriple {
        AlignmentTriple::new(
            Query::new("q", "heart attack"),
            Document::new("p", "", "myocardial infarction blocks coronary flow"),
            Document::new("n", "", "a circus clown with balloons"),
        )
        .unwrap()
    }

    #[test]
    fn identity_expansion_changes_nothing() {
        let e = expander(vec![]);
        let r = analyze_triple(&triple(), &e, &HashingEmbedder::default(), 0, 5).unwrap();
        assert_eq!(r.positive.cosine_before, r.positive.cosine_after);
        assert_eq!(r.negative.cosine_before, r.negative.cosine_after);
        assert_eq!(r.positive.overlap_before, r.positive.overlap_after);
        assert!(!r.positive_holds && !r.negative_holds);
    }

    #[test]
    fn flags_match_reported_cosines() {
        let e = expander(vec![
            ScriptedTopics {
                needle: "heart attack".into(),
                topics: vec!["myocardial infarction".into(), "coronary flow".into()],
            },
            ScriptedTopics {
                needle: "myocardial infarction blocks".into(),
                topics: vec!["heart attack".into()],
            },
        ]);
        let r = analyze_triple(&triple(), &e, &HashingEmbedder::default(), 2, 5).unwrap();
        assert_eq!(r.positive_holds, r.positive.cosine_after > r.positive.cosine_before);
        assert_eq!(r.negative_holds, r.negative.cosine_after < r.negative.cosine_before);
        assert!(r.positive_holds);
        assert!(r.positive.overlap_after.contains("infarction"));
        for c in [r.positive.cosine_before, r.positive.cosine_after, r.negative.cosine_before, r.negative.cosine_after] {
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }
        let summary = AlignmentSummary::new("hashing-256", 2, vec![r]);
        assert_eq!(summary.positive_fraction, 1.0);
        assert!(summary.to_csv().lines().nth(1).unwrap().starts_with("query_id,pos_id"));
    }

    #[test]
    fn triple_requires_distinct_documents() {
        let d = Document::new("p", "", "x");
        assert!(AlignmentTriple::new(Query::new("q", "x"), d.clone(), d).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let corpus = Corpus::from_documents(vec![
            Document::new("p", "", "pos"),
            Document::new("n1", "", "neg one"),
            Document::new("n2", "", "neg two"),
            Document::new("n3", "", "neg three"),
        ])
        .unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("q", "p", 2);
        for n in ["n1", "n2", "n3"] {
            qrels.insert("q", n, 0);
        }
        let queries = vec![Query::new("q", "query"), Query::new("unjudged", "x")];
        let a = sample_triples(&queries, &corpus, &qrels, 7);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].positive.id, "p");
        assert_eq!(a, sample_triples(&queries, &corpus, &qrels, 7));
    }
}
