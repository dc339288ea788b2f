//! Documents, queries, relevance judgments and TREC run files.
//!
//! Corpus and query files use one JSON record per line (`_id`, `title`,
//! `text`); a plain `id<TAB>text` line is accepted as a fallback for small
//! fixtures. Qrels are `query-id<TAB>corpus-id<TAB>score` rows (an optional
//! header is skipped, four-column TREC qrels are also understood). Runs use
//! the six-column TREC format `qid Q0 docid rank score tag`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::FieldDigest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Ordered document collection with total id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (ordinal, doc) in docs.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::InvalidData(format!(
                    "document at position {ordinal} has an empty id"
                )));
            }
            if doc.title.is_empty() && doc.text.is_empty() {
                return Err(Error::InvalidData(format!(
                    "document `{}` has neither title nor text",
                    doc.id
                )));
            }
            if by_id.insert(doc.id.clone(), ordinal).is_some() {
                return Err(Error::DuplicateId {
                    kind: "document",
                    id: doc.id.clone(),
                    path: Default::default(),
                });
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    /// SHA-256 over every document's id, title and text, in corpus order.
    pub fn digest(&self) -> String {
        let mut digest = FieldDigest::new();
        for doc in &self.docs {
            digest.push(&doc.id);
            digest.push(&doc.title);
            digest.push(&doc.text);
        }
        digest.hex()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(rename = "_id")]
    id: Option<serde_json::Value>,
    #[serde(default)]
    title: Option<String>,
    text: Option<String>,
}

struct Record {
    id: String,
    title: String,
    text: String,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_record(path: &Path, line_no: usize, line: &str) -> Result<Record> {
    if line.trim_start().starts_with('{') {
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, line_no, format!("invalid record: {e}")))?;
        let id = match raw.id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(_) => return Err(Error::format(path, line_no, "`_id` must be a string")),
            None => return Err(Error::format(path, line_no, "missing `_id` field")),
        };
        let text = raw
            .text
            .ok_or_else(|| Error::format(path, line_no, "missing `text` field"))?;
        Ok(Record {
            id,
            title: raw.title.unwrap_or_default(),
            text,
        })
    } else {
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, line_no, "expected `id<TAB>text`"))?;
        Ok(Record {
            id: id.trim().to_string(),
            title: String::new(),
            text: text.to_string(),
        })
    }
}

fn records(path: &Path) -> Result<Vec<(usize, Record)>> {
    let content = read_to_string(path)?;
    content
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| parse_record(path, i + 1, line).map(|r| (i + 1, r)))
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, rec) in records(path)? {
        if rec.id.is_empty() {
            return Err(Error::format(path, line_no, "empty `_id`"));
        }
        if rec.title.is_empty() && rec.text.is_empty() {
            return Err(Error::format(path, line_no, "both `title` and `text` are empty"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId {
                kind: "document",
                id: rec.id,
                path: path.to_path_buf(),
            });
        }
        docs.push(Document {
            id: rec.id,
            title: rec.title,
            text: rec.text,
        });
    }
    if docs.is_empty() {
        log::warn!("{}: corpus file contains no documents", path.display());
    }
    Corpus::from_documents(docs)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, rec) in records(path)? {
        if rec.id.is_empty() {
            return Err(Error::format(path, line_no, "empty `_id`"));
        }
        if rec.text.trim().is_empty() {
            return Err(Error::format(path, line_no, "empty query `text`"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId {
                kind: "query",
                id: rec.id,
                path: path.to_path_buf(),
            });
        }
        queries.push(Query {
            id: rec.id,
            text: rec.text,
        });
    }
    if queries.is_empty() {
        log::warn!("{}: query file contains no queries", path.display());
    }
    Ok(queries)
}

/// Graded judgments: query id -> (doc id -> grade).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels(BTreeMap<String, BTreeMap<String, u32>>);

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment, returning the previous grade if one existed.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.0
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.0.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.0.get(query_id)?.get(doc_id).copied()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    let mut qrels = Qrels::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if line_no == 1 && fields.first() == Some(&"query-id") {
            continue;
        }
        let (qid, did, score) = match fields.as_slice() {
            [q, d, s] => (*q, *d, *s),
            // TREC qrels: qid iteration docid grade
            [q, _, d, s] => (*q, *d, *s),
            _ => {
                return Err(Error::format(
                    path,
                    line_no,
                    format!("expected 3 or 4 columns, found {}", fields.len()),
                ))
            }
        };
        if qid.is_empty() || did.is_empty() {
            return Err(Error::format(path, line_no, "empty query or document id"));
        }
        let grade: i64 = score
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("non-integer score `{score}`")))?;
        let grade = u32::try_from(grade)
            .map_err(|_| Error::format(path, line_no, format!("negative score `{score}`")))?;
        if let Some(old) = qrels.insert(qid, did, grade) {
            log::warn!(
                "{}:{line_no}: duplicate judgment ({qid}, {did}); {old} replaced by {grade}",
                path.display()
            );
        }
    }
    Ok(qrels)
}

/// Ranked retrieval results for a set of queries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    pub tag: String,
    results: BTreeMap<String, Vec<(String, f64)>>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            results: BTreeMap::new(),
        }
    }

    /// Sets the ranking for one query. The ranking must have unique doc ids,
    /// finite scores, and be sorted by non-increasing score.
    pub fn insert(&mut self, query_id: impl Into<String>, ranking: Vec<(String, f64)>) -> Result<()> {
        let query_id = query_id.into();
        validate_ranking(&query_id, &ranking)?;
        self.results.insert(query_id, ranking);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.results.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.results.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.results.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    /// Renders the run in TREC format. Scores use the shortest decimal form
    /// that parses back to the same `f64`.
    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (qid, ranking) in &self.results {
            for (rank, (did, score)) in ranking.iter().enumerate() {
                let _ = writeln!(out, "{qid} Q0 {did} {} {score:?} {}", rank + 1, self.tag);
            }
        }
        out
    }
}

fn validate_ranking(query_id: &str, ranking: &[(String, f64)]) -> Result<()> {
    if query_id.is_empty() || query_id.contains(char::is_whitespace) {
        return Err(Error::InvalidData(format!("invalid query id `{query_id}` in run")));
    }
    let mut seen = HashSet::with_capacity(ranking.len());
    for (i, (did, score)) in ranking.iter().enumerate() {
        if did.is_empty() || did.contains(char::is_whitespace) {
            return Err(Error::InvalidData(format!("invalid doc id `{did}` in run")));
        }
        if !score.is_finite() {
            return Err(Error::InvalidData(format!("non-finite score for ({query_id}, {did})")));
        }
        if !seen.insert(did.as_str()) {
            return Err(Error::InvalidData(format!("doc `{did}` repeated for query `{query_id}`")));
        }
        if i > 0 && ranking[i - 1].1 < *score {
            return Err(Error::InvalidData(format!(
                "scores increase at rank {} for query `{query_id}`",
                i + 1
            )));
        }
    }
    Ok(())
}

pub fn write_run(run: &Run, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if run.tag.is_empty() || run.tag.contains(char::is_whitespace) {
        return Err(Error::InvalidData(format!("invalid run tag `{}`", run.tag)));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, run.to_trec_string()).map_err(|e| Error::io(path, e))
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    parse_run(path, &content)
}

pub(crate) fn parse_run(path: &Path, content: &str) -> Result<Run> {
    let mut tag: Option<String> = None;
    let mut rows: BTreeMap<String, Vec<(usize, usize, String, f64)>> = BTreeMap::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _q0, did, rank, score, run_tag] = fields.as_slice() else {
            return Err(Error::format(path, line_no, "expected six columns"));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("invalid rank `{rank}`")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("invalid score `{score}`")))?;
        match &tag {
            None => tag = Some(run_tag.to_string()),
            Some(t) if t != run_tag => {
                return Err(Error::format(path, line_no, "mixed run tags in one file"))
            }
            Some(_) => {}
        }
        rows.entry(qid.to_string())
            .or_default()
            .push((rank, line_no, did.to_string(), score));
    }
    let mut run = Run::new(tag.unwrap_or_default());
    for (qid, mut entries) in rows {
        entries.sort_by_key(|&(rank, line_no, _, _)| (rank, line_no));
        for (expected, &(rank, line_no, _, _)) in entries.iter().enumerate() {
            if rank != expected + 1 {
                return Err(Error::format(
                    path,
                    line_no,
                    format!("non-contiguous rank {rank} for query `{qid}`, expected {}", expected + 1),
                ));
            }
        }
        let ranking = entries.into_iter().map(|(_, _, d, s)| (d, s)).collect();
        run.insert(qid, ranking).map_err(|e| match e {
            Error::InvalidData(msg) => Error::format(path, 0, msg),
            other => other,
        })?;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn corpus_record_maps_fields() {
        let f = file("{\"_id\":\"d1\",\"title\":\"\",\"text\":\"the cat sat\"}\n");
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.documents()[0], Document::new("d1", "", "the cat sat"));
        assert_eq!(corpus.get("d1").unwrap().text, "the cat sat");
    }

    #[test]
    fn corpus_duplicate_id_rejected() {
        let f = file("{\"_id\":\"x\",\"text\":\"a\"}\n{\"_id\":\"x\",\"text\":\"b\"}\n");
        assert!(matches!(load_corpus(f.path()), Err(Error::DuplicateId { .. })));
    }

    #[test]
    fn corpus_missing_field_names_line() {
        let f = file("{\"_id\":\"a\",\"text\":\"ok\"}\n{\"_id\":\"b\",\"title\":\"t\"}\n");
        match load_corpus(f.path()) {
            Err(Error::Format { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("text"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = file("{\"text\":\"ok\"}\n");
        assert!(matches!(load_corpus(f.path()), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn corpus_tsv_fallback() {
        let f = file("d1\tfirst doc\nd2\tsecond doc\n");
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.get("d2").unwrap().text, "second doc");
    }

    #[test]
    fn queries_load_and_reject_empty_text() {
        let f = file("{\"_id\":\"q1\",\"text\":\"heart attack causes\"}\n");
        assert_eq!(load_queries(f.path()).unwrap(), vec![Query::new("q1", "heart attack causes")]);
        let f = file("{\"_id\":\"q1\",\"text\":\"\"}\n");
        assert!(matches!(load_queries(f.path()), Err(Error::Format { .. })));
        let f = file("");
        assert!(load_queries(f.path()).unwrap().is_empty());
    }

    #[test]
    fn qrels_rows_and_header() {
        let f = file("q1\td2\t1\n");
        let q = load_qrels(f.path()).unwrap();
        assert_eq!(q.grade("q1", "d2"), Some(1));
        let f = file("query-id\tcorpus-id\tscore\nq1\td2\t1\n");
        let q = load_qrels(f.path()).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.get("q1").unwrap().len(), 1);
        let f = file("q1\td2\thigh\n");
        assert!(matches!(load_qrels(f.path()), Err(Error::Format { .. })));
        let f = file("q1\td2\t-1\n");
        assert!(matches!(load_qrels(f.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn qrels_last_row_wins_and_trec_layout() {
        let f = file("q1\td2\t1\nq1\td2\t3\n");
        assert_eq!(load_qrels(f.path()).unwrap().grade("q1", "d2"), Some(3));
        let f = file("q7 0 d9 2\n");
        assert_eq!(load_qrels(f.path()).unwrap().grade("q7", "d9"), Some(2));
    }

    #[test]
    fn run_text_layout() {
        let mut run = Run::new("tcde");
        run.insert("q1", vec![("d2".into(), 3.5), ("d1".into(), 1.0)]).unwrap();
        assert_eq!(run.to_trec_string(), "q1 Q0 d2 1 3.5 tcde\nq1 Q0 d1 2 1.0 tcde\n");
    }

    #[test]
    fn run_rejects_bad_rankings() {
        let mut run = Run::new("t");
        assert!(run.insert("q", vec![("a".into(), 1.0), ("a".into(), 0.5)]).is_err());
        assert!(run.insert("q", vec![("a".into(), 1.0), ("b".into(), 2.0)]).is_err());
        assert!(run.insert("q", vec![("a".into(), f64::NAN)]).is_err());
    }

    #[test]
    fn run_load_rejects_rank_gaps() {
        let f = file("q1 Q0 d1 1 2.0 t\nq1 Q0 d2 3 1.0 t\n");
        assert!(matches!(load_run(f.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn run_round_trip_keeps_tied_order() {
        let mut run = Run::new("tag");
        run.insert("q1", vec![("z".into(), 1.0), ("a".into(), 1.0), ("m".into(), 0.25)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.trec");
        write_run(&run, &path).unwrap();
        assert_eq!(load_run(&path).unwrap(), run);
    }
}
