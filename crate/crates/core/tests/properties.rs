use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use tcde_core::corpus::{load_run, write_run, Run};
use tcde_core::dense::{self, build_vector_index, Embedder, HashingEmbedder, VectorIndex};
use tcde_core::expansion::{cache_key, parse_topics, CacheRecord, ExpansionCache, TopicKind, TopicSet};
use tcde_core::hash::fnv1a64;
use tcde_core::llm::{mock_complete, requested_count};
use tcde_core::rank::top_k;

/// Returns fixed vectors looked up by text.
struct TableEmbedder {
    table: HashMap<String, Vec<f32>>,
}

impl Embedder for TableEmbedder {
    fn model_id(&self) -> &str {
        "table"
    }
    fn dimension(&self) -> usize {
        3
    }
    fn batch_limit(&self) -> usize {
        64
    }
    fn query_prefix(&self) -> &str {
        ""
    }
    fn passage_prefix(&self) -> &str {
        ""
    }
    fn embed_batch(&self, texts: &[String]) -> tcde_core::Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.table[t].clone()).collect())
    }
}

fn id_strategy() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_-]{0,7}"
}

fn run_strategy() -> impl Strategy<Value = Run> {
    prop::collection::btree_map(
        id_strategy(),
        prop::collection::btree_set(id_strategy(), 1..8).prop_flat_map(|docs| {
            let n = docs.len();
            (Just(docs), prop::collection::vec(-1e6f64..1e6, n))
        }),
        1..5,
    )
    .prop_map(|queries| {
        let mut run = Run::new("prop");
        for (qid, (docs, mut scores)) in queries {
            scores.sort_by(|a, b| b.total_cmp(a));
            // duplicate a score now and then to exercise tie order
            if scores.len() > 2 {
                scores[1] = scores[0];
            }
            run.insert(qid, docs.into_iter().zip(scores).collect()).unwrap();
        }
        run
    })
}

proptest! {
    #[test]
    fn run_file_round_trip(run in run_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trec");
        write_run(&run, &path).unwrap();
        prop_assert_eq!(load_run(&path).unwrap(), run);
    }

    #[test]
    fn top_k_matches_full_sort(scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.5, -1.0]), 0..30), k in 0usize..40) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("d{:03}", (i * 7) % 101)).collect();
        let mut full: Vec<(String, f64)> = ids.iter().cloned().zip(scores.iter().copied()).collect();
        full.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        full.truncate(k);
        prop_assert_eq!(top_k(scores.iter().copied().enumerate(), &ids, k), full);
    }

    #[test]
    fn dense_search_matches_full_sort(
        vectors in prop::collection::vec(prop::collection::vec(-3i8..=3, 3), 1..500),
        query in prop::collection::vec(-3i8..=3, 3),
        k in 1usize..600,
    ) {
        let as_f32 = |v: &Vec<i8>| v.iter().map(|&x| f32::from(x)).collect::<Vec<f32>>();
        let mut table: HashMap<String, Vec<f32>> = HashMap::new();
        let docs: Vec<(String, String)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                table.insert(format!("v{i}"), as_f32(v));
                (format!("d{:03}", (i * 37) % 1000), format!("v{i}"))
            })
            .collect();
        table.insert("q".into(), as_f32(&query));
        let embedder = TableEmbedder { table };
        let index = build_vector_index(&docs, &embedder).unwrap();
        let hits = dense::search(&index, "q", k, &embedder).unwrap();

        // the query normalized exactly as a stored vector would be
        let unit = VectorIndex::from_vectors(vec!["q".into()], vec![as_f32(&query)], "table".into(), 3);
        let zero_query = unit.is_zero(0);
        let mut oracle: Vec<(String, f64)> = (0..index.len())
            .map(|i| {
                let s = if zero_query || index.is_zero(i) {
                    0.0
                } else {
                    index.vector(i).iter().zip(unit.vector(0)).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
                };
                (index.doc_ids()[i].clone(), s)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        oracle.truncate(k);
        prop_assert_eq!(hits, oracle);
    }

    #[test]
    fn hashing_search_agrees_with_exact_cosine(texts in prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,6}", 1..15), query in "[a-e]{1,3}( [a-e]{1,3}){0,3}", k in 1usize..20) {
        let embedder = HashingEmbedder::new(16);
        let docs: Vec<(String, String)> = texts.iter().enumerate().map(|(i, t)| (format!("d{i:02}"), t.clone())).collect();
        let index = build_vector_index(&docs, &embedder).unwrap();
        let hits = dense::search(&index, &query, k, &embedder).unwrap();
        prop_assert_eq!(hits.len(), k.min(docs.len()));

        // cosine computed in f64 from the token counts
        let counts = |text: &str| {
            let mut v = vec![0f64; 16];
            for tok in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
                v[(fnv1a64(tok.to_lowercase().as_bytes()) % 16) as usize] += 1.0;
            }
            v
        };
        let q = counts(&format!("query: {query}"));
        let cos = |v: &[f64]| {
            let dot: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
            let n = (q.iter().map(|a| a * a).sum::<f64>() * v.iter().map(|a| a * a).sum::<f64>()).sqrt();
            if n == 0.0 { 0.0 } else { dot / n }
        };
        let exact: BTreeMap<String, f64> = docs.iter().map(|(id, t)| (id.clone(), cos(&counts(&format!("passage: {t}"))))).collect();
        for (id, score) in &hits {
            prop_assert!((score - exact[id]).abs() < 1e-5, "{} {} vs {}", id, score, exact[id]);
        }
        let floor = hits.last().unwrap().1;
        for (id, s) in &exact {
            if !hits.iter().any(|(d, _)| d == id) {
                prop_assert!(*s <= floor + 1e-5);
            }
        }
    }

    #[test]
    fn cache_key_separates_every_field(text in ".{0,40}", other in ".{0,40}", n in 1usize..10) {
        let base = cache_key(TopicKind::Tde, "tde-v1", "m", n, &text);
        prop_assert_eq!(&base, &cache_key(TopicKind::Tde, "tde-v1", "m", n, &text));
        prop_assert_ne!(&base, &cache_key(TopicKind::Tqe, "tde-v1", "m", n, &text));
        prop_assert_ne!(&base, &cache_key(TopicKind::Tde, "tde-v2", "m", n, &text));
        prop_assert_ne!(&base, &cache_key(TopicKind::Tde, "tde-v1", "m2", n, &text));
        prop_assert_ne!(&base, &cache_key(TopicKind::Tde, "tde-v1", "m", n + 1, &text));
        if other != text {
            prop_assert_ne!(&base, &cache_key(TopicKind::Tde, "tde-v1", "m", n, &other));
        }
    }

    #[test]
    fn parsed_topics_never_exceed_request(lines in prop::collection::vec("[a-z ]{0,12}", 0..12), n in 1usize..8) {
        let raw: String = lines.iter().enumerate().map(|(i, l)| format!("{}. {l}\n", i + 1)).collect();
        match parse_topics(&raw, n, TopicKind::Tqe) {
            Ok(topics) => {
                prop_assert!(!topics.is_empty() && topics.len() <= n);
                prop_assert!(topics.iter().all(|t| !t.trim().is_empty()));
            }
            Err(e) => prop_assert!(matches!(e, tcde_core::Error::EmptyExpansion)),
        }
    }

    #[test]
    fn mock_output_is_well_formed(query in "[a-z ]{1,30}", n in 1usize..12) {
        let prompt = tcde_core::expansion::build_tqe_prompt(&query, n);
        prop_assert_eq!(requested_count(&prompt), Some(n));
        let out = mock_complete(&prompt);
        let h8 = format!("{:016x}", fnv1a64(prompt.as_bytes()));
        let lines: Vec<&str> = out.lines().collect();
        prop_assert_eq!(lines.len(), n);
        for (i, line) in lines.iter().enumerate() {
            prop_assert_eq!(*line, format!("{}. topic-{}-{}", i + 1, &h8[..8], i + 1));
        }
        prop_assert_eq!(parse_topics(&out, n, TopicKind::Tqe).unwrap().len(), n);
    }
}

/// Independent FNV-1a 64 written from the published constants.
fn reference_fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

#[test]
fn fnv_matches_reference() {
    assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
    assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    for s in ["", "x", "Given a user query", "passage: héllo"] {
        assert_eq!(fnv1a64(s.as_bytes()), reference_fnv(s.as_bytes()));
    }
}

#[test]
fn cache_survives_reopen_and_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let set = |topics: &[&str]| TopicSet {
        topics: topics.iter().map(|t| t.to_string()).collect(),
        kind: TopicKind::Tqe,
        requested: topics.len(),
        model_id: "m".into(),
        prompt_version: "tqe-v1".into(),
    };
    let k1 = cache_key(TopicKind::Tqe, "tqe-v1", "m", 2, "first");
    let k2 = cache_key(TopicKind::Tqe, "tqe-v1", "m", 2, "second");
    {
        let cache = ExpansionCache::open(dir.path()).unwrap();
        cache.put(CacheRecord::new(k1.clone(), "q1", "1. a\n2. b".into(), &set(&["a", "b"]))).unwrap();
    }
    // a writer killed mid-line leaves a partial record behind
    let shard = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let mut f = std::fs::OpenOptions::new().append(true).open(&shard).unwrap();
    std::io::Write::write_all(&mut f, b"{\"key\":\"trunc").unwrap();
    drop(f);
    {
        let cache = ExpansionCache::open(dir.path()).unwrap();
        assert_eq!(cache.get(&k1).unwrap().topics, vec!["a", "b"]);
        cache.put(CacheRecord::new(k2.clone(), "q2", "1. c\n2. d".into(), &set(&["c", "d"]))).unwrap();
    }
    let cache = ExpansionCache::open(dir.path()).unwrap();
    assert_eq!(cache.len(), 2);
    assert_eq!(cache.get(&k2).unwrap().topic_set(), set(&["c", "d"]));
}
