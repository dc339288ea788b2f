//! Ranking metrics with trec_eval-compatible semantics.
//!
//! NDCG@k uses graded linear gain and a `log2(rank + 1)` discount, with the
//! ideal DCG taken over every judged grade for the query. MAP@k and Recall@k
//! binarize grades at a configurable threshold and normalize by the total
//! number of relevant judged documents, retrieved or not.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Qrels, Run};
use crate::error::{Error, Result};

pub const CSV_SCHEMA: &str = "tcde-metrics-csv v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg,
    Map,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ndcg, Metric::Map, Metric::Recall];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Map => "map",
            Metric::Recall => "recall",
        }
    }

    /// Short column label such as `N@10` or `R@1k`.
    pub fn label(self, k: usize) -> String {
        let letter = match self {
            Metric::Ndcg => 'N',
            Metric::Map => 'M',
            Metric::Recall => 'R',
        };
        if k >= 1000 && k.is_multiple_of(1000) {
            format!("{letter}@{}k", k / 1000)
        } else {
            format!("{letter}@{k}")
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    #[default]
    Linear,
    /// `2^grade - 1`
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => f64::from(grade),
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

/// Handling of run queries that have no judgments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingQrelsPolicy {
    #[default]
    Skip,
    ScoreZero,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub k_values: Vec<usize>,
    /// Minimum grade counted as relevant by MAP and Recall.
    pub threshold: u32,
    pub missing_qrels: MissingQrelsPolicy,
    pub gain: Gain,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            k_values: vec![10, 1000],
            threshold: 1,
            missing_qrels: MissingQrelsPolicy::Skip,
            gain: Gain::Linear,
        }
    }
}

impl MetricConfig {
    /// Preset for TREC Deep Learning graded qrels, where grade 1 means
    /// "related" rather than relevant.
    pub fn trec_dl() -> Self {
        Self {
            threshold: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::Config("metric k-values must not be empty".into()));
        }
        if self.k_values.contains(&0) {
            return Err(Error::Config("metric k-values must be positive".into()));
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("metric k-values must be strictly ascending".into()));
        }
        if self.threshold == 0 {
            return Err(Error::Config("binarization threshold must be >= 1".into()));
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.k_values.iter().copied().max().unwrap_or(0)
    }

    pub fn columns(&self) -> Vec<(Metric, usize)> {
        Metric::ALL
            .iter()
            .flat_map(|&m| self.k_values.iter().map(move |&k| (m, k)))
            .collect()
    }

    pub fn describe(&self) -> String {
        format!(
            "threshold={} gain={} missing_qrels={}",
            self.threshold,
            match self.gain {
                Gain::Linear => "linear",
                Gain::Exponential => "exponential",
            },
            match self.missing_qrels {
                MissingQrelsPolicy::Skip => "skip",
                MissingQrelsPolicy::ScoreZero => "score-zero",
            }
        )
    }
}

pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    ndcg_at_k_with_gain(ranking, judged, k, Gain::Linear)
}

pub fn ndcg_at_k_with_gain<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, k: usize, gain: Gain) -> f64 {
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let discount = |i: usize| ((i + 2) as f64).log2();
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / discount(i))
        .sum();
    if idcg == 0.0 {
        return 0.0;
    }
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| judged.get(d.as_ref()).map_or(0.0, |&g| gain.apply(g) / discount(i)))
        .sum();
    dcg / idcg
}

fn relevant_count(judged: &BTreeMap<String, u32>, threshold: u32) -> usize {
    judged.values().filter(|&&g| g >= threshold).count()
}

fn is_relevant(judged: &BTreeMap<String, u32>, doc: &str, threshold: u32) -> bool {
    judged.get(doc).is_some_and(|&g| g >= threshold)
}

pub fn map_at_k<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, k: usize, threshold: u32) -> f64 {
    let r = relevant_count(judged, threshold);
    if r == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().take(k).enumerate() {
        if is_relevant(judged, d.as_ref(), threshold) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r as f64
}

pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, k: usize, threshold: u32) -> f64 {
    let r = relevant_count(judged, threshold);
    if r == 0 {
        return 0.0;
    }
    let found = ranking
        .iter()
        .take(k)
        .filter(|d| is_relevant(judged, d.as_ref(), threshold))
        .count();
    found as f64 / r as f64
}

fn metric_value(metric: Metric, ranking: &[&str], judged: &BTreeMap<String, u32>, k: usize, config: &MetricConfig) -> f64 {
    match metric {
        Metric::Ndcg => ndcg_at_k_with_gain(ranking, judged, k, config.gain),
        Metric::Map => map_at_k(ranking, judged, k, config.threshold),
        Metric::Recall => recall_at_k(ranking, judged, k, config.threshold),
    }
}

/// Per-query and mean metric values for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: MetricConfig,
    pub columns: Vec<(Metric, usize)>,
    /// Query id -> values aligned with `columns`.
    pub per_query: BTreeMap<String, Vec<f64>>,
    pub means: Vec<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl MetricReport {
    fn column(&self, metric: Metric, k: usize) -> Option<usize> {
        self.columns.iter().position(|&c| c == (metric, k))
    }

    pub fn mean(&self, metric: Metric, k: usize) -> Option<f64> {
        self.column(metric, k).map(|i| self.means[i])
    }

    pub fn value(&self, metric: Metric, k: usize, query_id: &str) -> Option<f64> {
        let i = self.column(metric, k)?;
        self.per_query.get(query_id).map(|v| v[i])
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.config.describe());
        let _ = writeln!(out, "{:<12}{:>10}", "metric", "mean");
        for (&(m, k), mean) in self.columns.iter().zip(&self.means) {
            let _ = writeln!(out, "{:<12}{:>10.4}", format!("{}@{k}", m.name()), mean);
        }
        let _ = writeln!(out, "{:<12}{:>10}", "queries", self.evaluated);
        let _ = writeln!(out, "{:<12}{:>10}", "skipped", self.skipped);
        out
    }

    /// `metric,k,query_id,value` rows, then one `mean` row per column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {CSV_SCHEMA}; {}", self.config.describe());
        out.push_str("metric,k,query_id,value\n");
        for (i, &(m, k)) in self.columns.iter().enumerate() {
            for (qid, values) in &self.per_query {
                let _ = writeln!(out, "{},{k},{qid},{:.6}", m.name(), values[i]);
            }
            let _ = writeln!(out, "{},{k},mean,{:.6}", m.name(), self.means[i]);
        }
        out
    }
}

pub fn evaluate(run: &Run, qrels: &Qrels, config: &MetricConfig) -> Result<MetricReport> {
    config.validate()?;
    let run_ids: HashSet<&str> = run.query_ids().collect();
    if !qrels.query_ids().any(|q| run_ids.contains(q)) {
        return Err(Error::Evaluation(
            "run and qrels share no query ids".into(),
        ));
    }
    let columns = config.columns();
    let empty = BTreeMap::new();
    let mut per_query = BTreeMap::new();
    for (qid, judged) in qrels.iter() {
        let ranking: Vec<&str> = run
            .get(qid)
            .map(|r| r.iter().map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default();
        let values = columns
            .iter()
            .map(|&(m, k)| metric_value(m, &ranking, judged, k, config))
            .collect();
        per_query.insert(qid.to_string(), values);
    }
    let mut skipped = 0;
    for qid in run.query_ids() {
        if qrels.get(qid).is_some() {
            continue;
        }
        match config.missing_qrels {
            MissingQrelsPolicy::Skip => skipped += 1,
            MissingQrelsPolicy::ScoreZero => {
                let values = columns.iter().map(|&(m, k)| metric_value(m, &[], &empty, k, config)).collect();
                per_query.insert(qid.to_string(), values);
            }
        }
    }
    let n = per_query.len() as f64;
    let means = (0..columns.len())
        .map(|i| per_query.values().map(|v: &Vec<f64>| v[i]).sum::<f64>() / n)
        .collect();
    Ok(MetricReport {
        config: config.clone(),
        columns,
        evaluated: per_query.len(),
        per_query,
        means,
        skipped,
    })
}
