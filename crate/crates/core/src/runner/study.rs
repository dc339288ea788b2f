use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use super::pipeline::{RunArtifacts, Workspace};
use crate::error::{Error, Result};
use crate::eval::Metric;

/// Default query-side counts for the topic-count sweep.
pub const SWEEP_QUERY_COUNTS: [usize; 5] = [0, 1, 2, 5, 10];
/// Default document-side counts for the topic-count sweep.
pub const SWEEP_DOC_COUNTS: [usize; 2] = [0, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub mode: Mode,
    pub n_query: usize,
    pub n_doc: usize,
    pub out_dir: PathBuf,
    /// Mean per metric column, in the order of `StudyTable::columns`.
    pub values: Vec<f64>,
    pub provider_calls: u64,
}

/// Metric means for several variants evaluated against one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub columns: Vec<String>,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    fn push(&mut self, artifacts: &RunArtifacts, columns: &[(Metric, usize)], out_dir: PathBuf) -> Result<()> {
        let report = artifacts
            .report
            .as_ref()
            .ok_or_else(|| Error::Config("studies need qrels in the dataset".into()))?;
        self.rows.push(StudyRow {
            mode: artifacts.mode,
            n_query: artifacts.n_query,
            n_doc: artifacts.n_doc,
            out_dir,
            values: columns.iter().map(|&(m, k)| report.mean(m, k).unwrap_or(0.0)).collect(),
            provider_calls: artifacts.provider_calls,
        });
        Ok(())
    }

    pub fn row(&self, n_query: usize, n_doc: usize) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.n_query == n_query && r.n_doc == n_doc)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<10} {:>4} {:>4}", "mode", "nq", "nd");
        for c in &self.columns {
            let _ = write!(out, " {c:>8}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<10} {:>4} {:>4}", r.mode.as_str(), r.n_query, r.n_doc);
            for v in &r.values {
                let _ = write!(out, " {v:>8.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("mode,n_query,n_doc,{}\n", self.columns.join(","));
        for r in &self.rows {
            let values: Vec<String> = r.values.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{},{},{},{}", r.mode.as_str(), r.n_query, r.n_doc, values.join(","));
        }
        out
    }
}

fn run_variants(ws: &Workspace, variants: &[(usize, usize, PathBuf)]) -> Result<StudyTable> {
    let base = ws.config();
    let columns = base.metrics.columns();
    let mut table = StudyTable {
        columns: columns.iter().map(|&(m, k)| m.label(k)).collect(),
        rows: Vec::new(),
    };
    for (nq, nd, dir) in variants {
        let mut config: ExperimentConfig = base.with_counts(*nq, *nd);
        config.out_dir = dir.clone();
        let artifacts = ws.run_experiment(&config)?;
        table.push(&artifacts, &columns, dir.clone())?;
    }
    Ok(table)
}

fn write_table(table: &StudyTable, dir: &std::path::Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv, table.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let txt = dir.join(format!("{stem}.txt"));
    std::fs::write(&txt, table.to_text()).map_err(|e| Error::io(&txt, e))
}

/// Baseline, query-only, document-only and combined expansion with the
/// configured topic counts (5 when unset).
pub fn ablate(ws: &Workspace) -> Result<StudyTable> {
    let base = ws.config();
    let nq = base.n_query.filter(|&n| n > 0).unwrap_or(super::config::DEFAULT_TOPICS);
    let nd = base.n_doc.filter(|&n| n > 0).unwrap_or(super::config::DEFAULT_TOPICS);
    let root = base.out_dir.join("ablation");
    let variants: Vec<_> = Mode::ALL
        .iter()
        .map(|&m| {
            let q = if matches!(m, Mode::Tqe | Mode::Tcde) { nq } else { 0 };
            let d = if matches!(m, Mode::Tde | Mode::Tcde) { nd } else { 0 };
            (q, d, root.join(m.as_str()))
        })
        .collect();
    let table = run_variants(ws, &variants)?;
    write_table(&table, &root, "ablation")?;
    Ok(table)
}

/// Every combination of the given query and document topic counts.
pub fn sweep_topics(ws: &Workspace, query_counts: &[usize], doc_counts: &[usize]) -> Result<StudyTable> {
    if query_counts.is_empty() || doc_counts.is_empty() {
        return Err(Error::Config("sweep needs at least one count per side".into()));
    }
    let root = ws.config().out_dir.join("sweep");
    let mut variants = Vec::new();
    for &nd in doc_counts {
        for &nq in query_counts {
            variants.push((nq, nd, root.join(format!("nq{nq}_nd{nd}"))));
        }
    }
    let table = run_variants(ws, &variants)?;
    write_table(&table, &root, "sweep")?;
    Ok(table)
}
