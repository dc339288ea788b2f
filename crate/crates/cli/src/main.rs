use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcde_core::alignment::{analyze_triple, load_triples, sample_triples, AlignmentSummary};
use tcde_core::corpus::{load_qrels, load_run, write_run};
use tcde_core::eval::{evaluate, MetricConfig, MissingQrelsPolicy};
use tcde_core::expansion::{build_tde_prompt, build_tqe_prompt};
use tcde_core::runner::{
    ablate, sweep_topics, ExperimentConfig, Mode, Retriever, Workspace, SWEEP_DOC_COUNTS, SWEEP_QUERY_COUNTS,
};
use tcde_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tcde", version, about = "Topic-centric query and document expansion for retrieval")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the offline mock LLM.
    #[arg(long, global = true)]
    mock_llm: bool,
    /// Use the feature-hashing embedder.
    #[arg(long, global = true)]
    mock_embedder: bool,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// sparse (bm25) or dense.
    #[arg(long, global = true)]
    retriever: Option<Retriever>,
    /// baseline, tqe, tde or tcde.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Query-side topic count.
    #[arg(long, global = true)]
    nq: Option<usize>,
    /// Document-side topic count.
    #[arg(long, global = true)]
    nd: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Expand every document and write the expanded corpus as JSON lines.
    ExpandCorpus {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Expand every query and write the expanded queries as JSON lines.
    ExpandQueries {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build (or reuse) the document index.
    Index,
    /// Retrieve with an existing or freshly built index and write a run file.
    Retrieve {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a run file against qrels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Relevance threshold 2 for binary metrics.
        #[arg(long)]
        trec_dl: bool,
        /// Cutoffs, e.g. 10,100,1000.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Score run queries without judgments as zero instead of skipping them.
        #[arg(long)]
        score_missing: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Index, retrieve and evaluate one configuration.
    Run,
    /// Baseline, query-only, document-only and combined expansion.
    Ablate,
    /// Sweep query and document topic counts.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        nq_values: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        nd_values: Vec<usize>,
    },
    /// Compare query/document similarity before and after expansion.
    Align {
        /// Tab-separated query, positive and negative ids; sampled from qrels when absent.
        #[arg(long)]
        triples: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        topics: usize,
    },
    /// Print both prompt templates filled for a sample input.
    DumpPrompts {
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut config = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if g.mock_llm {
        config.llm.mock = true;
    }
    if g.mock_embedder {
        config.embedding.mock = true;
    }
    if let Some(d) = &g.cache_dir {
        config.cache_dir = d.clone();
    }
    if let Some(d) = &g.out_dir {
        config.out_dir = d.clone();
    }
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(w) = g.workers {
        config.workers = w;
    }
    if let Some(r) = g.retriever {
        config.retriever = r;
    }
    if let Some(m) = g.mode {
        config.mode = m;
        if g.nq.is_none() {
            config.n_query = None;
        }
        if g.nd.is_none() {
            config.n_doc = None;
        }
    }
    if g.nq.is_some() || g.nd.is_some() {
        let (nq, nd) = config.topic_counts().unwrap_or((0, 0));
        let nq = g.nq.unwrap_or(nq);
        let nd = g.nd.unwrap_or(nd);
        config = if g.mode.is_some() {
            ExperimentConfig {
                n_query: Some(nq),
                n_doc: Some(nd),
                ..config
            }
        } else {
            config.with_counts(nq, nd)
        };
    }
    Ok(config)
}

fn write_jsonl<T: serde::Serialize>(items: &[T], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("expansion serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn execute(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let print = |out: &mut std::io::StdoutLock, s: &str| {
        let _ = out.write_all(s.as_bytes());
    };

    match cli.command {
        Command::DumpPrompts { n } => {
            print(&mut out, &format!("{}\n\n", build_tqe_prompt("[Query]", n)));
            print(&mut out, &format!("{}\n", build_tde_prompt("[Document]", n, usize::MAX)));
            return Ok(());
        }
        Command::Evaluate {
            run,
            qrels,
            trec_dl,
            k,
            score_missing,
            output,
        } => {
            let mut metrics = if trec_dl { MetricConfig::trec_dl() } else { MetricConfig::default() };
            if !k.is_empty() {
                metrics.k_values = k;
            }
            if score_missing {
                metrics.missing_qrels = MissingQrelsPolicy::ScoreZero;
            }
            metrics.validate()?;
            let report = evaluate(&load_run(&run)?, &load_qrels(&qrels)?, &metrics)?;
            if let Some(path) = output {
                std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
            }
            print(&mut out, &report.to_text());
            return Ok(());
        }
        _ => {}
    }

    let config = load_config(&cli.global)?;
    let ws = Workspace::open(config.clone())?;
    match cli.command {
        Command::ExpandCorpus { output } => {
            let (_, nd) = config.topic_counts()?;
            let (docs, failures) = ws.expand_corpus(nd)?;
            let path = output.unwrap_or_else(|| config.out_dir.join("expanded_corpus.jsonl"));
            write_jsonl(&docs, &path)?;
            log::info!("{} documents expanded, {failures} fell back", docs.len());
            print(&mut out, &format!("{}\n", path.display()));
        }
        Command::ExpandQueries { output } => {
            let (nq, _) = config.topic_counts()?;
            let (queries, failures) = ws.expand_queries(nq, config.effective_repeat())?;
            let path = output.unwrap_or_else(|| config.out_dir.join("expanded_queries.jsonl"));
            write_jsonl(&queries, &path)?;
            log::info!("{} queries expanded, {failures} fell back", queries.len());
            print(&mut out, &format!("{}\n", path.display()));
        }
        Command::Index => {
            let handle = ws.offline_stage(&config)?;
            let state = if handle.reused { "reused" } else { "built" };
            print(&mut out, &format!("{} {state} {}\n", handle.fingerprint, handle.dir.display()));
        }
        Command::Retrieve { output } => {
            let handle = ws.offline_stage(&config)?;
            let (run, _) = ws.online_stage(&config, &handle)?;
            let path = output.unwrap_or_else(|| config.out_dir.join("run.trec"));
            write_run(&run, &path)?;
            print(&mut out, &format!("{}\n", path.display()));
        }
        Command::Run => {
            let artifacts = ws.run_experiment(&config)?;
            if let Some(report) = &artifacts.report {
                print(&mut out, &report.to_text());
            }
            print(&mut out, &format!("run written to {}\n", artifacts.run_path.display()));
        }
        Command::Ablate => print(&mut out, &ablate(&ws)?.to_text()),
        Command::Sweep { nq_values, nd_values } => {
            let nq = if nq_values.is_empty() { SWEEP_QUERY_COUNTS.to_vec() } else { nq_values };
            let nd = if nd_values.is_empty() { SWEEP_DOC_COUNTS.to_vec() } else { nd_values };
            print(&mut out, &sweep_topics(&ws, &nq, &nd)?.to_text());
        }
        Command::Align { triples, topics } => {
            let triples = match triples {
                Some(path) => load_triples(&path, ws.queries(), ws.corpus())?,
                None => {
                    let qrels = ws
                        .qrels()
                        .ok_or_else(|| Error::Config("align needs --triples or qrels to sample from".into()))?;
                    sample_triples(ws.queries(), ws.corpus(), qrels, config.seed)
                }
            };
            if triples.is_empty() {
                return Err(Error::InvalidData("no alignment triples".into()));
            }
            let reports = triples
                .iter()
                .map(|t| analyze_triple(t, ws.expander(), ws.embedder(), topics, config.repeat_factor))
                .collect::<Result<Vec<_>>>()?;
            let summary = AlignmentSummary::new(ws.embedder().model_id(), topics, reports);
            let dir = config.out_dir.join("alignment");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let csv = dir.join("alignment.csv");
            std::fs::write(&csv, summary.to_csv()).map_err(|e| Error::io(&csv, e))?;
            print(&mut out, &summary.to_text());
        }
        Command::DumpPrompts { .. } | Command::Evaluate { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
