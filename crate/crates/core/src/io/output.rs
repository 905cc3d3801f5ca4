//! Run outputs: delivered lists, per-opportunity records and summary tables.
//!
//! Layout of an output directory:
//!
//! ```text
//! summary.csv            one fold-averaged row per cell (fold = "mean")
//! summary_folds.csv      one row per cell and fold
//! summary_ci.csv         fold means with 95% half-widths
//! run.json               resolved run parameters
//! lists/<cell>/fold<f>.csv     tick,user_id,rank,item_id,score
//! records/<cell>/fold<f>.jsonl one RunRecord per line
//! ```
//!
//! `<cell>` is `<allocation>__<choice>`. Cell directories sort in the same
//! order the grid runs in, which is what replay relies on.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::AgentSpec;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_fold, mean_ci95, mean_summary, EvaluationSummary};
use crate::io::config::{ExperimentConfig, RunParams};
use crate::io::dataset::DatasetBundle;
use crate::model::{ItemId, ScoredList, Tick, UserId};
use crate::simulator::{prepare_folds, ExperimentResult, RunRecord};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FOLD_SUMMARY_FILE: &str = "summary_folds.csv";
pub const CI_FILE: &str = "summary_ci.csv";
pub const LISTS_DIR: &str = "lists";
pub const RECORDS_DIR: &str = "records";

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

pub fn list_file(cell_key: &str, fold: usize) -> PathBuf {
    Path::new(LISTS_DIR)
        .join(cell_key)
        .join(format!("fold{fold}.csv"))
}

pub fn write_lists(path: &Path, lists: &[ScoredList]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["tick", "user_id", "rank", "item_id", "score"])
        .map_err(err)?;
    for list in lists {
        let tick = list.produced_at.to_string();
        for (rank, (item, score)) in list.entries().iter().enumerate() {
            w.write_record([
                tick.as_str(),
                list.user.as_str(),
                &(rank + 1).to_string(),
                item.as_str(),
                &score.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ListRow {
    tick: Tick,
    user_id: String,
    rank: usize,
    item_id: String,
    score: f64,
}

/// Rank, item and score of one delivered-list row.
type RankedRow = (usize, ItemId, f64);

/// Reads a delivered-lists file back into lists ordered by tick.
pub fn read_lists(path: &Path) -> Result<Vec<ScoredList>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut by_tick: BTreeMap<Tick, (UserId, Vec<RankedRow>)> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<ListRow>().enumerate() {
        let data_err = |message: String| Error::Data {
            path: path.to_path_buf(),
            row: i + 1,
            message,
        };
        let row = row.map_err(|e| data_err(e.to_string()))?;
        let (user, entries) = by_tick
            .entry(row.tick)
            .or_insert_with(|| (UserId::new(&row.user_id), Vec::new()));
        if user.as_str() != row.user_id {
            return Err(data_err(format!(
                "tick {} has rows for two users",
                row.tick
            )));
        }
        entries.push((row.rank, row.item_id.into(), row.score));
    }
    by_tick
        .into_iter()
        .map(|(tick, (user, mut entries))| {
            entries.sort_by_key(|(rank, _, _)| *rank);
            if entries
                .iter()
                .enumerate()
                .any(|(i, (rank, _, _))| *rank != i + 1)
            {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    row: 0,
                    message: format!("tick {tick}: ranks are not 1..n"),
                });
            }
            let entries: Vec<_> = entries
                .into_iter()
                .map(|(_, item, score)| (item, score))
                .collect();
            ScoredList::from_ranked(user, entries, tick)
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn summary_header(agents: &[AgentSpec]) -> Vec<String> {
    let mut header = vec![
        "mechanism_allocation".to_string(),
        "mechanism_choice".to_string(),
        "fold".to_string(),
        "ndcg".to_string(),
    ];
    header.extend(agents.iter().map(|a| format!("agent_fairness_{}", a.name)));
    header.push("l_half".to_string());
    header
}

pub fn write_summary(path: &Path, agents: &[AgentSpec], rows: &[EvaluationSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(summary_header(agents)).map_err(err)?;
    for s in rows {
        let mut rec = vec![
            s.allocation.clone(),
            s.choice.clone(),
            s.fold.to_string(),
            s.ndcg.to_string(),
        ];
        rec.extend(s.fairness.iter().map(|(_, v)| v.to_string()));
        rec.push(s.l_half.to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ci(path: &Path, cells: &[Vec<EvaluationSummary>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record([
        "mechanism_allocation",
        "mechanism_choice",
        "folds",
        "ndcg_mean",
        "ndcg_ci95",
        "l_half_mean",
        "l_half_ci95",
    ])
    .map_err(err)?;
    for folds in cells {
        let Some(first) = folds.first() else { continue };
        let ndcg: Vec<f64> = folds.iter().map(|s| s.ndcg).collect();
        let l_half: Vec<f64> = folds.iter().map(|s| s.l_half).collect();
        let (nm, nh) = mean_ci95(&ndcg);
        let (lm, lh) = mean_ci95(&l_half);
        w.write_record([
            first.allocation.as_str(),
            first.choice.as_str(),
            &folds.len().to_string(),
            &nm.to_string(),
            &nh.to_string(),
            &lm.to_string(),
            &lh.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunInfo<'a> {
    run: &'a RunParams,
    agents: &'a [AgentSpec],
    alpha: u32,
    beta: u32,
    recommender_weight: f64,
    delta: f64,
    agent_weight_mode: String,
    normalize_scores: bool,
    cells: Vec<String>,
}

/// Writes summaries for per-fold evaluations grouped by cell.
pub fn write_summaries(
    out: &Path,
    agents: &[AgentSpec],
    cells: &[Vec<EvaluationSummary>],
) -> Result<()> {
    let means: Vec<EvaluationSummary> = cells.iter().filter_map(|f| mean_summary(f)).collect();
    let folds: Vec<EvaluationSummary> = cells.iter().flatten().cloned().collect();
    write_summary(&out.join(SUMMARY_FILE), agents, &means)?;
    write_summary(&out.join(FOLD_SUMMARY_FILE), agents, &folds)?;
    write_ci(&out.join(CI_FILE), cells)
}

pub fn write_outputs(
    result: &ExperimentResult,
    config: &ExperimentConfig,
    out: &Path,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for cell in &result.cells {
        let key = cell.cell.key();
        for (f, fold) in cell.folds.iter().enumerate() {
            write_lists(&out.join(list_file(&key, f)), &fold.lists())?;
            write_records(
                &out.join(RECORDS_DIR)
                    .join(&key)
                    .join(format!("fold{f}.jsonl")),
                &fold.records,
            )?;
        }
    }
    let grouped: Vec<Vec<EvaluationSummary>> = result
        .cells
        .iter()
        .map(|c| c.folds.iter().map(|f| f.summary.clone()).collect())
        .collect();
    write_summaries(out, &config.agents, &grouped)?;

    let info = RunInfo {
        run: &config.run,
        agents: &config.agents,
        alpha: config.allocation.alpha,
        beta: config.allocation.beta,
        recommender_weight: config.choice.recommender_weight,
        delta: config.choice.delta,
        agent_weight_mode: config.choice.agent_weight_mode.to_string(),
        normalize_scores: config.choice.normalize_scores,
        cells: result.cells.iter().map(|c| c.cell.key()).collect(),
    };
    let path = out.join("run.json");
    let mut text = serde_json::to_string_pretty(&info)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Re-evaluates every cell directory under `lists_dir`, one summary per fold.
pub fn replay_lists_dir(
    bundle: &DatasetBundle,
    config: &ExperimentConfig,
    lists_dir: &Path,
) -> Result<Vec<Vec<EvaluationSummary>>> {
    let folds = prepare_folds(bundle, config)?;
    let mut cells: Vec<(String, PathBuf)> = fs::read_dir(lists_dir)
        .map_err(|e| Error::io(lists_dir, e))?
        .filter_map(|entry| entry.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    cells.sort();
    let mut out = Vec::with_capacity(cells.len());
    for (name, dir) in cells {
        let (alloc, choice) = name.split_once("__").ok_or_else(|| Error::Data {
            path: dir.clone(),
            row: 0,
            message: "cell directory must be named <allocation>__<choice>".into(),
        })?;
        let mut summaries = Vec::with_capacity(folds.len());
        for fold in &folds {
            let lists = read_lists(&dir.join(format!("fold{}.csv", fold.fold)))?;
            summaries.push(evaluate_fold(
                (alloc, choice),
                fold.fold,
                &lists,
                &fold.relevance,
                &config.agents,
                &bundle.catalog,
                config.run.n,
            )?);
        }
        out.push(summaries);
    }
    Ok(out)
}
