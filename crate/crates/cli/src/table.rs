//! Aggregation of per-run reports into a convergence table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentKind;
use crate::error::{CliError, Result};
use crate::experiment::{Cell, RunRecord, RunStatus};

/// Column order of the aggregate CSV.
pub const AGGREGATE_COLUMNS: [&str; 15] = [
    "experiment",
    "model",
    "architecture",
    "p",
    "n_part",
    "m_max",
    "width",
    "depth",
    "median_rel_l2",
    "geomean_rel_l2",
    "lognorm_std",
    "min_rel_l2",
    "median_eval_rel_l2",
    "n_runs",
    "n_failed",
];

/// Statistics of one sweep cell over its runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub experiment: ExperimentKind,
    pub cell: Cell,
    pub median_rel_l2: Option<f64>,
    pub geomean_rel_l2: Option<f64>,
    /// Sample standard deviation of `ln(rel_l2)`; 0 for a single run.
    pub lognorm_std: Option<f64>,
    pub min_rel_l2: Option<f64>,
    pub median_eval_rel_l2: Option<f64>,
    pub n_runs: usize,
    pub n_failed: usize,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Mean and sample standard deviation of the natural logs.
pub fn log_stats(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let logs: Vec<f64> = values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let std = if logs.len() < 2 {
        0.0
    } else {
        (logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

/// Groups records by experiment and cell, in sorted order.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(ExperimentKind, Cell), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.experiment, r.cell.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((experiment, cell), runs)| {
            let ok: Vec<&RunRecord> = runs.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
            let errs: Vec<f64> = ok.iter().filter_map(|r| r.rel_l2).collect();
            let evals: Vec<f64> = ok.iter().filter_map(|r| r.eval_rel_l2).collect();
            let stats = log_stats(&errs);
            AggregateRow {
                experiment,
                cell,
                median_rel_l2: median(&errs),
                geomean_rel_l2: stats.map(|(m, _)| m.exp()),
                lognorm_std: stats.map(|(_, s)| s),
                min_rel_l2: errs.iter().copied().reduce(f64::min),
                median_eval_rel_l2: median(&evals),
                n_runs: ok.len(),
                n_failed: runs.len() - ok.len(),
            }
        })
        .collect()
}

pub fn to_csv(rows: &[AggregateRow]) -> String {
    fn opt<T: ToString>(v: Option<T>) -> String {
        v.map(|v| v.to_string()).unwrap_or_default()
    }
    fn num(v: Option<f64>) -> String {
        v.map(|v| format!("{v:e}")).unwrap_or_default()
    }
    let mut out = AGGREGATE_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let c = &r.cell;
        let fields = [
            r.experiment.name().to_string(),
            c.model.name().to_string(),
            opt(c.architecture.map(|a| a.name())),
            opt(c.p),
            opt(c.n_part),
            opt(c.m_max),
            opt(c.width),
            opt(c.depth),
            num(r.median_rel_l2),
            num(r.geomean_rel_l2),
            num(r.lognorm_std),
            num(r.min_rel_l2),
            num(r.median_eval_rel_l2),
            r.n_runs.to_string(),
            r.n_failed.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Every `report.json` below `dir`, in sorted path order.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths = Vec::new();
    collect_reports(dir, &mut paths)?;
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(CliError::io(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Run(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn collect_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(CliError::io(dir))?;
    for entry in entries {
        let path = entry.map_err(CliError::io(dir))?.path();
        if path.is_dir() {
            collect_reports(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "report.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Convergence table over all run reports found under `run_dir`.
pub fn emit_convergence_table(run_dir: &Path) -> Result<String> {
    let records = load_records(run_dir)?;
    if records.is_empty() {
        return Err(CliError::Run(format!("no run reports under {}", run_dir.display())));
    }
    Ok(to_csv(&aggregate(&records)))
}
