use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::run::labeled;
use super::{ExperimentResult, HarnessError, Label, MethodSummary, PassageScores};
use crate::detector::{DiscrepancyEstimate, Method};
use crate::metrics::histogram;

pub const SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportPaths {
    pub rows: PathBuf,
    pub aggregate: PathBuf,
    pub histograms: PathBuf,
    pub provenance: PathBuf,
}

impl ExportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            rows: dir.join("rows.jsonl"),
            aggregate: dir.join("aggregate.csv"),
            histograms: dir.join("histograms.json"),
            provenance: dir.join("provenance.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RowRecord {
    id: String,
    label: Label,
    method: Method,
    score: f64,
    n_words: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    discrepancy: Option<DiscrepancyEstimate>,
}

/// Hash of `bytes` framed as a git blob object (`blob <len>\0<bytes>`).
fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn render_rows(result: &ExperimentResult) -> Result<String, HarnessError> {
    let mut out = serde_json::to_string(&json!({"schema_version": SCHEMA_VERSION}))
        .map_err(io_err)?;
    out.push('\n');
    for row in &result.rows {
        for (&method, &score) in &row.scores {
            let rec = RowRecord {
                id: row.id.clone(),
                label: row.label,
                method,
                score,
                n_words: row.n_words,
                discrepancy: if method == Method::Detectgpt { row.discrepancy } else { None },
            };
            out.push_str(&serde_json::to_string(&rec).map_err(io_err)?);
            out.push('\n');
        }
    }
    Ok(out)
}

fn render_aggregate(aggregate: &BTreeMap<Method, MethodSummary>) -> String {
    let mut out = format!("# schema_version: {SCHEMA_VERSION}\nmethod,auroc,average_precision,n_machine,n_human\n");
    for (m, s) in aggregate {
        out.push_str(&format!(
            "{m},{},{},{},{}\n",
            s.auroc, s.average_precision, s.n_machine, s.n_human
        ));
    }
    out
}

fn render_histograms(result: &ExperimentResult) -> Result<String, HarnessError> {
    let mut methods = BTreeMap::new();
    for &m in &result.config.methods {
        methods.insert(m, histogram(&labeled(&result.rows, m), result.config.histogram_bins)?);
    }
    let raw = |label| -> Vec<f64> {
        result
            .rows
            .iter()
            .filter(|r| r.label == label)
            .filter_map(|r| r.discrepancy.map(|d| d.d_hat))
            .collect()
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "n_bins": result.config.histogram_bins,
        "methods": methods,
        "raw_discrepancy": {"human": raw(Label::Human), "machine": raw(Label::Machine)},
    });
    let mut s = serde_json::to_string_pretty(&doc).map_err(io_err)?;
    s.push('\n');
    Ok(s)
}

fn io_err(e: serde_json::Error) -> HarnessError {
    HarnessError::Io(e.into())
}

/// Write `rows.jsonl`, `aggregate.csv`, `histograms.json` and
/// `provenance.json` into `dir`. Everything except the provenance timestamps
/// is a pure function of the result rows and config.
pub fn export_results(result: &ExperimentResult, dir: &Path) -> Result<ExportPaths, HarnessError> {
    fs::create_dir_all(dir)?;
    let paths = ExportPaths::in_dir(dir);
    let rows = render_rows(result)?;
    let aggregate = render_aggregate(&result.aggregate);
    fs::write(&paths.rows, &rows)?;
    fs::write(&paths.aggregate, &aggregate)?;
    fs::write(&paths.histograms, render_histograms(result)?)?;
    let provenance = json!({
        "schema_version": SCHEMA_VERSION,
        "config": result.config,
        "effective_mask_spec": result.config.effective_mask_spec(),
        "rows_hash": content_hash(rows.as_bytes()),
        "aggregate_hash": content_hash(aggregate.as_bytes()),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "started_at": result.started_at,
        "finished_at": result.finished_at,
    });
    let mut p = serde_json::to_string_pretty(&provenance).map_err(io_err)?;
    p.push('\n');
    fs::write(&paths.provenance, p)?;
    Ok(paths)
}

/// Read an exported `rows.jsonl` back into per-passage scores, ordered by
/// id then label.
pub fn read_rows(path: &Path) -> Result<Vec<PassageScores>, HarnessError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header: serde_json::Value = match lines.next() {
        Some(l) => serde_json::from_str(&l?).map_err(io_err)?,
        None => return Err(HarnessError::Dataset("rows file is empty".into())),
    };
    if header.get("schema_version").and_then(|v| v.as_str()) != Some(SCHEMA_VERSION) {
        return Err(HarnessError::Dataset(format!("rows file is not schema {SCHEMA_VERSION}")));
    }
    let mut by_key: BTreeMap<(String, Label), PassageScores> = BTreeMap::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RowRecord = serde_json::from_str(&line).map_err(io_err)?;
        let entry = by_key
            .entry((rec.id.clone(), rec.label))
            .or_insert_with(|| PassageScores {
                id: rec.id.clone(),
                label: rec.label,
                n_words: rec.n_words,
                scores: BTreeMap::new(),
                discrepancy: None,
            });
        entry.scores.insert(rec.method, rec.score);
        if rec.discrepancy.is_some() {
            entry.discrepancy = rec.discrepancy;
        }
    }
    Ok(by_key.into_values().collect())
}

/// Parse an exported `aggregate.csv` into `method -> (auroc, average_precision)`.
pub fn read_aggregate(path: &Path) -> Result<BTreeMap<Method, (f64, f64)>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(&format!("# schema_version: {SCHEMA_VERSION}")) {
        return Err(HarnessError::Dataset(format!("aggregate file is not schema {SCHEMA_VERSION}")));
    }
    let bad = |l: &str| HarnessError::Dataset(format!("bad aggregate line: {l}"));
    lines
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(l));
            }
            let m: Method = f[0].parse().map_err(|_| bad(l))?;
            let a: f64 = f[1].parse().map_err(|_| bad(l))?;
            let ap: f64 = f[2].parse().map_err(|_| bad(l))?;
            Ok((m, (a, ap)))
        })
        .collect()
}
