use std::collections::BTreeMap;
use std::fmt::Write as _;

use curvescan::harness::{CrossMatrix, KSweepRow, MethodSummary, ParaphraseRow, SCHEMA_VERSION};
use curvescan::Method;

pub fn aggregate_table(aggregate: &BTreeMap<Method, MethodSummary>) -> String {
    let mut out = format!("{:<10} {:>8} {:>8} {:>9} {:>7}\n", "method", "auroc", "ap", "machine", "human");
    for (m, s) in aggregate {
        let _ = writeln!(
            out,
            "{:<10} {:>8.4} {:>8.4} {:>9} {:>7}",
            m.as_str(),
            s.auroc,
            s.average_precision,
            s.n_machine,
            s.n_human
        );
    }
    out
}

pub fn k_sweep_csv(rows: &[KSweepRow]) -> String {
    let mut out = format!("# schema_version: {SCHEMA_VERSION}\nk,auroc\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.k, r.auroc);
    }
    out
}

pub fn paraphrase_csv(rows: &[ParaphraseRow]) -> String {
    let methods: Vec<Method> = rows.first().map(|r| r.auroc.keys().copied().collect()).unwrap_or_default();
    let mut out = format!("# schema_version: {SCHEMA_VERSION}\nr,masked_fraction");
    for m in &methods {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", r.r, r.masked_fraction);
        for m in &methods {
            let _ = write!(out, ",{}", r.auroc[m]);
        }
        out.push('\n');
    }
    out
}

pub fn cross_matrix_csv(m: &CrossMatrix) -> String {
    let mut out = format!("# schema_version: {SCHEMA_VERSION}\n# method: {}\nsource", m.method);
    for s in &m.scorers {
        let _ = write!(out, ",{s}");
    }
    out.push_str(",mean\n");
    for (i, source) in m.sources.iter().enumerate() {
        out.push_str(source);
        for v in &m.cells[i] {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", m.row_means[i]);
    }
    out.push_str("mean");
    for v in &m.col_means {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
    out
}
