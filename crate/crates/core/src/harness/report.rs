//! Comparison table across run reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::evaluate::{RunReport, Stat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    pub k: usize,
    pub p_rms: Option<Stat>,
    pub v_rms: Option<Stat>,
    pub s_rms: Option<Stat>,
    pub tau_ms: Option<Stat>,
    pub converged: usize,
    pub runs: usize,
}

/// Rows ordered by method, then k.
pub fn table(reports: &[RunReport]) -> Result<Vec<TableRow>> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no run reports given".into()));
    }
    let mut rows: Vec<TableRow> = reports
        .iter()
        .map(|r| TableRow {
            method: r.method,
            k: r.k,
            p_rms: r.summary.p_rms,
            v_rms: r.summary.v_rms,
            s_rms: r.summary.s_rms,
            tau_ms: r.summary.tau_ms,
            converged: r.summary.converged,
            runs: r.summary.runs,
        })
        .collect();
    rows.sort_by_key(|r| (r.method, r.k));
    Ok(rows)
}

fn cell(s: Option<Stat>) -> String {
    s.map(|s| format!("{:.1} ± {:.1}", s.mean, s.std)).unwrap_or_else(|| "-".into())
}

pub fn render_table(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<9} {:>4} {:>18} {:>18} {:>18} {:>20} {:>9}",
        "method", "k", "p_rms [mm]", "v_rms [mm/s]", "s_rms [px]", "tau [ms]", "conv"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<9} {:>4} {:>18} {:>18} {:>18} {:>20} {:>9}",
            r.method.name(),
            r.k,
            cell(r.p_rms),
            cell(r.v_rms),
            cell(r.s_rms),
            cell(r.tau_ms),
            format!("{}/{}", r.converged, r.runs)
        );
    }
    out
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("method,k,p_rms_mean,p_rms_std,v_rms_mean,v_rms_std,s_rms_mean,s_rms_std,tau_ms_mean,tau_ms_std,converged,runs\n");
    let pair = |s: Option<Stat>| s.map(|s| format!("{:?},{:?}", s.mean, s.std)).unwrap_or_else(|| ",".into());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.k,
            pair(r.p_rms),
            pair(r.v_rms),
            pair(r.s_rms),
            pair(r.tau_ms),
            r.converged,
            r.runs
        );
    }
    out
}

/// Writes `summary.csv` and `summary.json` into `dir`.
pub fn write_summary(dir: &Path, rows: &[TableRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("summary.csv");
    fs::write(&csv, table_csv(rows)).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join("summary.json");
    let text = serde_json::to_string_pretty(rows).map_err(|e| Error::json(&json, e))?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))
}
