//! The output record and its JSON, CSV and table renderings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use lipcert::BoxDomain;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainEcho {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Largest half-width of the box.
    pub eps: f64,
}

impl From<&BoxDomain> for DomainEcho {
    fn from(d: &BoxDomain) -> Self {
        Self {
            lo: d.lo().to_vec(),
            hi: d.hi().to_vec(),
            eps: d.radius(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeRow {
    pub mode: String,
    pub bound: f64,
    pub runtime_s: f64,
}

/// Every command emits this; parts that do not apply are `null`.
#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub schema: u32,
    pub command: &'static str,
    pub model: String,
    pub model_hash: String,
    pub domain: Option<DomainEcho>,
    pub mode: String,
    pub bound: f64,
    pub row_bounds: Option<Vec<f64>>,
    pub runtime_s: f64,
    pub bab: Option<Value>,
    pub oracle: Option<Value>,
    pub monotone: Option<Value>,
    pub compare: Option<Vec<ModeRow>>,
}

impl Record {
    pub fn new(command: &'static str, model: &Path, model_hash: String, mode: &str) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            command,
            model: model.display().to_string(),
            model_hash,
            domain: None,
            mode: mode.to_string(),
            bound: 0.0,
            row_bounds: None,
            runtime_s: 0.0,
            bab: None,
            oracle: None,
            monotone: None,
            compare: None,
        }
    }
}

/// Hex SHA-256 of the file contents.
pub fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(r: &Record) -> String {
    let eps = r.domain.as_ref().map(|d| d.eps.to_string()).unwrap_or_default();
    let mut out = String::from("model,mode,eps,bound,runtime_s\n");
    let rows = match &r.compare {
        Some(rows) => rows.clone(),
        None => vec![ModeRow {
            mode: r.mode.clone(),
            bound: r.bound,
            runtime_s: r.runtime_s,
        }],
    };
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.model),
            csv_field(&row.mode),
            eps,
            row.bound,
            row.runtime_s
        );
    }
    out
}

fn render_table(r: &Record) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model      {}", r.model);
    let _ = writeln!(out, "sha256     {}", r.model_hash);
    if let Some(d) = &r.domain {
        let _ = writeln!(out, "domain     dim {}, radius {}", d.lo.len(), d.eps);
    }
    match &r.compare {
        Some(rows) => {
            let _ = writeln!(out, "\n{:<10} {:>16} {:>12}", "mode", "value", "runtime (s)");
            for row in rows {
                let _ = writeln!(out, "{:<10} {:>16.8} {:>12.4}", row.mode, row.bound, row.runtime_s);
            }
        }
        None => {
            let _ = writeln!(out, "mode       {}", r.mode);
            let _ = writeln!(out, "bound      {}", r.bound);
            let _ = writeln!(out, "runtime    {:.4} s", r.runtime_s);
        }
    }
    if let Some(rows) = &r.row_bounds {
        for (i, b) in rows.iter().enumerate() {
            let _ = writeln!(out, "  row {i:<4} {b}");
        }
    }
    if let Some(b) = &r.bab {
        let _ = writeln!(
            out,
            "bab        initial {}, explored {}, pruned {}, complete {}",
            b["initial_bound"], b["domains_explored"], b["domains_pruned"], b["complete"]
        );
    }
    if let Some(o) = &r.oracle {
        let _ = writeln!(out, "sampled    {} ({} points)", o["lower_bound"], o["samples"]);
        match &o["pattern"] {
            Value::Null => {
                let _ = writeln!(out, "patterns   refused: {}", o["pattern_refused"].as_str().unwrap_or(""));
            }
            p => {
                let _ = writeln!(out, "patterns   {} ({} enumerated)", p["upper_bound"], p["patterns_total"]);
            }
        }
    }
    if let Some(m) = &r.monotone {
        if let Some(summary) = m["summary"].as_object() {
            for (k, v) in summary {
                let _ = writeln!(out, "{k:<10} {v}%");
            }
        }
        if let Some(Value::Array(first)) = m["verdicts"].as_array().and_then(|v| v.first()) {
            for (class, row) in first.iter().enumerate() {
                let cells: Vec<&str> = row
                    .as_array()
                    .map(|r| r.iter().map(|v| short(v.as_str().unwrap_or("?"))).collect())
                    .unwrap_or_default();
                let _ = writeln!(out, "class {class:<4} {}", cells.join(" "));
            }
        }
    }
    out
}

fn short(verdict: &str) -> &'static str {
    match verdict {
        "increasing" => "+",
        "decreasing" => "-",
        _ => "?",
    }
}

pub fn render(r: &Record, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("record serializes");
            s.push('\n');
            s
        }
        Format::Csv => render_csv(r),
        Format::Table => render_table(r),
    }
}

pub fn emit(r: &Record, format: Format, out: Option<&PathBuf>) -> CliResult<()> {
    let text = render(r, format);
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> Record {
        let mut r = Record::new("bound", Path::new("m.json"), "ab".into(), "linear");
        r.bound = 1.5;
        r
    }

    #[test]
    fn json_keys_are_stable() {
        let v: Value = serde_json::from_str(&render(&record(), Format::Json)).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in [
            "schema", "command", "model", "model_hash", "domain", "mode", "bound", "row_bounds",
            "runtime_s", "bab", "oracle", "monotone", "compare",
        ] {
            assert!(keys.contains(&k), "missing {k}");
        }
        assert_eq!(v["schema"], 1);
        assert!(v["bab"].is_null());
    }

    #[test]
    fn csv_has_fixed_header() {
        let csv = render(&record(), Format::Csv);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("model,mode,eps,bound,runtime_s"));
        assert_eq!(lines.next(), Some("m.json,linear,,1.5,0"));
    }

    #[test]
    fn csv_quotes_commas() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
    }
}
