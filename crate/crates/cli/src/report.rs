//! Deterministic report files: `report.json`, `iterations.csv`, `params_final.json`.
//!
//! JSON objects are written with sorted keys and every float is rounded to
//! 12 significant digits, so the bytes depend only on the report contents.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Number, Value};

use svtune::tuner::TuningReport;

use crate::CliError;

pub const REPORT_FILE: &str = "report.json";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const PARAMS_FILE: &str = "params_final.json";

/// Column order of `iterations.csv`.
pub const CSV_COLUMNS: [&str; 7] = ["mu", "k", "delta", "gamma", "max_re_pole", "accepted", "wall_ms"];

/// The JSON schema shipped for `report.json`.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmittedFiles {
    pub report: PathBuf,
    pub iterations: PathBuf,
    pub params: PathBuf,
}

/// Rounds to 12 significant digits; non-finite values pass through.
pub fn round_sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

fn canonical(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonical(v));
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Number(n) if n.is_f64() => {
            let x = round_sig12(n.as_f64().expect("f64 number"));
            Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        other => other,
    }
}

fn to_canonical_string<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&canonical(v)).expect("value serializes");
    s.push('\n');
    s
}

/// `report.json` contents.
pub fn report_json(report: &TuningReport) -> String {
    to_canonical_string(report)
}

fn csv_float(x: Option<f64>) -> String {
    match x {
        Some(x) if x.is_finite() => serde_json::to_string(&round_sig12(x)).expect("finite float"),
        _ => String::new(),
    }
}

/// `iterations.csv` contents: one row per inner iteration.
pub fn iterations_csv(report: &TuningReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for r in &report.inner {
        w.write_record([
            r.mu.to_string(),
            r.k.to_string(),
            csv_float(r.delta),
            csv_float(r.gamma),
            csv_float(Some(r.max_re_pole)),
            r.accepted().to_string(),
            csv_float(Some(r.wall_ms)),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 csv")
}

#[derive(Serialize)]
struct ParamEntry<'a> {
    name: &'a str,
    initial: f64,
    value: f64,
}

/// `params_final.json` contents: the final parameters in model order.
pub fn params_json(report: &TuningReport) -> String {
    let entries: Vec<ParamEntry> = report
        .parameter_names
        .iter()
        .zip(report.k_initial.iter().zip(&report.k_final))
        .map(|(name, (&initial, &value))| ParamEntry { name, initial, value })
        .collect();
    to_canonical_string(&serde_json::json!({ "parameters": entries }))
}

/// Writes the three report files into `dir`, creating it if needed.
pub fn emit_report(report: &TuningReport, dir: &Path) -> Result<EmittedFiles, CliError> {
    let write = |name: &str, text: String| -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    };
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(EmittedFiles {
        report: write(REPORT_FILE, report_json(report))?,
        iterations: write(ITERATIONS_FILE, iterations_csv(report))?,
        params: write(PARAMS_FILE, params_json(report))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig12(1.234567890123456), 1.23456789012);
        assert_eq!(round_sig12(-9.9999999999999e-5), -1e-4);
        assert_eq!(round_sig12(0.0), 0.0);
        assert!(round_sig12(f64::NAN).is_nan());
    }

    #[test]
    fn keys_are_sorted_at_every_level() {
        let v = serde_json::json!({"b": 1, "a": {"d": 0.1, "c": [ {"z": 1.0, "y": 2.0} ]}});
        let s = to_canonical_string(&v);
        let pos = |k: &str| s.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("a") < pos("b"));
        assert!(pos("c") < pos("d"));
        assert!(pos("y") < pos("z"));
    }
}
