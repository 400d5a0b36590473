//! CSV and JSON writers. JSON has no infinity: such numbers are written as
//! `null` next to a `<key>_infinite` flag.

use crate::config::Format;
use anyhow::{Context, Result};
use crt_conformal::evaluation::{format_sig, write_aggregate_csv, write_replicates_csv, AggregateRow, Summary};
use crt_conformal::io::{write_intervals, IntervalRow};
use crt_conformal::MetricsRow;
use serde_json::{json, Map, Value};
use std::path::Path;

fn rounded(v: f64, full: bool) -> f64 {
    if full {
        v
    } else {
        format_sig(v, 6).parse().expect("formatted float")
    }
}

fn number(v: f64, full: bool) -> Value {
    serde_json::Number::from_f64(rounded(v, full)).map_or(Value::Null, Value::Number)
}

/// Inserts `key` and `key_infinite`.
fn put_extended(map: &mut Map<String, Value>, key: &str, v: f64, full: bool) {
    map.insert(key.into(), number(v, full));
    map.insert(format!("{key}_infinite"), Value::Bool(v.is_infinite()));
}

fn summary_json(s: &Summary, full: bool, extended: bool) -> Value {
    let mut m = Map::new();
    for (k, v) in [("mean", s.mean), ("sd", s.sd), ("q1", s.q1), ("median", s.median), ("q3", s.q3)] {
        if extended {
            put_extended(&mut m, k, v, full);
        } else {
            m.insert(k.into(), number(v, full));
        }
    }
    Value::Object(m)
}

fn aggregate_json(rows: &[AggregateRow], full: bool) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| {
                json!({
                    "method": r.method.to_string(),
                    "level": r.level.to_string(),
                    "scope": r.scope.to_string(),
                    "alpha": number(r.alpha, full),
                    "gamma": r.gamma.map_or(Value::Null, |g| number(g, full)),
                    "replicates": r.n_replicates,
                    "coverage": summary_json(&r.coverage, full, false),
                    "length": summary_json(&r.mean_length, full, true),
                    "length_infinite_replicates": r.n_infinite_length,
                    "fraction_negative": summary_json(&r.fraction_negative, full, false),
                    "oracle_length": summary_json(&r.oracle_length, full, false),
                })
            })
            .collect(),
    )
}

fn replicates_json(rows: &[MetricsRow], full: bool) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| {
                let mut m = Map::new();
                m.insert("replicate".into(), json!(r.replicate));
                m.insert("seed".into(), json!(r.seed));
                m.insert("method".into(), json!(r.method.to_string()));
                m.insert("level".into(), json!(r.level.to_string()));
                m.insert("scope".into(), json!(r.scope.to_string()));
                m.insert("alpha".into(), number(r.alpha, full));
                m.insert("gamma".into(), r.gamma.map_or(Value::Null, |g| number(g, full)));
                m.insert("coverage".into(), number(r.coverage, full));
                put_extended(&mut m, "mean_length", r.mean_length, full);
                m.insert("fraction_negative".into(), number(r.fraction_negative, full));
                m.insert("oracle_length".into(), number(r.oracle_length, full));
                m.insert("units".into(), json!(r.n_units));
                m.insert("clamped".into(), json!(r.n_clamped));
                Value::Object(m)
            })
            .collect(),
    )
}

pub fn intervals_json(rows: &[IntervalRow], full: bool) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| {
                let mut m = Map::new();
                m.insert("id".into(), json!(r.id));
                m.insert("level".into(), json!(r.level.to_string()));
                m.insert("method".into(), json!(r.method.to_string()));
                m.insert("alpha".into(), number(r.alpha, full));
                put_extended(&mut m, "lower", r.interval.lower(), full);
                put_extended(&mut m, "upper", r.interval.upper(), full);
                Value::Object(m)
            })
            .collect(),
    )
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("json serializes");
    bytes.push(b'\n');
    bytes
}

pub fn aggregate_bytes(rows: &[AggregateRow], format: Format, full: bool) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_aggregate_csv(&mut buf, rows, full)?;
            buf
        }
        Format::Json => json_bytes(&aggregate_json(rows, full)),
    })
}

pub fn replicates_bytes(rows: &[MetricsRow], format: Format, full: bool) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_replicates_csv(&mut buf, rows, full)?;
            buf
        }
        Format::Json => json_bytes(&replicates_json(rows, full)),
    })
}

pub fn intervals_bytes(rows: &[IntervalRow], format: Format, full: bool) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_intervals(&mut buf, rows, full)?;
            buf
        }
        Format::Json => json_bytes(&intervals_json(rows, full)),
    })
}

pub fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Fixed-width table of the main aggregate columns.
pub fn summary_table(rows: &[AggregateRow]) -> String {
    let mut out = format!(
        "{:<9} {:<10} {:<8} {:>6} {:>9} {:>9} {:>9} {:>5} {:>9}\n",
        "method", "level", "scope", "alpha", "coverage", "length", "negative", "inf", "oracle"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<9} {:<10} {:<8} {:>6} {:>9} {:>9} {:>9} {:>5} {:>9}\n",
            r.method.to_string(),
            r.level.to_string(),
            r.scope.to_string(),
            format_sig(r.alpha, 6),
            format_sig(r.coverage.mean, 4),
            format_sig(r.mean_length.mean, 4),
            format_sig(r.fraction_negative.mean, 4),
            r.n_infinite_length,
            format_sig(r.oracle_length.mean, 4),
        ));
    }
    out
}
