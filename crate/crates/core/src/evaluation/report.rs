use super::metrics::Summary;
use super::study::{AggregateRow, MetricsRow};
use crate::error::Result;
use std::io::Write;

pub const AGGREGATE_HEADER: &[&str] = &[
    "method",
    "level",
    "scope",
    "alpha",
    "gamma",
    "replicates",
    "coverage_mean",
    "coverage_sd",
    "coverage_q1",
    "coverage_median",
    "coverage_q3",
    "length_mean",
    "length_sd",
    "length_q1",
    "length_median",
    "length_q3",
    "length_infinite",
    "negative_mean",
    "negative_sd",
    "negative_q1",
    "negative_median",
    "negative_q3",
    "oracle_mean",
    "oracle_sd",
];

pub const REPLICATE_HEADER: &[&str] = &[
    "replicate",
    "seed",
    "method",
    "level",
    "scope",
    "alpha",
    "gamma",
    "coverage",
    "mean_length",
    "fraction_negative",
    "oracle_length",
    "units",
    "clamped",
];

/// Rounds to `digits` significant digits and prints the shortest decimal that
/// round-trips the rounded value. Infinities print as `inf` / `-inf`.
pub fn format_sig(value: f64, digits: usize) -> String {
    if value.is_nan() {
        return "nan".into();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), value).parse().expect("formatted float");
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

fn num(value: f64, full_precision: bool) -> String {
    if full_precision && value.is_finite() {
        format!("{value}")
    } else {
        format_sig(value, 6)
    }
}

fn summary_fields(s: &Summary, full: bool) -> [String; 5] {
    [s.mean, s.sd, s.q1, s.median, s.q3].map(|v| num(v, full))
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow], full_precision: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        let mut record = vec![
            r.method.to_string(),
            r.level.to_string(),
            r.scope.to_string(),
            num(r.alpha, full_precision),
            r.gamma.map_or(String::new(), |g| num(g, full_precision)),
            r.n_replicates.to_string(),
        ];
        record.extend(summary_fields(&r.coverage, full_precision));
        record.extend(summary_fields(&r.mean_length, full_precision));
        record.push(r.n_infinite_length.to_string());
        record.extend(summary_fields(&r.fraction_negative, full_precision));
        record.push(num(r.oracle_length.mean, full_precision));
        record.push(num(r.oracle_length.sd, full_precision));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replicates_csv<W: Write>(out: W, rows: &[MetricsRow], full_precision: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPLICATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            r.method.to_string(),
            r.level.to_string(),
            r.scope.to_string(),
            num(r.alpha, full_precision),
            r.gamma.map_or(String::new(), |g| num(g, full_precision)),
            num(r.coverage, full_precision),
            num(r.mean_length, full_precision),
            num(r.fraction_negative, full_precision),
            num(r.oracle_length, full_precision),
            r.n_units.to_string(),
            r.n_clamped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
