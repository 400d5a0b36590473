//! CSV schema for trial data: one row per individual,
//! `cluster_id,treatment,outcome,x_1..x_p,r_1..r_q`.
//!
//! Columns are matched by header name (`x1` and `x_1` are both accepted) and
//! may appear in any order. Rows of a cluster need not be contiguous;
//! clusters keep the order of their first row. Treatment and `r_*` values
//! must be constant within a cluster.

use crate::data::{Cluster, IndividualRecord, Interval, Level, TrialDataset};
use crate::dgp::DgpCluster;
use crate::error::{Error, Result};
use crate::evaluation::{format_sig, Method};
use std::collections::HashMap;
use std::io::{Read, Write};

/// What a file must provide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsvRequirements {
    pub outcome: bool,
    pub treatment: bool,
}

impl CsvRequirements {
    /// Training data: every row labeled.
    pub const TRIAL: Self = Self { outcome: true, treatment: true };
    /// Prediction targets: outcome and treatment may be empty.
    pub const PREDICTION: Self = Self { outcome: false, treatment: false };
}

struct Columns {
    id: usize,
    treatment: Option<usize>,
    outcome: Option<usize>,
    x: Vec<usize>,
    r: Vec<usize>,
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    let rest = rest.strip_prefix('_').unwrap_or(rest);
    rest.parse::<usize>().ok().filter(|&i| i >= 1)
}

fn locate_columns(headers: &csv::StringRecord, problems: &mut Vec<String>) -> Option<Columns> {
    let mut id = None;
    let mut treatment = None;
    let mut outcome = None;
    let mut x = Vec::new();
    let mut r = Vec::new();
    for (i, raw) in headers.iter().enumerate() {
        let name = raw.trim().to_ascii_lowercase();
        match name.as_str() {
            "cluster_id" => id = Some(i),
            "treatment" => treatment = Some(i),
            "outcome" => outcome = Some(i),
            _ => {
                if let Some(k) = indexed(&name, 'x') {
                    x.push((k, i));
                } else if let Some(k) = indexed(&name, 'r') {
                    r.push((k, i));
                } else {
                    problems.push(format!("header: unknown column `{raw}`"));
                }
            }
        }
    }
    let mut ordered = |mut cols: Vec<(usize, usize)>, prefix: &str| -> Vec<usize> {
        cols.sort();
        for (pos, (k, _)) in cols.iter().enumerate() {
            if *k != pos + 1 {
                problems
                    .push(format!("header: {prefix} columns must be numbered 1..{}, found {prefix}_{k}", cols.len()));
                break;
            }
        }
        cols.into_iter().map(|(_, i)| i).collect()
    };
    let x = ordered(x, "x");
    let r = ordered(r, "r");
    if id.is_none() {
        problems.push("header: missing column `cluster_id`".into());
    }
    Some(Columns { id: id?, treatment, outcome, x, r })
}

struct Draft {
    treatment: Option<u8>,
    r: Vec<f64>,
    members: Vec<IndividualRecord>,
}

fn parse_number(field: &str, line: u64, column: &str, problems: &mut Vec<String>) -> Option<f64> {
    let field = field.trim();
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => {
            problems.push(format!("line {line}: column `{column}` has non-numeric value `{field}`"));
            None
        }
    }
}

/// Reads clusters from a CSV source, collecting every schema problem.
pub fn read_clusters<R: Read>(source: R, requirements: CsvRequirements) -> Result<Vec<Cluster>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut problems = Vec::new();
    let Some(cols) = locate_columns(&headers, &mut problems) else {
        return Err(Error::Schema(problems));
    };
    if requirements.treatment && cols.treatment.is_none() {
        problems.push("header: missing column `treatment`".into());
    }
    if requirements.outcome && cols.outcome.is_none() {
        problems.push("header: missing column `outcome`".into());
    }
    if !problems.is_empty() {
        return Err(Error::Schema(problems));
    }

    let mut order: Vec<String> = Vec::new();
    let mut drafts: HashMap<String, Draft> = HashMap::new();
    let mut violations: Vec<(String, String)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(cols.id).to_string();
        if id.is_empty() {
            problems.push(format!("line {line}: empty cluster_id"));
            continue;
        }
        let treatment = match cols.treatment.map(field).filter(|t| !t.is_empty()) {
            None => {
                if requirements.treatment {
                    problems.push(format!("line {line}: missing treatment"));
                }
                None
            }
            Some("0") => Some(0),
            Some("1") => Some(1),
            Some(other) => {
                problems.push(format!("line {line}: treatment `{other}` is not 0 or 1"));
                None
            }
        };
        let outcome = match cols.outcome.map(field).filter(|t| !t.is_empty()) {
            None => {
                if requirements.outcome {
                    problems.push(format!("line {line}: missing outcome"));
                }
                None
            }
            Some(v) => parse_number(v, line, "outcome", &mut problems),
        };
        if outcome.is_some() && treatment.is_none() && cols.treatment.is_some() && !requirements.treatment {
            problems.push(format!("line {line}: outcome given without treatment"));
        }
        let x: Vec<f64> = cols
            .x
            .iter()
            .enumerate()
            .filter_map(|(k, &i)| parse_number(field(i), line, &format!("x_{}", k + 1), &mut problems))
            .collect();
        let r: Vec<f64> = cols
            .r
            .iter()
            .enumerate()
            .filter_map(|(k, &i)| parse_number(field(i), line, &format!("r_{}", k + 1), &mut problems))
            .collect();
        if x.len() != cols.x.len() || r.len() != cols.r.len() {
            continue;
        }
        let record = match outcome {
            Some(y) => IndividualRecord::new(y, x),
            None => IndividualRecord::unlabeled(x),
        };
        match drafts.get_mut(&id) {
            Some(d) => {
                if d.treatment != treatment {
                    violations.push((id.clone(), "treatment".into()));
                }
                if let Some(k) = d.r.iter().zip(&r).position(|(a, b)| a != b) {
                    violations.push((id.clone(), format!("r_{}", k + 1)));
                }
                d.members.push(record);
            }
            None => {
                order.push(id.clone());
                drafts.insert(id, Draft { treatment, r, members: vec![record] });
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Schema(problems));
    }
    if let Some((id, column)) = violations.into_iter().next() {
        return Err(Error::ConstantWithinClusterViolation { id, column });
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let d = drafts.remove(&id).expect("drafted cluster");
            Cluster::new(id, d.treatment.unwrap_or(0), d.r, d.members)
        })
        .collect())
}

/// Reads and validates a labeled trial.
pub fn read_trial<R: Read>(source: R, randomization_probability: f64) -> Result<TrialDataset> {
    let clusters = read_clusters(source, CsvRequirements::TRIAL)?;
    TrialDataset::new(clusters, randomization_probability)
}

fn write_header<W: Write>(w: &mut csv::Writer<W>, n_x: usize, n_r: usize) -> Result<()> {
    let mut header = vec!["cluster_id".to_string(), "treatment".into(), "outcome".into()];
    header.extend((1..=n_x).map(|k| format!("x_{k}")));
    header.extend((1..=n_r).map(|k| format!("r_{k}")));
    w.write_record(&header)?;
    Ok(())
}

/// Writes clusters in the ingestion schema with round-trip precision. Pass
/// `with_treatment = false` for unlabeled prediction files.
pub fn write_clusters<W: Write>(out: W, clusters: &[Cluster], with_treatment: bool) -> Result<()> {
    let n_x = clusters.first().and_then(|c| c.members.first()).map_or(0, |r| r.covariates.len());
    let n_r = clusters.first().map_or(0, |c| c.cluster_covariates.len());
    let mut w = csv::Writer::from_writer(out);
    write_header(&mut w, n_x, n_r)?;
    for c in clusters {
        for r in &c.members {
            let mut row = vec![
                c.id.clone(),
                if with_treatment { c.treatment.to_string() } else { String::new() },
                r.outcome.map_or(String::new(), |y| format!("{y}")),
            ];
            row.extend(r.covariates.iter().map(|v| format!("{v}")));
            row.extend(c.cluster_covariates.iter().map(|v| format!("{v}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cluster-level truth: `cluster_id,y1_bar,y0_bar,effect`.
pub fn write_cluster_truth<W: Write>(out: W, ids: &[String], clusters: &[DgpCluster]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_id", "y1_bar", "y0_bar", "effect"])?;
    for (id, c) in ids.iter().zip(clusters) {
        w.write_record([
            id.clone(),
            format!("{}", c.mean_potential_outcome(1)),
            format!("{}", c.mean_potential_outcome(0)),
            format!("{}", c.effect()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Individual-level truth: `cluster_id,member,y1,y0,effect`, members
/// numbered from 1 in file order.
pub fn write_individual_truth<W: Write>(out: W, ids: &[String], clusters: &[DgpCluster]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_id", "member", "y1", "y0", "effect"])?;
    for (id, c) in ids.iter().zip(clusters) {
        for (j, r) in c.members.iter().enumerate() {
            w.write_record([
                id.clone(),
                (j + 1).to_string(),
                format!("{}", r.y1),
                format!("{}", r.y0),
                format!("{}", c.effect()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of an intervals file.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalRow {
    pub id: String,
    pub level: Level,
    pub method: Method,
    pub alpha: f64,
    pub interval: Interval,
}

/// Unit id: the cluster id, or `cluster_id:j` for member `j` (from 1).
pub fn unit_id(cluster_id: &str, member: Option<usize>) -> String {
    match member {
        None => cluster_id.to_string(),
        Some(j) => format!("{cluster_id}:{}", j + 1),
    }
}

pub const INTERVAL_HEADER: [&str; 6] = ["id", "level", "method", "alpha", "lower", "upper"];

/// Writes `id,level,method,alpha,lower,upper` with six significant digits,
/// or round-trip precision when `full_precision` is set.
pub fn write_intervals<W: Write>(out: W, rows: &[IntervalRow], full_precision: bool) -> Result<()> {
    let num = |v: f64| if full_precision && v.is_finite() { format!("{v}") } else { format_sig(v, 6) };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INTERVAL_HEADER)?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.level.to_string(),
            r.method.to_string(),
            num(r.alpha),
            num(r.interval.lower()),
            num(r.interval.upper()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an intervals file; `inf` and `-inf` are accepted as endpoints.
pub fn read_intervals<R: Read>(source: R) -> Result<Vec<IntervalRow>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(i).unwrap_or("").trim();
        let parsed = (|| -> Result<IntervalRow> {
            let lower: f64 = get(4).parse().map_err(|_| Error::InvalidConfig(format!("bad lower `{}`", get(4))))?;
            let upper: f64 = get(5).parse().map_err(|_| Error::InvalidConfig(format!("bad upper `{}`", get(5))))?;
            Ok(IntervalRow {
                id: get(0).to_string(),
                level: get(1).parse()?,
                method: get(2).parse()?,
                alpha: get(3).parse().map_err(|_| Error::InvalidConfig(format!("bad alpha `{}`", get(3))))?,
                interval: Interval::try_new(lower, upper)
                    .ok_or_else(|| Error::InvalidConfig(format!("lower {lower} exceeds upper {upper}")))?,
            })
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err(e) => problems.push(format!("line {line}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(rows)
    } else {
        Err(Error::Schema(problems))
    }
}
