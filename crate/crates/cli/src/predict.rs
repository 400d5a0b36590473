use crate::config::{read_input, Format, RunConfig};
use crate::output::{extension, write_file};
use crate::UsageError;
use anyhow::{Context, Result};
use crt_conformal::evaluation::format_sig;
use crt_conformal::io::{read_clusters, unit_id, CsvRequirements};
use crt_conformal::{direct_difference, Cluster, ConformalPredictor, Interval, Level};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};

/// Contents of `model.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub models: Vec<LevelModel>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LevelModel {
    pub level: Level,
    pub n_individual_covariates: usize,
    pub n_cluster_covariates: usize,
    pub predictors: Vec<SavedPredictors>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SavedPredictors {
    pub alpha: f64,
    pub control: ConformalPredictor,
    pub treated: ConformalPredictor,
}

struct Row {
    id: String,
    level: Level,
    target: &'static str,
    alpha: f64,
    interval: Interval,
}

fn model_path(dir: &Path) -> PathBuf {
    if dir.is_file() {
        dir.to_path_buf()
    } else {
        dir.join("model.json")
    }
}

pub fn load(dir: &Path) -> Result<SavedModel> {
    let path = model_path(dir);
    if !path.is_file() {
        return Err(
            UsageError(format!("model not found: {} (run `analyze --save-model` first)", path.display())).into()
        );
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

fn check(p: &ConformalPredictor, cluster: &Cluster, model: &LevelModel) -> Result<()> {
    if cluster.cluster_covariates.len() != model.n_cluster_covariates {
        return Err(crt_conformal::Error::DimensionMismatch {
            context: format!("cluster `{}` cluster covariates", cluster.id),
            expected: model.n_cluster_covariates,
            found: cluster.cluster_covariates.len(),
        }
        .into());
    }
    p.check_features(&cluster.summary_features())?;
    Ok(())
}

fn predictions(model: &SavedModel, clusters: &[Cluster]) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for m in &model.models {
        for set in &m.predictors {
            for c in clusters {
                check(&set.control, c, m)?;
                let per_unit: Vec<(Option<usize>, Interval, Interval)> = match m.level {
                    Level::Cluster => {
                        vec![(None, set.control.interval_for_cluster(c), set.treated.interval_for_cluster(c))]
                    }
                    Level::Individual => set
                        .control
                        .intervals_for_members(c)
                        .into_iter()
                        .zip(set.treated.intervals_for_members(c))
                        .enumerate()
                        .map(|(j, (i0, i1))| (Some(j), i0, i1))
                        .collect(),
                };
                for (member, i0, i1) in per_unit {
                    let id = unit_id(&c.id, member);
                    for (target, interval) in [("Y(0)", i0), ("Y(1)", i1), ("B-direct", direct_difference(i1, i0))] {
                        rows.push(Row { id: id.clone(), level: m.level, target, alpha: set.alpha, interval });
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn render(rows: &[Row], format: Format, full: bool) -> Result<Vec<u8>> {
    let num = |v: f64| if full && v.is_finite() { format!("{v}") } else { format_sig(v, 6) };
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["id", "level", "target", "alpha", "lower", "upper"])?;
            for r in rows {
                w.write_record([
                    r.id.clone(),
                    r.level.to_string(),
                    r.target.to_string(),
                    num(r.alpha),
                    num(r.interval.lower()),
                    num(r.interval.upper()),
                ])?;
            }
            Ok(w.into_inner().context("flushing predictions")?)
        }
        Format::Json => {
            let number = |v: f64| {
                let v: f64 = num(v).parse().expect("formatted float");
                serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
            };
            let items: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let mut m = Map::new();
                    m.insert("id".into(), json!(r.id));
                    m.insert("level".into(), json!(r.level.to_string()));
                    m.insert("target".into(), json!(r.target));
                    m.insert("alpha".into(), number(r.alpha));
                    for (k, v) in [("lower", r.interval.lower()), ("upper", r.interval.upper())] {
                        m.insert(k.into(), number(v));
                        m.insert(format!("{k}_infinite"), Value::Bool(v.is_infinite()));
                    }
                    Value::Object(m)
                })
                .collect();
            let mut bytes = serde_json::to_vec_pretty(&Value::Array(items))?;
            bytes.push(b'\n');
            Ok(bytes)
        }
    }
}

pub fn run(cfg: &RunConfig, model_dir: &Path, input: &Path) -> Result<()> {
    let model = load(model_dir)?;
    let text = read_input(input, "covariates file")?;
    let clusters =
        if text.trim().is_empty() { Vec::new() } else { read_clusters(text.as_bytes(), CsvRequirements::PREDICTION)? };
    let rows = predictions(&model, &clusters)?;
    let path = cfg.out.join(format!("predictions.{}", extension(cfg.format)));
    write_file(&path, &render(&rows, cfg.format, cfg.full_precision)?)?;
    println!("{} intervals written to {}", rows.len(), path.display());
    Ok(())
}
