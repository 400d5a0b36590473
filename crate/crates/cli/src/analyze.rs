use crate::config::{read_input, RunConfig};
use crate::output::{extension, intervals_bytes, write_file};
use crate::predict::{LevelModel, SavedModel, SavedPredictors};
use anyhow::Result;
use crt_conformal::conformal::insufficient_calibration;
use crt_conformal::evaluation::{
    analyze, format_sig, fraction_negative, mean_length, test_units, AnalysisSpec, TestUnit,
};
use crt_conformal::io::{read_clusters, read_trial, unit_id, CsvRequirements, IntervalRow};
use crt_conformal::rng::derive_seed;
use crt_conformal::{Arm, ArmPredictors, Cluster, Error, Level, Method, TrialDataset};
use std::fmt::Write as _;

type MethodRun = (Method, f64, Vec<TestUnit>, Vec<crt_conformal::Interval>);
use std::path::Path;

/// Length and sign metrics of one (level, method, α) cell over all splits.
struct Cell {
    level: Level,
    method: Method,
    alpha: f64,
    units: usize,
    lengths: Vec<f64>,
    negatives: Vec<f64>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.iter().any(|v| v.is_infinite()) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn spec_for(cfg: &RunConfig, level: Level, methods: Vec<Method>) -> Result<AnalysisSpec> {
    Ok(AnalysisSpec {
        level,
        subgroup: cfg.analysis_subgroup(level)?,
        split: cfg.split.0,
        score_model: cfg.score_model,
        methods,
        alphas: cfg.alpha.clone(),
        nested: cfg.nested(),
        regressor: cfg.regressor_spec(cfg.regressor),
        endpoint_regressor: cfg.regressor_spec(cfg.endpoint_regressor),
    })
}

fn check_dimensions(trial: &TrialDataset, test: &[Cluster]) -> Result<()> {
    for c in test {
        for (context, expected, found) in [
            (
                "individual covariates",
                trial.n_individual_covariates(),
                c.members.first().map_or(0, |m| m.covariates.len()),
            ),
            ("cluster covariates", trial.n_cluster_covariates(), c.cluster_covariates.len()),
        ] {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    context: format!("test cluster `{}` {context}", c.id),
                    expected,
                    found,
                }
                .into());
            }
        }
    }
    Ok(())
}

fn warn_small_calibration(arms: &ArmPredictors, alphas: &[f64], level: Level) {
    for arm in [Arm::Control, Arm::Treated] {
        let n = arms.get(arm).n_calibration();
        for &alpha in alphas {
            if insufficient_calibration(n, alpha) {
                log::warn!(
                    "{level} level, arm {arm}: {n} calibration clusters; alpha = {alpha} needs (1 - alpha)(n + 1) <= n \
                     for a finite quantile, so the intervals are the whole real line"
                );
            }
        }
    }
}

/// Runs the analysis of one split; returns interval rows and per-cell metrics.
fn analyze_once(
    cfg: &RunConfig,
    trial: &TrialDataset,
    test: &[Cluster],
    level: Level,
    seed: u64,
) -> Result<Vec<MethodRun>> {
    let n_x = trial.n_individual_covariates();
    let n_r = trial.n_cluster_covariates();
    let subgroup = cfg.analysis_subgroup(level)?;
    let units = test_units(test, level, &subgroup, n_x, n_r);
    let mut out = Vec::new();
    if units.is_empty() {
        log::warn!("{level} level: no test units satisfy the subgroup `{subgroup}`");
        return Ok(out);
    }
    let observed: Vec<TestUnit> = units.iter().filter(|u| u.observed.is_some()).cloned().collect();
    let with_o = cfg.methods.contains(&Method::O);
    if with_o && observed.len() < units.len() {
        log::info!(
            "{level} level: method O applies to the {} test units with an outcome and treatment",
            observed.len()
        );
    }
    let others: Vec<Method> = cfg.methods.iter().copied().filter(|m| *m != Method::O).collect();
    let mut runs: Vec<(Vec<Method>, &[TestUnit])> = Vec::new();
    if with_o && !observed.is_empty() {
        runs.push((vec![Method::O], &observed));
    }
    if !others.is_empty() {
        runs.push((others, &units));
    }
    for (methods, subset) in runs {
        let spec = spec_for(cfg, level, methods)?;
        for mi in analyze(trial, test, subset, &spec, seed)? {
            out.push((mi.method, mi.alpha, subset.to_vec(), mi.intervals));
        }
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig, data: &Path, test_path: &Path) -> Result<()> {
    let trial = read_trial(read_input(data, "data file")?.as_bytes(), cfg.randomization_probability)?;
    let test = read_clusters(read_input(test_path, "test file")?.as_bytes(), CsvRequirements::PREDICTION)?;
    check_dimensions(&trial, &test)?;

    let mut rows = Vec::new();
    let mut cells: Vec<Cell> = Vec::new();
    let mut saved = Vec::new();
    for &level in &cfg.levels {
        let settings = spec_for(cfg, level, cfg.methods.clone())?.settings();
        match ArmPredictors::fit(&trial, &settings, &cfg.regressor_spec(cfg.regressor), cfg.seed) {
            Ok(arms) => {
                warn_small_calibration(&arms, &cfg.alpha, level);
                if cfg.save_model {
                    let predictors = cfg
                        .alpha
                        .iter()
                        .map(|&a| {
                            let [control, treated] = arms.predictors(a)?;
                            Ok(SavedPredictors { alpha: a, control, treated })
                        })
                        .collect::<crt_conformal::Result<Vec<_>>>()?;
                    saved.push(LevelModel {
                        level,
                        n_individual_covariates: trial.n_individual_covariates(),
                        n_cluster_covariates: trial.n_cluster_covariates(),
                        predictors,
                    });
                }
            }
            Err(e @ (Error::TooFewClusters { .. } | Error::EmptyResult)) => {
                log::warn!("{level} level: {e}; the intervals are the whole real line");
            }
            Err(e) => return Err(e.into()),
        }

        for k in 0..cfg.splits {
            let seed = if k == 0 { cfg.seed } else { derive_seed(cfg.seed, k as u64) };
            for (method, alpha, units, intervals) in analyze_once(cfg, &trial, &test, level, seed)? {
                if k == 0 {
                    for (u, interval) in units.iter().zip(&intervals) {
                        rows.push(IntervalRow {
                            id: unit_id(&test[u.cluster].id, u.member),
                            level,
                            method,
                            alpha,
                            interval: *interval,
                        });
                    }
                }
                let length = mean_length(&intervals)?;
                let negative = fraction_negative(&intervals)?;
                match cells.iter_mut().find(|c| c.level == level && c.method == method && c.alpha == alpha) {
                    Some(c) => {
                        c.lengths.push(length);
                        c.negatives.push(negative);
                    }
                    None => cells.push(Cell {
                        level,
                        method,
                        alpha,
                        units: units.len(),
                        lengths: vec![length],
                        negatives: vec![negative],
                    }),
                }
            }
        }
    }

    let ext = extension(cfg.format);
    write_file(&cfg.out.join(format!("intervals.{ext}")), &intervals_bytes(&rows, cfg.format, cfg.full_precision)?)?;
    let summary = summary_csv(&cells, cfg.full_precision);
    write_file(&cfg.out.join("summary.csv"), summary.as_bytes())?;
    if cfg.save_model {
        let model = SavedModel { models: saved };
        let mut bytes = serde_json::to_vec_pretty(&model)?;
        bytes.push(b'\n');
        write_file(&cfg.out.join("model.json"), &bytes)?;
    }
    print!("{}", summary_table(&cells));
    Ok(())
}

fn summary_csv(cells: &[Cell], full: bool) -> String {
    let num = |v: f64| if full && v.is_finite() { format!("{v}") } else { format_sig(v, 6) };
    let mut out = String::from(
        "level,method,alpha,units,splits,mean_length,mean_length_sd,fraction_negative,fraction_negative_sd\n",
    );
    for c in cells {
        let (l, l_sd) = mean_sd(&c.lengths);
        let (n, n_sd) = mean_sd(&c.negatives);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.level,
            c.method,
            num(c.alpha),
            c.units,
            c.lengths.len(),
            num(l),
            num(l_sd),
            num(n),
            num(n_sd)
        );
    }
    out
}

fn summary_table(cells: &[Cell]) -> String {
    let mut out =
        format!("{:<10} {:<9} {:>6} {:>6} {:>22} {:>22}\n", "level", "method", "alpha", "units", "length", "negative");
    for c in cells {
        let (l, l_sd) = mean_sd(&c.lengths);
        let (n, n_sd) = mean_sd(&c.negatives);
        let _ = writeln!(
            out,
            "{:<10} {:<9} {:>6} {:>6} {:>22} {:>22}",
            c.level.to_string(),
            c.method.to_string(),
            format_sig(c.alpha, 6),
            c.units,
            format!("{}({})", format_sig(l, 4), format_sig(l_sd, 3)),
            format!("{}({})", format_sig(n, 4), format_sig(n_sd, 3)),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_of_splits() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_sd(&[1.0, f64::INFINITY]).0, f64::INFINITY);
    }
}
