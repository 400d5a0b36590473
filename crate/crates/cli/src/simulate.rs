use crate::config::RunConfig;
use crate::output::{aggregate_bytes, extension, intervals_bytes, replicates_bytes, summary_table, write_file};
use anyhow::Result;
use crt_conformal::evaluation::{analyze, replicate_data, run_study, test_units};
use crt_conformal::io::{unit_id, write_cluster_truth, write_clusters, write_individual_truth, IntervalRow};
use crt_conformal::{Cluster, StudyConfig};
use serde_json::json;
use std::path::Path;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let study = cfg.study()?;
    let result = run_study(&study)?;
    let ext = extension(cfg.format);
    write_file(
        &cfg.out.join(format!("aggregate.{ext}")),
        &aggregate_bytes(&result.aggregate, cfg.format, cfg.full_precision)?,
    )?;
    if cfg.per_replicate {
        write_file(
            &cfg.out.join(format!("replicates.{ext}")),
            &replicates_bytes(&result.rows, cfg.format, cfg.full_precision)?,
        )?;
    }
    if cfg.dump {
        dump(cfg, &study, &cfg.out.join("dump"))?;
    }
    print!("{}", summary_table(&result.aggregate));
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> crt_conformal::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Writes every replicate's inputs together with the intervals the
/// in-memory analysis produced, so `analyze` can be checked against them.
fn dump(cfg: &RunConfig, study: &StudyConfig, root: &Path) -> Result<()> {
    let mut manifest = Vec::new();
    for r in 0..study.n_replicates {
        let (trial, test, _) = replicate_data(study, r)?;
        let name = format!("rep-{r:05}");
        let dir = root.join(&name);
        let observed: &[Cluster] = trial.observed.clusters();
        write_file(&dir.join("data.csv"), &csv_bytes(|b| write_clusters(b, observed, true))?)?;
        write_file(&dir.join("test.csv"), &csv_bytes(|b| write_clusters(b, &test, true))?)?;
        let observed_ids: Vec<String> = observed.iter().map(|c| c.id.clone()).collect();
        let test_ids: Vec<String> = test.iter().map(|c| c.id.clone()).collect();
        write_file(
            &dir.join("truth_observed.csv"),
            &csv_bytes(|b| write_cluster_truth(b, &observed_ids, &trial.observed_truth))?,
        )?;
        write_file(&dir.join("truth_clusters.csv"), &csv_bytes(|b| write_cluster_truth(b, &test_ids, &trial.test))?)?;
        write_file(
            &dir.join("truth_individuals.csv"),
            &csv_bytes(|b| write_individual_truth(b, &test_ids, &trial.test))?,
        )?;

        let n_x = trial.observed.n_individual_covariates();
        let n_r = trial.observed.n_cluster_covariates();
        let seed = study.analysis_seed(r);
        let mut files = Vec::new();
        for &level in &study.levels {
            for &scope in &study.scopes {
                let spec = study.analysis_spec(level, scope);
                let units = test_units(&test, level, &spec.subgroup, n_x, n_r);
                let mut rows = Vec::new();
                for mi in analyze(&trial.observed, &test, &units, &spec, seed)? {
                    for (u, interval) in units.iter().zip(&mi.intervals) {
                        rows.push(IntervalRow {
                            id: unit_id(&test[u.cluster].id, u.member),
                            level,
                            method: mi.method,
                            alpha: mi.alpha,
                            interval: *interval,
                        });
                    }
                }
                let file = format!("intervals-{level}-{scope}.{}", extension(cfg.format));
                write_file(&dir.join(&file), &intervals_bytes(&rows, cfg.format, true)?)?;
                files.push(json!({"level": level.to_string(), "scope": scope.to_string(), "subgroup": spec.subgroup.to_string(), "file": file}));
            }
        }
        manifest.push(json!({
            "replicate": r,
            "dir": name,
            "data_seed": study.data_seed(r),
            "analysis_seed": seed,
            "intervals": files,
        }));
    }
    let mut bytes = serde_json::to_vec_pretty(&json!({ "replicates": manifest }))?;
    bytes.push(b'\n');
    write_file(&root.join("manifest.json"), &bytes)
}
