use super::analysis::{analyze, test_units, AnalysisSpec};
use super::metrics::{coverage, fraction_negative, mean_length, Summary};
use super::{Method, Scope};
use crate::conformal::{NestedOptions, ScoreModel, SplitRule};
use crate::data::{Cluster, Level, SubgroupPredicate};
use crate::dgp::{generate_trial, oracle_length, test_id, DgpConfig};
use crate::error::{check_level, Error, Result};
use crate::regression::RegressorSpec;
use crate::rng::derive_seed;
use rayon::prelude::*;

const DATA_TAG: u64 = 0xda7a;
const ANALYSIS_TAG: u64 = 0xa7a1;

/// A Monte Carlo study over simulated trials.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    /// Trial shape; `dgp.seed` is the base seed of the study.
    pub dgp: DgpConfig,
    pub methods: Vec<Method>,
    pub levels: Vec<Level>,
    pub scopes: Vec<Scope>,
    pub alphas: Vec<f64>,
    pub nested: NestedOptions,
    pub split: SplitRule,
    pub score_model: ScoreModel,
    pub regressor: RegressorSpec,
    pub endpoint_regressor: RegressorSpec,
    pub n_replicates: usize,
    pub cluster_subgroup: SubgroupPredicate,
    pub individual_subgroup: SubgroupPredicate,
    /// Worker threads; `0` uses every available core.
    pub parallelism: usize,
    /// Assign `A_test = 1{effect > median}` instead of the trial's randomization.
    pub adversarial_test_assignment: bool,
}

impl StudyConfig {
    pub fn new(dgp: DgpConfig) -> Self {
        Self {
            dgp,
            methods: Method::ALL.to_vec(),
            levels: vec![Level::Cluster],
            scopes: vec![Scope::Marginal, Scope::Local],
            alphas: vec![0.1],
            nested: NestedOptions::default(),
            split: SplitRule::default(),
            score_model: ScoreModel::Cluster,
            regressor: RegressorSpec::default_ensemble(),
            endpoint_regressor: RegressorSpec::default_ensemble(),
            n_replicates: 100,
            cluster_subgroup: SubgroupPredicate::parse_at(Level::Cluster, "r1>=2 & r2=1").expect("valid predicate"),
            individual_subgroup: SubgroupPredicate::parse_at(Level::Individual, "|x2|<0.5").expect("valid predicate"),
            parallelism: 1,
            adversarial_test_assignment: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.n_replicates < 1 {
            return Err(Error::InvalidConfig("n_replicates must be at least 1".into()));
        }
        if self.methods.is_empty() || self.levels.is_empty() || self.scopes.is_empty() || self.alphas.is_empty() {
            return Err(Error::InvalidConfig("methods, levels, scopes and alphas must be non-empty".into()));
        }
        for &a in &self.alphas {
            check_level(a)?;
        }
        self.nested.validate()?;
        self.split.validate()?;
        for (p, level) in [(&self.cluster_subgroup, Level::Cluster), (&self.individual_subgroup, Level::Individual)] {
            p.check_dimensions(2, 2)?;
            if p.level != level && !p.is_all() {
                return Err(Error::InvalidPredicate {
                    expr: p.to_string(),
                    reason: format!("expected a {level}-level predicate"),
                });
            }
        }
        Ok(())
    }

    pub fn subgroup(&self, level: Level, scope: Scope) -> SubgroupPredicate {
        match (scope, level) {
            (Scope::Marginal, _) => SubgroupPredicate::all(level),
            (Scope::Local, Level::Cluster) => self.cluster_subgroup.clone(),
            (Scope::Local, Level::Individual) => self.individual_subgroup.clone(),
        }
    }

    /// Seed of replicate `index`.
    pub fn replicate_seed(&self, index: usize) -> u64 {
        derive_seed(self.dgp.seed, index as u64)
    }

    /// Seed the trial generator uses for replicate `index`.
    pub fn data_seed(&self, index: usize) -> u64 {
        derive_seed(self.replicate_seed(index), DATA_TAG)
    }

    /// Seed the analysis of replicate `index` uses.
    pub fn analysis_seed(&self, index: usize) -> u64 {
        derive_seed(self.replicate_seed(index), ANALYSIS_TAG)
    }

    pub fn analysis_spec(&self, level: Level, scope: Scope) -> AnalysisSpec {
        AnalysisSpec {
            level,
            subgroup: self.subgroup(level, scope),
            split: self.split,
            score_model: self.score_model,
            methods: self.methods.clone(),
            alphas: self.alphas.clone(),
            nested: self.nested,
            regressor: self.regressor.clone(),
            endpoint_regressor: self.endpoint_regressor.clone(),
        }
    }
}

/// Metrics of one method on one replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    pub level: Level,
    pub scope: Scope,
    pub alpha: f64,
    /// Only set for the nested method.
    pub gamma: Option<f64>,
    pub coverage: f64,
    pub mean_length: f64,
    pub fraction_negative: f64,
    pub oracle_length: f64,
    pub n_units: usize,
    pub n_clamped: usize,
}

/// Simulated trial of replicate `index`, its test clusters with the test
/// assignment applied, and the true effect of each test cluster.
pub fn replicate_data(cfg: &StudyConfig, index: usize) -> Result<(crate::dgp::SimulatedTrial, Vec<Cluster>, Vec<f64>)> {
    let dgp = DgpConfig { seed: cfg.data_seed(index), ..cfg.dgp.clone() };
    let trial = generate_trial(&dgp)?;
    let effects: Vec<f64> = trial.test.iter().map(|c| c.effect()).collect();
    let test: Vec<Cluster> = if cfg.adversarial_test_assignment {
        let mut sorted = effects.clone();
        sorted.sort_by(f64::total_cmp);
        let median = super::metrics::type7_quantile(&sorted, 0.5);
        trial.test.iter().enumerate().map(|(i, c)| c.observed_as(test_id(i), u8::from(c.effect() > median))).collect()
    } else {
        trial.test_clusters()
    };
    Ok((trial, test, effects))
}

/// Runs every (level, scope, α, method) combination on replicate `index`.
pub fn run_replicate(cfg: &StudyConfig, index: usize) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let (trial, test, effects) = replicate_data(cfg, index)?;
    let n_x = trial.observed.n_individual_covariates();
    let n_r = trial.observed.n_cluster_covariates();
    let mut rows = Vec::new();
    for &level in &cfg.levels {
        for &scope in &cfg.scopes {
            let spec = cfg.analysis_spec(level, scope);
            let units = test_units(&test, level, &spec.subgroup, n_x, n_r);
            if units.is_empty() {
                return Err(Error::Empty);
            }
            let truths: Vec<f64> = units.iter().map(|u| effects[u.cluster]).collect();
            let results = analyze(&trial.observed, &test, &units, &spec, cfg.analysis_seed(index))?;
            for r in results {
                rows.push(MetricsRow {
                    replicate: index,
                    seed: cfg.replicate_seed(index),
                    method: r.method,
                    level,
                    scope,
                    alpha: r.alpha,
                    gamma: (r.method == Method::BNested).then_some(cfg.nested.gamma),
                    coverage: coverage(&r.intervals, &truths)?,
                    mean_length: mean_length(&r.intervals)?,
                    fraction_negative: fraction_negative(&r.intervals)?,
                    oracle_length: oracle_length(&truths, r.alpha)?,
                    n_units: truths.len(),
                    n_clamped: r.clamped,
                });
            }
        }
    }
    Ok(rows)
}

/// Across-replicate summary of one (method, level, scope, α) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub level: Level,
    pub scope: Scope,
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub n_replicates: usize,
    pub coverage: Summary,
    /// Over replicates with finite length; all `+∞` if there are none.
    pub mean_length: Summary,
    /// Replicates whose intervals were the whole real line.
    pub n_infinite_length: usize,
    pub fraction_negative: Summary,
    pub oracle_length: Summary,
}

/// Groups rows by cell, in order of first appearance.
pub fn aggregate(rows: &[MetricsRow]) -> Result<Vec<AggregateRow>> {
    let mut keys: Vec<(Method, Level, Scope, u64)> = Vec::new();
    for r in rows {
        let key = (r.method, r.level, r.scope, r.alpha.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, level, scope, alpha_bits)| {
            let cell: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| (r.method, r.level, r.scope, r.alpha.to_bits()) == (method, level, scope, alpha_bits))
                .collect();
            let collect = |f: fn(&MetricsRow) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let lengths: Vec<f64> = collect(|r| r.mean_length).into_iter().filter(|v| v.is_finite()).collect();
            Ok(AggregateRow {
                method,
                level,
                scope,
                alpha: f64::from_bits(alpha_bits),
                gamma: cell[0].gamma,
                n_replicates: cell.len(),
                coverage: Summary::of(&collect(|r| r.coverage))?,
                mean_length: if lengths.is_empty() { Summary::infinite() } else { Summary::of(&lengths)? },
                n_infinite_length: cell.len() - lengths.len(),
                fraction_negative: Summary::of(&collect(|r| r.fraction_negative))?,
                oracle_length: Summary::of(&collect(|r| r.oracle_length))?,
            })
        })
        .collect()
}

/// Per-replicate rows in replicate order, and their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<MetricsRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Runs all replicates on a pool of `cfg.parallelism` threads.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let per_replicate: Vec<Vec<MetricsRow>> = pool
        .install(|| (0..cfg.n_replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect::<Result<Vec<_>>>())?;
    let rows: Vec<MetricsRow> = per_replicate.into_iter().flatten().collect();
    let aggregate = aggregate(&rows)?;
    Ok(StudyResult { rows, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> StudyConfig {
        let mut cfg = StudyConfig::new(DgpConfig::new(40, 30, 7));
        cfg.regressor = RegressorSpec::Ols;
        cfg.endpoint_regressor = RegressorSpec::Ols;
        cfg.n_replicates = 2;
        cfg
    }

    #[test]
    fn replicate_is_deterministic() {
        let cfg = small_config();
        let a = run_replicate(&cfg, 1).unwrap();
        assert_eq!(a, run_replicate(&cfg, 1).unwrap());
        assert_eq!(a.len(), 6);
        for r in &a {
            assert!((0.0..=1.0).contains(&r.coverage));
            assert!((0.0..=1.0).contains(&r.fraction_negative));
        }
    }

    #[test]
    fn tiny_alpha_gives_infinite_length() {
        let mut cfg = small_config();
        cfg.dgp.m = 30;
        cfg.alphas = vec![0.001];
        cfg.methods = vec![Method::O, Method::BDirect];
        cfg.scopes = vec![Scope::Marginal];
        let rows = run_replicate(&cfg, 0).unwrap();
        assert!(rows.iter().all(|r| r.mean_length == f64::INFINITY && r.coverage == 1.0));
        let agg = aggregate(&rows).unwrap();
        assert!(agg.iter().all(|a| a.n_infinite_length == 1 && a.mean_length.mean == f64::INFINITY));
    }

    #[test]
    fn single_replicate_aggregate_matches_row() {
        let mut cfg = small_config();
        cfg.n_replicates = 1;
        cfg.methods = vec![Method::O];
        cfg.scopes = vec![Scope::Marginal];
        let result = run_study(&cfg).unwrap();
        let (row, agg) = (&result.rows[0], &result.aggregate[0]);
        assert_eq!(agg.coverage.mean, row.coverage);
        assert_eq!(agg.coverage.sd, 0.0);
        assert_eq!(agg.mean_length.median, row.mean_length);
    }

    #[test]
    fn study_is_independent_of_parallelism() {
        let mut cfg = small_config();
        cfg.n_replicates = 4;
        cfg.methods = vec![Method::O, Method::BDirect];
        let serial = run_study(&cfg).unwrap();
        cfg.parallelism = 3;
        assert_eq!(serial, run_study(&cfg).unwrap());
    }
}
