use super::Method;
use crate::conformal::{
    direct_difference, fit_nested, interval_for_observed_test, ArmPredictors, ConformalPredictor, ConformalSettings,
    NestedOptions, NestedPredictor, ScoreModel, SplitRule,
};
use crate::data::{Arm, Cluster, Interval, Level, SubgroupPredicate, TrialDataset};
use crate::error::{check_level, Error, Result};
use crate::regression::{Regressor, RegressorSpec};
use crate::rng::derive_seed;

const NESTED_TAG: u64 = 0x4e45_5354;

/// How to turn an observed trial into effect intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisSpec {
    pub level: Level,
    pub subgroup: SubgroupPredicate,
    pub split: SplitRule,
    pub score_model: ScoreModel,
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    pub nested: NestedOptions,
    pub regressor: RegressorSpec,
    pub endpoint_regressor: RegressorSpec,
}

impl AnalysisSpec {
    pub fn settings(&self) -> ConformalSettings {
        ConformalSettings {
            level: self.level,
            subgroup: self.subgroup.clone().at_level(self.level),
            split: self.split,
            score_model: self.score_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        for &a in &self.alphas {
            check_level(a)?;
        }
        self.nested.validate()?;
        if self.alphas.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method and one alpha are required".into()));
        }
        Ok(())
    }
}

/// A test cluster (`member = None`) or one of its individuals.
#[derive(Clone, Debug, PartialEq)]
pub struct TestUnit {
    pub cluster: usize,
    pub member: Option<usize>,
    pub features: Vec<f64>,
    /// Realized treatment and outcome, when observed.
    pub observed: Option<(Arm, f64)>,
}

/// Test units at `level` inside `subgroup`.
pub fn test_units(
    test: &[Cluster],
    level: Level,
    subgroup: &SubgroupPredicate,
    n_x: usize,
    n_r: usize,
) -> Vec<TestUnit> {
    let mut units = Vec::new();
    for (i, c) in test.iter().enumerate() {
        match level {
            Level::Cluster => {
                let features = c.summary_features();
                if subgroup.matches(&features, n_x, n_r) {
                    let observed = c.mean_outcome().ok().map(|y| (c.arm(), y));
                    units.push(TestUnit { cluster: i, member: None, features, observed });
                }
            }
            Level::Individual => {
                for (j, r) in c.members.iter().enumerate() {
                    let features = c.individual_features(j);
                    if subgroup.matches(&features, n_x, n_r) {
                        units.push(TestUnit {
                            cluster: i,
                            member: Some(j),
                            features,
                            observed: r.outcome.map(|y| (c.arm(), y)),
                        });
                    }
                }
            }
        }
    }
    units
}

/// Intervals of one method at one level `α`, aligned with the test units.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodIntervals {
    pub method: Method,
    pub alpha: f64,
    pub intervals: Vec<Interval>,
    /// Nested intervals collapsed because the endpoint models crossed.
    pub clamped: usize,
}

/// Maps "too little data to calibrate" to `None`, which yields ℝ intervals.
fn trivial_if_small<T>(result: Result<T>) -> Result<Option<T>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::TooFewClusters { .. } | Error::EmptyResult) => Ok(None),
        Err(e) => Err(e),
    }
}

fn arm_interval(p: &ConformalPredictor, unit: &TestUnit, test: &[Cluster]) -> Interval {
    match unit.member {
        None => p.interval_for_cluster(&test[unit.cluster]),
        Some(_) => Interval::centered(p.model.predict(&unit.features), p.radius),
    }
}

/// Fits every requested method on `observed` and evaluates it on `units`.
///
/// The potential-outcome models are fit once and reused across methods `O`
/// and `B-direct` and across levels `α`. `O` needs every unit's realized
/// treatment and outcome.
pub fn analyze(
    observed: &TrialDataset,
    test: &[Cluster],
    units: &[TestUnit],
    spec: &AnalysisSpec,
    seed: u64,
) -> Result<Vec<MethodIntervals>> {
    spec.validate()?;
    let settings = spec.settings();
    let needs_arms = spec.methods.iter().any(|m| *m != Method::BNested);
    let arms = if needs_arms {
        trivial_if_small(ArmPredictors::fit(observed, &settings, &spec.regressor, seed))?
    } else {
        None
    };
    if spec.methods.contains(&Method::O) && units.iter().any(|u| u.observed.is_none()) {
        return Err(Error::InvalidConfig(
            "method O needs the realized treatment and outcome of every test unit".into(),
        ));
    }

    let mut out = Vec::new();
    for &alpha in &spec.alphas {
        let predictors = arms.as_ref().map(|a| a.predictors(alpha)).transpose()?;
        for &method in &spec.methods {
            let result = match method {
                Method::O | Method::BDirect => {
                    let intervals = units
                        .iter()
                        .map(|u| match &predictors {
                            None => Interval::real_line(),
                            Some([p0, p1]) => {
                                if method == Method::O {
                                    let (arm, y) = u.observed.expect("checked above");
                                    let other = if arm == Arm::Treated { p0 } else { p1 };
                                    interval_for_observed_test(arm_interval(other, u, test), y, arm)
                                } else {
                                    direct_difference(arm_interval(p1, u, test), arm_interval(p0, u, test))
                                }
                            }
                        })
                        .collect();
                    MethodIntervals { method, alpha, intervals, clamped: 0 }
                }
                Method::BNested => nested_intervals(observed, units, spec, &settings, alpha, seed)?,
            };
            out.push(result);
        }
    }
    Ok(out)
}

fn nested_intervals(
    observed: &TrialDataset,
    units: &[TestUnit],
    spec: &AnalysisSpec,
    settings: &ConformalSettings,
    alpha: f64,
    seed: u64,
) -> Result<MethodIntervals> {
    let nested: Option<NestedPredictor> = trivial_if_small(fit_nested(
        observed,
        settings,
        alpha,
        &spec.nested,
        &spec.regressor as &dyn Regressor,
        &spec.endpoint_regressor,
        derive_seed(seed, NESTED_TAG),
    ))?;
    let mut clamped = 0;
    let intervals = units
        .iter()
        .map(|u| match &nested {
            None => Interval::real_line(),
            Some(n) => {
                let p = n.interval_for_features(&u.features);
                clamped += usize::from(p.clamped);
                p.interval
            }
        })
        .collect();
    Ok(MethodIntervals { method: Method::BNested, alpha, intervals, clamped })
}
