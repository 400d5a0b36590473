use super::interval_for_observed_test;
use super::predictor::{CalibratedArm, ConformalPredictor, ConformalSettings};
use super::quantile::{augmented_quantile, weighted_augmented_quantile, WeightedScoreGroups};
use super::split::{split_clusters, SplitRule};
use crate::data::{extended, Arm, Cluster, Interval, Level, TrialDataset};
use crate::error::{check_level, Error, Result};
use crate::regression::{FittedModel, Matrix, Regressor};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};

const INNER_TAG: u64 = 10;
const LOWER_TAG: u64 = 20;
const UPPER_TAG: u64 = 21;

/// Level `γ` and the two sample splits of the nested construction.
///
/// Both splits default to keeping ten calibration clusters per arm (and
/// training on the rest), enough for a nontrivial Step-1 interval at
/// `α = 0.1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedOptions {
    pub gamma: f64,
    /// Splits each arm into the endpoint-model training fold and the `s*`
    /// calibration fold.
    pub outer_split: SplitRule,
    /// Splits each outer training fold for the Step-1 predictors.
    pub inner_split: SplitRule,
}

impl Default for NestedOptions {
    fn default() -> Self {
        Self { gamma: 0.5, outer_split: SplitRule::CalibrationCount(10), inner_split: SplitRule::CalibrationCount(10) }
    }
}

impl NestedOptions {
    pub fn validate(&self) -> Result<()> {
        check_level(self.gamma)?;
        self.outer_split.validate()?;
        self.inner_split.validate()
    }
}

/// Endpoint regressions `m̂ᴸ`, `m̂ᴿ` and the calibrated radius `q̂*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointModels {
    pub lower: FittedModel,
    pub upper: FittedModel,
    #[serde(with = "extended")]
    pub radius: f64,
}

/// One nested-interval prediction. `clamped` marks crossing endpoint models
/// whose interval was collapsed to the midpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NestedInterval {
    pub interval: Interval,
    pub clamped: bool,
}

/// Two-stage interval for the treatment effect: Step-1 conformal intervals
/// for observed units are smoothed by endpoint regressions and recalibrated
/// at level `γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedPredictor {
    pub level: Level,
    pub alpha: f64,
    pub gamma: f64,
    pub n_features: usize,
    /// `None` when a Step-1 interval was the whole real line, in which case
    /// every prediction is ℝ.
    pub endpoints: Option<EndpointModels>,
}

impl NestedPredictor {
    pub fn is_trivial(&self) -> bool {
        self.endpoints.as_ref().is_none_or(|e| e.radius == f64::INFINITY)
    }

    pub fn interval_for_features(&self, features: &[f64]) -> NestedInterval {
        let Some(e) = &self.endpoints else {
            return NestedInterval { interval: Interval::real_line(), clamped: false };
        };
        if e.radius == f64::INFINITY {
            return NestedInterval { interval: Interval::real_line(), clamped: false };
        }
        let lo = e.lower.predict(features) - e.radius;
        let hi = e.upper.predict(features) + e.radius;
        match Interval::try_new(lo, hi) {
            Some(interval) => NestedInterval { interval, clamped: false },
            None => NestedInterval { interval: Interval::point(0.5 * (lo + hi)), clamped: true },
        }
    }

    pub fn interval_for_cluster(&self, cluster: &Cluster) -> NestedInterval {
        self.interval_for_features(&cluster.summary_features())
    }

    pub fn intervals_for_members(&self, cluster: &Cluster) -> Vec<NestedInterval> {
        (0..cluster.retained()).map(|j| self.interval_for_features(&cluster.individual_features(j))).collect()
    }
}

/// `s* = max{m̂ᴸ(B) − Cᴸ, Cᴿ − m̂ᴿ(B)}`; may be negative.
pub fn nested_score(lower_prediction: f64, upper_prediction: f64, c: Interval) -> f64 {
    (lower_prediction - c.lower()).max(c.upper() - upper_prediction)
}

/// An observed unit's Step-1 effect interval with its features, grouped by
/// cluster.
struct UnitIntervals {
    features: Vec<Vec<f64>>,
    intervals: Vec<Interval>,
}

fn unit_intervals(clusters: &[Cluster], level: Level, step1: &[ConformalPredictor; 2]) -> Result<Vec<UnitIntervals>> {
    clusters
        .iter()
        .map(|c| {
            let other = &step1[c.arm().other().index()];
            match level {
                Level::Cluster => {
                    let y = c.mean_outcome()?;
                    Ok(UnitIntervals {
                        features: vec![c.summary_features()],
                        intervals: vec![interval_for_observed_test(other.interval_for_cluster(c), y, c.arm())],
                    })
                }
                Level::Individual => {
                    let others = other.intervals_for_members(c);
                    let intervals = c
                        .members
                        .iter()
                        .zip(others)
                        .map(|(r, ci)| {
                            let y = r.outcome.ok_or_else(|| Error::MissingOutcome(c.id.clone()))?;
                            Ok(interval_for_observed_test(ci, y, c.arm()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let features = (0..c.retained()).map(|j| c.individual_features(j)).collect();
                    Ok(UnitIntervals { features, intervals })
                }
            }
        })
        .collect()
}

/// Fits the nested predictor.
///
/// Each arm is split into training and calibration folds by
/// `options.outer_split`; `settings.split` is not used. Step-1 conformal
/// predictors at level `α` are fit on the training folds alone (with their own
/// inner split). Endpoint models are fit on the training-fold units of both
/// arms pooled, and the radius is the `(1 − γ)`-quantile of `s*` over the
/// pooled calibration units.
pub fn fit_nested(
    dataset: &TrialDataset,
    settings: &ConformalSettings,
    alpha: f64,
    options: &NestedOptions,
    regressor: &dyn Regressor,
    endpoint_regressor: &dyn Regressor,
    seed: u64,
) -> Result<NestedPredictor> {
    check_level(alpha)?;
    options.validate()?;
    settings.validate()?;
    let gamma = options.gamma;
    let inner_settings = settings.clone().with_split(options.inner_split);
    let filtered = settings.filter(dataset)?;
    let n_features = filtered.n_features();
    let level = settings.level;

    let mut train_clusters = Vec::new();
    let mut calibration_clusters = Vec::new();
    let mut step1 = Vec::with_capacity(2);
    for arm in Arm::BOTH {
        let arm_seed = derive_seed(seed, arm.index() as u64);
        let (train, calibration) = split_clusters(&filtered, arm, options.outer_split, arm_seed)?;
        let inner =
            CalibratedArm::fit_filtered(&train, arm, &inner_settings, regressor, derive_seed(arm_seed, INNER_TAG))?;
        step1.push(inner.predictor(alpha)?);
        train_clusters.extend(train.into_clusters());
        calibration_clusters.extend(calibration.into_clusters());
    }
    let step1: [ConformalPredictor; 2] = step1.try_into().expect("two arms");
    let trivial = NestedPredictor { level, alpha, gamma, n_features, endpoints: None };
    if step1.iter().any(|p| p.radius == f64::INFINITY) {
        log::warn!("a Step-1 interval is the whole real line; the nested interval is trivial");
        return Ok(trivial);
    }

    let train_units = unit_intervals(&train_clusters, level, &step1)?;
    let mut features = Matrix::new(n_features);
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for unit in &train_units {
        for (f, c) in unit.features.iter().zip(&unit.intervals) {
            features.push_row(f)?;
            lower.push(c.lower());
            upper.push(c.upper());
        }
    }
    let m_lower = endpoint_regressor.fit(&features, &lower, derive_seed(seed, LOWER_TAG))?;
    let m_upper = endpoint_regressor.fit(&features, &upper, derive_seed(seed, UPPER_TAG))?;

    let calibration_units = unit_intervals(&calibration_clusters, level, &step1)?;
    let groups: Vec<Vec<f64>> = calibration_units
        .iter()
        .map(|unit| {
            unit.features
                .iter()
                .zip(&unit.intervals)
                .map(|(f, c)| nested_score(m_lower.predict(f), m_upper.predict(f), *c))
                .collect()
        })
        .collect();
    let radius = match level {
        Level::Cluster => augmented_quantile(&groups.concat(), gamma)?,
        Level::Individual => weighted_augmented_quantile(&WeightedScoreGroups::new(groups)?, gamma)?,
    };
    Ok(NestedPredictor { endpoints: Some(EndpointModels { lower: m_lower, upper: m_upper, radius }), ..trivial })
}
