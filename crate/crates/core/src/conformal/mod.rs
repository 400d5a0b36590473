//! Split-conformal prediction of potential outcomes and treatment effects.
//!
//! [`CalibratedArm`] fits the potential-outcome model `f̂_a` of one arm on a
//! training fold of whole clusters and scores the calibration fold with
//! `|Y − f̂_a(B)|`. The radius at level `α` is the augmented quantile of those
//! scores (cluster level) or the cluster-weighted quantile (individual level).
//!
//! Effect intervals come in three forms:
//!
//! * [`interval_for_observed_test`] uses the test unit's observed outcome and
//!   the interval for the arm it did not receive,
//! * [`direct_difference`] subtracts the two arm intervals, and
//! * [`fit_nested`] regresses observed-unit effect intervals on covariates
//!   and recalibrates them.

mod nested;
mod predictor;
mod quantile;
mod split;

pub use nested::{fit_nested, nested_score, EndpointModels, NestedInterval, NestedOptions, NestedPredictor};
pub use predictor::{
    fit_conformal_po, ArmPredictors, CalibratedArm, ConformalPredictor, ConformalSettings, ScoreModel,
};
pub use quantile::{
    augmented_quantile, conformal_rank, covariate_shift_quantile, weighted_augmented_quantile, WeightedScoreGroups,
};
pub use split::{insufficient_calibration, split_clusters, SplitRule};

use crate::data::{Arm, Interval};

/// Effect interval for a unit whose outcome `y` under `arm` is observed.
///
/// `other` is the interval for the potential outcome under the other arm:
/// treated units give `y − other`, control units give `other − y`.
pub fn interval_for_observed_test(other: Interval, y: f64, arm: Arm) -> Interval {
    match arm {
        Arm::Treated => other.reflect_from(y),
        Arm::Control => other.shift_down(y),
    }
}

/// `C₁ − C₀ = [l₁ − u₀, u₁ − l₀]`.
pub fn direct_difference(treated: Interval, control: Interval) -> Interval {
    treated.minus(&control)
}
