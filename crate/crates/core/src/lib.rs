//! Conformal causal inference for cluster randomized trials.
//!
//! The crate builds finite-sample-valid prediction intervals for the
//! cluster-level effect `Ȳ(1) − Ȳ(0)` and the individual-level effect
//! `Y(1) − Y(0)`, for any base regressor:
//!
//! * [`conformal`] holds the split-conformal machinery: augmented and
//!   cluster-weighted quantiles, cluster-level sample splitting, the observed
//!   test unit construction, direct interval differencing and the nested
//!   two-stage construction.
//! * [`regression`] provides the base learners (least squares, a CART random
//!   forest and a stacked ensemble of the two).
//! * [`dgp`] simulates trials with known potential outcomes and
//!   [`evaluation`] runs Monte Carlo coverage studies on them.
//! * [`data`] and [`io`] hold the domain types and the CSV schema.

pub mod conformal;
pub mod data;
pub mod dgp;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod regression;
pub mod rng;

pub use conformal::{
    direct_difference, interval_for_observed_test, ArmPredictors, CalibratedArm, ConformalPredictor, ConformalSettings,
    NestedPredictor, ScoreModel, SplitRule,
};
pub use data::{Arm, Cluster, ClusterSummary, IndividualRecord, Interval, Level, SubgroupPredicate, TrialDataset};
pub use error::{Error, Result};
pub use evaluation::{Method, MetricsRow, Scope, StudyConfig};
pub use regression::{FittedModel, Matrix, Regressor, RegressorSpec};
