//! Monte Carlo coverage studies on simulated trials.
//!
//! Each replicate draws a trial and a set of test clusters from
//! [`crate::dgp`], fits every requested method and scores the intervals
//! against the known effects. Replicate `r` derives all of its randomness
//! from `(base seed, r)`, so a study gives the same table for any thread
//! count or execution order.

mod analysis;
mod metrics;
mod report;
mod study;

pub use analysis::{analyze, test_units, AnalysisSpec, MethodIntervals, TestUnit};
pub use metrics::{coverage, fraction_negative, mean_length, type7_quantile, Summary};
pub use report::{format_sig, write_aggregate_csv, write_replicates_csv, AGGREGATE_HEADER, REPLICATE_HEADER};
pub use study::{
    aggregate, replicate_data, run_replicate, run_study, AggregateRow, MetricsRow, StudyConfig, StudyResult,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Effect-interval construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Observed test unit: its outcome plus the other arm's interval.
    #[serde(rename = "O")]
    O,
    /// Difference of the two arm intervals.
    #[serde(rename = "B-direct")]
    BDirect,
    /// Recalibrated endpoint regressions.
    #[serde(rename = "B-nested")]
    BNested,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::O, Method::BDirect, Method::BNested];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::O => "O",
            Method::BDirect => "B-direct",
            Method::BNested => "B-nested",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "o" => Ok(Method::O),
            "b-direct" | "direct" => Ok(Method::BDirect),
            "b-nested" | "nested" => Ok(Method::BNested),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}` (expected O, B-direct or B-nested)"))),
        }
    }
}

/// Whole population or the configured subgroup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Marginal,
    Local,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Marginal => "marginal",
            Scope::Local => "local",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "marginal" => Ok(Scope::Marginal),
            "local" => Ok(Scope::Local),
            other => Err(Error::InvalidConfig(format!("unknown scope `{other}` (expected marginal or local)"))),
        }
    }
}
