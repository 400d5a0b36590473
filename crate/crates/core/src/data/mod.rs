//! Trial data: individual records grouped into randomized clusters.
//!
//! Covariate vectors handed to regressors and subgroup predicates share one
//! layout, `(x_1.., r_1.., n)`: individual covariates (or their cluster
//! means), then cluster covariates, then the cluster size `N`.

pub mod extended;
mod interval;
mod subgroup;

pub use interval::Interval;
pub use subgroup::{CmpOp, Comparison, Feature, SubgroupPredicate};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

/// Treatment arm of a cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn from_indicator(a: u8) -> Option<Arm> {
        match a {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    pub fn indicator(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn index(self) -> usize {
        self.indicator() as usize
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.indicator())
    }
}

/// Whether a procedure targets cluster means or individuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Cluster,
    Individual,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Cluster => "cluster",
            Level::Individual => "individual",
        })
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cluster" => Ok(Level::Cluster),
            "individual" => Ok(Level::Individual),
            other => Err(Error::InvalidConfig(format!("unknown level `{other}`"))),
        }
    }
}

/// One individual. `outcome` is `None` only for prediction targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub outcome: Option<f64>,
    pub covariates: Vec<f64>,
}

impl IndividualRecord {
    pub fn new(outcome: f64, covariates: Vec<f64>) -> Self {
        Self { outcome: Some(outcome), covariates }
    }

    pub fn unlabeled(covariates: Vec<f64>) -> Self {
        Self { outcome: None, covariates }
    }
}

/// A randomized cluster.
///
/// `size` is the cluster size `N` as sampled. Subgroup filtering may drop
/// members, after which `members.len()` is the retained count while `size`
/// keeps the original value, since `N` is itself a covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub treatment: u8,
    pub cluster_covariates: Vec<f64>,
    pub size: usize,
    pub members: Vec<IndividualRecord>,
}

impl Cluster {
    pub fn new(
        id: impl Into<String>,
        treatment: u8,
        cluster_covariates: Vec<f64>,
        members: Vec<IndividualRecord>,
    ) -> Self {
        Self { id: id.into(), treatment, cluster_covariates, size: members.len(), members }
    }

    /// Arm of a validated cluster.
    pub fn arm(&self) -> Arm {
        if self.treatment == 1 {
            Arm::Treated
        } else {
            Arm::Control
        }
    }

    /// Number of members currently held (`M_i` after filtering).
    pub fn retained(&self) -> usize {
        self.members.len()
    }

    /// Individual feature vector `B_ij = (X_ij, R_i, N_i)`.
    pub fn individual_features(&self, j: usize) -> Vec<f64> {
        let x = &self.members[j].covariates;
        let mut out = Vec::with_capacity(x.len() + self.cluster_covariates.len() + 1);
        out.extend_from_slice(x);
        out.extend_from_slice(&self.cluster_covariates);
        out.push(self.size as f64);
        out
    }

    /// Componentwise mean of the members' covariates.
    pub fn covariate_means(&self) -> Vec<f64> {
        let p = self.members.first().map_or(0, |r| r.covariates.len());
        let mut sums = vec![0.0; p];
        for r in &self.members {
            for (s, v) in sums.iter_mut().zip(&r.covariates) {
                *s += v;
            }
        }
        let n = self.members.len() as f64;
        sums.iter_mut().for_each(|s| *s /= n);
        sums
    }

    /// Cluster feature vector `B̄_i = (X̄_i, R_i, N_i)`; needs no outcomes.
    pub fn summary_features(&self) -> Vec<f64> {
        let mut out = self.covariate_means();
        out.extend_from_slice(&self.cluster_covariates);
        out.push(self.size as f64);
        out
    }

    pub fn mean_outcome(&self) -> Result<f64> {
        let mut sum = 0.0;
        for r in &self.members {
            sum += r.outcome.ok_or_else(|| Error::MissingOutcome(self.id.clone()))?;
        }
        Ok(sum / self.members.len() as f64)
    }

    pub fn summarize(&self) -> Result<ClusterSummary> {
        if self.members.is_empty() {
            return Err(Error::EmptyCluster(self.id.clone()));
        }
        Ok(ClusterSummary {
            id: self.id.clone(),
            treatment: self.treatment,
            mean_outcome: self.mean_outcome()?,
            mean_covariates: self.covariate_means(),
            cluster_covariates: self.cluster_covariates.clone(),
            size: self.size,
        })
    }
}

/// Cluster-level aggregates `(Ȳ, X̄, R, N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: String,
    pub treatment: u8,
    pub mean_outcome: f64,
    pub mean_covariates: Vec<f64>,
    pub cluster_covariates: Vec<f64>,
    pub size: usize,
}

impl ClusterSummary {
    pub fn features(&self) -> Vec<f64> {
        let mut out = self.mean_covariates.clone();
        out.extend_from_slice(&self.cluster_covariates);
        out.push(self.size as f64);
        out
    }
}

/// Computes `Ȳ` and `X̄` for a cluster whose outcomes are all present.
pub fn summarize_cluster(cluster: &Cluster) -> Result<ClusterSummary> {
    cluster.summarize()
}

/// A validated cluster randomized trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    clusters: Vec<Cluster>,
    randomization_probability: f64,
    n_individual_covariates: usize,
    n_cluster_covariates: usize,
}

impl TrialDataset {
    /// Validates the clusters; see [`validate_dataset`].
    pub fn new(clusters: Vec<Cluster>, randomization_probability: f64) -> Result<Self> {
        if !(randomization_probability > 0.0 && randomization_probability < 1.0) {
            return Err(Error::InvalidProbability(randomization_probability));
        }
        let n_x = clusters.iter().find_map(|c| c.members.first()).map_or(0, |r| r.covariates.len());
        let n_r = clusters.first().map_or(0, |c| c.cluster_covariates.len());
        let mut seen = HashSet::with_capacity(clusters.len());
        for c in &clusters {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateClusterId(c.id.clone()));
            }
            if c.treatment > 1 {
                return Err(Error::NonBinaryTreatment { id: c.id.clone(), value: c.treatment });
            }
            if c.members.is_empty() {
                return Err(Error::EmptyCluster(c.id.clone()));
            }
            if c.size != c.members.len() {
                return Err(Error::DimensionMismatch {
                    context: format!("size of cluster `{}`", c.id),
                    expected: c.members.len(),
                    found: c.size,
                });
            }
            if c.cluster_covariates.len() != n_r {
                return Err(Error::DimensionMismatch {
                    context: format!("cluster covariates of `{}`", c.id),
                    expected: n_r,
                    found: c.cluster_covariates.len(),
                });
            }
            for (j, r) in c.members.iter().enumerate() {
                if r.covariates.len() != n_x {
                    return Err(Error::DimensionMismatch {
                        context: format!("record {} of cluster `{}`", j + 1, c.id),
                        expected: n_x,
                        found: r.covariates.len(),
                    });
                }
            }
        }
        Ok(Self { clusters, randomization_probability, n_individual_covariates: n_x, n_cluster_covariates: n_r })
    }

    /// Subset of an already validated dataset.
    pub(crate) fn derived(&self, clusters: Vec<Cluster>) -> Self {
        Self {
            clusters,
            randomization_probability: self.randomization_probability,
            n_individual_covariates: self.n_individual_covariates,
            n_cluster_covariates: self.n_cluster_covariates,
        }
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn into_clusters(self) -> Vec<Cluster> {
        self.clusters
    }

    pub fn randomization_probability(&self) -> f64 {
        self.randomization_probability
    }

    pub fn n_individual_covariates(&self) -> usize {
        self.n_individual_covariates
    }

    pub fn n_cluster_covariates(&self) -> usize {
        self.n_cluster_covariates
    }

    /// Length of the `(x.., r.., n)` feature vector.
    pub fn n_features(&self) -> usize {
        self.n_individual_covariates + self.n_cluster_covariates + 1
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn arm_clusters(&self, arm: Arm) -> impl Iterator<Item = &Cluster> {
        self.clusters.iter().filter(move |c| c.arm() == arm)
    }

    pub fn count_arm(&self, arm: Arm) -> usize {
        self.arm_clusters(arm).count()
    }

    /// Fails with `MissingOutcome` if any record lacks an outcome.
    pub fn require_outcomes(&self) -> Result<()> {
        for c in &self.clusters {
            if c.members.iter().any(|r| r.outcome.is_none()) {
                return Err(Error::MissingOutcome(c.id.clone()));
            }
        }
        Ok(())
    }

    /// Restricts the trial to the subgroup `omega`.
    ///
    /// Cluster-level predicates drop whole clusters whose `B̄` falls outside
    /// `Ω_C`. Individual-level predicates drop individuals whose `B` falls
    /// outside `Ω_I` and then drop emptied clusters; the retained clusters keep
    /// their original size `N`.
    pub fn filter_subgroup(&self, omega: &SubgroupPredicate) -> Result<TrialDataset> {
        let (n_x, n_r) = (self.n_individual_covariates, self.n_cluster_covariates);
        omega.check_dimensions(n_x, n_r)?;
        if omega.is_all() {
            return Ok(self.clone());
        }
        let clusters: Vec<Cluster> = match omega.level {
            Level::Cluster => {
                self.clusters.iter().filter(|c| omega.matches(&c.summary_features(), n_x, n_r)).cloned().collect()
            }
            Level::Individual => self
                .clusters
                .iter()
                .filter_map(|c| {
                    let members: Vec<IndividualRecord> = c
                        .members
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| omega.matches(&c.individual_features(*j), n_x, n_r))
                        .map(|(_, r)| r.clone())
                        .collect();
                    (!members.is_empty()).then(|| Cluster { members, ..c.clone() })
                })
                .collect(),
        };
        if clusters.is_empty() {
            return Err(Error::EmptyResult);
        }
        Ok(self.derived(clusters))
    }
}

/// Checks every dataset invariant and returns the validated trial.
pub fn validate_dataset(clusters: Vec<Cluster>, randomization_probability: f64) -> Result<TrialDataset> {
    TrialDataset::new(clusters, randomization_probability)
}

/// Free-function form of [`TrialDataset::filter_subgroup`].
pub fn filter_subgroup(dataset: &TrialDataset, omega: &SubgroupPredicate) -> Result<TrialDataset> {
    dataset.filter_subgroup(omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(y: f64, x: &[f64]) -> IndividualRecord {
        IndividualRecord::new(y, x.to_vec())
    }

    fn cluster(id: &str, a: u8, r: &[f64], rows: &[(f64, &[f64])]) -> Cluster {
        Cluster::new(id, a, r.to_vec(), rows.iter().map(|(y, x)| rec(*y, x)).collect())
    }

    #[test]
    fn valid_dataset_is_returned_unchanged() {
        let cs = vec![
            cluster("a", 0, &[1.0], &[(1.0, &[0.0, 1.0]), (2.0, &[1.0, 1.0])]),
            cluster("b", 1, &[2.0], &[(3.0, &[0.5, 0.5])]),
        ];
        let d = validate_dataset(cs.clone(), 0.5).unwrap();
        assert_eq!(d.clusters(), &cs[..]);
        assert_eq!(d.n_individual_covariates(), 2);
        assert_eq!(d.n_features(), 4);
    }

    #[test]
    fn ragged_covariates_are_rejected() {
        let cs = vec![cluster("a", 0, &[], &[(1.0, &[0.0, 1.0])]), cluster("b", 1, &[], &[(3.0, &[0.5, 0.5, 0.1])])];
        assert!(matches!(validate_dataset(cs, 0.5), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let bad_arm = vec![cluster("a", 2, &[], &[(1.0, &[0.0])])];
        assert!(matches!(validate_dataset(bad_arm, 0.5), Err(Error::NonBinaryTreatment { value: 2, .. })));

        let dup = vec![cluster("a", 0, &[], &[(1.0, &[0.0])]), cluster("a", 1, &[], &[(1.0, &[0.0])])];
        assert_eq!(validate_dataset(dup, 0.5), Err(Error::DuplicateClusterId("a".into())));

        let empty = vec![Cluster::new("e", 0, vec![], vec![])];
        assert_eq!(validate_dataset(empty, 0.5), Err(Error::EmptyCluster("e".into())));

        let ok = vec![cluster("a", 0, &[], &[(1.0, &[0.0])])];
        assert!(matches!(validate_dataset(ok, 1.0), Err(Error::InvalidProbability(_))));
    }

    #[test]
    fn summaries_are_exact_means() {
        let c = cluster("a", 0, &[], &[(1.0, &[0.0]), (2.0, &[0.0]), (3.0, &[6.0])]);
        let s = summarize_cluster(&c).unwrap();
        assert_eq!(s.mean_outcome, 2.0);
        assert_eq!(s.mean_covariates, vec![2.0]);
        assert_eq!(s.size, 3);

        let single = cluster("b", 1, &[], &[(5.0, &[1.0, 2.0])]);
        let s = summarize_cluster(&single).unwrap();
        assert_eq!((s.mean_outcome, s.mean_covariates.clone()), (5.0, vec![1.0, 2.0]));

        let two = cluster("c", 1, &[], &[(-1.0, &[0.0, 4.0]), (1.0, &[2.0, 0.0])]);
        let s = summarize_cluster(&two).unwrap();
        assert_eq!((s.mean_outcome, s.mean_covariates), (0.0, vec![1.0, 2.0]));
    }

    #[test]
    fn summary_requires_outcomes() {
        let c = Cluster::new("m", 0, vec![], vec![IndividualRecord::unlabeled(vec![1.0])]);
        assert_eq!(summarize_cluster(&c), Err(Error::MissingOutcome("m".into())));
    }

    #[test]
    fn cluster_level_subgroup_keeps_matching_clusters() {
        let cs = vec![
            cluster("first", 0, &[3.0, 1.0], &[(0.0, &[0.0])]),
            cluster("second", 1, &[1.0, 1.0], &[(0.0, &[0.0])]),
            cluster("third", 0, &[3.0, 0.0], &[(0.0, &[0.0])]),
        ];
        let d = TrialDataset::new(cs, 0.5).unwrap();
        let omega: SubgroupPredicate = "r1 >= 2 & r2 = 1".parse().unwrap();
        let f = d.filter_subgroup(&omega).unwrap();
        let ids: Vec<&str> = f.clusters().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["first"]);
    }

    #[test]
    fn individual_level_subgroup_keeps_original_size() {
        let cs = vec![cluster("a", 0, &[], &[(1.0, &[0.0, 0.2]), (2.0, &[0.0, -0.7]), (3.0, &[0.0, 0.4])])];
        let d = TrialDataset::new(cs, 0.5).unwrap();
        let omega = SubgroupPredicate::parse_at(Level::Individual, "|x2| < 0.5").unwrap();
        let f = d.filter_subgroup(&omega).unwrap();
        let c = &f.clusters()[0];
        let ys: Vec<f64> = c.members.iter().map(|r| r.outcome.unwrap()).collect();
        assert_eq!(ys, [1.0, 3.0]);
        assert_eq!(c.size, 3);
        assert_eq!(c.retained(), 2);
    }

    #[test]
    fn all_predicate_is_identity_and_empty_subgroup_errors() {
        let cs = vec![cluster("a", 0, &[1.0], &[(1.0, &[0.0])])];
        let d = TrialDataset::new(cs, 0.5).unwrap();
        assert_eq!(d.filter_subgroup(&SubgroupPredicate::all(Level::Individual)).unwrap(), d);
        let none: SubgroupPredicate = "r1 > 5".parse().unwrap();
        assert_eq!(d.filter_subgroup(&none), Err(Error::EmptyResult));
    }
}
