//! Quantiles of augmented empirical score distributions.
//!
//! All quantiles use the generalized inverse `inf{s : F̂(s) ≥ 1 − α}` and
//! treat the test unit's unobserved score as a point mass at `+∞`. Mass is
//! accumulated in units of one calibration cluster, and the comparison with
//! the target level allows a `1e-9` slack so that exact boundary cases such
//! as `(1 − 0.1) · 10 = 9` are not lost to rounding.

use crate::error::{check_level, Error, Result};

const LEVEL_SLACK: f64 = 1e-9;

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !s.is_finite()) {
        Some(&bad) => Err(Error::NonFiniteScore(bad)),
        None => Ok(()),
    }
}

/// Rank `k = ⌈(1 − α)(n + 1)⌉` of the augmented quantile; `k > n` means `+∞`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    ((1.0 - alpha) * (n as f64 + 1.0) - LEVEL_SLACK).ceil().max(1.0) as usize
}

/// `(1 − α)`-quantile of `(Σᵢ δ_{sᵢ} + δ_{+∞}) / (n + 1)`.
///
/// This is the `k`-th smallest score with `k = ⌈(1 − α)(n + 1)⌉`, or `+∞`
/// when `k > n`. Ties each keep their own atom. Scores need not be
/// nonnegative (the nested construction produces signed scores).
pub fn augmented_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    check_scores(scores)?;
    let k = conformal_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// Per-cluster calibration scores. Cluster `i` holds the scores of its `M_i`
/// retained individuals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightedScoreGroups {
    groups: Vec<Vec<f64>>,
}

impl WeightedScoreGroups {
    /// Fails on an empty group (`M_i = 0`) or a non-finite score.
    pub fn new(groups: Vec<Vec<f64>>) -> Result<Self> {
        for g in &groups {
            if g.is_empty() {
                return Err(Error::EmptyScores);
            }
            check_scores(g)?;
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn n_clusters(&self) -> usize {
        self.groups.len()
    }

    pub fn counts(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().map(Vec::len)
    }
}

/// `(1 − α)`-quantile of the two-level empirical distribution in which every
/// calibration cluster carries mass `1/(n_c + 1)`, split evenly over its
/// `M_i` scores, and `+∞` carries the remaining `1/(n_c + 1)`.
pub fn weighted_augmented_quantile(groups: &WeightedScoreGroups, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if groups.groups.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut atoms: Vec<(f64, f64)> = groups
        .groups
        .iter()
        .flat_map(|g| {
            let mass = 1.0 / g.len() as f64;
            g.iter().map(move |&s| (s, mass))
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let target = (1.0 - alpha) * (groups.groups.len() as f64 + 1.0) - LEVEL_SLACK;
    Ok(first_reaching(&atoms, target))
}

/// Scans sorted `(score, mass)` atoms and returns the first score at which the
/// cumulative mass reaches `target`, or `+∞`.
fn first_reaching(atoms: &[(f64, f64)], target: f64) -> f64 {
    let mut cumulative = 0.0;
    for (i, &(score, mass)) in atoms.iter().enumerate() {
        cumulative += mass;
        // All atoms tied at `score` count toward F̂(score).
        let tied_next = atoms.get(i + 1).is_some_and(|a| a.0 == score);
        if !tied_next && cumulative >= target {
            return score;
        }
    }
    f64::INFINITY
}

/// Weighted split-conformal quantile under covariate shift with equal cluster
/// sizes `M`.
///
/// Score `j` of calibration cluster `i` gets mass `w(Bᵢ) / (M · W)` and `+∞`
/// gets `w(B_test) / W`, where `W = Σᵢ w(Bᵢ) + w(B_test)`. With `M = 1` this
/// is cluster-level weighted conformal prediction.
pub fn covariate_shift_quantile(
    cluster_scores: &[(Vec<f64>, f64)],
    test_weight: f64,
    cluster_size: usize,
    alpha: f64,
) -> Result<f64> {
    check_level(alpha)?;
    if cluster_scores.is_empty() || cluster_size == 0 {
        return Err(Error::EmptyScores);
    }
    let positive = |w: f64| w > 0.0 && w.is_finite();
    if !positive(test_weight) {
        return Err(Error::NonpositiveWeight(test_weight));
    }
    for (scores, w) in cluster_scores {
        if !positive(*w) {
            return Err(Error::NonpositiveWeight(*w));
        }
        if scores.len() != cluster_size {
            return Err(Error::UnequalClusterSizes { expected: cluster_size, found: scores.len() });
        }
        check_scores(scores)?;
    }
    let total: f64 = cluster_scores.iter().map(|(_, w)| w).sum::<f64>() + test_weight;
    let m = cluster_size as f64;
    let mut atoms: Vec<(f64, f64)> =
        cluster_scores.iter().flat_map(|(scores, w)| scores.iter().map(move |&s| (s, w / (m * total)))).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(first_reaching(&atoms, 1.0 - alpha - LEVEL_SLACK))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_formula_examples() {
        let scores: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(augmented_quantile(&scores, 0.1).unwrap(), 9.0);
        assert_eq!(augmented_quantile(&[1.0, 2.0, 3.0], 0.1).unwrap(), f64::INFINITY);
        assert_eq!(augmented_quantile(&[5.0], 0.5).unwrap(), 5.0);
    }

    #[test]
    fn quantile_errors() {
        assert_eq!(augmented_quantile(&[], 0.1), Err(Error::EmptyScores));
        assert_eq!(augmented_quantile(&[1.0], 0.0), Err(Error::InvalidLevel(0.0)));
        assert_eq!(augmented_quantile(&[1.0], 1.0), Err(Error::InvalidLevel(1.0)));
        assert!(matches!(augmented_quantile(&[f64::NAN], 0.2), Err(Error::NonFiniteScore(_))));
        assert_eq!(weighted_augmented_quantile(&WeightedScoreGroups::default(), 0.1), Err(Error::EmptyScores));
        assert_eq!(WeightedScoreGroups::new(vec![vec![]]), Err(Error::EmptyScores));
    }

    #[test]
    fn ties_keep_their_atoms() {
        // k = ⌈0.5 · 5⌉ = 3 → third smallest of {1, 2, 2, 2}.
        assert_eq!(augmented_quantile(&[2.0, 1.0, 2.0, 2.0], 0.5).unwrap(), 2.0);
        let g = WeightedScoreGroups::new(vec![vec![2.0, 2.0], vec![1.0]]).unwrap();
        assert_eq!(weighted_augmented_quantile(&g, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn weighted_hand_cdf() {
        // Atoms 1 (1/6), 2 (1/3), 3 (1/6), +∞ (1/3).
        let g = WeightedScoreGroups::new(vec![vec![1.0, 3.0], vec![2.0]]).unwrap();
        assert_eq!(weighted_augmented_quantile(&g, 0.4).unwrap(), 3.0);
        assert_eq!(weighted_augmented_quantile(&g, 0.2).unwrap(), f64::INFINITY);
        // F̂(2) = 1/2 ≥ 1/2.
        assert_eq!(weighted_augmented_quantile(&g, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn singleton_groups_match_unweighted() {
        let scores = [0.3, 1.7, 0.9, 2.2, 0.1, 1.1, 0.6, 0.6, 3.0, 0.2];
        let g = WeightedScoreGroups::new(scores.iter().map(|s| vec![*s]).collect()).unwrap();
        for alpha in [0.05, 0.1, 0.2, 0.25, 0.3, 0.5, 0.9] {
            assert_eq!(
                weighted_augmented_quantile(&g, alpha).unwrap(),
                augmented_quantile(&scores, alpha).unwrap(),
                "alpha {alpha}"
            );
        }
    }

    #[test]
    fn covariate_shift_examples() {
        let clusters = vec![(vec![1.0], 1.0), (vec![2.0], 1.0), (vec![3.0], 2.0)];
        // p = {1/6, 1/6, 1/3}, p_∞ = 1/3; F̂(3) = 2/3 ≥ 0.6.
        assert_eq!(covariate_shift_quantile(&clusters, 2.0, 1, 0.4).unwrap(), 3.0);

        let uniform: Vec<(Vec<f64>, f64)> = (1..=9).map(|s| (vec![s as f64], 0.7)).collect();
        let flat: Vec<f64> = (1..=9).map(f64::from).collect();
        for alpha in [0.1, 0.2, 0.35, 0.5] {
            assert_eq!(
                covariate_shift_quantile(&uniform, 0.7, 1, alpha).unwrap(),
                augmented_quantile(&flat, alpha).unwrap()
            );
        }

        let heavy_test = 1e6 * 4.0;
        assert_eq!(covariate_shift_quantile(&clusters, heavy_test, 1, 0.4).unwrap(), f64::INFINITY);
    }

    #[test]
    fn covariate_shift_errors() {
        let clusters = vec![(vec![1.0, 2.0], 1.0), (vec![3.0], 1.0)];
        assert!(matches!(
            covariate_shift_quantile(&clusters, 1.0, 2, 0.1),
            Err(Error::UnequalClusterSizes { expected: 2, found: 1 })
        ));
        let zero = vec![(vec![1.0], 0.0)];
        assert_eq!(covariate_shift_quantile(&zero, 1.0, 1, 0.1), Err(Error::NonpositiveWeight(0.0)));
        assert_eq!(covariate_shift_quantile(&[(vec![1.0], 1.0)], -1.0, 1, 0.1), Err(Error::NonpositiveWeight(-1.0)));
    }

    #[test]
    fn equal_size_clusters_split_mass() {
        // Two clusters of size 2, equal weights: each score has mass 1/6.
        let clusters = vec![(vec![1.0, 4.0], 1.0), (vec![2.0, 3.0], 1.0)];
        assert_eq!(covariate_shift_quantile(&clusters, 1.0, 2, 0.5).unwrap(), 3.0);
        assert_eq!(covariate_shift_quantile(&clusters, 1.0, 2, 0.34).unwrap(), 4.0);
        assert_eq!(covariate_shift_quantile(&clusters, 1.0, 2, 0.3).unwrap(), f64::INFINITY);
    }
}
