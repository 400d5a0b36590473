use crate::data::{Arm, Cluster, TrialDataset};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// How many of an arm's `n_a` clusters go to the training fold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `⌈f · n_a⌉` training clusters, clamped to `[1, n_a − 1]`.
    TrainFraction(f64),
    /// Keep `c` clusters for calibration and train on the rest, always keeping
    /// at least two training clusters when `n_a ≥ 3`.
    CalibrationCount(usize),
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::TrainFraction(0.5)
    }
}

impl SplitRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitRule::TrainFraction(f) if !(f > 0.0 && f < 1.0) => {
                Err(Error::InvalidConfig(format!("train fraction must lie in (0, 1), got {f}")))
            }
            SplitRule::CalibrationCount(0) => Err(Error::InvalidConfig("calibration count must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Training fold size for an arm with `n_a ≥ 2` clusters.
    pub fn n_train(&self, n_a: usize) -> usize {
        let n = match *self {
            SplitRule::TrainFraction(f) => (f * n_a as f64 - 1e-9).ceil() as usize,
            SplitRule::CalibrationCount(c) => n_a.saturating_sub(c).max(2.min(n_a - 1)),
        };
        n.clamp(1, n_a - 1)
    }
}

/// Splits arm `arm` of `dataset` into training and calibration folds of whole
/// clusters. Each fold keeps the input order.
pub fn split_clusters(
    dataset: &TrialDataset,
    arm: Arm,
    rule: SplitRule,
    seed: u64,
) -> Result<(TrialDataset, TrialDataset)> {
    rule.validate()?;
    let arm_clusters: Vec<&Cluster> = dataset.arm_clusters(arm).collect();
    let n_a = arm_clusters.len();
    if n_a < 2 {
        return Err(Error::TooFewClusters { arm: arm.indicator(), needed: 2, got: n_a });
    }
    let mut order: Vec<usize> = (0..n_a).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut in_train = vec![false; n_a];
    for &i in &order[..rule.n_train(n_a)] {
        in_train[i] = true;
    }
    let (train, calibration): (Vec<_>, Vec<_>) = arm_clusters.into_iter().zip(in_train).partition(|(_, t)| *t);
    let collect = |fold: Vec<(&Cluster, bool)>| fold.into_iter().map(|(c, _)| c.clone()).collect();
    Ok((dataset.derived(collect(train)), dataset.derived(collect(calibration))))
}

/// True when `α < 1/(n_cal + 1)`, which forces an infinite radius.
pub fn insufficient_calibration(n_calibration: usize, alpha: f64) -> bool {
    alpha < 1.0 / (n_calibration as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IndividualRecord;

    fn trial(n: usize, arm: u8) -> TrialDataset {
        let clusters = (0..n)
            .map(|i| {
                Cluster::new(format!("c{i}"), arm, vec![i as f64], vec![IndividualRecord::new(i as f64, vec![0.0])])
            })
            .collect();
        TrialDataset::new(clusters, 0.5).unwrap()
    }

    fn ids(d: &TrialDataset) -> Vec<String> {
        d.clusters().iter().map(|c| c.id.clone()).collect()
    }

    #[test]
    fn partitions_the_arm() {
        let d = trial(10, 1);
        let (train, cal) = split_clusters(&d, Arm::Treated, SplitRule::TrainFraction(0.5), 3).unwrap();
        assert_eq!((train.len(), cal.len()), (5, 5));
        let mut all = [ids(&train), ids(&cal)].concat();
        all.sort();
        let mut expected = ids(&d);
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn ceiling_rule_and_errors() {
        let (train, cal) = split_clusters(&trial(3, 0), Arm::Control, SplitRule::TrainFraction(0.5), 1).unwrap();
        assert_eq!((train.len(), cal.len()), (2, 1));
        assert_eq!(
            split_clusters(&trial(1, 0), Arm::Control, SplitRule::default(), 1),
            Err(Error::TooFewClusters { arm: 0, needed: 2, got: 1 })
        );
        assert!(matches!(
            split_clusters(&trial(4, 0), Arm::Treated, SplitRule::default(), 1),
            Err(Error::TooFewClusters { arm: 1, .. })
        ));
    }

    #[test]
    fn seeded_and_order_preserving() {
        let d = trial(20, 0);
        let a = split_clusters(&d, Arm::Control, SplitRule::default(), 9).unwrap();
        let b = split_clusters(&d, Arm::Control, SplitRule::default(), 9).unwrap();
        assert_eq!(a, b);
        let position = |id: &String| ids(&d).iter().position(|x| x == id).unwrap();
        let train_positions: Vec<usize> = ids(&a.0).iter().map(position).collect();
        assert!(train_positions.windows(2).all(|w| w[0] < w[1]));
        let c = split_clusters(&d, Arm::Control, SplitRule::default(), 10).unwrap();
        assert_ne!(ids(&a.0), ids(&c.0));
    }

    #[test]
    fn calibration_count_rule() {
        let rule = SplitRule::CalibrationCount(10);
        assert_eq!(rule.n_train(30), 20);
        assert_eq!(rule.n_train(12), 2);
        assert_eq!(rule.n_train(11), 2);
        assert_eq!(rule.n_train(3), 2);
        assert_eq!(rule.n_train(2), 1);
        assert_eq!(SplitRule::TrainFraction(0.9).n_train(2), 1);
        assert_eq!(SplitRule::TrainFraction(0.01).n_train(50), 1);
    }

    #[test]
    fn insufficient_threshold() {
        assert!(insufficient_calibration(8, 0.1));
        assert!(!insufficient_calibration(9, 0.1));
    }
}
