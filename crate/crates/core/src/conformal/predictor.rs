use super::quantile::{augmented_quantile, weighted_augmented_quantile, WeightedScoreGroups};
use super::split::{insufficient_calibration, split_clusters, SplitRule};
use crate::data::{extended, Arm, Cluster, Interval, Level, SubgroupPredicate, TrialDataset};
use crate::error::{check_level, Error, Result};
use crate::regression::{FittedModel, Matrix, Regressor};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};

const SPLIT_TAG: u64 = 1;
const FIT_TAG: u64 = 2;

/// Which model produces the cluster-level center `f̂(B̄)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreModel {
    /// A model fit on cluster summaries `(B̄ᵢ, Ȳᵢ)`.
    #[default]
    Cluster,
    /// An individual-level model `f̂*` whose cluster prediction is
    /// `(1/Nᵢ) Σⱼ f̂*(Bᵢⱼ)`.
    IndividualMean,
}

/// Everything about a split-conformal fit except the level `α` and the learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalSettings {
    pub level: Level,
    pub subgroup: SubgroupPredicate,
    pub split: SplitRule,
    pub score_model: ScoreModel,
}

impl ConformalSettings {
    /// The whole population at `level`, default split, cluster score model.
    pub fn new(level: Level) -> Self {
        Self {
            level,
            subgroup: SubgroupPredicate::all(level),
            split: SplitRule::default(),
            score_model: ScoreModel::Cluster,
        }
    }

    pub fn with_subgroup(mut self, subgroup: SubgroupPredicate) -> Self {
        self.subgroup = subgroup;
        self
    }

    pub fn with_split(mut self, split: SplitRule) -> Self {
        self.split = split;
        self
    }

    pub fn with_score_model(mut self, score_model: ScoreModel) -> Self {
        self.score_model = score_model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.subgroup.level != self.level && !self.subgroup.is_all() {
            return Err(Error::InvalidPredicate {
                expr: self.subgroup.to_string(),
                reason: format!(
                    "a {}-level predicate cannot define a {}-level analysis",
                    self.subgroup.level, self.level
                ),
            });
        }
        Ok(())
    }

    /// Applies the subgroup filter for this analysis level.
    pub(crate) fn filter(&self, dataset: &TrialDataset) -> Result<TrialDataset> {
        let omega = self.subgroup.clone().at_level(self.level);
        dataset.filter_subgroup(&omega)
    }

    fn individual_model(&self) -> bool {
        self.level == Level::Individual || self.score_model == ScoreModel::IndividualMean
    }
}

/// Training pairs for the potential-outcome model.
pub(crate) fn training_rows(clusters: &[Cluster], n_features: usize, individual: bool) -> Result<(Matrix, Vec<f64>)> {
    let mut features = Matrix::new(n_features);
    let mut targets = Vec::new();
    for c in clusters {
        if individual {
            for (j, r) in c.members.iter().enumerate() {
                features.push_row(&c.individual_features(j))?;
                targets.push(r.outcome.ok_or_else(|| Error::MissingOutcome(c.id.clone()))?);
            }
        } else {
            features.push_row(&c.summary_features())?;
            targets.push(c.mean_outcome()?);
        }
    }
    if targets.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok((features, targets))
}

fn mean_individual_prediction(model: &FittedModel, cluster: &Cluster) -> f64 {
    let total: f64 = (0..cluster.retained()).map(|j| model.predict(&cluster.individual_features(j))).sum();
    total / cluster.retained() as f64
}

#[derive(Clone, Debug, PartialEq)]
enum Calibration {
    Clusters(Vec<f64>),
    Individuals(WeightedScoreGroups),
}

/// A potential-outcome model for one arm together with its calibration
/// scores. One fit serves every level `α`.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedArm {
    arm: Arm,
    settings: ConformalSettings,
    model: FittedModel,
    n_features: usize,
    n_train: usize,
    calibration: Calibration,
}

impl CalibratedArm {
    /// Filters `dataset` to the subgroup, splits arm `arm` into folds, fits
    /// `regressor` on the training fold and scores the calibration fold.
    pub fn fit(
        dataset: &TrialDataset,
        arm: Arm,
        settings: &ConformalSettings,
        regressor: &dyn Regressor,
        seed: u64,
    ) -> Result<Self> {
        settings.validate()?;
        let filtered = settings.filter(dataset)?;
        Self::fit_filtered(&filtered, arm, settings, regressor, seed)
    }

    pub(crate) fn fit_filtered(
        dataset: &TrialDataset,
        arm: Arm,
        settings: &ConformalSettings,
        regressor: &dyn Regressor,
        seed: u64,
    ) -> Result<Self> {
        let (train, calibration) = split_clusters(dataset, arm, settings.split, derive_seed(seed, SPLIT_TAG))?;
        let n_features = dataset.n_features();
        let individual = settings.individual_model();
        let (features, targets) = training_rows(train.clusters(), n_features, individual)?;
        let model = regressor.fit(&features, &targets, derive_seed(seed, FIT_TAG))?;

        let calibration = match settings.level {
            Level::Cluster => {
                let scores = calibration
                    .clusters()
                    .iter()
                    .map(|c| {
                        let center = match settings.score_model {
                            ScoreModel::Cluster => model.predict(&c.summary_features()),
                            ScoreModel::IndividualMean => mean_individual_prediction(&model, c),
                        };
                        Ok((c.mean_outcome()? - center).abs())
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Calibration::Clusters(scores)
            }
            Level::Individual => {
                let groups = calibration
                    .clusters()
                    .iter()
                    .map(|c| {
                        c.members
                            .iter()
                            .enumerate()
                            .map(|(j, r)| {
                                let y = r.outcome.ok_or_else(|| Error::MissingOutcome(c.id.clone()))?;
                                Ok((y - model.predict(&c.individual_features(j))).abs())
                            })
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Calibration::Individuals(WeightedScoreGroups::new(groups)?)
            }
        };
        Ok(Self { arm, settings: settings.clone(), model, n_features, n_train: train.len(), calibration })
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn model(&self) -> &FittedModel {
        &self.model
    }

    pub fn settings(&self) -> &ConformalSettings {
        &self.settings
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_calibration(&self) -> usize {
        match &self.calibration {
            Calibration::Clusters(s) => s.len(),
            Calibration::Individuals(g) => g.n_clusters(),
        }
    }

    /// Calibration scores, one group per calibration cluster.
    pub fn scores(&self) -> Vec<Vec<f64>> {
        match &self.calibration {
            Calibration::Clusters(s) => s.iter().map(|&v| vec![v]).collect(),
            Calibration::Individuals(g) => g.groups().to_vec(),
        }
    }

    /// The calibrated radius `q̂_{1−α}`.
    pub fn radius(&self, alpha: f64) -> Result<f64> {
        check_level(alpha)?;
        let n = self.n_calibration();
        if n == 0 {
            return Ok(f64::INFINITY);
        }
        if insufficient_calibration(n, alpha) {
            log::debug!("arm {}: alpha = {alpha} is below 1/({n} + 1); the interval is the whole real line", self.arm);
        }
        match &self.calibration {
            Calibration::Clusters(s) => augmented_quantile(s, alpha),
            Calibration::Individuals(g) => weighted_augmented_quantile(g, alpha),
        }
    }

    pub fn predictor(&self, alpha: f64) -> Result<ConformalPredictor> {
        Ok(ConformalPredictor {
            arm: self.arm,
            level: self.settings.level,
            score_model: self.settings.score_model,
            model: self.model.clone(),
            radius: self.radius(alpha)?,
            alpha,
            subgroup: self.settings.subgroup.clone(),
            n_calibration: self.n_calibration(),
            n_features: self.n_features,
        })
    }
}

/// The interval `f̂_a(B) ± q̂_{1−α}(a)` for the potential outcome of arm `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalPredictor {
    pub arm: Arm,
    pub level: Level,
    pub score_model: ScoreModel,
    pub model: FittedModel,
    #[serde(with = "extended")]
    pub radius: f64,
    pub alpha: f64,
    pub subgroup: SubgroupPredicate,
    pub n_calibration: usize,
    pub n_features: usize,
}

impl ConformalPredictor {
    pub fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                context: "test covariates".into(),
                expected: self.n_features,
                found: features.len(),
            });
        }
        Ok(())
    }

    /// Interval at a feature vector: `B̄` at cluster level, `B` at individual
    /// level. Not available for the individual-mean score model, which needs
    /// the members of the cluster.
    pub fn interval_for_features(&self, features: &[f64]) -> Result<Interval> {
        self.check_features(features)?;
        if self.level == Level::Cluster && self.score_model == ScoreModel::IndividualMean {
            return Err(Error::InvalidConfig(
                "the individual-mean score model predicts from cluster members, not summaries".into(),
            ));
        }
        Ok(Interval::centered(self.model.predict(features), self.radius))
    }

    /// Cluster-level center `f̂_a(B̄)` of a (possibly unlabeled) cluster.
    pub fn center_for_cluster(&self, cluster: &Cluster) -> f64 {
        match self.score_model {
            ScoreModel::Cluster => self.model.predict(&cluster.summary_features()),
            ScoreModel::IndividualMean => mean_individual_prediction(&self.model, cluster),
        }
    }

    pub fn interval_for_cluster(&self, cluster: &Cluster) -> Interval {
        Interval::centered(self.center_for_cluster(cluster), self.radius)
    }

    /// Intervals for each member of `cluster` at individual level.
    pub fn intervals_for_members(&self, cluster: &Cluster) -> Vec<Interval> {
        (0..cluster.retained())
            .map(|j| Interval::centered(self.model.predict(&cluster.individual_features(j)), self.radius))
            .collect()
    }
}

/// Calibrated models for both arms, fit with arm-specific child seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmPredictors {
    pub control: CalibratedArm,
    pub treated: CalibratedArm,
}

impl ArmPredictors {
    pub fn fit(
        dataset: &TrialDataset,
        settings: &ConformalSettings,
        regressor: &dyn Regressor,
        seed: u64,
    ) -> Result<Self> {
        settings.validate()?;
        let filtered = settings.filter(dataset)?;
        let fit = |arm: Arm| {
            CalibratedArm::fit_filtered(&filtered, arm, settings, regressor, derive_seed(seed, arm.index() as u64))
        };
        Ok(Self { control: fit(Arm::Control)?, treated: fit(Arm::Treated)? })
    }

    pub fn get(&self, arm: Arm) -> &CalibratedArm {
        match arm {
            Arm::Control => &self.control,
            Arm::Treated => &self.treated,
        }
    }

    pub fn predictors(&self, alpha: f64) -> Result<[ConformalPredictor; 2]> {
        Ok([self.control.predictor(alpha)?, self.treated.predictor(alpha)?])
    }
}

/// Fits the split-conformal predictor for arm `arm` at level `α`.
pub fn fit_conformal_po(
    dataset: &TrialDataset,
    arm: Arm,
    settings: &ConformalSettings,
    alpha: f64,
    regressor: &dyn Regressor,
    seed: u64,
) -> Result<ConformalPredictor> {
    check_level(alpha)?;
    CalibratedArm::fit(dataset, arm, settings, regressor, seed)?.predictor(alpha)
}
