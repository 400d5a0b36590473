//! Synthetic cluster randomized trials with known potential outcomes.
//!
//! For each cluster:
//!
//! ```text
//! N ~ U{10, …, 50}
//! R₁ | N ~ Normal(N/10, 1)
//! R₂ | R₁ ~ Bernoulli(1 / (1 + exp(−R₁/2)))
//! X₁ⱼ ~ Bernoulli(0.3 + 0.4 R₂)
//! X₂ⱼ = (2·1{R₁ > 0} − 1) X̄₁ + Normal(0, 1)
//! Yⱼ(a) = a N/50 + sin(R₁)(2R₂ − 1) + |X₁ⱼ X₂ⱼ| + (1 − a) γ + εⱼ
//! γ ~ Normal(0, 0.5²),  εⱼ ~ Normal(0, 1),  A ~ Bernoulli(0.5)
//! ```
//!
//! Both potential outcomes share `εⱼ`, so the effect `N/50 − γ` is constant
//! within a cluster. Cluster `i` of a trial draws from stream `i` of the trial
//! seed (test clusters from a separate block of streams), in the order
//! `N, R₁, R₂, X₁, X₂, γ, ε, A`.

use crate::data::{Cluster, IndividualRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamRng};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const TEST_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpParams {
    pub min_size: usize,
    pub max_size: usize,
    /// `E[R₁ | N] = N / r1_divisor`.
    pub r1_divisor: f64,
    pub r1_sd: f64,
    /// `P(R₂ = 1) = logistic(r2_slope · R₁)`.
    pub r2_slope: f64,
    pub x1_base: f64,
    pub x1_slope: f64,
    /// Treated outcomes gain `N / effect_divisor`.
    pub effect_divisor: f64,
    pub intercept_sd: f64,
    pub noise_sd: f64,
    pub treatment_probability: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            min_size: 10,
            max_size: 50,
            r1_divisor: 10.0,
            r1_sd: 1.0,
            r2_slope: 0.5,
            x1_base: 0.3,
            x1_slope: 0.4,
            effect_divisor: 50.0,
            intercept_sd: 0.5,
            noise_sd: 1.0,
            treatment_probability: 0.5,
        }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad(format!(
                "cluster sizes need 1 ≤ min_size ≤ max_size, got {}..{}",
                self.min_size, self.max_size
            ));
        }
        if !(self.treatment_probability > 0.0 && self.treatment_probability < 1.0) {
            return Err(Error::InvalidProbability(self.treatment_probability));
        }
        let p_lo = self.x1_base.min(self.x1_base + self.x1_slope);
        let p_hi = self.x1_base.max(self.x1_base + self.x1_slope);
        if !(p_lo >= 0.0 && p_hi <= 1.0) {
            return bad(format!("P(X1 = 1) must stay in [0, 1], got range [{p_lo}, {p_hi}]"));
        }
        for (name, v) in [("r1_sd", self.r1_sd), ("intercept_sd", self.intercept_sd), ("noise_sd", self.noise_sd)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        for (name, v) in [("r1_divisor", self.r1_divisor), ("effect_divisor", self.effect_divisor)] {
            if v == 0.0 || !v.is_finite() {
                return bad(format!("{name} must be finite and nonzero, got {v}"));
            }
        }
        Ok(())
    }
}

/// Trial size and seed. `m` observed clusters, `n_test` held-out clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub m: usize,
    pub n_test: usize,
    pub seed: u64,
    pub params: DgpParams,
}

impl DgpConfig {
    pub fn new(m: usize, n_test: usize, seed: u64) -> Self {
        Self { m, n_test, seed, params: DgpParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("m must be at least 2, got {}", self.m)));
        }
        if self.n_test < 1 {
            return Err(Error::InvalidConfig("n_test must be at least 1".into()));
        }
        self.params.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpIndividual {
    pub x1: f64,
    pub x2: f64,
    pub y0: f64,
    pub y1: f64,
}

impl DgpIndividual {
    pub fn outcome(&self, treatment: u8) -> f64 {
        if treatment == 1 {
            self.y1
        } else {
            self.y0
        }
    }
}

/// A simulated cluster with both potential outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpCluster {
    pub n: usize,
    pub r1: f64,
    pub r2: f64,
    pub gamma: f64,
    pub treatment: u8,
    pub members: Vec<DgpIndividual>,
    /// Treated-arm gain `N / effect_divisor`.
    gain: f64,
}

impl DgpCluster {
    /// `Ȳ(1) − Ȳ(0) = N/50 − γ`, also every member's individual effect.
    pub fn effect(&self) -> f64 {
        self.gain - self.gamma
    }

    pub fn mean_potential_outcome(&self, treatment: u8) -> f64 {
        self.members.iter().map(|r| r.outcome(treatment)).sum::<f64>() / self.n as f64
    }

    /// Cluster-level effect from the averaged potential outcomes.
    pub fn mean_effect(&self) -> f64 {
        self.mean_potential_outcome(1) - self.mean_potential_outcome(0)
    }

    /// Observed data: covariates `(x₁, x₂)`, `(r₁, r₂)` and `Y = Y(A)`.
    pub fn observed(&self, id: impl Into<String>) -> Cluster {
        self.to_cluster(id, self.treatment, true)
    }

    /// Observed data under an alternative assignment.
    pub fn observed_as(&self, id: impl Into<String>, treatment: u8) -> Cluster {
        self.to_cluster(id, treatment, true)
    }

    /// Covariates only.
    pub fn unlabeled(&self, id: impl Into<String>) -> Cluster {
        self.to_cluster(id, self.treatment, false)
    }

    fn to_cluster(&self, id: impl Into<String>, treatment: u8, labeled: bool) -> Cluster {
        let members = self
            .members
            .iter()
            .map(|r| {
                let x = vec![r.x1, r.x2];
                if labeled {
                    IndividualRecord::new(r.outcome(treatment), x)
                } else {
                    IndividualRecord::unlabeled(x)
                }
            })
            .collect();
        Cluster::new(id, treatment, vec![self.r1, self.r2], members)
    }
}

/// Draws one cluster.
pub fn generate_cluster<R: Rng + ?Sized>(rng: &mut R, params: &DgpParams) -> DgpCluster {
    let n = rng.random_range(params.min_size..=params.max_size);
    let r1 = params.r1_sd * standard_normal(rng) + n as f64 / params.r1_divisor;
    let p_r2 = 1.0 / (1.0 + (-params.r2_slope * r1).exp());
    let r2 = if bernoulli(rng, p_r2) { 1.0 } else { 0.0 };
    let p_x1 = params.x1_base + params.x1_slope * r2;
    let x1: Vec<f64> = (0..n).map(|_| if bernoulli(rng, p_x1) { 1.0 } else { 0.0 }).collect();
    let x1_bar = x1.iter().sum::<f64>() / n as f64;
    let sign = if r1 > 0.0 { 1.0 } else { -1.0 };
    let x2: Vec<f64> = (0..n).map(|_| sign * x1_bar + standard_normal(rng)).collect();
    let gamma = params.intercept_sd * standard_normal(rng);
    let gain = n as f64 / params.effect_divisor;
    let shared = r1.sin() * (2.0 * r2 - 1.0);
    let members = x1
        .iter()
        .zip(&x2)
        .map(|(&a, &b)| {
            let eps = params.noise_sd * standard_normal(rng);
            let base = shared + (a * b).abs() + eps;
            DgpIndividual { x1: a, x2: b, y0: base + gamma, y1: base + gain }
        })
        .collect();
    let treatment = u8::from(bernoulli(rng, params.treatment_probability));
    DgpCluster { n, r1, r2, gamma, treatment, members, gain }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    Bernoulli::new(p.clamp(0.0, 1.0)).expect("clamped probability").sample(rng)
}

/// Cluster `index` of the observed block or the test block.
pub fn generate_indexed(seed: u64, index: usize, test: bool, params: &DgpParams) -> DgpCluster {
    let stream = index as u64 + if test { TEST_STREAM_OFFSET } else { 0 };
    let mut rng: StreamRng = stream_rng(seed, stream);
    generate_cluster(&mut rng, params)
}

pub fn observed_id(index: usize) -> String {
    format!("obs-{index:05}")
}

pub fn test_id(index: usize) -> String {
    format!("test-{index:05}")
}

/// A simulated trial with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedTrial {
    /// Observed data; only `Y(A)` is present.
    pub observed: TrialDataset,
    /// Full potential outcomes of the observed clusters, in the same order.
    pub observed_truth: Vec<DgpCluster>,
    /// Held-out clusters with both potential outcomes.
    pub test: Vec<DgpCluster>,
}

impl SimulatedTrial {
    pub fn test_clusters(&self) -> Vec<Cluster> {
        self.test.iter().enumerate().map(|(i, c)| c.observed(test_id(i))).collect()
    }
}

/// Generates the observed trial and the test clusters. Clusters are drawn in
/// parallel from their own streams; the result equals serial generation.
pub fn generate_trial(cfg: &DgpConfig) -> Result<SimulatedTrial> {
    cfg.validate()?;
    let draw = |n: usize, test: bool| -> Vec<DgpCluster> {
        (0..n).into_par_iter().map(|i| generate_indexed(cfg.seed, i, test, &cfg.params)).collect()
    };
    let observed_truth = draw(cfg.m, false);
    let test = draw(cfg.n_test, true);
    let clusters = observed_truth.iter().enumerate().map(|(i, c)| c.observed(observed_id(i))).collect();
    let observed = TrialDataset::new(clusters, cfg.params.treatment_probability)?;
    Ok(SimulatedTrial { observed, observed_truth, test })
}

/// Generalized-inverse empirical quantile `inf{x : F̂(x) ≥ p}` of sorted data.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[k - 1]
}

/// `q(1 − α/2) − q(α/2)` of the effect distribution.
pub fn oracle_length(effects: &[f64], alpha: f64) -> Result<f64> {
    crate::error::check_level(alpha)?;
    if effects.len() < 2 {
        return Err(Error::TooFewEffects(effects.len()));
    }
    let mut sorted = effects.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(empirical_quantile(&sorted, 1.0 - alpha / 2.0) - empirical_quantile(&sorted, alpha / 2.0))
}

/// One-way ANOVA estimate of the intracluster correlation.
pub fn icc_anova(groups: &[Vec<f64>]) -> Result<f64> {
    let groups: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let k = groups.len();
    let total: usize = groups.iter().map(|g| g.len()).sum();
    if k < 2 || total <= k {
        return Err(Error::TooFewSamples { needed: k.max(2) + 1, got: total });
    }
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / total as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in &groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand).powi(2);
        ss_within += g.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
    }
    let ms_between = ss_between / (k - 1) as f64;
    let ms_within = ss_within / (total - k) as f64;
    let n0 =
        (total as f64 - groups.iter().map(|g| (g.len() as f64).powi(2)).sum::<f64>() / total as f64) / (k - 1) as f64;
    let between = (ms_between - ms_within) / n0;
    Ok(between / (between + ms_within))
}

/// Intracluster correlation of `Y(0)`.
///
/// With `adjusted`, the known covariate mean `sin(R₁)(2R₂ − 1) + |X₁X₂|` is
/// removed first, leaving `γ + ε`, whose population ICC is
/// `0.25 / (0.25 + 1) = 0.2` under the default parameters.
pub fn control_icc(clusters: &[DgpCluster], adjusted: bool) -> Result<f64> {
    let groups: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| {
            let shared = c.r1.sin() * (2.0 * c.r2 - 1.0);
            c.members.iter().map(|r| if adjusted { r.y0 - shared - (r.x1 * r.x2).abs() } else { r.y0 }).collect()
        })
        .collect();
    icc_anova(&groups)
}
