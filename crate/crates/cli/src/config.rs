//! Flat run configuration, presets and layering.
//!
//! Sources are merged key by key in the order defaults, preset, config file,
//! `--set key=value`, dedicated flags. Unknown keys are rejected in every
//! layer.

use crate::UsageError;
use anyhow::{Context, Result};
use crt_conformal::conformal::NestedOptions;
use crt_conformal::dgp::{DgpConfig, DgpParams};
use crt_conformal::evaluation::{Method, Scope};
use crt_conformal::regression::{EnsembleParams, ForestParams};
use crt_conformal::{Level, RegressorSpec, ScoreModel, SplitRule, StudyConfig, SubgroupPredicate};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    Ols,
    Forest,
    Ensemble,
    /// Constant-zero predictor.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Split rule written as `train_fraction:<f>` or `calibration_count:<n>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec(pub SplitRule);

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            SplitRule::TrainFraction(v) => write!(f, "train_fraction:{v}"),
            SplitRule::CalibrationCount(n) => write!(f, "calibration_count:{n}"),
        }
    }
}

impl FromStr for SplitSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("split `{s}` must look like train_fraction:0.5 or calibration_count:10"))?;
        let rule = match kind.trim() {
            "train_fraction" => {
                SplitRule::TrainFraction(value.trim().parse().map_err(|_| format!("bad train fraction `{value}`"))?)
            }
            "calibration_count" => SplitRule::CalibrationCount(
                value.trim().parse().map_err(|_| format!("bad calibration count `{value}`"))?,
            ),
            other => return Err(format!("unknown split kind `{other}`")),
        };
        rule.validate().map_err(|e| e.to_string())?;
        Ok(SplitSpec(rule))
    }
}

impl Serialize for SplitSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SplitSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub m: usize,
    pub n_test: usize,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub levels: Vec<Level>,
    pub scopes: Vec<Scope>,
    pub alpha: Vec<f64>,
    pub gamma: f64,
    pub split: SplitSpec,
    pub nested_outer_split: SplitSpec,
    pub nested_inner_split: SplitSpec,
    pub score_model: ScoreModel,
    pub regressor: RegressorKind,
    pub endpoint_regressor: RegressorKind,
    pub forest_trees: usize,
    pub forest_max_depth: usize,
    pub forest_min_leaf: usize,
    pub forest_mtry: usize,
    pub ensemble_folds: usize,
    pub cluster_subgroup: String,
    pub individual_subgroup: String,
    pub subgroup: String,
    pub randomization_probability: f64,
    pub adversarial_test_assignment: bool,
    pub parallelism: usize,
    pub splits: usize,
    pub out: PathBuf,
    pub format: Format,
    pub full_precision: bool,
    pub per_replicate: bool,
    pub dump: bool,
    pub save_model: bool,
    pub dgp_min_size: usize,
    pub dgp_max_size: usize,
    pub dgp_r1_divisor: f64,
    pub dgp_r1_sd: f64,
    pub dgp_r2_slope: f64,
    pub dgp_x1_base: f64,
    pub dgp_x1_slope: f64,
    pub dgp_effect_divisor: f64,
    pub dgp_intercept_sd: f64,
    pub dgp_noise_sd: f64,
    pub dgp_treatment_probability: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let nested = NestedOptions::default();
        let forest = ForestParams::default();
        let dgp = DgpParams::default();
        Self {
            seed: 2024,
            m: 100,
            n_test: 500,
            replicates: 100,
            methods: Method::ALL.to_vec(),
            levels: vec![Level::Cluster],
            scopes: vec![Scope::Marginal, Scope::Local],
            alpha: vec![0.1],
            gamma: nested.gamma,
            split: SplitSpec(SplitRule::default()),
            nested_outer_split: SplitSpec(nested.outer_split),
            nested_inner_split: SplitSpec(nested.inner_split),
            score_model: ScoreModel::Cluster,
            regressor: RegressorKind::Ensemble,
            endpoint_regressor: RegressorKind::Ensemble,
            forest_trees: forest.n_trees,
            forest_max_depth: forest.max_depth,
            forest_min_leaf: forest.min_leaf,
            forest_mtry: 0,
            ensemble_folds: EnsembleParams::default().folds,
            cluster_subgroup: "r1 >= 2 & r2 = 1".into(),
            individual_subgroup: "|x2| < 0.5".into(),
            subgroup: String::new(),
            randomization_probability: 0.5,
            adversarial_test_assignment: false,
            parallelism: 1,
            splits: 1,
            out: PathBuf::from("out"),
            format: Format::Csv,
            full_precision: false,
            per_replicate: false,
            dump: false,
            save_model: false,
            dgp_min_size: dgp.min_size,
            dgp_max_size: dgp.max_size,
            dgp_r1_divisor: dgp.r1_divisor,
            dgp_r1_sd: dgp.r1_sd,
            dgp_r2_slope: dgp.r2_slope,
            dgp_x1_base: dgp.x1_base,
            dgp_x1_slope: dgp.x1_slope,
            dgp_effect_divisor: dgp.effect_divisor,
            dgp_intercept_sd: dgp.intercept_sd,
            dgp_noise_sd: dgp.noise_sd,
            dgp_treatment_probability: dgp.treatment_probability,
        }
    }
}

/// One line of documentation per key, in declaration order.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "Base seed. For `analyze` it is the analysis seed itself."),
    ("m", "Observed clusters per simulated trial."),
    ("n_test", "Held-out test clusters per simulated trial."),
    ("replicates", "Monte Carlo replicates."),
    ("methods", "Any of \"O\", \"B-direct\", \"B-nested\"."),
    ("levels", "Any of \"cluster\", \"individual\"."),
    ("scopes", "Any of \"marginal\", \"local\"."),
    ("alpha", "Miscoverage levels."),
    ("gamma", "Inner level of the nested method."),
    ("split", "Training/calibration split per arm: train_fraction:<f> or calibration_count:<n>."),
    ("nested_outer_split", "Outer split of the nested method."),
    ("nested_inner_split", "Inner split of the nested method."),
    ("score_model", "\"cluster\" scores cluster means; \"individual_mean\" averages an individual-level model."),
    ("regressor", "Outcome model: ols, forest, ensemble or zero."),
    ("endpoint_regressor", "Endpoint model of the nested method."),
    ("forest_trees", "Trees per forest."),
    ("forest_max_depth", "Maximum tree depth."),
    ("forest_min_leaf", "Minimum leaf size; a forest needs twice this many rows."),
    ("forest_mtry", "Features tried per split; 0 means ceil(p/3)."),
    ("ensemble_folds", "Cross-validation folds of the stacked ensemble."),
    ("cluster_subgroup", "Local cluster-level subgroup of `simulate`."),
    ("individual_subgroup", "Local individual-level subgroup of `simulate`."),
    ("subgroup", "Subgroup for `analyze`; in `simulate` a non-empty value replaces both local subgroups."),
    ("randomization_probability", "Treatment probability of analyzed trial data."),
    ("adversarial_test_assignment", "Simulated test clusters are treated iff their effect exceeds the median."),
    ("parallelism", "Worker threads for replicates; 0 uses every core. Output does not depend on it."),
    ("splits", "`analyze`: number of random re-splits to summarize."),
    ("out", "Output directory."),
    ("format", "csv or json."),
    ("full_precision", "Print round-trip precision instead of six significant digits."),
    ("per_replicate", "`simulate`: also write per-replicate metrics."),
    ("dump", "`simulate`: write each replicate's data, test set, truth and intervals."),
    ("save_model", "`analyze`: write the fitted predictors to model.json."),
    ("dgp_min_size", "Smallest cluster size."),
    ("dgp_max_size", "Largest cluster size."),
    ("dgp_r1_divisor", "E[R1 | N] = N / dgp_r1_divisor."),
    ("dgp_r1_sd", "Standard deviation of R1 given N."),
    ("dgp_r2_slope", "P(R2 = 1) = logistic(dgp_r2_slope * R1)."),
    ("dgp_x1_base", "P(X1 = 1) = dgp_x1_base + dgp_x1_slope * R2."),
    ("dgp_x1_slope", "See dgp_x1_base."),
    ("dgp_effect_divisor", "Treated outcomes gain N / dgp_effect_divisor."),
    ("dgp_intercept_sd", "Standard deviation of the control random intercept."),
    ("dgp_noise_sd", "Standard deviation of the individual noise."),
    ("dgp_treatment_probability", "Treatment probability of simulated clusters."),
];

pub const PRESETS: &[(&str, &str, &str)] = &[
    (
        "fig1",
        "Cluster-level effects, 100 clusters, marginal and local, all three methods.",
        r#"
m = 100
replicates = 200
levels = ["cluster"]
"#,
    ),
    (
        "fig2",
        "Individual-level effects, 100 clusters, marginal and local, all three methods.",
        r#"
m = 100
replicates = 200
levels = ["individual"]
"#,
    ),
    (
        "tableD1",
        "30 clusters, O and B-direct at both levels, alpha 0.1 and 0.2, ensemble regressor.",
        r#"
m = 30
replicates = 500
methods = ["O", "B-direct"]
levels = ["cluster", "individual"]
alpha = [0.2, 0.1]
split = "calibration_count:10"
forest_min_leaf = 1
"#,
    ),
    (
        "tableD2",
        "500 clusters, cluster and individual level, all three methods.",
        r#"
m = 500
replicates = 100
levels = ["cluster", "individual"]
"#,
    ),
    (
        "tableD3",
        "The 30-cluster study with least squares as the only outcome model.",
        r#"
m = 30
replicates = 500
methods = ["O", "B-direct"]
levels = ["cluster", "individual"]
alpha = [0.2, 0.1]
split = "calibration_count:10"
regressor = "ols"
endpoint_regressor = "ols"
"#,
    ),
    (
        "figS-comparison",
        "Cluster-level effects from an individual-level model averaged within clusters.",
        r#"
m = 100
replicates = 200
levels = ["cluster"]
score_model = "individual_mean"
"#,
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _, _)| *n == name).map(|(_, _, body)| *body)
}

/// Command-line values that map onto config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub flags: Table,
}

fn defaults_table() -> Table {
    Table::try_from(RunConfig::default()).expect("defaults serialize")
}

fn check_keys(layer: &Table, known: &Table, source: &str) -> Result<()> {
    let unknown: Vec<&String> = layer.keys().filter(|k| !known.contains_key(*k)).collect();
    if unknown.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = unknown.iter().map(|k| format!("`{k}`")).collect();
    Err(UsageError(format!("{source}: unknown key {}", list.join(", "))).into())
}

/// Parses `key=value`; the value is read as TOML and falls back to a bare string.
pub fn parse_set(assignment: &str) -> Result<(String, Value)> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| UsageError(format!("--set `{assignment}`: expected key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

/// Resolves the configuration from all sources.
pub fn resolve(preset_name: Option<&str>, file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let known = defaults_table();
    let mut merged = known.clone();
    if let Some(name) = preset_name {
        let body = preset(name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            UsageError(format!("unknown preset `{name}` (available: {})", names.join(", ")))
        })?;
        let layer: Table = body.parse().expect("presets are valid TOML");
        check_keys(&layer, &known, &format!("preset {name}"))?;
        merged.extend(layer);
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
        let layer: Table = text.parse().map_err(|e: toml::de::Error| UsageError(format!("{}: {e}", path.display())))?;
        check_keys(&layer, &known, &path.display().to_string())?;
        merged.extend(layer);
    }
    let mut set_layer = Table::new();
    for s in &overrides.sets {
        let (k, v) = parse_set(s)?;
        set_layer.insert(k, v);
    }
    check_keys(&set_layer, &known, "--set")?;
    merged.extend(set_layer);
    merged.extend(overrides.flags.clone());

    let cfg: RunConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Documented listing of `cfg`, itself valid TOML.
pub fn render(cfg: &RunConfig) -> String {
    let table = Table::try_from(cfg).expect("config serializes");
    let mut out = String::new();
    for (key, doc) in KEY_DOCS {
        out.push_str(&format!("# {doc}\n{key} = {}\n", table[*key]));
    }
    out
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.study().map(|_| ())
    }

    fn forest(&self) -> ForestParams {
        ForestParams {
            n_trees: self.forest_trees,
            max_depth: self.forest_max_depth,
            min_leaf: self.forest_min_leaf,
            mtry: (self.forest_mtry > 0).then_some(self.forest_mtry),
        }
    }

    pub fn regressor_spec(&self, kind: RegressorKind) -> RegressorSpec {
        match kind {
            RegressorKind::Ols => RegressorSpec::Ols,
            RegressorKind::Forest => RegressorSpec::Forest(self.forest()),
            RegressorKind::Ensemble => RegressorSpec::Ensemble(EnsembleParams {
                members: vec![RegressorSpec::Ols, RegressorSpec::Forest(self.forest())],
                folds: self.ensemble_folds,
            }),
            RegressorKind::Zero => RegressorSpec::Constant(0.0),
        }
    }

    pub fn nested(&self) -> NestedOptions {
        NestedOptions {
            gamma: self.gamma,
            outer_split: self.nested_outer_split.0,
            inner_split: self.nested_inner_split.0,
        }
    }

    fn dgp_params(&self) -> DgpParams {
        DgpParams {
            min_size: self.dgp_min_size,
            max_size: self.dgp_max_size,
            r1_divisor: self.dgp_r1_divisor,
            r1_sd: self.dgp_r1_sd,
            r2_slope: self.dgp_r2_slope,
            x1_base: self.dgp_x1_base,
            x1_slope: self.dgp_x1_slope,
            effect_divisor: self.dgp_effect_divisor,
            intercept_sd: self.dgp_intercept_sd,
            noise_sd: self.dgp_noise_sd,
            treatment_probability: self.dgp_treatment_probability,
        }
    }

    fn predicate(level: Level, expr: &str, key: &str) -> Result<SubgroupPredicate> {
        SubgroupPredicate::parse_at(level, expr).map_err(|e| UsageError(format!("{key}: {e}")).into())
    }

    /// Subgroup used by `analyze` at `level`; empty means everyone.
    pub fn analysis_subgroup(&self, level: Level) -> Result<SubgroupPredicate> {
        if self.subgroup.trim().is_empty() {
            Ok(SubgroupPredicate::all(level))
        } else {
            Self::predicate(level, &self.subgroup, "subgroup")
        }
    }

    pub fn study(&self) -> Result<StudyConfig> {
        let mut dgp = DgpConfig::new(self.m, self.n_test, self.seed);
        dgp.params = self.dgp_params();
        let local = |level: Level, expr: &str, key: &str| {
            if self.subgroup.trim().is_empty() {
                Self::predicate(level, expr, key)
            } else {
                Self::predicate(level, &self.subgroup, "subgroup")
            }
        };
        let study = StudyConfig {
            dgp,
            methods: self.methods.clone(),
            levels: self.levels.clone(),
            scopes: self.scopes.clone(),
            alphas: self.alpha.clone(),
            nested: self.nested(),
            split: self.split.0,
            score_model: self.score_model,
            regressor: self.regressor_spec(self.regressor),
            endpoint_regressor: self.regressor_spec(self.endpoint_regressor),
            n_replicates: self.replicates,
            cluster_subgroup: local(Level::Cluster, &self.cluster_subgroup, "cluster_subgroup")?,
            individual_subgroup: local(Level::Individual, &self.individual_subgroup, "individual_subgroup")?,
            parallelism: self.parallelism,
            adversarial_test_assignment: self.adversarial_test_assignment,
        };
        study.validate().map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
        if self.splits == 0 {
            return Err(UsageError("invalid configuration: splits must be at least 1".into()).into());
        }
        if !(self.randomization_probability > 0.0 && self.randomization_probability < 1.0) {
            return Err(UsageError(format!(
                "invalid configuration: randomization_probability must lie in (0, 1), got {}",
                self.randomization_probability
            ))
            .into());
        }
        Ok(study)
    }
}

/// Reads a whole file, mapping absence to a usage error.
pub fn read_input(path: &Path, what: &str) -> Result<String> {
    if !path.exists() {
        return Err(UsageError(format!("{what} {} does not exist", path.display())).into());
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))
}
