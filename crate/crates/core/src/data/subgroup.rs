//! Covariate subgroups expressed as conjunctions of threshold comparisons.
//!
//! Expressions use the feature names of the covariate vector
//! `(x_1.., r_1.., n)`: `x2` (or `x_2`) is the second individual covariate,
//! `r1` the first cluster covariate and `n` the cluster size. At cluster
//! level `xk` refers to the within-cluster mean of covariate `k`. A component
//! may be wrapped in bars or `abs(..)` to compare its absolute value. Terms
//! are joined with `&` (or `and`); `all` is the trivial predicate.
//!
//! ```
//! use crt_conformal::data::{Level, SubgroupPredicate};
//! let omega: SubgroupPredicate = "r1 >= 2 & r2 = 1".parse().unwrap();
//! assert!(omega.matches(&[0.0, 0.0, 3.0, 1.0, 20.0], 2, 2));
//! let omega_i = SubgroupPredicate::parse_at(Level::Individual, "|x2| < 0.5").unwrap();
//! assert!(omega_i.matches(&[1.0, -0.2, 3.0, 1.0, 20.0], 2, 2));
//! ```

use super::Level;
use crate::error::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    /// Individual covariate (cluster mean at cluster level), zero-based.
    X(usize),
    /// Cluster covariate, zero-based.
    R(usize),
    /// Cluster size `N`.
    Size,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
        }
    }

    fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub feature: Feature,
    pub absolute: bool,
    pub op: CmpOp,
    pub threshold: f64,
}

impl Comparison {
    fn index(&self, n_x: usize, n_r: usize) -> Option<usize> {
        match self.feature {
            Feature::X(k) if k < n_x => Some(k),
            Feature::R(k) if k < n_r => Some(n_x + k),
            Feature::Size => Some(n_x + n_r),
            _ => None,
        }
    }
}

/// A deterministic subgroup `Ω` over cluster-level (`B̄`) or individual-level
/// (`B`) covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgroupPredicate {
    pub level: Level,
    pub terms: Vec<Comparison>,
}

impl SubgroupPredicate {
    pub fn all(level: Level) -> Self {
        Self { level, terms: Vec::new() }
    }

    pub fn parse_at(level: Level, expr: &str) -> Result<Self> {
        let mut predicate: SubgroupPredicate = expr.parse()?;
        predicate.level = level;
        Ok(predicate)
    }

    pub fn at_level(mut self, level: Level) -> Self {
        self.level = level;
        self
    }

    pub fn is_all(&self) -> bool {
        self.terms.is_empty()
    }

    /// Checks every term refers to an existing feature.
    pub fn check_dimensions(&self, n_x: usize, n_r: usize) -> Result<()> {
        for term in &self.terms {
            if term.index(n_x, n_r).is_none() {
                return Err(Error::InvalidPredicate {
                    expr: self.to_string(),
                    reason: format!(
                        "feature {} is out of range for {n_x} individual and {n_r} cluster covariates",
                        FeatureName(term.feature)
                    ),
                });
            }
        }
        Ok(())
    }

    /// Evaluates the predicate on a feature vector laid out as `(x.., r.., n)`.
    /// Terms naming a missing feature evaluate to false.
    pub fn matches(&self, features: &[f64], n_x: usize, n_r: usize) -> bool {
        self.terms.iter().all(|term| match term.index(n_x, n_r) {
            Some(i) if i < features.len() => {
                let v = if term.absolute { features[i].abs() } else { features[i] };
                term.op.apply(v, term.threshold)
            }
            _ => false,
        })
    }
}

struct FeatureName(Feature);

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Feature::X(k) => write!(f, "x{}", k + 1),
            Feature::R(k) => write!(f, "r{}", k + 1),
            Feature::Size => write!(f, "n"),
        }
    }
}

impl fmt::Display for SubgroupPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "all");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " & ")?;
            }
            let name = FeatureName(t.feature);
            if t.absolute {
                write!(f, "|{name}|")?;
            } else {
                write!(f, "{name}")?;
            }
            write!(f, " {} {}", t.op.symbol(), t.threshold)?;
        }
        Ok(())
    }
}

fn parse_feature(name: &str) -> Option<Feature> {
    let name = name.trim().to_ascii_lowercase();
    if name == "n" {
        return Some(Feature::Size);
    }
    if name.is_empty() || !name.is_ascii() {
        return None;
    }
    let (kind, rest) = name.split_at(1);
    let index: usize = rest.trim_start_matches('_').parse().ok()?;
    if index == 0 {
        return None;
    }
    match kind {
        "x" => Some(Feature::X(index - 1)),
        "r" => Some(Feature::R(index - 1)),
        _ => None,
    }
}

fn parse_term(expr: &str, term: &str) -> Result<Comparison> {
    let err = |reason: &str| Error::InvalidPredicate { expr: expr.to_string(), reason: reason.to_string() };
    // Two-character operators first so `<=` is not read as `<`.
    let ops =
        [("<=", CmpOp::Le), (">=", CmpOp::Ge), ("==", CmpOp::Eq), ("<", CmpOp::Lt), (">", CmpOp::Gt), ("=", CmpOp::Eq)];
    let (pos, sym, op) = ops
        .iter()
        .filter_map(|(sym, op)| term.find(sym).map(|p| (p, *sym, *op)))
        .min_by_key(|(p, sym, _)| (*p, std::cmp::Reverse(sym.len())))
        .ok_or_else(|| err(&format!("term `{}` has no comparison operator", term.trim())))?;
    let lhs = term[..pos].trim();
    let rhs = term[pos + sym.len()..].trim();
    let threshold: f64 = rhs.parse().map_err(|_| err(&format!("threshold `{rhs}` is not a number")))?;
    let (absolute, name) = if let Some(inner) = lhs.strip_prefix('|').and_then(|s| s.strip_suffix('|')) {
        (true, inner)
    } else if let Some(inner) = lhs.strip_prefix("abs(").and_then(|s| s.strip_suffix(')')) {
        (true, inner)
    } else {
        (false, lhs)
    };
    let feature = parse_feature(name).ok_or_else(|| err(&format!("unknown feature `{}`", name.trim())))?;
    Ok(Comparison { feature, absolute, op, threshold })
}

impl FromStr for SubgroupPredicate {
    type Err = Error;

    /// Parses with level [`Level::Cluster`]; use [`SubgroupPredicate::parse_at`]
    /// to choose the level.
    fn from_str(expr: &str) -> Result<Self> {
        let trimmed = expr.trim();
        if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("all") {
            return Ok(Self::all(Level::Cluster));
        }
        let normalized = trimmed.replace("&&", "&").replace(" and ", " & ");
        let terms = normalized.split('&').map(|t| parse_term(expr, t)).collect::<Result<Vec<_>>>()?;
        Ok(Self { level: Level::Cluster, terms })
    }
}

impl Serialize for SubgroupPredicate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            level: Level,
            expr: &'a str,
        }
        Repr { level: self.level, expr: &self.to_string() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SubgroupPredicate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            level: Level,
            expr: String,
        }
        let repr = Repr::deserialize(deserializer)?;
        SubgroupPredicate::parse_at(repr.level, &repr.expr).map_err(serde::de::Error::custom)
    }
}
