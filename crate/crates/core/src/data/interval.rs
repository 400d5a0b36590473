use serde::{Deserialize, Serialize};
use std::fmt;

/// A closed interval on the extended real line.
///
/// Unbounded endpoints are stored as `f64::NEG_INFINITY` / `f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "super::extended")]
    lower: f64,
    #[serde(with = "super::extended")]
    upper: f64,
}

impl Interval {
    /// Panics if `lower > upper` or either endpoint is NaN.
    pub fn new(lower: f64, upper: f64) -> Self {
        Self::try_new(lower, upper).unwrap_or_else(|| panic!("invalid interval [{lower}, {upper}]"))
    }

    pub fn try_new(lower: f64, upper: f64) -> Option<Self> {
        (lower <= upper).then_some(Self { lower, upper })
    }

    pub fn point(value: f64) -> Self {
        Self::new(value, value)
    }

    pub fn real_line() -> Self {
        Self { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    /// `[center − radius, center + radius]`; an infinite radius gives ℝ.
    pub fn centered(center: f64, radius: f64) -> Self {
        if radius == f64::INFINITY {
            Self::real_line()
        } else {
            Self::new(center - radius, center + radius)
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    /// True when the interval is a subset of `(−∞, 0)`.
    pub fn is_negative(&self) -> bool {
        self.upper < 0.0
    }

    /// `{value − y : y ∈ self}`.
    pub fn reflect_from(&self, value: f64) -> Self {
        Self::new(value - self.upper, value - self.lower)
    }

    /// `{y − value : y ∈ self}`.
    pub fn shift_down(&self, value: f64) -> Self {
        Self::new(self.lower - value, self.upper - value)
    }

    /// Minkowski difference `{a − b : a ∈ self, b ∈ other}`.
    pub fn minus(&self, other: &Interval) -> Self {
        Self::new(self.lower - other.upper, self.upper - other.lower)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lower, self.upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_reversed_endpoints() {
        assert!(Interval::try_new(2.0, 1.0).is_none());
        assert!(Interval::try_new(f64::NAN, 1.0).is_none());
    }

    #[test]
    fn infinite_radius_is_real_line() {
        let i = Interval::centered(3.0, f64::INFINITY);
        assert_eq!(i, Interval::real_line());
        assert!(!i.is_bounded());
        assert_eq!(i.length(), f64::INFINITY);
    }

    #[test]
    fn closed_endpoints() {
        let i = Interval::new(0.0, 1.0);
        assert!(i.contains(0.0) && i.contains(1.0));
        assert!(!i.contains(1.0 + 1e-12));
    }
}
