use crate::data::Interval;
use crate::error::{Error, Result};

/// Fraction of closed intervals containing their truth.
pub fn coverage(intervals: &[Interval], truths: &[f64]) -> Result<f64> {
    if intervals.len() != truths.len() {
        return Err(Error::LengthMismatch { left: intervals.len(), right: truths.len() });
    }
    if intervals.is_empty() {
        return Err(Error::Empty);
    }
    let hits = intervals.iter().zip(truths).filter(|(c, t)| c.contains(**t)).count();
    Ok(hits as f64 / intervals.len() as f64)
}

/// Fraction of intervals lying inside `(−∞, 0)`.
pub fn fraction_negative(intervals: &[Interval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::Empty);
    }
    Ok(intervals.iter().filter(|c| c.is_negative()).count() as f64 / intervals.len() as f64)
}

/// Average length; `+∞` if any interval is unbounded.
pub fn mean_length(intervals: &[Interval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::Empty);
    }
    Ok(intervals.iter().map(Interval::length).sum::<f64>() / intervals.len() as f64)
}

/// Mean, sample standard deviation and type-7 quartiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Summary {
    pub fn infinite() -> Self {
        Self { mean: f64::INFINITY, sd: f64::INFINITY, q1: f64::INFINITY, median: f64::INFINITY, q3: f64::INFINITY }
    }

    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean,
            sd,
            q1: type7_quantile(&sorted, 0.25),
            median: type7_quantile(&sorted, 0.5),
            q3: type7_quantile(&sorted, 0.75),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    match sorted.get(lo + 1) {
        Some(&next) if frac > 0.0 && next != sorted[lo] => sorted[lo] + frac * (next - sorted[lo]),
        _ => sorted[lo],
    }
}
