//! Empirical quantiles under a single, left-continuous convention.
//!
//! Every quantile in the crate (routing thresholds, branch medians,
//! winsorization bounds, regime cuts) goes through [`weighted_quantile`]:
//! the result is the smallest sample value `v` whose normalized cumulative
//! weight `W{x <= v} / W` reaches `q`. No interpolation is performed, so
//! the result is always one of the inputs.

use crate::error::{Error, Result};

/// Left-continuous weighted empirical quantile.
///
/// `values` and `weights` must have equal, nonzero length; weights must be
/// finite and nonnegative with a positive sum. `q` is clamped into `[0, 1]`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("quantile of an empty sample".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "quantile: {} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput(
            "quantile weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("quantile weights are all zero".into()));
    }
    let q = q.clamp(0.0, 1.0);

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    // Sum in sorted order so the running mass reaches the total exactly.
    let total: f64 = order.iter().map(|&i| weights[i]).sum();

    let mut cum = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        cum += weights[i];
        // Only test at the end of a tie group: W{x <= v} counts every tie.
        let last_of_group = order.get(pos + 1).is_none_or(|&j| values[j] != values[i]);
        if last_of_group && cum >= q * total {
            return Ok(values[i]);
        }
    }
    Ok(values[order[order.len() - 1]])
}

/// Equal-weight quantile under the same convention.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    let weights = vec![1.0; values.len()];
    weighted_quantile(values, &weights, q)
}

/// Median under the crate convention (lower median for even counts).
pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// Mirror-image threshold for upper tails: the largest value `v` such that
/// the fraction of observations `>= v` is at least `mass`.
///
/// `upper_tail_threshold(x, 0.1)` selects the top decile the same way
/// `quantile(x, 0.1)` selects the bottom decile.
pub fn upper_tail_threshold(values: &[f64], mass: f64) -> Result<f64> {
    let negated: Vec<f64> = values.iter().map(|v| -v).collect();
    quantile(&negated, mass).map(|v| -v)
}

/// Clamp every value into `[Q(lo), Q(hi)]` of the sample itself.
pub fn winsorize(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let lower = quantile(values, lo)?;
    let upper = quantile(values, hi)?;
    Ok(values.iter().map(|v| v.clamp(lower, upper)).collect())
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some(ss / (values.len() - 1) as f64)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
