//! Exponentially weighted variance, used as a stand-in for specialists that
//! are not implemented natively.

use super::{ForecastModel, HistoryView, RefitCadence};
use crate::error::{Error, Result};
use crate::stats::sample_variance;

pub const SEED_LEN: usize = 30;
pub const DEFAULT_LAMBDA: f64 = 0.94;

/// Run `s2 <- lambda * s2 + (1 - lambda) * r^2` over `returns` from `seed`
/// and return the variance for the step after the last return.
pub fn ewma_recursion(seed: f64, returns: &[f64], lambda: f64) -> f64 {
    returns
        .iter()
        .fold(seed, |s2, r| lambda * s2 + (1.0 - lambda) * r * r)
}

/// EWMA forecast seeded with the sample variance of the first 30 returns.
pub fn forecast_ewma(returns: &[f64], lambda: f64, floor: f64) -> Result<f64> {
    if returns.len() < SEED_LEN {
        return Err(Error::InvalidInput(format!(
            "EWMA needs at least {SEED_LEN} returns, got {}",
            returns.len()
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite return in EWMA input".into(),
        ));
    }
    let seed = sample_variance(&returns[..SEED_LEN]).unwrap_or(0.0);
    Ok(ewma_recursion(seed, returns, lambda).max(floor))
}

/// EWMA bound to a pool name. A refit pins the start of the recursion to
/// the beginning of the current training window; between refits the
/// recursion runs over a growing window from that anchor.
#[derive(Debug, Clone)]
pub struct EwmaModel {
    name: String,
    lambda: f64,
    train_window: usize,
    anchor: Option<usize>,
}

impl EwmaModel {
    pub fn new(name: &str, lambda: f64, train_window: usize) -> Self {
        Self {
            name: name.to_string(),
            lambda,
            train_window,
            anchor: None,
        }
    }
}

impl ForecastModel for EwmaModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn cadence(&self) -> RefitCadence {
        RefitCadence::Slow
    }

    fn refit(&mut self, view: &HistoryView<'_>) -> Result<()> {
        let start = view.returns.len().saturating_sub(self.train_window);
        self.anchor = Some(start);
        Ok(())
    }

    fn forecast(&self, view: &HistoryView<'_>) -> Result<f64> {
        let anchor = self
            .anchor
            .ok_or_else(|| Error::fit(&self.name, "EWMA not anchored"))?;
        forecast_ewma(&view.returns[anchor..], self.lambda, view.variance_floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_returns_converge_to_square() {
        let r = vec![0.01; 504];
        let f = forecast_ewma(&r, 0.94, 1e-12).unwrap();
        assert!((f - 1e-4).abs() <= 1e-12 * 1e-4 + 1e-18, "{f}");
    }

    #[test]
    fn zero_decay_is_last_square() {
        let mut r: Vec<f64> = (0..40).map(|i| 0.001 * f64::from(i % 7)).collect();
        r.push(-0.02);
        assert_eq!(forecast_ewma(&r, 0.0, 1e-12).unwrap(), 0.02 * 0.02);
    }

    #[test]
    fn three_step_hand_recursion() {
        let (l, seed) = (0.94, 1e-4);
        let r = [0.01, -0.02, 0.005];
        let s1 = l * seed + (1.0 - l) * 0.01 * 0.01;
        let s2 = l * s1 + (1.0 - l) * 0.02 * 0.02;
        let s3 = l * s2 + (1.0 - l) * 0.005 * 0.005;
        assert!((ewma_recursion(seed, &r, l) - s3).abs() <= 1e-15);
    }

    #[test]
    fn too_few_returns() {
        assert!(forecast_ewma(&[0.01; 29], 0.94, 1e-12).is_err());
    }
}
