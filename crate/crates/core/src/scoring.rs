//! Risk-sensitive losses, per-date excess loss against the best active
//! model, and kernel-weighted online scores.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub lambda_under: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { lambda_under: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma_time: f64,
    pub gamma_reg: f64,
    pub history_len: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            gamma_time: 1.0 / 63.0,
            gamma_reg: 2.0,
            history_len: 252,
        }
    }
}

/// `y / yhat - ln(y / yhat) - 1`, evaluated as `d - ln(1 + d)` with
/// `d = (y - yhat) / yhat` to avoid cancellation near a perfect forecast.
pub fn qlike(y: f64, yhat: f64) -> f64 {
    let d = (y - yhat) / yhat;
    (d - d.ln_1p()).max(0.0)
}

/// Squared relative shortfall `(max(y - yhat, 0) / y)^2`.
pub fn underprediction_loss(y: f64, yhat: f64) -> f64 {
    let gap = (y - yhat).max(0.0) / y;
    gap * gap
}

/// QLIKE and underprediction loss of one forecast after flooring both
/// sides at `floor`.
pub fn point_losses(y: f64, yhat: f64, floor: f64) -> (f64, f64) {
    let (y, yhat) = (y.max(floor), yhat.max(floor));
    (qlike(y, yhat), underprediction_loss(y, yhat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub date: NaiveDate,
    pub model: String,
    pub qlike: f64,
    pub under: f64,
    pub total: f64,
    pub regret: f64,
}

/// Totals and regrets for the active models of one date.
///
/// `losses` holds `(model, qlike, under)` for every active model.
pub fn total_and_regret(
    date: NaiveDate,
    losses: &[(String, f64, f64)],
    params: &LossParams,
) -> Result<Vec<LossRecord>> {
    if losses.is_empty() {
        return Err(Error::Protocol(format!("{date}: no active model to score")));
    }
    let totals: Vec<f64> = losses
        .iter()
        .map(|(_, q, u)| q + params.lambda_under * u)
        .collect();
    let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(losses
        .iter()
        .zip(&totals)
        .map(|((model, q, u), &total)| LossRecord {
            date,
            model: model.clone(),
            qlike: *q,
            under: *u,
            total,
            regret: total - best,
        })
        .collect())
}

/// Unnormalized kernel weight of history date `s` for forecast date `t`
/// (positions in the panel, `t > s`).
pub fn kernel_weight(
    t: usize,
    s: usize,
    z_t: &StateVector,
    z_s: &StateVector,
    params: &KernelParams,
) -> f64 {
    let lag = t.saturating_sub(s) as f64;
    let dist2 = z_t.squared_distance(z_s);
    (-params.gamma_time * lag - dist2 / (params.gamma_reg * params.gamma_reg)).exp()
}

/// Kernel weights for a batch of history dates.
pub fn kernel_weights(
    t: usize,
    history: &[(usize, &StateVector)],
    z_t: &StateVector,
    params: &KernelParams,
) -> Vec<f64> {
    history
        .iter()
        .map(|(s, z_s)| kernel_weight(t, *s, z_t, z_s, params))
        .collect()
}

/// Online scores per model; `None` marks a model with no activity in the
/// scoring window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreState {
    pub scores: BTreeMap<String, Option<f64>>,
}

impl ScoreState {
    pub fn get(&self, model: &str) -> Option<f64> {
        self.scores.get(model).copied().flatten()
    }

    pub fn all_unscored(&self) -> bool {
        self.scores.values().all(Option::is_none)
    }

    /// Unscored entry for every model, used before any history exists.
    pub fn unscored(models: &[String]) -> Self {
        Self {
            scores: models.iter().map(|m| (m.clone(), None)).collect(),
        }
    }
}

/// Weighted mean regret per model over the window. `regrets[i]` maps the
/// models active on window date `i` to their regret; `weights[i]` is that
/// date's kernel weight. Models are averaged only over dates on which
/// they were active.
pub fn model_scores(
    models: &[String],
    regrets: &[&BTreeMap<String, f64>],
    weights: &[f64],
) -> Result<ScoreState> {
    if regrets.len() != weights.len() {
        return Err(Error::InvalidInput(
            "score window and weights differ in length".into(),
        ));
    }
    let mut state = ScoreState::default();
    for model in models {
        let mut num = 0.0;
        let mut den = 0.0;
        for (row, w) in regrets.iter().zip(weights) {
            if let Some(r) = row.get(model) {
                num += w * r;
                den += w;
            }
        }
        let score = (den > 0.0).then(|| num / den);
        state.scores.insert(model.clone(), score);
    }
    if state.all_unscored() {
        return Err(Error::Protocol(
            "no model has history in the score window".into(),
        ));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()
    }

    #[test]
    fn qlike_reference_values() {
        assert_eq!(qlike(2e-4, 2e-4), 0.0);
        assert!((qlike(2.0, 1.0) - (2.0 - 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((qlike(2.0, 1.0) - 0.30685).abs() < 1e-5);
        assert!((qlike(0.5, 1.0) - 0.19315).abs() < 1e-5);
    }

    #[test]
    fn underprediction_reference_values() {
        assert_eq!(underprediction_loss(1e-4, 2e-4), 0.0);
        assert_eq!(underprediction_loss(1e-4, 1e-4), 0.0);
        assert!((underprediction_loss(4e-4, 1e-4) - 0.5625).abs() < 1e-12);
        let near_zero = underprediction_loss(1e-4, 1e-300);
        assert!(near_zero <= 1.0 && near_zero > 0.999_999);
    }

    #[test]
    fn singleton_regret_is_zero() {
        let r = total_and_regret(day(), &[("A".into(), 0.4, 0.1)], &LossParams::default()).unwrap();
        assert_eq!(r[0].regret, 0.0);
    }

    #[test]
    fn regrets_subtract_best_total() {
        let losses = vec![
            ("A".to_string(), 0.3, 0.0),
            ("B".to_string(), 0.5, 0.0),
            ("C".to_string(), 0.9, 0.0),
        ];
        let r = total_and_regret(day(), &losses, &LossParams::default()).unwrap();
        let regrets: Vec<f64> = r.iter().map(|x| x.regret).collect();
        assert_eq!(regrets[0], 0.0);
        assert!((regrets[1] - 0.2).abs() < 1e-15);
        assert!((regrets[2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn risk_term_changes_the_winner() {
        let losses = vec![("A".to_string(), 0.2, 0.1), ("B".to_string(), 0.25, 0.0)];
        let r = total_and_regret(day(), &losses, &LossParams { lambda_under: 1.0 }).unwrap();
        assert!((r[0].total - 0.3).abs() < 1e-15);
        assert_eq!(r[1].total, 0.25);
        assert!((r[0].regret - 0.05).abs() < 1e-15);
        assert_eq!(r[1].regret, 0.0);

        // lambda = 0 is pure QLIKE scoring.
        let r = total_and_regret(day(), &losses, &LossParams { lambda_under: 0.0 }).unwrap();
        assert_eq!(r[0].total, 0.2);
        assert_eq!(r[0].regret, 0.0);
    }

    #[test]
    fn empty_active_set_is_protocol_error() {
        assert!(matches!(
            total_and_regret(day(), &[], &LossParams::default()),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn kernel_reference_values() {
        let p = KernelParams::default();
        let z = StateVector(vec![0.3, -1.0]);
        assert_eq!(kernel_weight(10, 10, &z, &z, &p), 1.0);
        assert!((kernel_weight(100, 37, &z, &z, &p) - (-1f64).exp()).abs() < 1e-15);
        let far = StateVector(vec![0.3 + 2.0, -1.0]);
        let ratio = kernel_weight(100, 99, &z, &far, &p) / kernel_weight(100, 99, &z, &z, &p);
        assert!((ratio - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn most_recent_identical_state_has_largest_weight() {
        let p = KernelParams::default();
        let z = StateVector(vec![0.5]);
        let other = StateVector(vec![1.5]);
        let hist = vec![(99usize, &z), (98, &z), (99, &other), (50, &z)];
        let w = kernel_weights(100, &hist, &z, &p);
        assert!(w.iter().all(|v| *v > 0.0 && *v <= 1.0));
        assert_eq!(w.iter().cloned().fold(0.0, f64::max), w[0]);
    }

    fn row(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn scores_are_weighted_means() {
        let models = vec!["A".to_string(), "B".to_string()];
        let rows = [
            row(&[("A", 0.0), ("B", 0.1)]),
            row(&[("A", 0.0), ("B", 0.3)]),
        ];
        let refs: Vec<_> = rows.iter().collect();
        let s = model_scores(&models, &refs, &[1.0, 1.0]).unwrap();
        assert_eq!(s.get("A"), Some(0.0));
        assert!((s.get("B").unwrap() - 0.2).abs() < 1e-15);

        let rows = [row(&[("B", 0.1)]), row(&[("B", 0.4)])];
        let refs: Vec<_> = rows.iter().collect();
        let s = model_scores(&models, &refs, &[2.0, 1.0]).unwrap();
        assert!((s.get("B").unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(s.get("A"), None);
    }

    #[test]
    fn no_history_is_protocol_error() {
        let models = vec!["A".to_string()];
        assert!(model_scores(&models, &[], &[]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn qlike_nonnegative_and_scale_invariant(y in 1e-8f64..1e-2, yh in 1e-8f64..1e-2, c in 1e-3f64..1e3) {
                let a = qlike(y, yh);
                prop_assert!(a >= 0.0);
                prop_assert!((a - qlike(c * y, c * yh)).abs() <= 1e-12 * a.max(1.0));
            }

            #[test]
            fn score_ignores_weight_scale(
                regs in prop::collection::vec(0.0f64..2.0, 1..30),
                ws in prop::collection::vec(0.01f64..1.0, 30),
                k in 0.01f64..100.0,
            ) {
                let models = vec!["M".to_string()];
                let rows: Vec<BTreeMap<String, f64>> = regs.iter().map(|r| row(&[("M", *r)])).collect();
                let refs: Vec<_> = rows.iter().collect();
                let w = &ws[..regs.len()];
                let scaled: Vec<f64> = w.iter().map(|v| v * k).collect();
                let a = model_scores(&models, &refs, w).unwrap().get("M").unwrap();
                let b = model_scores(&models, &refs, &scaled).unwrap().get("M").unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }

            #[test]
            fn min_regret_is_exactly_zero(qs in prop::collection::vec((0.0f64..3.0, 0.0f64..1.0), 1..6)) {
                let losses: Vec<(String, f64, f64)> = qs.iter().enumerate()
                    .map(|(i, (q, u))| (format!("m{i}"), *q, *u)).collect();
                let r = total_and_regret(NaiveDate::MIN, &losses, &LossParams::default()).unwrap();
                let min = r.iter().map(|x| x.regret).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(min, 0.0);
                prop_assert!(r.iter().all(|x| x.regret >= 0.0));
            }
        }
    }
}
