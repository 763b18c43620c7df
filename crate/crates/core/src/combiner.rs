//! Calm/stress branch forecasts, the stress gate and the final blend.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specialists::{FIGARCH, GARCH_T, GRU, HAR_RV, XGBOOST};
use crate::stats::{logistic, median, quantile, winsorize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// Signed weight per state feature, keyed by feature name. Features
    /// not listed get weight zero.
    pub alpha: BTreeMap<String, f64>,
    pub c0: f64,
    pub rho: f64,
    pub kappa: f64,
    pub c: f64,
    pub b: f64,
    pub p_floor: f64,
    pub d_floor: f64,
    pub epsilon: f64,
    pub winsor_lo: f64,
    pub winsor_hi: f64,
    pub stress_quantile: f64,
    pub har_floor: bool,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            alpha: [("VIX", 1.0), ("CREDIT", 1.0), ("SLOPE", -1.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            c0: 0.0,
            rho: 0.5,
            kappa: 0.25,
            c: 0.5,
            b: 0.1,
            p_floor: 0.65,
            d_floor: 0.20,
            epsilon: 1e-12,
            winsor_lo: 0.10,
            winsor_hi: 0.90,
            stress_quantile: 0.75,
            har_floor: true,
        }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} is outside [0, 1]")))
            }
        };
        unit("gate.rho", self.rho)?;
        unit("gate.kappa", self.kappa)?;
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(Error::config("gate.b", "must be positive"));
        }
        if self.alpha.values().any(|a| !a.is_finite()) {
            return Err(Error::config("gate.alpha", "non-finite weight"));
        }
        if self.alpha.values().all(|a| *a == 0.0) {
            return Err(Error::config("gate.alpha", "all feature weights are zero"));
        }
        Ok(())
    }

    /// Weights aligned to the panel's state feature order.
    pub fn alpha_for(&self, state_names: &[String]) -> Result<Vec<f64>> {
        let out: Vec<f64> = state_names
            .iter()
            .map(|n| self.alpha.get(n).copied().unwrap_or(0.0))
            .collect();
        if out.iter().all(|a| *a == 0.0) {
            return Err(Error::config(
                "gate.alpha",
                format!("no nonzero weight for any of the features {state_names:?}"),
            ));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistPools {
    pub calm: Vec<String>,
    pub stress: Vec<String>,
}

impl Default for SpecialistPools {
    fn default() -> Self {
        Self {
            calm: vec![GRU.into(), HAR_RV.into(), XGBOOST.into()],
            stress: vec![GARCH_T.into(), FIGARCH.into(), HAR_RV.into()],
        }
    }
}

impl SpecialistPools {
    pub fn validate(&self) -> Result<()> {
        if self.calm.is_empty() {
            return Err(Error::config("pools.calm", "empty pool"));
        }
        if self.stress.is_empty() {
            return Err(Error::config("pools.stress", "empty pool"));
        }
        Ok(())
    }

    /// Union of both pools in first-seen order.
    pub fn all_models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in self.calm.iter().chain(&self.stress) {
            if !out.contains(m) {
                out.push(m.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Calm,
    Stress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchForecast {
    pub value: f64,
    pub members: Vec<String>,
    pub fallback_used: bool,
}

/// Branch forecast from the routed members of `pool`.
///
/// `forecasts` holds the current forecasts of all active models and
/// `ranked` is the active ranking (best first) used when no routed model
/// belongs to the pool.
pub fn branch_forecast(
    branch: Branch,
    routed: &[String],
    pool: &[String],
    forecasts: &BTreeMap<String, f64>,
    ranked: &[String],
    params: &GateParams,
) -> Result<BranchForecast> {
    let available = |m: &&String| pool.contains(m) && forecasts.contains_key(*m);
    let mut members: Vec<String> = routed.iter().filter(available).cloned().collect();
    let mut fallback_used = false;
    if members.is_empty() {
        let top = ranked
            .iter()
            .find(available)
            .ok_or_else(|| Error::Protocol(format!("{branch:?} pool has no active model")))?;
        members.push(top.clone());
        fallback_used = true;
    }
    let values: Vec<f64> = members.iter().map(|m| forecasts[m]).collect();
    let value = match branch {
        Branch::Calm => aggregate_calm(&values)?,
        Branch::Stress => aggregate_stress(&values, params)?,
    };
    Ok(BranchForecast {
        value,
        members,
        fallback_used,
    })
}

pub fn aggregate_calm(values: &[f64]) -> Result<f64> {
    median(values)
}

/// Upper quantile of the forecasts after winsorizing them at their own
/// empirical bounds.
pub fn aggregate_stress(values: &[f64], params: &GateParams) -> Result<f64> {
    let w = winsorize(values, params.winsor_lo, params.winsor_hi)?;
    quantile(&w, params.stress_quantile)
}

/// `p = logistic(alpha . z / |alpha| - c0)`.
pub fn stress_score(z: &[f64], alpha: &[f64], c0: f64) -> Result<f64> {
    if z.len() != alpha.len() {
        return Err(Error::InvalidInput(format!(
            "state has {} features but {} gate weights",
            z.len(),
            alpha.len()
        )));
    }
    let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::config("gate.alpha", "all feature weights are zero"));
    }
    let index: f64 = alpha.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() / norm;
    Ok(logistic(index - c0))
}

/// Interquartile range over the absolute median.
pub fn disagreement(forecasts: &[f64], epsilon: f64) -> Result<f64> {
    let iqr = quantile(forecasts, 0.75)? - quantile(forecasts, 0.25)?;
    Ok(iqr / median(forecasts)?.abs().max(epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendInputs {
    pub y_calm: f64,
    pub y_stress: f64,
    pub y_roll: f64,
    /// HAR forecast, absent when HAR is inactive on the date.
    pub y_har: Option<f64>,
    pub p: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationTrace {
    pub date: NaiveDate,
    pub y_calm: f64,
    pub y_stress: f64,
    pub y_combo: f64,
    pub y_low: f64,
    pub y_high: f64,
    pub p: f64,
    pub omega: f64,
    pub d: f64,
    pub floor_applied: bool,
    /// A branch had no active model and the forecast fell back to the
    /// rolling-best forecast.
    pub degraded: bool,
    pub y_final: f64,
}

impl CombinationTrace {
    /// Trace for a date on which a branch could not be formed.
    pub fn degraded(date: NaiveDate, y_roll: f64, p: f64, d: f64, variance_floor: f64) -> Self {
        Self {
            date,
            y_calm: f64::NAN,
            y_stress: f64::NAN,
            y_combo: f64::NAN,
            y_low: f64::NAN,
            y_high: f64::NAN,
            p,
            omega: f64::NAN,
            d,
            floor_applied: false,
            degraded: true,
            y_final: y_roll.max(variance_floor),
        }
    }
}

pub fn final_forecast(
    date: NaiveDate,
    x: &BlendInputs,
    params: &GateParams,
    variance_floor: f64,
) -> CombinationTrace {
    let p = x.p;
    let y_combo = (1.0 - p) * x.y_calm + p * x.y_stress;
    let y_low = (1.0 - params.rho) * x.y_roll + params.rho * x.y_calm;
    let y_high = (1.0 - params.kappa) * y_combo + params.kappa * x.y_stress;
    let omega = logistic((p - params.c) / params.b);
    let mut y_final = (1.0 - omega) * y_low + omega * y_high;
    let mut floor_applied = false;
    if params.har_floor && (p >= params.p_floor || x.d >= params.d_floor) {
        if let Some(har) = x.y_har {
            floor_applied = true;
            y_final = y_final.max(har);
        }
    }
    CombinationTrace {
        date,
        y_calm: x.y_calm,
        y_stress: x.y_stress,
        y_combo,
        y_low,
        y_high,
        p,
        omega,
        d: x.d,
        floor_applied,
        degraded: false,
        y_final: y_final.max(variance_floor),
    }
}
