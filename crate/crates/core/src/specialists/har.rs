//! HAR-RV: OLS of next-day variance on daily, weekly (5-day) and monthly
//! (22-day) average variance, fitted on variance levels.

use serde::{Deserialize, Serialize};

use super::{ForecastModel, HistoryView, RefitCadence, HAR_RV};
use crate::error::{Error, Result};

const WEEK: usize = 5;
const MONTH: usize = 22;
pub const MIN_ROWS: usize = 100;
pub const MIN_WINDOW: usize = MIN_ROWS + MONTH;
const RIDGE_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarCoefficients {
    pub beta0: f64,
    pub beta_d: f64,
    pub beta_w: f64,
    pub beta_m: f64,
}

impl HarCoefficients {
    fn as_array(&self) -> [f64; 4] {
        [self.beta0, self.beta_d, self.beta_w, self.beta_m]
    }

    fn from_array(b: [f64; 4]) -> Self {
        Self {
            beta0: b[0],
            beta_d: b[1],
            beta_w: b[2],
            beta_m: b[3],
        }
    }
}

/// Regressor row `[1, RV_i, RV_w, RV_m]` for the trailing values ending at `i`.
fn regressors(rv: &[f64], i: usize) -> [f64; 4] {
    let mean = |len: usize| rv[i + 1 - len..=i].iter().sum::<f64>() / len as f64;
    [1.0, rv[i], mean(WEEK), mean(MONTH)]
}

/// In-place Cholesky solve of a symmetric positive definite 4x4 system.
fn cholesky_solve(a: &[[f64; 4]; 4], b: &[f64; 4]) -> Option<[f64; 4]> {
    let mut l = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; 4];
    for i in 0..4 {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        x[i] = (y[i] - (i + 1..4).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

/// Fit HAR coefficients on a variance window (oldest first).
///
/// Columns are scaled to unit RMS before the ridge jitter is added to the
/// Gram diagonal, and one step of iterative refinement is applied to the
/// normal-equation solution.
pub fn fit_har(rv_window: &[f64]) -> Result<HarCoefficients> {
    if rv_window.len() < MIN_WINDOW {
        return Err(Error::fit(
            HAR_RV,
            format!(
                "window of {} values; at least {MIN_WINDOW} are required",
                rv_window.len()
            ),
        ));
    }
    if rv_window.iter().any(|v| !v.is_finite()) {
        return Err(Error::fit(HAR_RV, "non-finite variance in window"));
    }
    let rows: Vec<([f64; 4], f64)> = (MONTH - 1..rv_window.len() - 1)
        .map(|i| (regressors(rv_window, i), rv_window[i + 1]))
        .collect();

    let mut scale = [0.0f64; 4];
    for (x, _) in &rows {
        for j in 0..4 {
            scale[j] += x[j] * x[j];
        }
    }
    for s in &mut scale {
        *s = (*s / rows.len() as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }

    let mut gram = [[0.0f64; 4]; 4];
    for (x, _) in &rows {
        for i in 0..4 {
            for j in 0..4 {
                gram[i][j] += x[i] * x[j] / (scale[i] * scale[j]);
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += RIDGE_JITTER;
    }

    let xt_times = |resid: &dyn Fn(&[f64; 4], f64) -> f64| {
        let mut out = [0.0f64; 4];
        for (x, y) in &rows {
            let r = resid(x, *y);
            for j in 0..4 {
                out[j] += x[j] / scale[j] * r;
            }
        }
        out
    };

    let rhs = xt_times(&|_, y| y);
    let mut u = cholesky_solve(&gram, &rhs)
        .ok_or_else(|| Error::fit(HAR_RV, "rank-deficient design after ridge jitter"))?;

    let beta = |u: &[f64; 4]| -> [f64; 4] { std::array::from_fn(|j| u[j] / scale[j]) };
    let b = beta(&u);
    let correction_rhs = xt_times(&|x, y| y - (0..4).map(|j| b[j] * x[j]).sum::<f64>());
    if let Some(delta) = cholesky_solve(&gram, &correction_rhs) {
        for j in 0..4 {
            u[j] += delta[j];
        }
    }
    let b = beta(&u);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::fit(HAR_RV, "non-finite coefficients"));
    }
    Ok(HarCoefficients::from_array(b))
}

/// One-step HAR prediction from the trailing variance values (oldest
/// first), clamped below at `floor`.
pub fn forecast_har(coeffs: &HarCoefficients, recent_rv: &[f64], floor: f64) -> Result<f64> {
    if recent_rv.len() < MONTH {
        return Err(Error::InvalidInput(format!(
            "HAR forecast needs {MONTH} trailing values, got {}",
            recent_rv.len()
        )));
    }
    let x = regressors(recent_rv, recent_rv.len() - 1);
    let b = coeffs.as_array();
    let raw: f64 = (0..4).map(|j| b[j] * x[j]).sum();
    if !raw.is_finite() {
        return Err(Error::fit(HAR_RV, "non-finite prediction"));
    }
    Ok(raw.max(floor))
}

#[derive(Debug, Clone)]
pub struct HarModel {
    train_window: usize,
    coeffs: Option<HarCoefficients>,
}

impl HarModel {
    pub fn new(train_window: usize) -> Self {
        Self {
            train_window,
            coeffs: None,
        }
    }

    pub fn coefficients(&self) -> Option<&HarCoefficients> {
        self.coeffs.as_ref()
    }
}

impl ForecastModel for HarModel {
    fn name(&self) -> &str {
        HAR_RV
    }

    fn cadence(&self) -> RefitCadence {
        RefitCadence::Slow
    }

    fn refit(&mut self, view: &HistoryView<'_>) -> Result<()> {
        match fit_har(view.rv_window(self.train_window)) {
            Ok(c) => {
                self.coeffs = Some(c);
                Ok(())
            }
            Err(e) => {
                // Inactive until the next scheduled retrain.
                self.coeffs = None;
                Err(e)
            }
        }
    }

    fn forecast(&self, view: &HistoryView<'_>) -> Result<f64> {
        let coeffs = self
            .coeffs
            .as_ref()
            .ok_or_else(|| Error::fit(HAR_RV, "no fitted coefficients"))?;
        forecast_har(coeffs, view.rv_window(MONTH), view.variance_floor)
    }
}
