//! FIGARCH(1,d,1) in ARCH(infinity) form.
//!
//! `s2[t] = omega / (1 - beta) + sum_{k>=1} lambda_k e[t-k]^2` where the
//! weights come from `1 - (1 - phi L)(1 - L)^d / (1 - beta L)` truncated
//! at a fixed number of lags. Negative weights are clamped to zero.
//!
//! Estimation uses the Gaussian quasi-likelihood over `(omega, d, phi,
//! beta)`; lags that reach before the estimation window are filled with
//! the window's mean squared residual (backcast). Forecasts sum over the
//! residual history that is actually available, without renormalizing the
//! truncated weights.

use serde::{Deserialize, Serialize};

use super::{ForecastModel, HistoryView, RefitCadence, SpecialistSettings, FIGARCH};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::stats::logistic;

pub const MIN_RETURNS: usize = 250;
const BETA_MAX: f64 = 0.999;

/// (d, phi, beta) start points used when no previous fit is available.
pub const STARTS: [(f64, f64, f64); 3] = [(0.4, 0.2, 0.5), (0.25, 0.1, 0.3), (0.5, 0.3, 0.7)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigarchParams {
    pub omega: f64,
    pub d: f64,
    pub phi: f64,
    pub beta: f64,
    pub truncation_lags: usize,
}

impl FigarchParams {
    /// Truncated ARCH(infinity) weights `lambda_1..=lambda_K`, clamped
    /// nonnegative.
    pub fn arch_weights(&self) -> Vec<f64> {
        let mut w = arch_weights_raw(self.d, self.phi, self.beta, self.truncation_lags);
        for v in &mut w {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        w
    }

    pub fn intercept(&self) -> f64 {
        self.omega / (1.0 - self.beta)
    }

    fn to_unconstrained(self) -> [f64; 4] {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        [
            self.omega.ln(),
            logit(self.d),
            logit(self.phi),
            logit(self.beta / BETA_MAX),
        ]
    }

    fn from_unconstrained(x: &[f64], lags: usize) -> Self {
        Self {
            omega: x[0].exp(),
            d: logistic(x[1]),
            phi: logistic(x[2]),
            beta: BETA_MAX * logistic(x[3]),
            truncation_lags: lags,
        }
    }
}

/// Unclamped weights via the standard recursion
/// `delta_1 = d`, `delta_k = delta_{k-1} (k - 1 - d) / k`,
/// `lambda_1 = phi - beta + d`,
/// `lambda_k = beta lambda_{k-1} + delta_k - phi delta_{k-1}`.
pub fn arch_weights_raw(d: f64, phi: f64, beta: f64, lags: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(lags);
    if lags == 0 {
        return out;
    }
    let mut delta_prev = d;
    let mut lambda = phi - beta + d;
    out.push(lambda);
    for k in 2..=lags {
        let kf = k as f64;
        let delta = delta_prev * (kf - 1.0 - d) / kf;
        lambda = beta * lambda + delta - phi * delta_prev;
        out.push(lambda);
        delta_prev = delta;
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Average Gaussian log-likelihood of `eps` under `params` with backcast
/// pre-sample squared residuals.
pub fn figarch_avg_loglik(eps: &[f64], params: &FigarchParams) -> f64 {
    let n = eps.len();
    let weights = params.arch_weights();
    let k = weights.len();
    let e2: Vec<f64> = eps.iter().map(|e| e * e).collect();
    let backcast = e2.iter().sum::<f64>() / n as f64;
    // tail[i] = sum_{j > i} lambda_j (1-based), the weight mass reaching
    // before the window for observation i.
    let mut tail = vec![0.0; k + 1];
    for j in (0..k).rev() {
        tail[j] = tail[j + 1] + weights[j];
    }
    // Reversed squared residuals make each convolution a contiguous dot.
    let rev: Vec<f64> = e2.iter().rev().copied().collect();
    let intercept = params.intercept();
    let mut total = 0.0;
    for i in 0..n {
        let lags = i.min(k);
        // e2[i-1], e2[i-2], ... e2[i-lags] == rev[n-i .. n-i+lags]
        let inside = dot(&weights[..lags], &rev[n - i..n - i + lags]);
        let s2 = intercept + inside + backcast * tail[lags];
        if !(s2 > 0.0) || !s2.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += s2.ln() + e2[i] / s2;
    }
    -0.5 * (std::f64::consts::LN_2 + std::f64::consts::PI.ln()) - 0.5 * total / n as f64
}

pub struct FigarchFit {
    pub params: FigarchParams,
    pub avg_loglik: f64,
}

fn demean(returns: &[f64]) -> Vec<f64> {
    let m = returns.iter().sum::<f64>() / returns.len() as f64;
    returns.iter().map(|r| r - m).collect()
}

/// The fixed start points, with `omega` chosen so the intercept carries
/// the variance not explained by the truncated weight mass.
pub fn fixed_starts(var: f64, lags: usize) -> Vec<FigarchParams> {
    STARTS
        .iter()
        .map(|&(d, phi, beta)| {
            let mut p = FigarchParams {
                omega: 1.0,
                d,
                phi,
                beta,
                truncation_lags: lags,
            };
            let mass: f64 = p.arch_weights().iter().sum();
            p.omega = (var * (1.0 - mass)).max(0.01 * var) * (1.0 - beta);
            p
        })
        .collect()
}

/// Quasi-maximum-likelihood fit. `warm_start` replaces the fixed starts
/// when given.
pub fn fit_figarch(
    returns: &[f64],
    lags: usize,
    warm_start: Option<&FigarchParams>,
    opts: &NelderMeadOptions,
) -> Result<FigarchFit> {
    if returns.len() < MIN_RETURNS {
        return Err(Error::InvalidInput(format!(
            "FIGARCH needs at least {MIN_RETURNS} returns, got {}",
            returns.len()
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite return in FIGARCH window".into(),
        ));
    }
    let eps = demean(returns);
    let var = eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
    if !(var > 0.0) {
        return Err(Error::fit(FIGARCH, "zero sample variance"));
    }
    let objective =
        |x: &[f64]| -figarch_avg_loglik(&eps, &FigarchParams::from_unconstrained(x, lags));

    let starts: Vec<FigarchParams> = match warm_start {
        Some(p) => vec![FigarchParams {
            truncation_lags: lags,
            ..*p
        }],
        None => fixed_starts(var, lags),
    };

    let mut best: Option<(FigarchParams, f64)> = None;
    for start in starts {
        let m = nelder_mead(objective, &start.to_unconstrained(), opts);
        if !m.converged || !m.f.is_finite() {
            continue;
        }
        let ll = -m.f;
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((FigarchParams::from_unconstrained(&m.x, lags), ll));
        }
    }
    let (params, avg_loglik) = best.ok_or_else(|| Error::fit(FIGARCH, "no start converged"))?;
    Ok(FigarchFit { params, avg_loglik })
}

/// `omega / (1 - beta) + sum_k lambda_k e2[t+1-k]` over the available
/// history (oldest first), floored.
pub fn forecast_figarch(params: &FigarchParams, eps2_history: &[f64], floor: f64) -> f64 {
    let weights = params.arch_weights();
    let lags = weights.len().min(eps2_history.len());
    let n = eps2_history.len();
    let s: f64 = (1..=lags)
        .map(|k| weights[k - 1] * eps2_history[n - k])
        .sum();
    (params.intercept() + s).max(floor)
}

#[derive(Debug, Clone)]
pub struct FigarchModel {
    train_window: usize,
    lags: usize,
    opts: NelderMeadOptions,
    params: Option<FigarchParams>,
}

impl FigarchModel {
    pub fn new(settings: &SpecialistSettings) -> Self {
        Self {
            train_window: settings.train_window,
            lags: settings.figarch_lags,
            opts: NelderMeadOptions {
                max_evals: settings.max_evals,
                f_tol: settings.f_tol,
                ..Default::default()
            },
            params: None,
        }
    }

    pub fn params(&self) -> Option<&FigarchParams> {
        self.params.as_ref()
    }
}

impl ForecastModel for FigarchModel {
    fn name(&self) -> &str {
        FIGARCH
    }

    fn cadence(&self) -> RefitCadence {
        RefitCadence::EveryDate
    }

    fn refit(&mut self, view: &HistoryView<'_>) -> Result<()> {
        let window = view.return_window(self.train_window);
        let fit =
            fit_figarch(window, self.lags, self.params.as_ref(), &self.opts).or_else(|e| {
                if self.params.is_some() {
                    fit_figarch(window, self.lags, None, &self.opts)
                } else {
                    Err(e)
                }
            })?;
        self.params = Some(fit.params);
        Ok(())
    }

    fn forecast(&self, view: &HistoryView<'_>) -> Result<f64> {
        let params = self
            .params
            .as_ref()
            .ok_or_else(|| Error::fit(FIGARCH, "no fitted parameters"))?;
        let window = view.return_window(self.train_window);
        if window.iter().any(|r| !r.is_finite()) {
            return Err(Error::fit(FIGARCH, "incomplete return window"));
        }
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        let history: Vec<f64> = view
            .return_window(self.lags)
            .iter()
            .filter(|r| r.is_finite())
            .map(|r| (r - mean) * (r - mean))
            .collect();
        Ok(forecast_figarch(params, &history, view.variance_floor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specialists::garch::{
        filter_last, forecast_garch_t, simulate_garch_t, GarchTParams,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::function::gamma::gamma;

    /// Coefficients of (1 - L)^d from the generalized binomial series.
    fn binomial_coeffs(d: f64, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|k| {
                let kf = k as f64;
                gamma(kf - d) / (gamma(kf + 1.0) * gamma(-d))
            })
            .collect()
    }

    /// lambda_j = -[ (1 - phi L)(1 - L)^d / (1 - beta L) ]_j by explicit
    /// polynomial products.
    fn brute_weights(d: f64, phi: f64, beta: f64, n: usize) -> Vec<f64> {
        let pi = binomial_coeffs(d, n);
        let a: Vec<f64> = (0..=n)
            .map(|j| pi[j] - if j > 0 { phi * pi[j - 1] } else { 0.0 })
            .collect();
        (1..=n)
            .map(|j| {
                -(0..=j)
                    .map(|i| a[i] * beta.powi((j - i) as i32))
                    .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn weight_recursion_matches_binomial_expansion() {
        for &(phi, beta) in &[(0.0, 0.0), (0.2, 0.5), (0.1, 0.3)] {
            let fast = arch_weights_raw(0.5, phi, beta, 3);
            let slow = brute_weights(0.5, phi, beta, 3);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "{fast:?} vs {slow:?}");
            }
        }
    }

    #[test]
    fn weight_mass_within_unit_interval() {
        let p = FigarchParams {
            omega: 0.0,
            d: 0.4,
            phi: 0.2,
            beta: 0.5,
            truncation_lags: 1000,
        };
        let w = p.arch_weights();
        let mass: f64 = w.iter().sum();
        assert!((0.0..=1.0 + 1e-6).contains(&mass), "{mass}");
        let v = 2e-4;
        let f = forecast_figarch(&p, &vec![v; 1200], 1e-12);
        assert!((f - v * mass).abs() < 1e-15);
    }

    #[test]
    fn zero_memory_nests_garch() {
        // With d = 0 the ARCH(inf) form is GARCH(1,1) with alpha = phi - beta.
        let garch = GarchTParams {
            omega: 2e-6,
            alpha: 0.08,
            beta: 0.9,
            nu: 8.0,
        };
        let fig = FigarchParams {
            omega: garch.omega,
            d: 0.0,
            phi: garch.alpha + garch.beta,
            beta: garch.beta,
            truncation_lags: 1000,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = simulate_garch_t(&garch, 1500, &mut rng);
        let eps2: Vec<f64> = eps.iter().map(|e| e * e).collect();
        // GARCH started at omega / (1 - beta) equals the ARCH(inf) sum over
        // the same history.
        let (s2, e2) = filter_last(&eps, &garch, garch.omega / (1.0 - garch.beta));
        let g = forecast_garch_t(&garch, e2, s2, 1e-12);
        let f = forecast_figarch(&fig, &eps2, 1e-12);
        assert!((g - f).abs() <= 1e-8 * g, "{g} vs {f}");

        // The fully degenerate corner d = phi = beta = 0 is the constant model.
        let flat = FigarchParams {
            omega: 3e-6,
            d: 0.0,
            phi: 0.0,
            beta: 0.0,
            truncation_lags: 1000,
        };
        let g0 = GarchTParams {
            omega: 3e-6,
            alpha: 0.0,
            beta: 0.0,
            nu: 8.0,
        };
        assert_eq!(
            forecast_figarch(&flat, &eps2, 1e-12),
            forecast_garch_t(&g0, e2, s2, 1e-12)
        );
    }

    #[test]
    fn fit_runs_and_improves_on_starts() {
        let truth = GarchTParams {
            omega: 2e-6,
            alpha: 0.08,
            beta: 0.9,
            nu: 8.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = simulate_garch_t(&truth, 504, &mut rng);
        let fit = fit_figarch(&r, 1000, None, &NelderMeadOptions::default()).unwrap();
        let eps = demean(&r);
        assert!(fit.params.d > 0.0 && fit.params.d < 1.0);
        let var = eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
        for p in fixed_starts(var, 1000) {
            assert!(fit.avg_loglik >= figarch_avg_loglik(&eps, &p));
        }
    }

    #[test]
    fn short_window_rejected() {
        assert!(fit_figarch(&[0.01; 100], 1000, None, &NelderMeadOptions::default()).is_err());
    }
}
