//! GARCH(1,1) with standardized Student-t innovations.
//!
//! Returns are demeaned over the estimation window; the variance recursion
//! is `s2[t] = omega + alpha * e[t-1]^2 + beta * s2[t-1]` started from the
//! window's sample variance. Estimation maximizes the Student-t
//! log-likelihood with a simplex search over an unconstrained
//! parameterization, restarting from three fixed points and keeping the
//! best converged solution.

use rand::Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{ForecastModel, HistoryView, RefitCadence, SpecialistSettings, GARCH_T};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::stats::logistic;

pub const MIN_RETURNS: usize = 250;
pub const MAX_PERSISTENCE: f64 = 0.9999;
pub const NU_MIN: f64 = 2.05;
pub const NU_MAX: f64 = 200.0;

/// (alpha, beta) start points; nu starts at 8 and omega targets the
/// sample variance.
pub const STARTS: [(f64, f64); 3] = [(0.05, 0.90), (0.10, 0.85), (0.02, 0.95)];
const START_NU: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchTParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
}

impl GarchTParams {
    pub fn is_valid(&self) -> bool {
        self.omega > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta <= MAX_PERSISTENCE
            && self.nu > NU_MIN
            && self.nu <= NU_MAX
            && [self.omega, self.alpha, self.beta, self.nu]
                .iter()
                .all(|v| v.is_finite())
    }

    fn to_unconstrained(self) -> [f64; 4] {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let persistence = (self.alpha + self.beta) / MAX_PERSISTENCE;
        let share = self.alpha / (self.alpha + self.beta);
        [
            self.omega.ln(),
            logit(persistence),
            logit(share),
            logit((self.nu - NU_MIN) / (NU_MAX - NU_MIN)),
        ]
    }

    fn from_unconstrained(x: &[f64]) -> Self {
        let persistence = MAX_PERSISTENCE * logistic(x[1]);
        let share = logistic(x[2]);
        Self {
            omega: x[0].exp(),
            alpha: persistence * share,
            beta: persistence * (1.0 - share),
            nu: NU_MIN + (NU_MAX - NU_MIN) * logistic(x[3]),
        }
    }
}

/// Result of a successful multi-start fit.
#[derive(Debug, Clone)]
pub struct GarchFit {
    pub params: GarchTParams,
    /// Average log-likelihood per observation at `params`.
    pub avg_loglik: f64,
    /// Start points actually used, with their average log-likelihoods.
    pub starts: Vec<(GarchTParams, f64)>,
}

/// Accumulates `sum(ln x_i)` via running products with periodic exponent
/// extraction, so most terms cost a multiply instead of a logarithm.
struct LnSum {
    mantissa: f64,
    exponent: i64,
    pending: u32,
}

impl LnSum {
    const FLUSH_EVERY: u32 = 8;

    fn new() -> Self {
        Self {
            mantissa: 1.0,
            exponent: 0,
            pending: 0,
        }
    }

    #[inline]
    fn push(&mut self, x: f64) {
        self.mantissa *= x;
        self.pending += 1;
        if self.pending == Self::FLUSH_EVERY {
            self.normalize();
        }
    }

    #[inline]
    fn normalize(&mut self) {
        self.pending = 0;
        let bits = self.mantissa.to_bits();
        let raw_exp = ((bits >> 52) & 0x7ff) as i64;
        if raw_exp == 0 || raw_exp == 0x7ff {
            // Zero, subnormal, inf or NaN: leave for `value` to report.
            return;
        }
        self.exponent += raw_exp - 1022;
        self.mantissa = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    }

    fn value(mut self) -> f64 {
        self.normalize();
        if !(self.mantissa > 0.0) || !self.mantissa.is_finite() {
            return f64::NAN;
        }
        self.mantissa.ln() + self.exponent as f64 * std::f64::consts::LN_2
    }
}

/// Average Student-t log-likelihood of demeaned residuals `eps` with
/// `s2[0] = init_var`.
pub fn garch_t_avg_loglik(eps: &[f64], params: &GarchTParams, init_var: f64) -> f64 {
    let GarchTParams {
        omega,
        alpha,
        beta,
        nu,
    } = *params;
    let n = eps.len() as f64;
    let nu_m2 = nu - 2.0;
    let constant =
        ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (std::f64::consts::PI * nu_m2).ln();

    // Per-observation kernel: -0.5 ln s2 - (nu+1)/2 ln(1 + e2 / ((nu-2) s2))
    //   = -0.5 [ (nu+1) ln((nu-2) s2 + e2) - nu ln s2 - (nu+1) ln(nu-2) ].
    let mut ln_mix = LnSum::new();
    let mut ln_var = LnSum::new();
    let mut s2 = init_var;
    for &e in eps {
        let e2 = e * e;
        ln_mix.push(nu_m2 * s2 + e2);
        ln_var.push(s2);
        s2 = omega + alpha * e2 + beta * s2;
    }
    let sum_mix = ln_mix.value();
    let sum_var = ln_var.value();
    let kernel = -0.5 * ((nu + 1.0) * sum_mix - nu * sum_var - (nu + 1.0) * n * nu_m2.ln());
    constant + kernel / n
}

/// Conditional variance of the last observation and its squared residual,
/// after running the recursion over `eps`.
pub fn filter_last(eps: &[f64], params: &GarchTParams, init_var: f64) -> (f64, f64) {
    let mut s2 = init_var;
    let last = eps.len() - 1;
    for &e in &eps[..last] {
        s2 = params.omega + params.alpha * e * e + params.beta * s2;
    }
    (s2, eps[last] * eps[last])
}

fn demean(returns: &[f64]) -> (Vec<f64>, f64) {
    let n = returns.len() as f64;
    let m = returns.iter().sum::<f64>() / n;
    let eps: Vec<f64> = returns.iter().map(|r| r - m).collect();
    let var = eps.iter().map(|e| e * e).sum::<f64>() / (n - 1.0);
    (eps, var)
}

/// Multi-start maximum-likelihood fit on a return window.
pub fn fit_garch_t(returns: &[f64], opts: &NelderMeadOptions) -> Result<GarchFit> {
    if returns.len() < MIN_RETURNS {
        return Err(Error::InvalidInput(format!(
            "GARCH-t needs at least {MIN_RETURNS} returns, got {}",
            returns.len()
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite return in GARCH-t window".into(),
        ));
    }
    let (eps, var) = demean(returns);
    if !(var > 0.0) {
        return Err(Error::fit(GARCH_T, "zero sample variance"));
    }

    let objective = |x: &[f64]| {
        let p = GarchTParams::from_unconstrained(x);
        -garch_t_avg_loglik(&eps, &p, var)
    };

    let mut starts = Vec::with_capacity(STARTS.len());
    let mut best: Option<(GarchTParams, f64)> = None;
    for (alpha, beta) in STARTS {
        let start = GarchTParams {
            omega: var * (1.0 - alpha - beta),
            alpha,
            beta,
            nu: START_NU,
        };
        let x0 = start.to_unconstrained();
        // Evaluate the start through the same transform the optimizer sees.
        let start_ll = -objective(&x0);
        starts.push((GarchTParams::from_unconstrained(&x0), start_ll));
        let m = nelder_mead(objective, &x0, opts);
        if !m.converged || !m.f.is_finite() {
            continue;
        }
        let ll = -m.f;
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((GarchTParams::from_unconstrained(&m.x), ll));
        }
    }
    let (params, avg_loglik) = best.ok_or_else(|| Error::fit(GARCH_T, "no start converged"))?;
    Ok(GarchFit {
        params,
        avg_loglik,
        starts,
    })
}

/// One-step variance forecast `omega + alpha * e2 + beta * s2`, floored.
pub fn forecast_garch_t(params: &GarchTParams, last_eps2: f64, last_var: f64, floor: f64) -> f64 {
    (params.omega + params.alpha * last_eps2 + params.beta * last_var).max(floor)
}

/// Simulate `n` returns from a GARCH(1,1)-t process started at its
/// unconditional variance.
pub fn simulate_garch_t<R: Rng + ?Sized>(params: &GarchTParams, n: usize, rng: &mut R) -> Vec<f64> {
    let t = StudentT::new(params.nu).expect("nu > 2");
    let scale = ((params.nu - 2.0) / params.nu).sqrt();
    let mut s2 = params.omega / (1.0 - params.alpha - params.beta);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let e = s2.sqrt() * scale * t.sample(rng);
        out.push(e);
        s2 = params.omega + params.alpha * e * e + params.beta * s2;
    }
    out
}

#[derive(Debug, Clone)]
pub struct GarchModel {
    train_window: usize,
    opts: NelderMeadOptions,
    params: Option<GarchTParams>,
}

impl GarchModel {
    pub fn new(settings: &SpecialistSettings) -> Self {
        Self {
            train_window: settings.train_window,
            opts: NelderMeadOptions {
                max_evals: settings.max_evals,
                f_tol: settings.f_tol,
                ..Default::default()
            },
            params: None,
        }
    }

    pub fn params(&self) -> Option<&GarchTParams> {
        self.params.as_ref()
    }
}

impl ForecastModel for GarchModel {
    fn name(&self) -> &str {
        GARCH_T
    }

    fn cadence(&self) -> RefitCadence {
        RefitCadence::EveryDate
    }

    fn refit(&mut self, view: &HistoryView<'_>) -> Result<()> {
        // On failure the previous date's parameters stay in place.
        let fit = fit_garch_t(view.return_window(self.train_window), &self.opts)?;
        self.params = Some(fit.params);
        Ok(())
    }

    fn forecast(&self, view: &HistoryView<'_>) -> Result<f64> {
        let params = self
            .params
            .as_ref()
            .ok_or_else(|| Error::fit(GARCH_T, "no fitted parameters"))?;
        let window = view.return_window(self.train_window);
        if window.len() < 2 || window.iter().any(|r| !r.is_finite()) {
            return Err(Error::fit(GARCH_T, "incomplete return window"));
        }
        let (eps, var) = demean(window);
        let (s2, e2) = filter_last(&eps, params, var);
        Ok(forecast_garch_t(params, e2, s2, view.variance_floor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_loglik(eps: &[f64], p: &GarchTParams, init: f64) -> f64 {
        let mut s2 = init;
        let mut total = 0.0;
        for &e in eps {
            let z2 = e * e / ((p.nu - 2.0) * s2);
            total += ln_gamma((p.nu + 1.0) / 2.0)
                - ln_gamma(p.nu / 2.0)
                - 0.5 * (std::f64::consts::PI * (p.nu - 2.0) * s2).ln()
                - (p.nu + 1.0) / 2.0 * (1.0 + z2).ln();
            s2 = p.omega + p.alpha * e * e + p.beta * s2;
        }
        total / eps.len() as f64
    }

    #[test]
    fn product_accumulated_loglik_matches_naive_sum() {
        let p = GarchTParams {
            omega: 2e-6,
            alpha: 0.08,
            beta: 0.9,
            nu: 6.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = simulate_garch_t(&p, 777, &mut rng);
        let a = garch_t_avg_loglik(&eps, &p, 1e-4);
        let b = naive_loglik(&eps, &p, 1e-4);
        assert!((a - b).abs() < 1e-10 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn transform_roundtrip() {
        let p = GarchTParams {
            omega: 3e-6,
            alpha: 0.07,
            beta: 0.91,
            nu: 9.5,
        };
        let q = GarchTParams::from_unconstrained(&p.to_unconstrained());
        assert!((p.omega - q.omega).abs() < 1e-18);
        assert!((p.alpha - q.alpha).abs() < 1e-12);
        assert!((p.beta - q.beta).abs() < 1e-12);
        assert!((p.nu - q.nu).abs() < 1e-9);
    }

    #[test]
    fn recovers_simulated_parameters() {
        let truth = GarchTParams {
            omega: 2e-6,
            alpha: 0.08,
            beta: 0.90,
            nu: 8.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(20240601);
        let r = simulate_garch_t(&truth, 4000, &mut rng);
        let fit = fit_garch_t(&r, &NelderMeadOptions::default()).unwrap();
        let p = fit.params;
        assert!((p.alpha - 0.08).abs() <= 0.03, "{p:?}");
        assert!((p.beta - 0.90).abs() <= 0.04, "{p:?}");
        assert!((5.0..=14.0).contains(&p.nu), "{p:?}");
        for (_, start_ll) in &fit.starts {
            assert!(fit.avg_loglik >= *start_ll);
        }
    }

    #[test]
    fn iid_returns_give_small_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        let r: Vec<f64> = (0..504).map(|_| normal.sample(&mut rng)).collect();
        let fit = fit_garch_t(&r, &NelderMeadOptions::default()).unwrap();
        assert!(fit.params.alpha <= 0.05, "{:?}", fit.params);
        let (eps, var) = demean(&r);
        let (s2, e2) = filter_last(&eps, &fit.params, var);
        let f = forecast_garch_t(&fit.params, e2, s2, 1e-12);
        assert!((f / var - 1.0).abs() <= 0.25, "{f} vs {var}");
    }

    #[test]
    fn short_window_rejected() {
        assert!(matches!(
            fit_garch_t(&[0.01; 100], &NelderMeadOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn forecast_recursion_values() {
        let p = GarchTParams {
            omega: 1e-6,
            alpha: 0.0,
            beta: 0.0,
            nu: 8.0,
        };
        assert_eq!(forecast_garch_t(&p, 5e-4, 3e-4, 1e-12), 1e-6);

        let p = GarchTParams {
            omega: 1e-6,
            alpha: 0.1,
            beta: 0.8,
            nu: 8.0,
        };
        let f = forecast_garch_t(&p, 2e-4, 1e-4, 1e-12);
        assert!((f - 1.01e-4).abs() < 1e-18);

        let p = GarchTParams {
            omega: 0.0,
            alpha: 0.3,
            beta: 0.7,
            nu: 8.0,
        };
        assert!((forecast_garch_t(&p, 2.5e-4, 2.5e-4, 1e-12) - 2.5e-4).abs() < 1e-18);
    }
}
