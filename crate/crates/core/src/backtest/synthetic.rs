//! Regime-switching synthetic panels for end-to-end validation.
//!
//! A two-state (calm/stress) Markov chain is shared by all assets. The
//! conditional variance of each asset is the variance level of the current
//! state times a unit-mean GARCH(1,1) factor driven by standardized
//! Student-t shocks, so a switch moves the variance at once while
//! volatility clustering persists within each state.
//!
//! OHLC bars are built so that the Garman–Klass estimate of each day
//! equals the true variance times a mean-one lognormal factor. With the
//! log return `r = ln(C/O)` fixed, the log range is chosen as
//! `R^2 = 2 (sigma^2 xi + (2 ln 2 - 1) r^2)`, floored at `|r|` so the bar
//! brackets open and close. The excess `R - |r|` is split at random
//! between the upper and lower wicks.
//!
//! Macro columns: `VIX` is affine in the first asset's annualized true
//! volatility plus noise; `CREDIT` rises and `SLOPE` falls with the
//! latent state, each with AR(1) noise.

use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{MacroRecord, MacroTable, OhlcvBar};

const GK_CO_COEF: f64 = 2.0 * std::f64::consts::LN_2 - 1.0;
const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub days: usize,
    pub asset_scales: Vec<f64>,
    pub stay_calm: f64,
    pub stay_stress: f64,
    /// Annualized volatility levels of the two states.
    pub calm_vol: f64,
    pub stress_vol: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    /// Standard deviation of the log noise in the range-based proxy.
    pub range_noise: f64,
    pub vix_noise: f64,
    pub start: NaiveDate,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            days: 2600,
            asset_scales: vec![1.0, 1.3, 0.8, 1.5, 1.1, 0.6],
            stay_calm: 0.99,
            stay_stress: 0.97,
            calm_vol: 0.10,
            stress_vol: 0.40,
            alpha: 0.06,
            beta: 0.90,
            nu: 6.0,
            range_noise: 0.5,
            vix_noise: 1.5,
            start: NaiveDate::from_ymd_opt(2015, 2, 2).expect("valid date"),
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        for (key, p) in [
            ("stay_calm", self.stay_calm),
            ("stay_stress", self.stay_stress),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(
                    &format!("synthetic.{key}"),
                    format!("transition probability {p} outside [0, 1]"),
                ));
            }
        }
        if self.days < 2 {
            return Err(Error::config("synthetic.days", "need at least two days"));
        }
        if self.asset_scales.is_empty() || self.asset_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config(
                "synthetic.asset_scales",
                "scales must be positive",
            ));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta < 1.0) {
            return Err(Error::config(
                "synthetic.garch",
                "need alpha, beta >= 0 and alpha + beta < 1",
            ));
        }
        if !(self.nu > 2.0) {
            return Err(Error::config(
                "synthetic.nu",
                "degrees of freedom must exceed 2",
            ));
        }
        if !(self.calm_vol > 0.0 && self.stress_vol > 0.0) {
            return Err(Error::config(
                "synthetic.vol",
                "state volatilities must be positive",
            ));
        }
        Ok(())
    }

    /// Long-run fraction of days in the stress state.
    pub fn stationary_stress_share(&self) -> f64 {
        let out_calm = 1.0 - self.stay_calm;
        let out_stress = 1.0 - self.stay_stress;
        if out_calm + out_stress == 0.0 {
            0.0
        } else {
            out_calm / (out_calm + out_stress)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticAsset {
    pub name: String,
    pub bars: Vec<OhlcvBar>,
    /// True conditional variance of each day's return.
    pub true_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub dates: Vec<NaiveDate>,
    /// `true` on stress days.
    pub stress: Vec<bool>,
    pub assets: Vec<SyntheticAsset>,
    pub macro_table: MacroTable,
}

pub fn asset_name(i: usize) -> String {
    format!("SYN{}", i + 1)
}

/// Weekdays starting at `start` (moved forward to a weekday if needed).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Bar whose Garman–Klass variance is `var * xi` (up to the bracketing
/// floor), given open price and log return.
fn make_bar(date: NaiveDate, open: f64, r: f64, var_xi: f64, split: f64) -> OhlcvBar {
    let close = open * r.exp();
    let range = (2.0 * (var_xi + GK_CO_COEF * r * r)).sqrt().max(r.abs());
    let excess = range - r.abs();
    let high = open.max(close) * (split * excess).exp();
    let low = open.min(close) * (-(1.0 - split) * excess).exp();
    OhlcvBar {
        date,
        open,
        high,
        low,
        close,
    }
}

pub fn generate_synthetic_panel(seed: u64, params: &SyntheticParams) -> Result<SyntheticPanel> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.days;
    let dates = business_days(params.start, n);

    let mut stress = Vec::with_capacity(n);
    let mut s = false;
    for _ in 0..n {
        stress.push(s);
        let stay = if s {
            params.stay_stress
        } else {
            params.stay_calm
        };
        if rng.gen::<f64>() >= stay {
            s = !s;
        }
    }

    let shock =
        StudentT::new(params.nu).map_err(|e| Error::config("synthetic.nu", e.to_string()))?;
    let t_scale = ((params.nu - 2.0) / params.nu).sqrt();
    let persistence = params.alpha + params.beta;
    let level = |st: bool, scale: f64| {
        let vol = if st {
            params.stress_vol
        } else {
            params.calm_vol
        } * scale;
        vol * vol / TRADING_DAYS
    };

    let mut assets = Vec::with_capacity(params.asset_scales.len());
    for (i, &scale) in params.asset_scales.iter().enumerate() {
        let mut bars = Vec::with_capacity(n);
        let mut true_var = Vec::with_capacity(n);
        let mut h = 1.0;
        let mut z2 = 1.0;
        let mut open = 100.0;
        for t in 0..n {
            if t > 0 {
                h = (1.0 - persistence) + params.alpha * z2 + params.beta * h;
            }
            let var = level(stress[t], scale) * h;
            let z: f64 = shock.sample(&mut rng) * t_scale;
            let r = var.sqrt() * z;
            z2 = z * z * h;
            let xi = (params.range_noise * normal(&mut rng)
                - 0.5 * params.range_noise * params.range_noise)
                .exp();
            let bar = make_bar(dates[t], open, r, var * xi, rng.gen::<f64>());
            open = bar.close;
            bars.push(bar);
            true_var.push(var);
        }
        assets.push(SyntheticAsset {
            name: asset_name(i),
            bars,
            true_var,
        });
    }

    let base = &assets[0].true_var;
    let mut credit_noise = 0.0;
    let mut slope_noise = 0.0;
    let mut records = Vec::with_capacity(n);
    for t in 0..n {
        credit_noise = 0.9 * credit_noise + 0.1 * normal(&mut rng);
        slope_noise = 0.9 * slope_noise + 0.1 * normal(&mut rng);
        let vol_pct = 100.0 * (base[t] * TRADING_DAYS).sqrt();
        let vix = (4.0 + 1.2 * vol_pct + params.vix_noise * normal(&mut rng)).max(1.0);
        let st = if stress[t] { 1.0 } else { 0.0 };
        records.push(MacroRecord {
            date: dates[t],
            features: vec![vix, 1.0 + 1.5 * st + credit_noise, 1.5 - st + slope_noise],
        });
    }
    let macro_table = MacroTable {
        names: vec!["VIX".into(), "CREDIT".into(), "SLOPE".into()],
        records,
    };

    Ok(SyntheticPanel {
        dates,
        stress,
        assets,
        macro_table,
    })
}

/// Write `<ASSET>.csv`, `truth_<ASSET>.csv` and `macro.csv` into `dir`.
pub fn write_synthetic(dir: &Path, panel: &SyntheticPanel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for asset in &panel.assets {
        let path = dir.join(format!("{}.csv", asset.name));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        w.write_record(["date", "open", "high", "low", "close"])
            .map_err(|e| Error::csv(&path, e))?;
        for b in &asset.bars {
            w.write_record([
                b.date.to_string(),
                format!("{:.10}", b.open),
                format!("{:.10}", b.high),
                format!("{:.10}", b.low),
                format!("{:.10}", b.close),
            ])
            .map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(format!("truth_{}.csv", asset.name));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        w.write_record(["date", "state", "true_var"])
            .map_err(|e| Error::csv(&path, e))?;
        for ((d, s), v) in panel.dates.iter().zip(&panel.stress).zip(&asset.true_var) {
            let state = if *s { "stress" } else { "calm" };
            w.write_record([d.to_string(), state.to_string(), format!("{v:.6e}")])
                .map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let path = dir.join("macro.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let mut header = vec!["date".to_string()];
    header.extend(panel.macro_table.names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(&path, e))?;
    for rec in &panel.macro_table.records {
        let mut row = vec![rec.date.to_string()];
        row.extend(rec.features.iter().map(|v| format!("{v:.6}")));
        w.write_record(&row).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::gk_variance;

    fn small(days: usize) -> SyntheticParams {
        SyntheticParams {
            days,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let a = generate_synthetic_panel(3, &small(300)).unwrap();
        let b = generate_synthetic_panel(3, &small(300)).unwrap();
        assert_eq!(a.assets[2].bars, b.assets[2].bars);
        assert_eq!(a.stress, b.stress);
        let c = generate_synthetic_panel(4, &small(300)).unwrap();
        assert_ne!(a.assets[0].bars, c.assets[0].bars);
    }

    #[test]
    fn stress_share_matches_stationary_distribution() {
        let p = small(2600);
        assert!((p.stationary_stress_share() - 0.25).abs() < 1e-12);
        for seed in 0..10 {
            let panel = generate_synthetic_panel(seed, &p).unwrap();
            let share = panel.stress.iter().filter(|s| **s).count() as f64 / 2600.0;
            assert!((0.15..=0.45).contains(&share), "seed {seed}: {share}");
        }
    }

    #[test]
    fn absorbing_calm_state_gives_all_calm_panel() {
        let p = SyntheticParams {
            stay_calm: 1.0,
            ..small(500)
        };
        let panel = generate_synthetic_panel(1, &p).unwrap();
        assert!(panel.stress.iter().all(|s| !s));
    }

    #[test]
    fn invalid_transition_is_config_error() {
        let p = SyntheticParams {
            stay_stress: 1.2,
            ..small(100)
        };
        assert!(matches!(
            generate_synthetic_panel(0, &p),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn bars_are_valid_and_chained() {
        let panel = generate_synthetic_panel(5, &small(400)).unwrap();
        for asset in &panel.assets {
            for w in asset.bars.windows(2) {
                assert_eq!(w[1].open, w[0].close);
            }
            for b in &asset.bars {
                b.validate().unwrap();
            }
        }
        assert!(panel
            .dates
            .iter()
            .all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
        assert_eq!(panel.dates[0], NaiveDate::from_ymd_opt(2015, 2, 2).unwrap());
    }

    #[test]
    fn range_proxy_tracks_true_variance() {
        let date = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
        for (r, v) in [(0.01, 1e-4), (-0.003, 4e-5), (0.0, 2e-4)] {
            let bar = make_bar(date, 50.0, r, v, 0.3);
            let gk = gk_variance(&bar, 1e-12).unwrap();
            assert!((gk - v).abs() / v < 1e-9, "{gk} vs {v}");
        }

        let panel = generate_synthetic_panel(11, &small(2600)).unwrap();
        let a = &panel.assets[0];
        let ratio: f64 = a
            .bars
            .iter()
            .zip(&a.true_var)
            .map(|(b, v)| gk_variance(b, 1e-12).unwrap() / v)
            .sum::<f64>()
            / a.bars.len() as f64;
        assert!((ratio - 1.0).abs() < 0.1, "mean proxy ratio {ratio}");
    }

    #[test]
    fn vix_separates_states() {
        let panel = generate_synthetic_panel(2, &small(2600)).unwrap();
        let vix = panel.macro_table.column("VIX").unwrap();
        let (mut calm, mut stress) = (Vec::new(), Vec::new());
        for (rec, s) in panel.macro_table.records.iter().zip(&panel.stress) {
            if *s { &mut stress } else { &mut calm }.push(rec.features[vix]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&stress) > 20.0 && mean(&calm) < 20.0,
            "{} {}",
            mean(&stress),
            mean(&calm)
        );
    }

    #[test]
    fn written_files_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let panel = generate_synthetic_panel(9, &small(50)).unwrap();
        write_synthetic(dir.path(), &panel).unwrap();
        let bars = crate::market_data::read_ohlc_csv(&dir.path().join("SYN1.csv")).unwrap();
        assert_eq!(bars.len(), 50);
        let m = crate::market_data::read_macro_csv(&dir.path().join("macro.csv")).unwrap();
        assert_eq!(m.names, vec!["VIX", "CREDIT", "SLOPE"]);
        assert!(dir.path().join("truth_SYN6.csv").exists());
    }
}
