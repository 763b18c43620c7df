//! Day-by-day walk-forward evaluation.
//!
//! The loop runs in two stages. Stage one refits the specialists on their
//! schedules and records every model's forecast for each forecast date.
//! Stage two consumes that table to score, route, combine and compute the
//! baselines. Both stages only look at rows `<= t` when issuing the
//! forecast for `t + 1`; the realized value is attached afterwards. Since
//! stage two never alters the specialist forecasts, several routing
//! variants (e.g. ablations) can share one stage-one table.

pub mod baselines;
pub mod synthetic;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::combiner::{
    branch_forecast, disagreement, final_forecast, stress_score, BlendInputs, Branch,
    CombinationTrace, GateParams, SpecialistPools,
};
use crate::error::{Error, Result};
use crate::market_data::AlignedPanel;
use crate::routing::{
    rank_models, routing_set, routing_threshold, RoutingDecisionCore, ScoreSnapshot,
    ThresholdParams,
};
use crate::scoring::{
    kernel_weight, model_scores, point_losses, total_and_regret, KernelParams, LossParams,
    ScoreState,
};
use crate::specialists::{ForecastModel, HistoryView, RefitCadence, GARCH_T, GRU, HAR_RV};

use baselines::{rolling_best, vix_switch_active, StaticBest};

pub const PROPOSED: &str = "Proposed forecast";
pub const ROLLING_BEST: &str = "Rolling-best";
pub const STATIC_BEST: &str = "Static-best";
pub const VIX_SWITCH: &str = "VIX-switch";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardConfig {
    /// First forecast row (0-based); rows before it are history only.
    pub min_history: usize,
    pub train_window: usize,
    pub slow_retrain_every: usize,
    pub benchmark_window: usize,
    pub static_selection_window: usize,
    pub vix_threshold: f64,
}

impl Default for WalkForwardConfig {
    fn default() -> Self {
        Self {
            min_history: 504,
            train_window: 504,
            slow_retrain_every: 21,
            benchmark_window: 252,
            static_selection_window: 252,
            vix_threshold: 20.0,
        }
    }
}

impl WalkForwardConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("walk.min_history", self.min_history),
            ("walk.train_window", self.train_window),
            ("walk.slow_retrain_every", self.slow_retrain_every),
            ("walk.benchmark_window", self.benchmark_window),
            ("walk.static_selection_window", self.static_selection_window),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.min_history < self.train_window {
            return Err(Error::config(
                "walk.min_history",
                "must be at least walk.train_window",
            ));
        }
        Ok(())
    }
}

/// Models evaluated on every date: both pools plus the streams the
/// baselines refer to.
pub fn model_universe(pools: &SpecialistPools) -> Vec<String> {
    let mut out = pools.all_models();
    for m in [HAR_RV, GARCH_T, GRU] {
        if !out.iter().any(|x| x == m) {
            out.push(m.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistRow {
    pub t: usize,
    pub date: NaiveDate,
    /// One entry per model of the table; `None` when the model is inactive.
    pub forecasts: Vec<Option<f64>>,
    /// Whether each model was refitted on this date.
    pub refit: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistTable {
    pub asset: String,
    pub models: Vec<String>,
    pub rows: Vec<SpecialistRow>,
}

impl SpecialistTable {
    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m == name)
    }
}

/// Forecast rows `min_history ..= len - 2`.
pub fn forecast_dates(
    panel: &AlignedPanel,
    walk: &WalkForwardConfig,
) -> Result<std::ops::RangeInclusive<usize>> {
    if panel.len() < walk.min_history + 2 {
        return Err(Error::InvalidInput(format!(
            "{}: {} aligned rows; at least {} are needed for one forecast date",
            panel.asset,
            panel.len(),
            walk.min_history + 2
        )));
    }
    Ok(walk.min_history..=panel.len() - 2)
}

/// Stage one: refit on schedule and collect every model's forecasts.
pub fn forecast_specialists(
    panel: &AlignedPanel,
    models: &mut [Box<dyn ForecastModel>],
    walk: &WalkForwardConfig,
) -> Result<SpecialistTable> {
    walk.validate()?;
    let range = forecast_dates(panel, walk)?;
    let t0 = *range.start();
    let mut rows = Vec::with_capacity(range.clone().count());
    for t in range {
        let view = HistoryView::at(panel, t);
        let slow_due = (t - t0) % walk.slow_retrain_every == 0;
        let mut forecasts = Vec::with_capacity(models.len());
        let mut refit = Vec::with_capacity(models.len());
        for model in models.iter_mut() {
            let due = match model.cadence() {
                RefitCadence::EveryDate => true,
                RefitCadence::Slow => slow_due,
            };
            if due {
                if let Err(e) = model.refit(&view) {
                    debug!(asset = %panel.asset, date = %view.date(), model = model.name(), error = %e, "refit failed");
                }
            }
            refit.push(due);
            let f = match model.forecast(&view) {
                Ok(v) if v.is_finite() => Some(v.max(panel.variance_floor)),
                Ok(_) => None,
                Err(e) => {
                    debug!(asset = %panel.asset, date = %view.date(), model = model.name(), error = %e, "model inactive");
                    None
                }
            };
            forecasts.push(f);
        }
        rows.push(SpecialistRow {
            t,
            date: panel.dates[t],
            forecasts,
            refit,
        });
    }
    Ok(SpecialistTable {
        asset: panel.asset.clone(),
        models: models.iter().map(|m| m.name().to_string()).collect(),
        rows,
    })
}

/// Ablation switches for the routing stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Routing scores use QLIKE alone (the underprediction weight is 0).
    pub no_risk_sensitive: bool,
    /// No extra stress-branch weight in the high blend (kappa = 0).
    pub no_high_tilt: bool,
    /// The conditional HAR floor is disabled.
    pub no_har_floor: bool,
}

impl Ablation {
    pub const VARIANTS: [(&'static str, Ablation); 3] = [
        (
            "No risk-sensitive scoring",
            Ablation {
                no_risk_sensitive: true,
                no_high_tilt: false,
                no_har_floor: false,
            },
        ),
        (
            "No high-state tilt",
            Ablation {
                no_risk_sensitive: false,
                no_high_tilt: true,
                no_har_floor: false,
            },
        ),
        (
            "No HAR floor",
            Ablation {
                no_risk_sensitive: false,
                no_high_tilt: false,
                no_har_floor: true,
            },
        ),
    ];

    /// Union of two switch sets.
    pub fn with(self, other: Ablation) -> Ablation {
        Ablation {
            no_risk_sensitive: self.no_risk_sensitive || other.no_risk_sensitive,
            no_high_tilt: self.no_high_tilt || other.no_high_tilt,
            no_har_floor: self.no_har_floor || other.no_har_floor,
        }
    }
}

/// Everything stage two needs besides the panel and the forecast table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RouterSettings {
    /// Loss used for reporting and for the baselines.
    pub loss: LossParams,
    pub kernel: KernelParams,
    pub threshold: ThresholdParams,
    pub gate: GateParams,
    pub pools: SpecialistPools,
    pub walk: WalkForwardConfig,
    pub ablation: Ablation,
}

impl RouterSettings {
    pub fn with_ablation(&self, extra: Ablation) -> Self {
        Self {
            ablation: self.ablation.with(extra),
            ..self.clone()
        }
    }

    /// Loss parameters used for routing scores.
    pub fn routing_loss(&self) -> LossParams {
        if self.ablation.no_risk_sensitive {
            LossParams { lambda_under: 0.0 }
        } else {
            self.loss
        }
    }

    pub fn effective_gate(&self) -> GateParams {
        let mut g = self.gate.clone();
        if self.ablation.no_high_tilt {
            g.kappa = 0.0;
        }
        if self.ablation.no_har_floor {
            g.har_floor = false;
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodLoss {
    pub forecast: f64,
    pub qlike: f64,
    pub under: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub t: usize,
    pub date: NaiveDate,
    /// Realized next-day variance, attached after forecasting.
    pub realized: f64,
    pub forecasts: BTreeMap<String, Option<f64>>,
    pub scores: ScoreState,
    pub decision: RoutingDecisionCore,
    /// Routed models in the calm/stress pool before any branch fallback.
    pub calm_used: bool,
    pub stress_used: bool,
    pub trace: CombinationTrace,
    pub rolling_best: String,
    pub static_best: String,
    pub vix_switch: String,
    /// Losses of every active model and every method, keyed by name.
    pub losses: BTreeMap<String, MethodLoss>,
    /// Active model with the lowest total loss on the date.
    pub best_model: String,
}

impl DailyRecord {
    pub fn active_models(&self) -> Vec<String> {
        self.forecasts
            .iter()
            .filter(|(_, f)| f.is_some())
            .map(|(m, _)| m.clone())
            .collect()
    }
}

fn loss_of(y: f64, yhat: f64, floor: f64, loss: &LossParams) -> MethodLoss {
    let (qlike, under) = point_losses(y, yhat, floor);
    MethodLoss {
        forecast: yhat,
        qlike,
        under,
        total: qlike + loss.lambda_under * under,
    }
}

/// Stage two: scores, routing, combination and baselines for every row of
/// the table.
pub fn route_and_combine(
    panel: &AlignedPanel,
    table: &SpecialistTable,
    settings: &RouterSettings,
) -> Result<Vec<DailyRecord>> {
    settings.gate.validate()?;
    settings.pools.validate()?;
    let gate = settings.effective_gate();
    let alpha = gate.alpha_for(&panel.state_names)?;
    let routing_loss = settings.routing_loss();
    let floor = panel.variance_floor;
    let models = &table.models;
    for m in settings.pools.calm.iter().chain(&settings.pools.stress) {
        if !models.contains(m) {
            return Err(Error::config(
                "pools",
                format!("model `{m}` has no forecast stream"),
            ));
        }
    }

    let history_len = settings.kernel.history_len.max(settings.threshold.window);
    let mut regrets: Vec<BTreeMap<String, f64>> = Vec::with_capacity(table.rows.len());
    let mut totals: Vec<BTreeMap<String, f64>> = Vec::with_capacity(table.rows.len());
    let mut past_scores: Vec<Vec<f64>> = Vec::with_capacity(table.rows.len());
    let mut static_best = StaticBest::new(settings.walk.static_selection_window);
    let mut records = Vec::with_capacity(table.rows.len());

    for (i, row) in table.rows.iter().enumerate() {
        let t = row.t;
        let date = row.date;
        let forecasts: BTreeMap<String, f64> = models
            .iter()
            .zip(&row.forecasts)
            .filter_map(|(m, f)| f.map(|v| (m.clone(), v)))
            .collect();
        let active: Vec<String> = forecasts.keys().cloned().collect();
        if active.is_empty() {
            return Err(Error::Protocol(format!(
                "{}: {date}: no active model",
                panel.asset
            )));
        }
        let z_t = panel.states_std[t].as_ref().ok_or_else(|| {
            Error::Protocol(format!(
                "{}: {date}: market state not yet standardized",
                panel.asset
            ))
        })?;
        let p = stress_score(&z_t.0, &alpha, gate.c0)?;
        let stressed = p >= 0.5;

        // Kernel weights for past forecast dates, newest last.
        let lo = i.saturating_sub(history_len);
        let weights: Vec<f64> = (lo..i)
            .map(|j| {
                let s = table.rows[j].t;
                let z_s = panel.states_std[s]
                    .as_ref()
                    .expect("past forecast rows have states");
                kernel_weight(t, s, z_t, z_s, &settings.kernel)
            })
            .collect();

        let score_lo = i.saturating_sub(settings.kernel.history_len);
        let score_rows: Vec<&BTreeMap<String, f64>> = regrets[score_lo..i].iter().collect();
        let scores = if score_rows.is_empty() {
            ScoreState::unscored(models)
        } else {
            match model_scores(models, &score_rows, &weights[score_lo - lo..]) {
                Ok(s) => s,
                Err(Error::Protocol(reason)) => {
                    debug!(asset = %panel.asset, %date, %reason, "no usable score history");
                    ScoreState::unscored(models)
                }
                Err(e) => return Err(e),
            }
        };

        let pool_lo = i.saturating_sub(settings.threshold.window);
        let snapshots: Vec<ScoreSnapshot> = (pool_lo..i)
            .map(|j| ScoreSnapshot {
                weight: weights[j - lo],
                scores: past_scores[j].clone(),
            })
            .collect();
        let threshold = routing_threshold(&snapshots, &settings.threshold)?;
        let set = routing_set(
            &scores,
            &active,
            threshold.tau,
            stressed,
            &settings.threshold,
        )?;
        let ranked = rank_models(&scores, &active);
        let in_pool = |pool: &[String]| set.members.iter().any(|m| pool.contains(m));
        let calm_used = in_pool(&settings.pools.calm);
        let stress_used = in_pool(&settings.pools.stress);

        let bench_lo = i.saturating_sub(settings.walk.benchmark_window);
        let bench: Vec<&BTreeMap<String, f64>> = totals[bench_lo..i].iter().collect();
        let roll = rolling_best(&bench, &active).expect("active set is nonempty");
        let y_roll = forecasts[&roll];
        let static_lo = i.saturating_sub(settings.walk.static_selection_window);
        let static_window: Vec<&BTreeMap<String, f64>> = totals[static_lo..i].iter().collect();
        let stat = static_best
            .select(i, &static_window, &active)
            .expect("active set is nonempty");
        let vix = vix_switch_active(
            panel.raw_vix[t],
            settings.walk.vix_threshold,
            &active,
            &roll,
        );

        let routed_values: Vec<f64> = set.members.iter().map(|m| forecasts[m]).collect();
        let d = disagreement(&routed_values, gate.epsilon)?;
        let calm = branch_forecast(
            Branch::Calm,
            &set.members,
            &settings.pools.calm,
            &forecasts,
            &ranked,
            &gate,
        );
        let stress = branch_forecast(
            Branch::Stress,
            &set.members,
            &settings.pools.stress,
            &forecasts,
            &ranked,
            &gate,
        );
        let trace = match (calm, stress) {
            (Ok(c), Ok(s)) => final_forecast(
                date,
                &BlendInputs {
                    y_calm: c.value,
                    y_stress: s.value,
                    y_roll,
                    y_har: forecasts.get(HAR_RV).copied(),
                    p,
                    d,
                },
                &gate,
                floor,
            ),
            (c, s) => {
                let reason = c
                    .err()
                    .or(s.err())
                    .map(|e| e.to_string())
                    .unwrap_or_default();
                warn!(asset = %panel.asset, %date, %reason, "branch unavailable; using rolling-best forecast");
                CombinationTrace::degraded(date, y_roll, p, d, floor)
            }
        };

        // Reveal y_{t+1}.
        let y = panel.target[t].ok_or_else(|| {
            Error::Protocol(format!(
                "{}: {date}: forecast row without target",
                panel.asset
            ))
        })?;
        let point: Vec<(String, f64, f64)> = active
            .iter()
            .map(|m| {
                let (q, u) = point_losses(y, forecasts[m], floor);
                (m.clone(), q, u)
            })
            .collect();
        let routed_records = total_and_regret(date, &point, &routing_loss)?;
        let reported = total_and_regret(date, &point, &settings.loss)?;
        let best_model = reported
            .iter()
            .min_by(|a, b| {
                a.total
                    .total_cmp(&b.total)
                    .then_with(|| a.model.cmp(&b.model))
            })
            .map(|r| r.model.clone())
            .expect("nonempty");

        let mut losses: BTreeMap<String, MethodLoss> = active
            .iter()
            .map(|m| (m.clone(), loss_of(y, forecasts[m], floor, &settings.loss)))
            .collect();
        losses.insert(
            PROPOSED.into(),
            loss_of(y, trace.y_final, floor, &settings.loss),
        );
        losses.insert(
            ROLLING_BEST.into(),
            loss_of(y, y_roll, floor, &settings.loss),
        );
        losses.insert(
            STATIC_BEST.into(),
            loss_of(y, forecasts[&stat], floor, &settings.loss),
        );
        losses.insert(
            VIX_SWITCH.into(),
            loss_of(y, forecasts[&vix], floor, &settings.loss),
        );

        regrets.push(
            routed_records
                .iter()
                .map(|r| (r.model.clone(), r.regret))
                .collect(),
        );
        totals.push(
            reported
                .iter()
                .map(|r| (r.model.clone(), r.total))
                .collect(),
        );
        past_scores.push(scores.scores.values().flatten().copied().collect());

        records.push(DailyRecord {
            t,
            date,
            realized: y,
            forecasts: models
                .iter()
                .cloned()
                .zip(row.forecasts.iter().copied())
                .collect(),
            decision: RoutingDecisionCore {
                date,
                tau_global: threshold.tau_global,
                tau_local: threshold.tau_local,
                eta: threshold.eta,
                tau: threshold.tau,
                warmup: threshold.warmup,
                routing_set: set.members,
                stressed,
                fallback_used: set.fallback_used,
            },
            scores,
            calm_used,
            stress_used,
            trace,
            rolling_best: roll,
            static_best: stat,
            vix_switch: vix,
            losses,
            best_model,
        });
    }
    Ok(records)
}

/// Both stages for one asset.
pub fn run_walk_forward(
    panel: &AlignedPanel,
    models: &mut [Box<dyn ForecastModel>],
    settings: &RouterSettings,
) -> Result<(SpecialistTable, Vec<DailyRecord>)> {
    let table = forecast_specialists(panel, models, &settings.walk)?;
    let records = route_and_combine(panel, &table, settings)?;
    Ok((table, records))
}
