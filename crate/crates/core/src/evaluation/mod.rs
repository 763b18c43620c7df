//! Post-run report surfaces: regime-conditioned loss tables, routing
//! diagnostics, Diebold–Mariano tests, tail metrics and QLIKE gaps.
//!
//! Every aggregate is computed per asset first and then summarized by the
//! median across assets.

pub mod report;

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::backtest::{DailyRecord, MethodLoss, PROPOSED, ROLLING_BEST, STATIC_BEST, VIX_SWITCH};
use crate::error::{Error, Result};
use crate::specialists::{FIGARCH, GARCH_T, GRU, HAR_RV, XGBOOST};
use crate::stats::{mean, median, quantile, upper_tail_threshold};

pub const TAIL_MASS: f64 = 0.10;
pub const DM_MIN_OBS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    Low,
    Mid,
    High,
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeLabel::Low => "Low",
            RegimeLabel::Mid => "Mid",
            RegimeLabel::High => "High",
        })
    }
}

/// A reporting group: the full sample or one regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Overall,
    Regime(RegimeLabel),
}

impl Group {
    pub const ALL: [Group; 4] = [
        Group::Overall,
        Group::Regime(RegimeLabel::Low),
        Group::Regime(RegimeLabel::Mid),
        Group::Regime(RegimeLabel::High),
    ];

    fn contains(&self, label: RegimeLabel) -> bool {
        match self {
            Group::Overall => true,
            Group::Regime(r) => *r == label,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Overall => f.write_str("Overall"),
            Group::Regime(r) => r.fmt(f),
        }
    }
}

/// Tercile labels of the realized proxy: low up to the 1/3 quantile, high
/// from the mirrored upper-third threshold, mid in between.
pub fn regime_labels(proxy: &[f64]) -> Result<Vec<RegimeLabel>> {
    let lo = quantile(proxy, 1.0 / 3.0)?;
    let hi = upper_tail_threshold(proxy, 1.0 / 3.0)?;
    Ok(proxy
        .iter()
        .map(|&x| {
            if x <= lo {
                RegimeLabel::Low
            } else if x >= hi {
                RegimeLabel::High
            } else {
                RegimeLabel::Mid
            }
        })
        .collect())
}

/// Dates in the top `TAIL_MASS` of the realized proxy.
pub fn tail_mask(proxy: &[f64]) -> Result<Vec<bool>> {
    let cut = upper_tail_threshold(proxy, TAIL_MASS)?;
    Ok(proxy.iter().map(|&x| x >= cut).collect())
}

/// One evaluation date of one asset, as needed by the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub date: NaiveDate,
    pub realized: f64,
    /// Losses of the specialists active on the date.
    pub model_losses: BTreeMap<String, MethodLoss>,
    /// Losses of the proposed forecast, baselines and ablation variants.
    pub method_losses: BTreeMap<String, MethodLoss>,
    pub routing_set: Vec<String>,
    pub calm_used: bool,
    pub stress_used: bool,
}

impl EvalRow {
    pub fn loss(&self, name: &str) -> Option<&MethodLoss> {
        self.method_losses
            .get(name)
            .or_else(|| self.model_losses.get(name))
    }

    /// Active specialist with the lowest total loss (name tiebreak).
    pub fn best_model(&self) -> Option<(&str, f64)> {
        self.model_losses
            .iter()
            .min_by(|a, b| a.1.total.total_cmp(&b.1.total).then_with(|| a.0.cmp(b.0)))
            .map(|(m, l)| (m.as_str(), l.total))
    }

    /// Realized volatility proxy used for regime grouping.
    pub fn proxy(&self) -> f64 {
        self.realized.sqrt()
    }
}

/// Evaluation rows from a run, with optional ablation variants whose
/// proposed-forecast losses are stored under the variant's label.
pub fn eval_rows(
    records: &[DailyRecord],
    variants: &[(&str, &[DailyRecord])],
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let mut model_losses = BTreeMap::new();
        let mut method_losses = BTreeMap::new();
        for (name, l) in &r.losses {
            if r.forecasts.contains_key(name) {
                model_losses.insert(name.clone(), *l);
            } else {
                method_losses.insert(name.clone(), *l);
            }
        }
        for (label, recs) in variants {
            let v = recs.get(i).filter(|v| v.date == r.date).ok_or_else(|| {
                Error::Protocol(format!(
                    "variant `{label}` is not aligned with the main run at {}",
                    r.date
                ))
            })?;
            method_losses.insert(label.to_string(), v.losses[PROPOSED]);
        }
        rows.push(EvalRow {
            date: r.date,
            realized: r.realized,
            model_losses,
            method_losses,
            routing_set: r.decision.routing_set.clone(),
            calm_used: r.calm_used,
            stress_used: r.stress_used,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecords {
    pub asset: String,
    pub rows: Vec<EvalRow>,
}

/// Rows of one asset with their regime labels and tail flags.
#[derive(Debug, Clone)]
struct Labeled<'a> {
    rows: &'a [EvalRow],
    labels: Vec<RegimeLabel>,
    tail: Vec<bool>,
    degenerate: bool,
}

impl<'a> Labeled<'a> {
    fn new(a: &'a AssetRecords) -> Result<Self> {
        let proxy: Vec<f64> = a.rows.iter().map(EvalRow::proxy).collect();
        let labels = regime_labels(&proxy)?;
        let tail = tail_mask(&proxy)?;
        let first = proxy[0];
        Ok(Self {
            rows: &a.rows,
            labels,
            tail,
            degenerate: proxy.iter().all(|p| *p == first),
        })
    }

    fn in_group(&self, g: Group) -> impl Iterator<Item = &'a EvalRow> + '_ {
        self.rows
            .iter()
            .zip(&self.labels)
            .filter(move |(_, l)| g.contains(**l))
            .map(|(r, _)| r)
    }

    fn in_tail(&self) -> impl Iterator<Item = &'a EvalRow> + '_ {
        self.rows
            .iter()
            .zip(&self.tail)
            .filter(|(_, t)| **t)
            .map(|(r, _)| r)
    }
}

fn median_opt(values: &[f64]) -> Option<f64> {
    median(values).ok()
}

/// Median over assets of the per-asset values that exist; NaN if none.
pub fn cross_asset_median(values: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    median_opt(&present).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Qlike,
    Under,
}

impl LossKind {
    fn of(&self, l: &MethodLoss) -> f64 {
        match self {
            LossKind::Qlike => l.qlike,
            LossKind::Under => l.under,
        }
    }

    pub fn panel_name(&self) -> &'static str {
        match self {
            LossKind::Qlike => "QLIKE",
            LossKind::Under => "Underprediction loss",
        }
    }
}

fn median_loss<'a>(
    rows: impl Iterator<Item = &'a EvalRow>,
    method: &str,
    kind: LossKind,
) -> Option<f64> {
    let v: Vec<f64> = rows
        .filter_map(|r| r.loss(method))
        .map(|l| kind.of(l))
        .collect();
    median_opt(&v)
}

/// Row order for method tables: proposed, baselines, then specialists in
/// the customary order, then anything else by name.
pub fn method_order(present: &[String]) -> Vec<String> {
    let fixed = [
        PROPOSED,
        ROLLING_BEST,
        STATIC_BEST,
        VIX_SWITCH,
        HAR_RV,
        GRU,
        GARCH_T,
        FIGARCH,
        XGBOOST,
    ];
    let mut out: Vec<String> = fixed
        .iter()
        .filter(|m| present.iter().any(|p| p == *m))
        .map(|m| m.to_string())
        .collect();
    let mut rest: Vec<String> = present
        .iter()
        .filter(|p| !fixed.contains(&p.as_str()))
        .cloned()
        .collect();
    rest.sort();
    rest.dedup();
    out.extend(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub overall: f64,
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl RegimeRow {
    fn from_fn(mut f: impl FnMut(Group) -> f64) -> Self {
        Self {
            overall: f(Group::Overall),
            low: f(Group::Regime(RegimeLabel::Low)),
            mid: f(Group::Regime(RegimeLabel::Mid)),
            high: f(Group::Regime(RegimeLabel::High)),
        }
    }

    pub fn get(&self, g: Group) -> f64 {
        match g {
            Group::Overall => self.overall,
            Group::Regime(RegimeLabel::Low) => self.low,
            Group::Regime(RegimeLabel::Mid) => self.mid,
            Group::Regime(RegimeLabel::High) => self.high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTableRow {
    pub panel: LossKind,
    pub method: String,
    pub values: RegimeRow,
}

/// Per-method, per-regime median losses (QLIKE panel, then
/// underprediction panel).
pub fn summarize_losses(assets: &[AssetRecords], methods: &[String]) -> Result<Vec<LossTableRow>> {
    let labeled: Vec<Labeled> = assets.iter().map(Labeled::new).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for kind in [LossKind::Qlike, LossKind::Under] {
        for m in methods {
            let values = RegimeRow::from_fn(|g| {
                let per_asset: Vec<Option<f64>> = labeled
                    .iter()
                    .map(|a| median_loss(a.in_group(g), m, kind))
                    .collect();
                cross_asset_median(&per_asset)
            });
            out.push(LossTableRow {
                panel: kind,
                method: m.clone(),
                values,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDiagnostics {
    pub group: String,
    pub calm_usage: f64,
    pub stress_usage: f64,
    pub selected_regret: f64,
    pub miss_best_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DiagValues {
    calm_usage: f64,
    stress_usage: f64,
    selected_regret: f64,
    miss_best_rate: f64,
}

/// Routing diagnostics of one asset over the given rows.
fn diagnostics_of<'a>(rows: impl Iterator<Item = &'a EvalRow>) -> Option<DiagValues> {
    let mut calm = Vec::new();
    let mut stress = Vec::new();
    let mut regret = Vec::new();
    let mut miss = Vec::new();
    for r in rows {
        let bool_f = |b: bool| if b { 1.0 } else { 0.0 };
        calm.push(bool_f(r.calm_used));
        stress.push(bool_f(r.stress_used));
        if let Some((best, best_total)) = r.best_model() {
            miss.push(bool_f(!r.routing_set.iter().any(|m| m == best)));
            if let Some(p) = r.method_losses.get(PROPOSED) {
                regret.push(p.total - best_total);
            }
        }
    }
    Some(DiagValues {
        calm_usage: mean(&calm)?,
        stress_usage: mean(&stress)?,
        selected_regret: mean(&regret).unwrap_or(f64::NAN),
        miss_best_rate: mean(&miss).unwrap_or(f64::NAN),
    })
}

pub fn routing_diagnostics(assets: &[AssetRecords]) -> Result<Vec<RoutingDiagnostics>> {
    let labeled: Vec<Labeled> = assets.iter().map(Labeled::new).collect::<Result<_>>()?;
    Ok(Group::ALL
        .iter()
        .map(|&g| {
            let per: Vec<Option<DiagValues>> = labeled
                .iter()
                .map(|a| diagnostics_of(a.in_group(g)))
                .collect();
            let pick = |f: fn(&DiagValues) -> f64| {
                let v: Vec<Option<f64>> = per
                    .iter()
                    .map(|d| d.as_ref().map(f).filter(|x| x.is_finite()))
                    .collect();
                cross_asset_median(&v)
            };
            RoutingDiagnostics {
                group: g.to_string(),
                calm_usage: pick(|d| d.calm_usage),
                stress_usage: pick(|d| d.stress_usage),
                selected_regret: pick(|d| d.selected_regret),
                miss_best_rate: pick(|d| d.miss_best_rate),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub method: String,
    pub overall_under: f64,
    pub high_under: f64,
    pub tail_under: f64,
    pub tail_qlike: f64,
}

/// Tail metrics (top decile of the realized proxy) together with overall
/// and high-regime underprediction, for each listed method.
pub fn tail_metrics(assets: &[AssetRecords], methods: &[String]) -> Result<Vec<TailRow>> {
    let labeled: Vec<Labeled> = assets.iter().map(Labeled::new).collect::<Result<_>>()?;
    let per = |f: &dyn Fn(&Labeled) -> Option<f64>| {
        cross_asset_median(&labeled.iter().map(f).collect::<Vec<_>>())
    };
    Ok(methods
        .iter()
        .map(|m| TailRow {
            method: m.clone(),
            overall_under: per(&|a| median_loss(a.in_group(Group::Overall), m, LossKind::Under)),
            high_under: per(&|a| {
                median_loss(
                    a.in_group(Group::Regime(RegimeLabel::High)),
                    m,
                    LossKind::Under,
                )
            }),
            tail_under: per(&|a| median_loss(a.in_tail(), m, LossKind::Under)),
            tail_qlike: per(&|a| median_loss(a.in_tail(), m, LossKind::Qlike)),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub lag: usize,
    pub n: usize,
    pub degenerate: bool,
}

/// Automatic Bartlett bandwidth `floor(4 (n / 100)^(2/9))`.
pub fn newey_west_lag(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Newey–West long-run variance of `d` with a Bartlett kernel.
pub fn newey_west_variance(d: &[f64], lag: usize) -> f64 {
    let n = d.len();
    let m = d.iter().sum::<f64>() / n as f64;
    let gamma =
        |k: usize| -> f64 { (k..n).map(|t| (d[t] - m) * (d[t - k] - m)).sum::<f64>() / n as f64 };
    let mut s = gamma(0);
    for k in 1..=lag.min(n.saturating_sub(1)) {
        s += 2.0 * (1.0 - k as f64 / (lag as f64 + 1.0)) * gamma(k);
    }
    s
}

/// Diebold–Mariano test on the loss differential `a - b`.
pub fn dm_test(a: &[f64], b: &[f64]) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "DM test: series lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < DM_MIN_OBS {
        return Err(Error::InvalidInput(format!(
            "DM test needs at least {DM_MIN_OBS} observations, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "DM test: non-finite loss differential".into(),
        ));
    }
    let lag = newey_west_lag(n);
    let s = newey_west_variance(&d, lag);
    if !(s > 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
            lag,
            n,
            degenerate: true,
        });
    }
    let mean_d = d.iter().sum::<f64>() / n as f64;
    let statistic = mean_d / (s / n as f64).sqrt();
    Ok(DmResult {
        statistic,
        p_value: erfc(statistic.abs() / std::f64::consts::SQRT_2).min(1.0),
        lag,
        n,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmRow {
    pub asset: String,
    pub vs_rolling_best: Option<DmResult>,
    pub vs_vix_switch: Option<DmResult>,
}

/// Per-asset DM tests on QLIKE, proposed minus benchmark.
pub fn dm_table(assets: &[AssetRecords]) -> Vec<DmRow> {
    assets
        .iter()
        .map(|a| {
            let test = |bench: &str| {
                let pairs: Vec<(f64, f64)> = a
                    .rows
                    .iter()
                    .filter_map(|r| Some((r.loss(PROPOSED)?.qlike, r.loss(bench)?.qlike)))
                    .collect();
                let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                dm_test(&x, &y).ok()
            };
            DmRow {
                asset: a.asset.clone(),
                vs_rolling_best: test(ROLLING_BEST),
                vs_vix_switch: test(VIX_SWITCH),
            }
        })
        .collect()
}

pub const DELTA_BASELINES: [&str; 3] = [HAR_RV, ROLLING_BEST, VIX_SWITCH];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub group: String,
    /// Gap against each of `DELTA_BASELINES`, in that order.
    pub deltas: Vec<f64>,
}

/// Cross-asset median of per-asset (median proposed QLIKE - median
/// baseline QLIKE); negative values favor the proposed forecast.
pub fn delta_qlike(assets: &[AssetRecords]) -> Result<Vec<DeltaRow>> {
    let labeled: Vec<Labeled> = assets.iter().map(Labeled::new).collect::<Result<_>>()?;
    Ok(Group::ALL
        .iter()
        .map(|&g| DeltaRow {
            group: g.to_string(),
            deltas: DELTA_BASELINES
                .iter()
                .map(|b| {
                    let per: Vec<Option<f64>> = labeled
                        .iter()
                        .map(|a| {
                            Some(
                                median_loss(a.in_group(g), PROPOSED, LossKind::Qlike)?
                                    - median_loss(a.in_group(g), b, LossKind::Qlike)?,
                            )
                        })
                        .collect();
                    cross_asset_median(&per)
                })
                .collect(),
        })
        .collect())
}

pub const ASSET_PLOT_METHODS: [&str; 3] = [PROPOSED, HAR_RV, ROLLING_BEST];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetQlikeRow {
    pub asset: String,
    /// Overall median QLIKE for each of `ASSET_PLOT_METHODS`.
    pub values: Vec<f64>,
}

pub fn asset_qlike(assets: &[AssetRecords]) -> Vec<AssetQlikeRow> {
    assets
        .iter()
        .map(|a| AssetQlikeRow {
            asset: a.asset.clone(),
            values: ASSET_PLOT_METHODS
                .iter()
                .map(|m| median_loss(a.rows.iter(), m, LossKind::Qlike).unwrap_or(f64::NAN))
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub assets: Vec<String>,
    pub missing_assets: Vec<String>,
    /// Assets whose realized proxy is constant (all dates fall in `Low`).
    pub degenerate_regimes: Vec<String>,
    pub methods: Vec<String>,
    pub ablations: Vec<String>,
    pub table2: Vec<LossTableRow>,
    pub table3: Vec<RoutingDiagnostics>,
    pub table4: Vec<TailRow>,
    pub dm: Vec<DmRow>,
    pub delta_qlike: Vec<DeltaRow>,
    pub asset_qlike: Vec<AssetQlikeRow>,
}

/// Every report table. `ablations` lists the variant labels present in
/// the rows' method losses, in table order.
pub fn build_report(
    assets: &[AssetRecords],
    missing_assets: &[String],
    ablations: &[String],
) -> Result<EvaluationReport> {
    let assets: Vec<AssetRecords> = assets
        .iter()
        .filter(|a| !a.rows.is_empty())
        .cloned()
        .collect();
    if assets.is_empty() {
        return Err(Error::InvalidInput(
            "no evaluation records to report".into(),
        ));
    }
    let mut present: Vec<String> = Vec::new();
    for a in &assets {
        for r in &a.rows {
            for m in r.model_losses.keys().chain(r.method_losses.keys()) {
                if !ablations.contains(m) && !present.contains(m) {
                    present.push(m.clone());
                }
            }
        }
    }
    let methods = method_order(&present);
    let mut tail_methods = vec![PROPOSED.to_string()];
    tail_methods.extend(ablations.iter().cloned());
    let degenerate_regimes = assets
        .iter()
        .map(|a| Ok((a.asset.clone(), Labeled::new(a)?.degenerate)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, d)| *d)
        .map(|(a, _)| a)
        .collect();
    Ok(EvaluationReport {
        assets: assets.iter().map(|a| a.asset.clone()).collect(),
        missing_assets: missing_assets.to_vec(),
        degenerate_regimes,
        table2: summarize_losses(&assets, &methods)?,
        table3: routing_diagnostics(&assets)?,
        table4: tail_metrics(&assets, &tail_methods)?,
        dm: dm_table(&assets),
        delta_qlike: delta_qlike(&assets)?,
        asset_qlike: asset_qlike(&assets),
        methods,
        ablations: ablations.to_vec(),
    })
}
