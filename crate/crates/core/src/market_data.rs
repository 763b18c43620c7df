//! OHLC and macro-state ingestion with strict no-lookahead alignment.
//!
//! The panel keeps one row per trading date present in both inputs. For a
//! row `t`, `target[t]` is the Garman–Klass variance of row `t + 1`, so a
//! forecast issued at `t` is scored against the next trading day. Every
//! other per-row quantity (returns, state vectors) is computed from data
//! dated `<= t`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};

/// 2 ln 2 - 1, the close-to-open coefficient of the Garman–Klass estimator.
const GK_CO_COEF: f64 = 2.0 * std::f64::consts::LN_2 - 1.0;

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-12;
const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcvBar {
    pub fn new(date: NaiveDate, open: f64, high: f64, low: f64, close: f64) -> Result<Self> {
        let bar = Self {
            date,
            open,
            high,
            low,
            close,
        };
        bar.validate()?;
        Ok(bar)
    }

    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::RejectedInput(format!(
                "{}: prices must be finite and positive",
                self.date
            )));
        }
        if self.high < self.open.max(self.close) || self.low > self.open.min(self.close) {
            return Err(Error::RejectedInput(format!(
                "{}: high/low do not bracket open/close",
                self.date
            )));
        }
        Ok(())
    }
}

/// Daily Garman–Klass variance, clamped below at `floor`.
pub fn gk_variance(bar: &OhlcvBar, floor: f64) -> Result<f64> {
    let prices = [bar.open, bar.high, bar.low, bar.close];
    if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::RejectedInput(format!(
            "{}: non-positive price in Garman-Klass input",
            bar.date
        )));
    }
    let hl = (bar.high / bar.low).ln();
    let co = (bar.close / bar.open).ln();
    let raw = 0.5 * hl * hl - GK_CO_COEF * co * co;
    Ok(raw.max(floor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTransform {
    #[default]
    Identity,
    Log,
}

impl std::str::FromStr for FeatureTransform {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(Self::Identity),
            "log" => Ok(Self::Log),
            other => Err(format!(
                "unknown transform `{other}` (expected identity|log)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroRecord {
    pub date: NaiveDate,
    /// Values in the column order of [`MacroTable::names`]; NaN marks a gap.
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroTable {
    pub names: Vec<String>,
    pub records: Vec<MacroRecord>,
}

impl MacroTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Standardized market-state vector `z_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn squared_distance(&self, other: &StateVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct MarketConfig {
    pub variance_floor: f64,
    pub state_window: usize,
    pub transforms: BTreeMap<String, FeatureTransform>,
    pub vix_column: String,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            state_window: 504,
            transforms: BTreeMap::new(),
            vix_column: "VIX".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlignedPanel {
    pub asset: String,
    pub dates: Vec<NaiveDate>,
    pub bars: Vec<OhlcvBar>,
    /// Close-to-close log return versus the previous bar in the source
    /// file; NaN when no earlier bar exists.
    pub returns: Vec<f64>,
    pub gk_var: Vec<f64>,
    /// `target[t] = gk_var[t + 1]`; `None` on the last row.
    pub target: Vec<Option<f64>>,
    pub state_names: Vec<String>,
    /// Transformed (but unstandardized) state features.
    pub states_raw: Vec<Vec<f64>>,
    /// `None` until a full standardization window is available.
    pub states_std: Vec<Option<StateVector>>,
    /// Untransformed VIX column, used by the VIX-switch baseline.
    pub raw_vix: Vec<f64>,
    pub variance_floor: f64,
}

impl AlignedPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Rows that carry a next-day target.
    pub fn forecastable_rows(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn gk_proxy(&self, t: usize) -> f64 {
        self.gk_var[t].sqrt()
    }
}

fn ensure_sorted<I: Iterator<Item = NaiveDate>>(what: &str, dates: I) -> Result<()> {
    let mut prev: Option<NaiveDate> = None;
    for d in dates {
        if let Some(p) = prev {
            if d <= p {
                return Err(Error::RejectedInput(format!(
                    "{what}: dates not strictly increasing at {d} (after {p})"
                )));
            }
        }
        prev = Some(d);
    }
    Ok(())
}

/// Inner-join bars and macro records by date and derive returns, targets
/// and standardized states.
pub fn build_panel(
    asset: &str,
    bars: &[OhlcvBar],
    macro_table: &MacroTable,
    config: &MarketConfig,
) -> Result<AlignedPanel> {
    if bars.is_empty() || macro_table.records.is_empty() {
        return Err(Error::Alignment(format!("{asset}: empty input")));
    }
    ensure_sorted("ohlc", bars.iter().map(|b| b.date))?;
    ensure_sorted("macro", macro_table.records.iter().map(|r| r.date))?;
    for bar in bars {
        bar.validate()?;
    }
    let vix_col = macro_table.column(&config.vix_column).ok_or_else(|| {
        Error::config(
            "data.vix_column",
            format!("column `{}` not found in macro file", config.vix_column),
        )
    })?;
    for name in config.transforms.keys() {
        if macro_table.column(name).is_none() {
            return Err(Error::config(
                &format!("market.transform.{name}"),
                "no such macro column",
            ));
        }
    }

    let macro_by_date: HashMap<NaiveDate, &MacroRecord> = macro_table
        .records
        .iter()
        .filter(|r| r.features.iter().all(|v| v.is_finite()))
        .map(|r| (r.date, r))
        .collect();

    let transforms: Vec<FeatureTransform> = macro_table
        .names
        .iter()
        .map(|n| config.transforms.get(n).copied().unwrap_or_default())
        .collect();

    let mut panel = AlignedPanel {
        asset: asset.to_string(),
        dates: Vec::new(),
        bars: Vec::new(),
        returns: Vec::new(),
        gk_var: Vec::new(),
        target: Vec::new(),
        state_names: macro_table.names.clone(),
        states_raw: Vec::new(),
        states_std: Vec::new(),
        raw_vix: Vec::new(),
        variance_floor: config.variance_floor,
    };

    for (i, bar) in bars.iter().enumerate() {
        let Some(rec) = macro_by_date.get(&bar.date) else {
            continue;
        };
        let ret = if i == 0 {
            f64::NAN
        } else {
            (bar.close / bars[i - 1].close).ln()
        };
        let mut state = Vec::with_capacity(rec.features.len());
        for (k, (&x, tf)) in rec.features.iter().zip(&transforms).enumerate() {
            state.push(match tf {
                FeatureTransform::Identity => x,
                FeatureTransform::Log => {
                    if x <= 0.0 {
                        return Err(Error::RejectedInput(format!(
                            "{}: log transform of non-positive `{}` = {x}",
                            bar.date, macro_table.names[k]
                        )));
                    }
                    x.ln()
                }
            });
        }
        panel.dates.push(bar.date);
        panel.bars.push(*bar);
        panel.returns.push(ret);
        panel.gk_var.push(gk_variance(bar, config.variance_floor)?);
        panel.states_raw.push(state);
        panel.raw_vix.push(rec.features[vix_col]);
    }

    if panel.len() < 2 {
        return Err(Error::Alignment(format!(
            "{asset}: {} common date(s); at least two are needed to build a target",
            panel.len()
        )));
    }

    panel.target = (0..panel.len())
        .map(|t| panel.gk_var.get(t + 1).copied())
        .collect();
    panel.states_std = standardize_states(&panel.states_raw, config.state_window, asset);
    Ok(panel)
}

/// Rolling z-scores over the trailing `window` rows ending at each row
/// (inclusive), using the sample standard deviation.
///
/// Rows with fewer than `window` observations get `None`. A feature that is
/// constant across the window contributes 0.
pub fn standardize_states(
    raw: &[Vec<f64>],
    window: usize,
    label: &str,
) -> Vec<Option<StateVector>> {
    let mut out = Vec::with_capacity(raw.len());
    let mut flagged = false;
    for t in 0..raw.len() {
        if window < 2 || t + 1 < window {
            out.push(None);
            continue;
        }
        let rows = &raw[t + 1 - window..=t];
        let dim = raw[t].len();
        let mut z = Vec::with_capacity(dim);
        for k in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let mut sum = 0.0;
            for r in rows {
                lo = lo.min(r[k]);
                hi = hi.max(r[k]);
                sum += r[k];
            }
            if lo == hi {
                if !flagged {
                    warn!(
                        asset = label,
                        feature = k,
                        "constant state feature over window; z set to 0"
                    );
                    flagged = true;
                }
                z.push(0.0);
                continue;
            }
            let mean = sum / window as f64;
            let ss: f64 = rows.iter().map(|r| (r[k] - mean) * (r[k] - mean)).sum();
            let sd = (ss / (window - 1) as f64).sqrt().max(STD_FLOOR);
            z.push((raw[t][k] - mean) / sd);
        }
        out.push(Some(StateVector(z)));
    }
    out
}

#[derive(Debug, Deserialize)]
struct OhlcRow {
    date: NaiveDate,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
}

pub fn read_ohlc_csv(path: &Path) -> Result<Vec<OhlcvBar>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected = ["date", "open", "high", "low", "close"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::RejectedInput(format!(
            "{}: expected header `date,open,high,low,close`",
            path.display()
        )));
    }
    let mut bars = Vec::new();
    for (line, row) in reader.deserialize::<OhlcRow>().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let bar = OhlcvBar::new(row.date, row.open, row.high, row.low, row.close).map_err(|e| {
            Error::RejectedInput(format!("{} row {}: {e}", path.display(), line + 2))
        })?;
        bars.push(bar);
    }
    Ok(bars)
}

pub fn read_macro_csv(path: &Path) -> Result<MacroTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.get(0) != Some("date") || headers.len() < 2 {
        return Err(Error::RejectedInput(format!(
            "{}: expected header `date,<feature1>,...`",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut records = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row_no = line + 2;
        let date: NaiveDate = rec[0].parse().map_err(|e| {
            Error::RejectedInput(format!("{} row {row_no}: bad date: {e}", path.display()))
        })?;
        let mut features = Vec::with_capacity(names.len());
        for field in rec.iter().skip(1) {
            if field.is_empty() {
                features.push(f64::NAN);
            } else {
                features.push(field.parse::<f64>().map_err(|e| {
                    Error::RejectedInput(format!(
                        "{} row {row_no}: bad number `{field}`: {e}",
                        path.display()
                    ))
                })?);
            }
        }
        records.push(MacroRecord { date, features });
    }
    Ok(MacroTable { names, records })
}
