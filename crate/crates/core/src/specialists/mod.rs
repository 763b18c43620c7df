//! Candidate forecast streams.
//!
//! Every specialist implements [`ForecastModel`]: it is refit on a trailing
//! window and then asked for a one-step-ahead variance forecast. Both calls
//! receive a [`HistoryView`] whose slices end at the forecast date, so a
//! model cannot read data it would not have had when the forecast was
//! issued.

pub mod ewma;
pub mod external;
pub mod figarch;
pub mod garch;
pub mod har;

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::AlignedPanel;

pub use ewma::EwmaModel;
pub use external::{read_external_forecasts, ExternalModel, ExternalStream};
pub use figarch::{FigarchModel, FigarchParams};
pub use garch::{GarchModel, GarchTParams};
pub use har::{HarCoefficients, HarModel};

pub const HAR_RV: &str = "HAR-RV";
pub const GARCH_T: &str = "GARCH-t";
pub const FIGARCH: &str = "FIGARCH";
pub const GRU: &str = "GRU";
pub const XGBOOST: &str = "XGBoost";

/// Models implemented natively by this crate.
pub const NATIVE_MODELS: [&str; 3] = [HAR_RV, GARCH_T, FIGARCH];

/// Read-only view of a panel truncated at the forecast date `t`
/// (all slices end at index `t` inclusive).
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    pub asset: &'a str,
    pub dates: &'a [NaiveDate],
    pub returns: &'a [f64],
    pub gk_var: &'a [f64],
    pub variance_floor: f64,
}

impl<'a> HistoryView<'a> {
    pub fn at(panel: &'a AlignedPanel, t: usize) -> Self {
        Self {
            asset: &panel.asset,
            dates: &panel.dates[..=t],
            returns: &panel.returns[..=t],
            gk_var: &panel.gk_var[..=t],
            variance_floor: panel.variance_floor,
        }
    }

    pub fn t(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn date(&self) -> NaiveDate {
        self.dates[self.t()]
    }

    /// The trailing `len` returns ending at `t` (fewer if not available).
    pub fn return_window(&self, len: usize) -> &'a [f64] {
        let start = self.returns.len().saturating_sub(len);
        &self.returns[start..]
    }

    pub fn rv_window(&self, len: usize) -> &'a [f64] {
        let start = self.gk_var.len().saturating_sub(len);
        &self.gk_var[start..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitCadence {
    /// Re-estimated on every forecast date.
    EveryDate,
    /// Re-estimated every `slow_retrain_every` forecast dates.
    Slow,
}

pub trait ForecastModel: Send {
    fn name(&self) -> &str;

    fn cadence(&self) -> RefitCadence;

    /// Re-estimate on the trailing training window of `view`.
    fn refit(&mut self, view: &HistoryView<'_>) -> Result<()>;

    /// Forecast of the next-day variance using data through `view.t()`.
    /// An error marks the model inactive on this date.
    fn forecast(&self, view: &HistoryView<'_>) -> Result<f64>;
}

/// How a pool member's name is bound to an implementation.
#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Native,
    Ewma {
        lambda: f64,
    },
    /// CSV path; `{asset}` is replaced by the asset symbol.
    External {
        path: String,
    },
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binding::Native => write!(f, "native"),
            Binding::Ewma { lambda } => write!(f, "ewma:{lambda}"),
            Binding::External { path } => write!(f, "external:{path}"),
        }
    }
}

impl Binding {
    pub fn parse(text: &str, default_lambda: f64) -> std::result::Result<Self, String> {
        let text = text.trim();
        if text == "native" {
            return Ok(Binding::Native);
        }
        if text == "ewma" {
            return Ok(Binding::Ewma {
                lambda: default_lambda,
            });
        }
        if let Some(rest) = text.strip_prefix("ewma:") {
            let lambda: f64 = rest
                .trim()
                .parse()
                .map_err(|_| format!("bad EWMA decay `{rest}`"))?;
            if !(0.0..1.0).contains(&lambda) {
                return Err(format!("EWMA decay must lie in [0, 1), got {lambda}"));
            }
            return Ok(Binding::Ewma { lambda });
        }
        if let Some(path) = text.strip_prefix("external:") {
            if path.trim().is_empty() {
                return Err("external binding needs a path".into());
            }
            return Ok(Binding::External {
                path: path.trim().to_string(),
            });
        }
        Err(format!(
            "unknown binding `{text}` (expected native|ewma[:lambda]|external:<path>)"
        ))
    }
}

/// Estimation settings shared by the native specialists.
#[derive(Debug, Clone)]
pub struct SpecialistSettings {
    pub train_window: usize,
    pub figarch_lags: usize,
    pub max_evals: usize,
    pub f_tol: f64,
}

impl Default for SpecialistSettings {
    fn default() -> Self {
        Self {
            train_window: 504,
            figarch_lags: 1000,
            max_evals: 2000,
            f_tol: 1e-8,
        }
    }
}

/// Instantiate the model bound to `name` for one asset.
pub fn build_model(
    name: &str,
    binding: &Binding,
    asset: &str,
    settings: &SpecialistSettings,
) -> Result<Box<dyn ForecastModel>> {
    Ok(match binding {
        Binding::Native => match name {
            HAR_RV => Box::new(HarModel::new(settings.train_window)),
            GARCH_T => Box::new(GarchModel::new(settings)),
            FIGARCH => Box::new(FigarchModel::new(settings)),
            other => {
                return Err(Error::config(
                    &format!("bindings.{other}"),
                    "no native implementation; bind to ewma or external:<path>",
                ))
            }
        },
        Binding::Ewma { lambda } => Box::new(EwmaModel::new(name, *lambda, settings.train_window)),
        Binding::External { path } => {
            let resolved = path.replace("{asset}", asset);
            let stream = read_external_forecasts(std::path::Path::new(&resolved), name)?;
            Box::new(ExternalModel::new(stream))
        }
    })
}
