//! Forecast streams produced outside this crate (e.g. neural or boosted
//! specialists), read from `date,forecast` CSV files.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{ForecastModel, HistoryView, RefitCadence};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ExternalStream {
    pub name: String,
    pub forecasts: BTreeMap<NaiveDate, f64>,
}

#[derive(Deserialize)]
struct Row {
    date: NaiveDate,
    forecast: f64,
}

pub fn read_external_forecasts(path: &Path, name: &str) -> Result<ExternalStream> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut forecasts = BTreeMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| Error::csv(path, e))?;
        if !row.forecast.is_finite() || row.forecast <= 0.0 {
            return Err(Error::RejectedInput(format!(
                "{} row {row_no} ({}): forecast must be positive and finite, got {}",
                path.display(),
                row.date,
                row.forecast
            )));
        }
        if forecasts.insert(row.date, row.forecast).is_some() {
            return Err(Error::RejectedInput(format!(
                "{} row {row_no}: duplicate date {}",
                path.display(),
                row.date
            )));
        }
    }
    Ok(ExternalStream {
        name: name.to_string(),
        forecasts,
    })
}

#[derive(Debug, Clone)]
pub struct ExternalModel {
    stream: ExternalStream,
}

impl ExternalModel {
    pub fn new(stream: ExternalStream) -> Self {
        Self { stream }
    }
}

impl ForecastModel for ExternalModel {
    fn name(&self) -> &str {
        &self.stream.name
    }

    fn cadence(&self) -> RefitCadence {
        RefitCadence::Slow
    }

    fn refit(&mut self, _view: &HistoryView<'_>) -> Result<()> {
        Ok(())
    }

    /// The stream's value dated `t`; absent dates leave the model inactive.
    fn forecast(&self, view: &HistoryView<'_>) -> Result<f64> {
        self.stream
            .forecasts
            .get(&view.date())
            .map(|v| v.max(view.variance_floor))
            .ok_or_else(|| {
                Error::fit(
                    &self.stream.name,
                    format!("no forecast for {}", view.date()),
                )
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_stream_and_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gru.csv");
        std::fs::write(&path, "date,forecast\n2020-01-02,1.5e-4\n2020-01-03,2e-4\n").unwrap();
        let s = read_external_forecasts(&path, "GRU").unwrap();
        assert_eq!(s.forecasts.len(), 2);

        std::fs::write(&path, "date,forecast\n2020-01-02,1.5e-4\n2020-01-03,-1\n").unwrap();
        let err = read_external_forecasts(&path, "GRU")
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 3"), "{err}");

        std::fs::write(&path, "date,forecast\n2020-01-02,NaN\n").unwrap();
        assert!(read_external_forecasts(&path, "GRU").is_err());
    }
}
