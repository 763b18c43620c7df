//! CSV and JSON writers for the report tables.
//!
//! Each CSV starts with a `# config_hash=<hex>` comment line followed by a
//! fixed header.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{EvaluationReport, Group, ASSET_PLOT_METHODS, DELTA_BASELINES};
use crate::error::{Error, Result};

pub const TABLE2_HEADER: [&str; 6] = ["Panel", "Method", "Overall", "Low", "Mid", "High"];
pub const TABLE3_HEADER: [&str; 5] = [
    "Regime",
    "Calm usage",
    "Stress usage",
    "Selected regret",
    "Miss-best rate",
];
pub const TABLE4_HEADER: [&str; 5] = [
    "Method",
    "Overall underpred. loss",
    "High-regime underpred. loss",
    "Tail underpred. loss",
    "Tail QLIKE",
];
pub const DM_HEADER: [&str; 5] = [
    "Asset",
    "Proposed vs Rolling-best DM stat",
    "Proposed vs Rolling-best p-value",
    "Proposed vs VIX-switch DM stat",
    "Proposed vs VIX-switch p-value",
];

pub fn delta_header() -> Vec<String> {
    let mut h = vec!["Regime".to_string()];
    h.extend(DELTA_BASELINES.iter().map(|b| format!("vs {b}")));
    h
}

pub fn asset_plot_header() -> Vec<String> {
    let mut h = vec!["Asset".to_string()];
    h.extend(ASSET_PLOT_METHODS.iter().map(|m| m.to_string()));
    h
}

pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "NA".to_string()
    }
}

/// CSV writer whose file starts with the config-hash comment line.
pub fn hashed_csv(path: &Path, config_hash: &str) -> Result<csv::Writer<File>> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# config_hash={config_hash}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<I, R>(path: &Path, hash: &str, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = hashed_csv(path, hash)?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn owned(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    config: &'a BTreeMap<String, String>,
    report: &'a EvaluationReport,
}

/// Write `table2.csv`, `table3.csv`, `table4.csv`, `dm.csv`,
/// `delta_qlike.csv`, `plotdata_asset_qlike.csv` and `summary.json`.
pub fn write_report(
    dir: &Path,
    report: &EvaluationReport,
    config_hash: &str,
    config_echo: &BTreeMap<String, String>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    write_rows(
        &dir.join("table2.csv"),
        config_hash,
        &owned(&TABLE2_HEADER),
        report.table2.iter().map(|r| {
            let mut row = vec![r.panel.panel_name().to_string(), r.method.clone()];
            row.extend(Group::ALL.iter().map(|g| fmt_num(r.values.get(*g))));
            row
        }),
    )?;

    write_rows(
        &dir.join("table3.csv"),
        config_hash,
        &owned(&TABLE3_HEADER),
        report.table3.iter().map(|r| {
            vec![
                r.group.clone(),
                fmt_num(r.calm_usage),
                fmt_num(r.stress_usage),
                fmt_num(r.selected_regret),
                fmt_num(r.miss_best_rate),
            ]
        }),
    )?;

    write_rows(
        &dir.join("table4.csv"),
        config_hash,
        &owned(&TABLE4_HEADER),
        report.table4.iter().map(|r| {
            vec![
                r.method.clone(),
                fmt_num(r.overall_under),
                fmt_num(r.high_under),
                fmt_num(r.tail_under),
                fmt_num(r.tail_qlike),
            ]
        }),
    )?;

    let dm_cells = |d: &Option<super::DmResult>| match d {
        Some(d) => [fmt_num(d.statistic), fmt_num(d.p_value)],
        None => ["NA".to_string(), "NA".to_string()],
    };
    write_rows(
        &dir.join("dm.csv"),
        config_hash,
        &owned(&DM_HEADER),
        report.dm.iter().map(|r| {
            let mut row = vec![r.asset.clone()];
            row.extend(dm_cells(&r.vs_rolling_best));
            row.extend(dm_cells(&r.vs_vix_switch));
            row
        }),
    )?;

    write_rows(
        &dir.join("delta_qlike.csv"),
        config_hash,
        &delta_header(),
        report.delta_qlike.iter().map(|r| {
            let mut row = vec![r.group.clone()];
            row.extend(r.deltas.iter().map(|d| fmt_num(*d)));
            row
        }),
    )?;

    write_rows(
        &dir.join("plotdata_asset_qlike.csv"),
        config_hash,
        &asset_plot_header(),
        report.asset_qlike.iter().map(|r| {
            let mut row = vec![r.asset.clone()];
            row.extend(r.values.iter().map(|v| fmt_num(*v)));
            row
        }),
    )?;

    let path = dir.join("summary.json");
    let summary = Summary {
        config_hash,
        config: config_echo,
        report,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
