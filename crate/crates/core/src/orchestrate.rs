//! End-to-end runs: per-asset pipelines, output files and report
//! aggregation.
//!
//! Layout of an output directory:
//!
//! ```text
//! <out>/config.txt                 effective configuration
//! <out>/<ASSET>/forecasts.csv      date,realized,method,forecast,active,refit
//! <out>/<ASSET>/losses.csv         date,realized,method,kind,forecast,qlike,under,total
//! <out>/<ASSET>/routing_log.csv    per-date routing and combination trace
//! <out>/table*.csv, dm.csv, ...    report tables (see `evaluation::report`)
//! ```
//!
//! Every file starts with a `# config_hash=<hex>` line. Floats are written
//! in shortest round-trip form so `report` reproduces the in-memory tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;
use tracing::{error, info};

use crate::backtest::{
    forecast_specialists, model_universe, route_and_combine, Ablation, DailyRecord, MethodLoss,
    SpecialistTable, PROPOSED, ROLLING_BEST, STATIC_BEST, VIX_SWITCH,
};
use crate::config::{parse_entries, render_entries, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::report::{hashed_csv, write_report};
use crate::evaluation::{build_report, eval_rows, AssetRecords, EvalRow, EvaluationReport};
use crate::market_data::{build_panel, read_macro_csv, read_ohlc_csv, MacroTable};
use crate::specialists::build_model;

pub const FORECASTS_HEADER: [&str; 6] =
    ["date", "realized", "method", "forecast", "active", "refit"];
pub const LOSSES_HEADER: [&str; 8] = [
    "date", "realized", "method", "kind", "forecast", "qlike", "under", "total",
];
pub const ROUTING_LOG_HEADER: [&str; 25] = [
    "date",
    "tau_global",
    "tau_local",
    "eta",
    "tau",
    "stressed",
    "set",
    "fallback_used",
    "y_calm",
    "y_stress",
    "y_combo",
    "y_low",
    "y_high",
    "p",
    "omega",
    "D",
    "floor_applied",
    "y_final",
    "warmup",
    "calm_used",
    "stress_used",
    "degraded",
    "rolling_best",
    "static_best",
    "vix_switch",
];

const CONFIG_FILE: &str = "config.txt";
const HASH_PREFIX: &str = "# config_hash=";
const BASELINES: [&str; 4] = [PROPOSED, ROLLING_BEST, STATIC_BEST, VIX_SWITCH];

/// Results of one asset: the specialist table, the main run and the
/// ablation variants routed from the same table.
#[derive(Debug, Clone)]
pub struct AssetRun {
    pub asset: String,
    pub table: SpecialistTable,
    pub records: Vec<DailyRecord>,
    pub variants: Vec<(String, Vec<DailyRecord>)>,
}

impl AssetRun {
    pub fn eval_records(&self) -> Result<AssetRecords> {
        let variants: Vec<(&str, &[DailyRecord])> = self
            .variants
            .iter()
            .map(|(l, r)| (l.as_str(), r.as_slice()))
            .collect();
        Ok(AssetRecords {
            asset: self.asset.clone(),
            rows: eval_rows(&self.records, &variants)?,
        })
    }
}

pub fn run_asset(config: &RunConfig, asset: &str, macro_table: &MacroTable) -> Result<AssetRun> {
    let bars = read_ohlc_csv(&config.ohlc_path(asset))?;
    let panel = build_panel(asset, &bars, macro_table, &config.market)?;
    let router = &config.router;
    let mut models = model_universe(&router.pools)
        .iter()
        .map(|m| {
            let binding = config
                .bindings
                .get(m)
                .ok_or_else(|| Error::config(&format!("bindings.{m}"), "missing binding"))?;
            build_model(m, binding, asset, &config.specialists)
        })
        .collect::<Result<Vec<_>>>()?;
    info!(asset, rows = panel.len(), "forecasting specialists");
    let table = forecast_specialists(&panel, &mut models, &router.walk)?;
    let records = route_and_combine(&panel, &table, router)?;
    let mut variants = Vec::new();
    if config.report_ablations {
        for (label, ablation) in Ablation::VARIANTS {
            let recs = route_and_combine(&panel, &table, &router.with_ablation(ablation))?;
            variants.push((label.to_string(), recs));
        }
    }
    Ok(AssetRun {
        asset: asset.to_string(),
        table,
        records,
        variants,
    })
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

struct Sink {
    path: PathBuf,
    w: csv::Writer<std::fs::File>,
}

impl Sink {
    fn create(path: PathBuf, hash: &str, header: &[&str]) -> Result<Self> {
        let mut w = hashed_csv(&path, hash)?;
        w.write_record(header).map_err(|e| Error::csv(&path, e))?;
        Ok(Self { path, w })
    }

    fn row(&mut self, cells: Vec<String>) -> Result<()> {
        self.w
            .write_record(&cells)
            .map_err(|e| Error::csv(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn loss_cells(
    date: NaiveDate,
    realized: f64,
    method: &str,
    kind: &str,
    l: &MethodLoss,
) -> Vec<String> {
    vec![
        date.to_string(),
        num(realized),
        method.to_string(),
        kind.to_string(),
        num(l.forecast),
        num(l.qlike),
        num(l.under),
        num(l.total),
    ]
}

/// Write `forecasts.csv`, `losses.csv` and `routing_log.csv` under `dir`.
pub fn write_asset_outputs(dir: &Path, run: &AssetRun, hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows_by_t: BTreeMap<usize, usize> = run
        .table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.t, i))
        .collect();

    let mut fc = Sink::create(dir.join("forecasts.csv"), hash, &FORECASTS_HEADER)?;
    for r in &run.records {
        let row = rows_by_t
            .get(&r.t)
            .map(|&i| &run.table.rows[i])
            .ok_or_else(|| Error::Protocol(format!("no specialist row for {}", r.date)))?;
        for (j, m) in run.table.models.iter().enumerate() {
            fc.row(vec![
                r.date.to_string(),
                num(r.realized),
                m.clone(),
                opt_num(row.forecasts[j]),
                row.forecasts[j].is_some().to_string(),
                row.refit[j].to_string(),
            ])?;
        }
        for m in BASELINES {
            fc.row(vec![
                r.date.to_string(),
                num(r.realized),
                m.to_string(),
                num(r.losses[m].forecast),
                "true".into(),
                "false".into(),
            ])?;
        }
    }
    fc.finish()?;

    let mut ls = Sink::create(dir.join("losses.csv"), hash, &LOSSES_HEADER)?;
    for (i, r) in run.records.iter().enumerate() {
        for (m, l) in &r.losses {
            let kind = if r.forecasts.contains_key(m) {
                "model"
            } else {
                "method"
            };
            ls.row(loss_cells(r.date, r.realized, m, kind, l))?;
        }
        for (label, recs) in &run.variants {
            let v = &recs[i];
            ls.row(loss_cells(
                r.date,
                r.realized,
                label,
                "ablation",
                &v.losses[PROPOSED],
            ))?;
        }
    }
    ls.finish()?;

    let mut log = Sink::create(dir.join("routing_log.csv"), hash, &ROUTING_LOG_HEADER)?;
    for r in &run.records {
        let d = &r.decision;
        let c = &r.trace;
        log.row(vec![
            r.date.to_string(),
            num(d.tau_global),
            num(d.tau_local),
            num(d.eta),
            num(d.tau),
            d.stressed.to_string(),
            d.routing_set.join("|"),
            d.fallback_used.to_string(),
            num(c.y_calm),
            num(c.y_stress),
            num(c.y_combo),
            num(c.y_low),
            num(c.y_high),
            num(c.p),
            num(c.omega),
            num(c.d),
            c.floor_applied.to_string(),
            num(c.y_final),
            d.warmup.to_string(),
            r.calm_used.to_string(),
            r.stress_used.to_string(),
            c.degraded.to_string(),
            r.rolling_best.clone(),
            r.static_best.clone(),
            r.vix_switch.clone(),
        ])?;
    }
    log.finish()
}

#[derive(Debug, Deserialize)]
struct LossLine {
    date: NaiveDate,
    realized: f64,
    method: String,
    kind: String,
    forecast: f64,
    qlike: f64,
    under: f64,
    total: f64,
}

#[derive(Debug, Deserialize)]
struct LogLine {
    date: NaiveDate,
    set: String,
    calm_used: bool,
    stress_used: bool,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// Rebuild the evaluation rows of one asset from its output directory.
pub fn read_asset_records(dir: &Path, asset: &str) -> Result<AssetRecords> {
    let losses: Vec<LossLine> = read_rows(&dir.join("losses.csv"))?;
    let log: Vec<LogLine> = read_rows(&dir.join("routing_log.csv"))?;
    let mut rows: BTreeMap<NaiveDate, EvalRow> = log
        .into_iter()
        .map(|l| {
            let set = l
                .set
                .split('|')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            (
                l.date,
                EvalRow {
                    date: l.date,
                    realized: f64::NAN,
                    model_losses: BTreeMap::new(),
                    method_losses: BTreeMap::new(),
                    routing_set: set,
                    calm_used: l.calm_used,
                    stress_used: l.stress_used,
                },
            )
        })
        .collect();
    for l in losses {
        let row = rows.get_mut(&l.date).ok_or_else(|| {
            Error::InvalidInput(format!(
                "{asset}: loss row on {} has no routing-log entry",
                l.date
            ))
        })?;
        row.realized = l.realized;
        let loss = MethodLoss {
            forecast: l.forecast,
            qlike: l.qlike,
            under: l.under,
            total: l.total,
        };
        match l.kind.as_str() {
            "model" => row.model_losses.insert(l.method, loss),
            "method" | "ablation" => row.method_losses.insert(l.method, loss),
            other => {
                return Err(Error::InvalidInput(format!(
                    "{asset}: unknown loss kind `{other}`"
                )));
            }
        };
    }
    if let Some(r) = rows.values().find(|r| r.realized.is_nan()) {
        return Err(Error::InvalidInput(format!(
            "{asset}: no losses recorded on {}",
            r.date
        )));
    }
    Ok(AssetRecords {
        asset: asset.to_string(),
        rows: rows.into_values().collect(),
    })
}

/// Ablation labels present in the rows, in canonical order.
fn ablation_labels(assets: &[AssetRecords]) -> Vec<String> {
    Ablation::VARIANTS
        .iter()
        .map(|(l, _)| l.to_string())
        .filter(|l| {
            assets
                .iter()
                .any(|a| a.rows.iter().any(|r| r.method_losses.contains_key(l)))
        })
        .collect()
}

pub fn write_config_echo(dir: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    let text = format!(
        "{HASH_PREFIX}{}\n{}",
        config.hash(),
        config.canonical_text()
    );
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Read back `config.txt`: the hash and the effective key/value pairs.
pub fn read_config_echo(dir: &Path) -> Result<(String, BTreeMap<String, String>)> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let hash = text
        .lines()
        .find_map(|l| l.strip_prefix(HASH_PREFIX))
        .ok_or_else(|| Error::InvalidInput(format!("{} has no config hash line", path.display())))?
        .trim()
        .to_string();
    let echo: BTreeMap<String, String> = parse_entries(&text)?.into_iter().collect();
    Ok((hash, echo))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub completed: Vec<String>,
    pub failures: Vec<(String, Error)>,
    pub report: Option<EvaluationReport>,
}

impl RunOutcome {
    /// 0 on success, 1 if every failure is an input error, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else if self.failures.iter().all(|(_, e)| e.is_input_error()) {
            1
        } else {
            2
        }
    }
}

/// Run every configured asset, write per-asset outputs and the report.
/// A failing asset is logged and skipped; the rest still complete.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let out = &config.output_dir;
    write_config_echo(out, config)?;
    let hash = config.hash();
    let macro_table = read_macro_csv(&config.macro_path())?;

    let mut completed = Vec::new();
    let mut failures = Vec::new();
    let mut records = Vec::new();
    for asset in &config.assets {
        let result = run_asset(config, asset, &macro_table).and_then(|run| {
            write_asset_outputs(&out.join(asset), &run, &hash)?;
            run.eval_records()
        });
        match result {
            Ok(r) => {
                info!(
                    asset = asset.as_str(),
                    dates = r.rows.len(),
                    "asset complete"
                );
                completed.push(asset.clone());
                records.push(r);
            }
            Err(e) => {
                error!(asset = asset.as_str(), error = %e, "asset failed");
                failures.push((asset.clone(), e));
            }
        }
    }

    let report = if records.is_empty() {
        None
    } else {
        let missing: Vec<String> = failures.iter().map(|(a, _)| a.clone()).collect();
        let report = build_report(&records, &missing, &ablation_labels(&records))?;
        write_report(out, &report, &hash, config.echo())?;
        Some(report)
    };
    Ok(RunOutcome {
        completed,
        failures,
        report,
    })
}

/// Rebuild the report tables from a previous run's output directory and
/// rewrite them there.
pub fn report_from_dir(dir: &Path) -> Result<EvaluationReport> {
    let (hash, echo) = read_config_echo(dir)?;
    let assets: Vec<String> = echo
        .get("assets")
        .map(|a| {
            a.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for asset in assets {
        let sub = dir.join(&asset);
        if sub.join("losses.csv").is_file() {
            records.push(read_asset_records(&sub, &asset)?);
        } else {
            missing.push(asset);
        }
    }
    let report = build_report(&records, &missing, &ablation_labels(&records))?;
    write_report(dir, &report, &hash, &echo)?;
    Ok(report)
}

/// Config text for data written by `write_synthetic`: every default plus
/// the data location and the synthetic asset list.
pub fn synthetic_config_text(assets: &[String], seed: u64) -> String {
    let mut entries = crate::config::default_entries();
    entries.insert("assets".into(), assets.join(","));
    entries.insert("data.dir".into(), ".".into());
    entries.insert("output.dir".into(), "run".into());
    entries.insert("seed".into(), seed.to_string());
    render_entries(&entries)
}
