//! Flat `key = value` run configuration.
//!
//! Every tunable has a documented default (see [`default_entries`]). A
//! config file may override any of them; unknown keys are rejected. Keys
//! of the fixed schema can also be overridden from the environment as
//! `VOLROUTE_<KEY>` with `.` written as `__`, e.g.
//! `VOLROUTE_ABLATION__NO_HAR_FLOOR=true`.
//!
//! Three key families are open-ended: `data.transform.<COLUMN>`,
//! `gate.alpha.<FEATURE>` and `bindings.<MODEL>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::backtest::{Ablation, RouterSettings, WalkForwardConfig};
use crate::combiner::{GateParams, SpecialistPools};
use crate::error::{Error, Result};
use crate::market_data::{FeatureTransform, MarketConfig};
use crate::routing::ThresholdParams;
use crate::scoring::{KernelParams, LossParams};
use crate::specialists::{Binding, SpecialistSettings, FIGARCH, GARCH_T, GRU, HAR_RV, XGBOOST};

pub const ENV_PREFIX: &str = "VOLROUTE_";
const DEFAULT_EWMA: f64 = 0.94;

const FAMILIES: [&str; 3] = ["data.transform.", "gate.alpha.", "bindings."];

/// The documented defaults, as config text values.
pub fn default_entries() -> BTreeMap<String, String> {
    let walk = WalkForwardConfig::default();
    let th = ThresholdParams::default();
    let k = KernelParams::default();
    let g = GateParams::default();
    let sp = SpecialistSettings::default();
    let pools = SpecialistPools::default();
    let mut m: BTreeMap<String, String> = [
        ("assets", "SPY,QQQ,IWM,EEM,GLD,TLT".to_string()),
        ("seed", "0".into()),
        ("data.dir", "data".into()),
        ("data.ohlc", "{asset}.csv".into()),
        ("data.macro", "macro.csv".into()),
        ("data.vix_column", "VIX".into()),
        ("output.dir", "out".into()),
        ("report.ablations", "true".into()),
        ("market.variance_floor", "1e-12".into()),
        ("market.state_window", "504".into()),
        (
            "loss.lambda_under",
            LossParams::default().lambda_under.to_string(),
        ),
        ("kernel.gamma_time", k.gamma_time.to_string()),
        ("kernel.gamma_reg", k.gamma_reg.to_string()),
        ("kernel.history_len", k.history_len.to_string()),
        ("routing.alpha", th.alpha.to_string()),
        ("routing.eta_cap", th.eta_cap.to_string()),
        ("routing.n0", th.n0.to_string()),
        ("routing.window", th.window.to_string()),
        ("routing.min_observations", th.min_observations.to_string()),
        ("routing.cap_calm", th.cap_calm.to_string()),
        ("routing.cap_stressed", th.cap_stressed.to_string()),
        ("gate.c0", g.c0.to_string()),
        ("gate.rho", g.rho.to_string()),
        ("gate.kappa", g.kappa.to_string()),
        ("gate.c", g.c.to_string()),
        ("gate.b", g.b.to_string()),
        ("gate.p_floor", g.p_floor.to_string()),
        ("gate.d_floor", g.d_floor.to_string()),
        ("gate.epsilon", g.epsilon.to_string()),
        ("gate.winsor_lo", g.winsor_lo.to_string()),
        ("gate.winsor_hi", g.winsor_hi.to_string()),
        ("gate.stress_quantile", g.stress_quantile.to_string()),
        ("pools.calm", pools.calm.join(",")),
        ("pools.stress", pools.stress.join(",")),
        ("specialists.figarch_lags", sp.figarch_lags.to_string()),
        ("specialists.max_evals", sp.max_evals.to_string()),
        ("specialists.f_tol", sp.f_tol.to_string()),
        ("walk.min_history", walk.min_history.to_string()),
        ("walk.train_window", walk.train_window.to_string()),
        (
            "walk.slow_retrain_every",
            walk.slow_retrain_every.to_string(),
        ),
        ("walk.benchmark_window", walk.benchmark_window.to_string()),
        (
            "walk.static_selection_window",
            walk.static_selection_window.to_string(),
        ),
        ("walk.vix_threshold", walk.vix_threshold.to_string()),
        ("ablation.no_risk_sensitive", "false".into()),
        ("ablation.no_high_tilt", "false".into()),
        ("ablation.no_har_floor", "false".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    for (feature, w) in &g.alpha {
        m.insert(format!("gate.alpha.{feature}"), w.to_string());
    }
    for (model, b) in [
        (HAR_RV, "native"),
        (GARCH_T, "native"),
        (FIGARCH, "native"),
        (GRU, "ewma:0.94"),
        (XGBOOST, "ewma:0.97"),
    ] {
        m.insert(format!("bindings.{model}"), b.to_string());
    }
    m
}

fn is_known(key: &str, defaults: &BTreeMap<String, String>) -> bool {
    defaults.contains_key(key)
        || FAMILIES
            .iter()
            .any(|f| key.strip_prefix(f).is_some_and(|rest| !rest.is_empty()))
}

/// Parse `key = value` lines; `#` starts a comment line.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(
                &format!("line {}", i + 1),
                format!("expected `key = value`, got `{line}`"),
            )
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::config(&format!("line {}", i + 1), "empty key"));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(Error::config(&key, "duplicate key"));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub assets: Vec<String>,
    pub seed: u64,
    pub data_dir: PathBuf,
    /// OHLC file name pattern inside `data_dir`; `{asset}` is substituted.
    pub ohlc_pattern: String,
    pub macro_file: PathBuf,
    pub output_dir: PathBuf,
    pub report_ablations: bool,
    pub market: MarketConfig,
    pub specialists: SpecialistSettings,
    pub bindings: BTreeMap<String, Binding>,
    pub router: RouterSettings,
    echo: BTreeMap<String, String>,
}

struct Reader<'a> {
    entries: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.entries
            .get(key)
            .map(String::as_str)
            .unwrap_or_default()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse::<T>().map_err(|_| {
            Error::config(
                key,
                format!("cannot parse `{v}` as {}", std::any::type_name::<T>()),
            )
        })
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    fn family<'p>(&'p self, prefix: &'p str) -> impl Iterator<Item = (&'p str, &'p str)> + 'p {
        self.entries
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|name| (name, v.as_str())))
    }
}

fn check(cond: bool, key: &str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(key, reason))
    }
}

impl RunConfig {
    /// Load a config file, apply environment overrides and validate.
    /// Relative data and output paths are resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let env: Vec<(String, String)> = std::env::vars().collect();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_sources(&text, &env, base)
    }

    /// Build from config text and `(name, value)` environment pairs.
    pub fn from_sources(text: &str, env: &[(String, String)], base: &Path) -> Result<Self> {
        let defaults = default_entries();
        let mut entries = defaults.clone();
        for (k, v) in parse_entries(text)? {
            if !is_known(&k, &defaults) {
                return Err(Error::config(&k, "unknown key"));
            }
            entries.insert(k, v);
        }
        for (name, value) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = rest.to_ascii_lowercase().replace("__", ".");
            if !defaults.contains_key(&key) || FAMILIES.iter().any(|f| key.starts_with(f)) {
                return Err(Error::config(
                    name,
                    "environment override for an unknown key",
                ));
            }
            entries.insert(key, value.trim().to_string());
        }
        Self::from_entries(entries, base)
    }

    fn from_entries(entries: BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let r = Reader { entries: &entries };
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let assets = r.list("assets");
        check(
            !assets.is_empty(),
            "assets",
            "at least one asset is required",
        )?;

        let mut transforms = BTreeMap::new();
        for (col, v) in r.family("data.transform.") {
            let key = format!("data.transform.{col}");
            let tf = v
                .parse::<FeatureTransform>()
                .map_err(|e| Error::config(&key, e.to_string()))?;
            transforms.insert(col.to_string(), tf);
        }
        let market = MarketConfig {
            variance_floor: r.get("market.variance_floor")?,
            state_window: r.get("market.state_window")?,
            transforms,
            vix_column: r.raw("data.vix_column").to_string(),
        };
        check(
            market.variance_floor > 0.0,
            "market.variance_floor",
            "must be positive",
        )?;

        let walk = WalkForwardConfig {
            min_history: r.get("walk.min_history")?,
            train_window: r.get("walk.train_window")?,
            slow_retrain_every: r.get("walk.slow_retrain_every")?,
            benchmark_window: r.get("walk.benchmark_window")?,
            static_selection_window: r.get("walk.static_selection_window")?,
            vix_threshold: r.get("walk.vix_threshold")?,
        };
        walk.validate()?;
        check(
            market.state_window >= 2 && market.state_window <= walk.min_history + 1,
            "market.state_window",
            "must lie in [2, walk.min_history + 1] so states exist on the first forecast date",
        )?;

        let loss = LossParams {
            lambda_under: r.get("loss.lambda_under")?,
        };
        check(
            loss.lambda_under >= 0.0,
            "loss.lambda_under",
            "must be nonnegative",
        )?;

        let kernel = KernelParams {
            gamma_time: r.get("kernel.gamma_time")?,
            gamma_reg: r.get("kernel.gamma_reg")?,
            history_len: r.get("kernel.history_len")?,
        };
        check(
            kernel.gamma_time >= 0.0,
            "kernel.gamma_time",
            "must be nonnegative",
        )?;
        check(
            kernel.gamma_reg > 0.0,
            "kernel.gamma_reg",
            "must be positive",
        )?;
        check(
            kernel.history_len > 0,
            "kernel.history_len",
            "must be positive",
        )?;

        let threshold = ThresholdParams {
            alpha: r.get("routing.alpha")?,
            eta_cap: r.get("routing.eta_cap")?,
            n0: r.get("routing.n0")?,
            window: r.get("routing.window")?,
            min_observations: r.get("routing.min_observations")?,
            cap_calm: r.get("routing.cap_calm")?,
            cap_stressed: r.get("routing.cap_stressed")?,
        };
        check(
            threshold.alpha > 0.0 && threshold.alpha < 1.0,
            "routing.alpha",
            "must lie in (0, 1)",
        )?;
        check(
            (0.0..=1.0).contains(&threshold.eta_cap),
            "routing.eta_cap",
            "must lie in [0, 1]",
        )?;
        check(threshold.n0 > 0.0, "routing.n0", "must be positive")?;
        check(threshold.window > 0, "routing.window", "must be positive")?;
        check(
            threshold.cap_calm >= 1,
            "routing.cap_calm",
            "must be at least 1",
        )?;
        check(
            threshold.cap_stressed >= 1,
            "routing.cap_stressed",
            "must be at least 1",
        )?;

        let mut alpha = BTreeMap::new();
        for (feature, _) in r.family("gate.alpha.") {
            alpha.insert(
                feature.to_string(),
                r.get::<f64>(&format!("gate.alpha.{feature}"))?,
            );
        }
        let gate = GateParams {
            alpha,
            c0: r.get("gate.c0")?,
            rho: r.get("gate.rho")?,
            kappa: r.get("gate.kappa")?,
            c: r.get("gate.c")?,
            b: r.get("gate.b")?,
            p_floor: r.get("gate.p_floor")?,
            d_floor: r.get("gate.d_floor")?,
            epsilon: r.get("gate.epsilon")?,
            winsor_lo: r.get("gate.winsor_lo")?,
            winsor_hi: r.get("gate.winsor_hi")?,
            stress_quantile: r.get("gate.stress_quantile")?,
            har_floor: true,
        };
        gate.validate()?;
        check(
            0.0 <= gate.winsor_lo && gate.winsor_lo <= gate.winsor_hi && gate.winsor_hi <= 1.0,
            "gate.winsor_lo",
            "need 0 <= winsor_lo <= winsor_hi <= 1",
        )?;
        check(
            (0.0..=1.0).contains(&gate.stress_quantile),
            "gate.stress_quantile",
            "must lie in [0, 1]",
        )?;
        check(gate.epsilon > 0.0, "gate.epsilon", "must be positive")?;

        let pools = SpecialistPools {
            calm: r.list("pools.calm"),
            stress: r.list("pools.stress"),
        };
        check(!pools.calm.is_empty(), "pools.calm", "empty pool")?;
        check(!pools.stress.is_empty(), "pools.stress", "empty pool")?;

        let mut bindings = BTreeMap::new();
        for (model, v) in r.family("bindings.") {
            let key = format!("bindings.{model}");
            let b = match Binding::parse(v, DEFAULT_EWMA).map_err(|e| Error::config(&key, e))? {
                Binding::External { path } => Binding::External {
                    path: resolve(path).display().to_string(),
                },
                b => b,
            };
            bindings.insert(model.to_string(), b);
        }
        for m in crate::backtest::model_universe(&pools) {
            check(
                bindings.contains_key(&m),
                &format!("bindings.{m}"),
                "pool model has no binding",
            )?;
        }

        let specialists = SpecialistSettings {
            train_window: walk.train_window,
            figarch_lags: r.get("specialists.figarch_lags")?,
            max_evals: r.get("specialists.max_evals")?,
            f_tol: r.get("specialists.f_tol")?,
        };
        check(
            specialists.figarch_lags > 0,
            "specialists.figarch_lags",
            "must be positive",
        )?;
        check(
            specialists.max_evals > 0,
            "specialists.max_evals",
            "must be positive",
        )?;

        let ablation = Ablation {
            no_risk_sensitive: r.get("ablation.no_risk_sensitive")?,
            no_high_tilt: r.get("ablation.no_high_tilt")?,
            no_har_floor: r.get("ablation.no_har_floor")?,
        };

        Ok(RunConfig {
            assets,
            seed: r.get("seed")?,
            data_dir: resolve(r.raw("data.dir").to_string()),
            ohlc_pattern: r.raw("data.ohlc").to_string(),
            macro_file: PathBuf::from(r.raw("data.macro")),
            output_dir: resolve(r.raw("output.dir").to_string()),
            report_ablations: r.get("report.ablations")?,
            market,
            specialists,
            bindings,
            router: RouterSettings {
                loss,
                kernel,
                threshold,
                gate,
                pools,
                walk,
                ablation,
            },
            echo: entries.clone(),
        })
    }

    pub fn ohlc_path(&self, asset: &str) -> PathBuf {
        self.data_dir
            .join(self.ohlc_pattern.replace("{asset}", asset))
    }

    pub fn macro_path(&self) -> PathBuf {
        self.data_dir.join(&self.macro_file)
    }

    /// Restrict the run to `assets` (command-line filter).
    pub fn select_assets(&mut self, assets: Vec<String>) {
        self.echo.insert("assets".into(), assets.join(","));
        self.assets = assets;
    }

    pub fn set_output_dir(&mut self, dir: PathBuf) {
        self.echo
            .insert("output.dir".into(), dir.display().to_string());
        self.output_dir = dir;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.echo.insert("seed".into(), seed.to_string());
        self.seed = seed;
    }

    /// Effective key/value pairs, sorted by key.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.echo
    }

    pub fn canonical_text(&self) -> String {
        render_entries(&self.echo)
    }

    /// SHA-256 of the canonical echo, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn render_entries(entries: &BTreeMap<String, String>) -> String {
    entries
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<RunConfig> {
        RunConfig::from_sources(text, &[], Path::new("/cfg"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = load("").unwrap();
        assert_eq!(c.router, RouterSettings::default());
        assert_eq!(c.router.threshold, ThresholdParams::default());
        assert_eq!(c.router.gate, GateParams::default());
        assert_eq!(c.router.kernel, KernelParams::default());
        assert_eq!(c.market.state_window, 504);
        assert_eq!(c.assets.len(), 6);
        assert_eq!(c.bindings[GRU], Binding::Ewma { lambda: 0.94 });
        assert_eq!(c.data_dir, PathBuf::from("/cfg/data"));
        assert_eq!(c.ohlc_path("SPY"), PathBuf::from("/cfg/data/SPY.csv"));
    }

    #[test]
    fn defaults_round_trip_through_text() {
        let text = render_entries(&default_entries());
        let c = load(&text).unwrap();
        assert_eq!(c.hash(), load("").unwrap().hash());
    }

    #[test]
    fn constraint_violations_name_the_key() {
        let err = load("routing.alpha = 1.5").unwrap_err();
        assert!(
            matches!(&err, Error::Config { key, .. } if key == "routing.alpha"),
            "{err}"
        );
        let err = load("gate.b = 0").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "gate.b"));
        let err = load("walk.min_history = ten").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "walk.min_history"));
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(
            matches!(load("routing.alpah = 0.1"), Err(Error::Config { key, .. }) if key == "routing.alpah")
        );
        assert!(load("seed = 1\nseed = 2").is_err());
        assert!(load("no equals sign").is_err());
        assert!(load("bindings. = native").is_err());
    }

    #[test]
    fn ablation_switch_reaches_the_router() {
        let c = load("ablation.no_har_floor = true").unwrap();
        assert!(c.router.ablation.no_har_floor);
        assert!(!c.router.effective_gate().har_floor);
    }

    #[test]
    fn families_and_lists() {
        let c = load(
            "# comment\nassets = SPY\npools.calm = GRU, HAR-RV\nbindings.GRU = external:fc/{asset}_gru.csv\n\
             gate.alpha.TERM = -0.5\ndata.transform.VIX = log\n",
        )
        .unwrap();
        assert_eq!(c.assets, vec!["SPY"]);
        assert_eq!(c.router.pools.calm, vec!["GRU", "HAR-RV"]);
        assert_eq!(c.router.gate.alpha["TERM"], -0.5);
        assert_eq!(c.router.gate.alpha["VIX"], 1.0);
        assert_eq!(c.market.transforms["VIX"], FeatureTransform::Log);
        assert_eq!(
            c.bindings[GRU],
            Binding::External {
                path: "/cfg/fc/{asset}_gru.csv".into()
            }
        );
        assert!(load("pools.calm = LSTM").is_err());
        assert!(load("pools.calm = LSTM\nbindings.LSTM = ewma:0.9").is_ok());
    }

    #[test]
    fn environment_overrides_fixed_keys() {
        let env = vec![
            (
                "VOLROUTE_ROUTING__CAP_STRESSED".to_string(),
                "3".to_string(),
            ),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = RunConfig::from_sources("", &env, Path::new(".")).unwrap();
        assert_eq!(c.router.threshold.cap_stressed, 3);
        assert_eq!(c.echo()["routing.cap_stressed"], "3");
        let bad = vec![("VOLROUTE_NOPE".to_string(), "1".to_string())];
        assert!(RunConfig::from_sources("", &bad, Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = load("").unwrap();
        let b = load("gate.kappa = 0.3").unwrap();
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), b.hash());
        assert!(a.canonical_text().contains("routing.alpha = 0.1\n"));
    }

    #[test]
    fn state_window_must_fit_history() {
        assert!(load("market.state_window = 600").is_err());
        assert!(load("walk.min_history = 400\nwalk.train_window = 504").is_err());
    }
}
