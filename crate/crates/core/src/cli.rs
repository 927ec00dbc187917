//! Config-driven commands behind the `sigport` binary.
//!
//! A run config is JSON:
//!
//! ```json
//! {
//!   "data": "prices.csv",
//!   "output_dir": "out",
//!   "start": "2022-03-01",
//!   "end": "2023-12-31",
//!   "seed": 42,
//!   "strategies": [
//!     { "allocator": "EW", "filtered": false, "window": { "kind": "fot" } },
//!     { "allocator": "MDP", "filtered": true, "window": { "kind": "rw", "length_days": 30 },
//!       "k": 4, "level": 4, "fee_rate": 0.002 }
//!   ]
//! }
//! ```
//!
//! Relative `data` and `output_dir` paths resolve against the config file's
//! directory. A fixed-origin window without `origin` starts at the earliest
//! date in the data.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use crate::allocation::{compute_returns, DEFAULT_RIDGE};
use crate::backtest::{
    cluster_universe, rebase_annually, run_backtest, write_rebalances, write_values, write_weights,
    Allocator, BacktestResult, StrategyConfig, DEFAULT_FEE_RATE, DEFAULT_LEVEL,
};
use crate::clustering::{project_2d, DEFAULT_K};
use crate::data::{build_calendar, eligibility, load_prices, scan_prices, PriceStream, WindowPolicy, DEFAULT_RW_DAYS};
use crate::error::{Error, Result};
use crate::metrics::MetricSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum WindowSpec {
    Fot {
        #[serde(default)]
        origin: Option<NaiveDate>,
    },
    Rw {
        #[serde(default = "default_rw_days")]
        length_days: u32,
    },
}

fn default_rw_days() -> u32 {
    DEFAULT_RW_DAYS
}

impl WindowSpec {
    fn resolve(self, data_origin: NaiveDate) -> WindowPolicy {
        match self {
            WindowSpec::Fot { origin } => WindowPolicy::Fot {
                origin: origin.unwrap_or(data_origin),
            },
            WindowSpec::Rw { length_days } => WindowPolicy::Rw { length_days },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategySpec {
    #[serde(default)]
    name: Option<String>,
    allocator: Allocator,
    filtered: bool,
    window: WindowSpec,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_level")]
    level: usize,
    #[serde(default = "default_fee")]
    fee_rate: f64,
    #[serde(default = "default_ridge")]
    ridge: f64,
}

fn default_k() -> usize {
    DEFAULT_K
}
fn default_level() -> usize {
    DEFAULT_LEVEL
}
fn default_fee() -> f64 {
    DEFAULT_FEE_RATE
}
fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    data: PathBuf,
    output_dir: PathBuf,
    start: String,
    end: String,
    #[serde(default)]
    seed: u64,
    strategies: Vec<StrategySpec>,
}

/// A parsed run config. Window origins are resolved once the data is
/// loaded, see [`RunConfig::strategies`].
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub output_dir: PathBuf,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub seed: u64,
    specs: Vec<StrategySpec>,
}

fn parse_date(field: &str, value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|e| Error::config(field, format!("`{value}` is not a YYYY-MM-DD date ({e})")))
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawRunConfig =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let start = parse_date("start", &raw.start)?;
        let end = parse_date("end", &raw.end)?;
        if start >= end {
            return Err(Error::config("end", format!("end {end} must be after start {start}")));
        }
        if raw.strategies.is_empty() {
            return Err(Error::config("strategies", "at least one strategy is required"));
        }
        Ok(RunConfig {
            data: base_dir.join(raw.data),
            output_dir: base_dir.join(raw.output_dir),
            start,
            end,
            seed: raw.seed,
            specs: raw.strategies,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    /// Named strategy configs with windows resolved against the data's
    /// first date. Names must be unique.
    pub fn strategies(&self, data_origin: NaiveDate) -> Result<Vec<(String, StrategyConfig)>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(self.specs.len());
        for (i, spec) in self.specs.iter().enumerate() {
            let cfg = StrategyConfig {
                allocator: spec.allocator,
                filtered: spec.filtered,
                window: spec.window.resolve(data_origin),
                k: spec.k,
                level: spec.level,
                fee_rate: spec.fee_rate,
                seed: self.seed,
                ridge: spec.ridge,
            };
            cfg.validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::config(format!("strategies[{i}].{field}"), reason),
                Error::InvalidPolicy(reason) => Error::config(format!("strategies[{i}].window"), reason),
                other => other,
            })?;
            let name = spec.name.clone().unwrap_or_else(|| cfg.default_name());
            if !seen.insert(name.clone()) {
                return Err(Error::config(format!("strategies[{i}].name"), format!("duplicate strategy name {name}")));
            }
            out.push((name, cfg));
        }
        Ok(out)
    }
}

fn data_origin(streams: &[PriceStream]) -> Result<NaiveDate> {
    streams
        .iter()
        .filter_map(PriceStream::first_date)
        .min()
        .ok_or(Error::EmptyFile)
}

/// One row of `summary.csv`.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub strategy: String,
    pub metrics: MetricSummary,
    pub total_trades: usize,
    pub total_fees: f64,
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["strategy", "ann_return", "ann_vol", "sharpe", "calmar", "mdd", "total_trades", "total_fees"])?;
    for r in rows {
        wtr.write_record([
            r.strategy.clone(),
            r.metrics.annualized_return.to_string(),
            r.metrics.annualized_volatility.to_string(),
            opt(r.metrics.sharpe),
            opt(r.metrics.calmar),
            r.metrics.mdd.to_string(),
            r.total_trades.to_string(),
            r.total_fees.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Files written by [`cmd_backtest`].
#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, written: &mut Vec<PathBuf>, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path)?;
    written.push(path.to_path_buf());
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_all_or_nothing(
    dir: &Path,
    write: impl FnOnce(&mut Vec<PathBuf>) -> Result<()>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match write(&mut written) {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            Err(e)
        }
    }
}

/// Runs every configured strategy and writes per-strategy value, rebased
/// value and rebalance files, `weights.csv` and `summary.csv`.
pub fn cmd_backtest(config: &RunConfig) -> Result<BacktestReport> {
    let streams = load_prices(&config.data)?;
    let strategies = config.strategies(data_origin(&streams)?)?;

    let results: Vec<Result<BacktestResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = strategies
            .iter()
            .map(|(_, cfg)| {
                let streams = &streams;
                scope.spawn(move || run_backtest(cfg, streams, config.start, config.end))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("backtest thread panicked"))
            .collect()
    });

    let mut named = Vec::with_capacity(results.len());
    let mut summary = Vec::with_capacity(results.len());
    for ((name, _), result) in strategies.iter().zip(results) {
        let result = result?;
        let metrics = MetricSummary::from_daily_values(&result.value_series())?;
        summary.push(SummaryRow {
            strategy: name.clone(),
            metrics,
            total_trades: result.total_trades,
            total_fees: result.total_fees,
        });
        named.push((name.clone(), result));
    }

    let dir = &config.output_dir;
    let files = write_all_or_nothing(dir, |written| {
        for (name, result) in &named {
            write_file(&dir.join(format!("values_{name}.csv")), written, |w| write_values(w, &result.values))?;
            write_file(&dir.join(format!("rebased_{name}.csv")), written, |w| {
                write_values(w, &rebase_annually(&result.values))
            })?;
            write_file(&dir.join(format!("rebalances_{name}.csv")), written, |w| write_rebalances(w, result))?;
        }
        let refs: Vec<(String, &BacktestResult)> = named.iter().map(|(n, r)| (n.clone(), r)).collect();
        write_file(&dir.join("weights.csv"), written, |w| write_weights(w, &refs))?;
        write_file(&dir.join("summary.csv"), written, |w| write_summary(w, &summary))
    })?;
    Ok(BacktestReport { summary, files })
}

/// Parses the `--policy` argument.
pub fn parse_policy_tag(tag: &str) -> Result<&'static str> {
    match tag.to_ascii_lowercase().as_str() {
        "fot" => Ok("fot"),
        "rw" => Ok("rw"),
        other => Err(Error::config("policy", format!("expected `fot` or `rw`, got `{other}`"))),
    }
}

/// Writes `clusters_<policy>_<date>.csv` (`symbol,cluster,pc1,pc2,is_representative`)
/// and `returns_<policy>_<date>.csv`, the daily returns of the eligible
/// assets over their common window. Clustering parameters come from the
/// first strategy using the requested window kind (filtered ones first),
/// else from the defaults.
pub fn cmd_clusters(config: &RunConfig, date: NaiveDate, policy_tag: &str) -> Result<Vec<PathBuf>> {
    let tag = parse_policy_tag(policy_tag)?;
    let streams = load_prices(&config.data)?;
    let origin = data_origin(&streams)?;
    let strategies = config.strategies(origin)?;
    let mut candidates: Vec<&StrategyConfig> = strategies
        .iter()
        .map(|(_, c)| c)
        .filter(|c| c.window.tag() == tag)
        .collect();
    candidates.sort_by_key(|c| !c.filtered);
    let cfg = match candidates.first() {
        Some(c) => **c,
        None => {
            let window = match tag {
                "fot" => WindowPolicy::Fot { origin },
                _ => WindowPolicy::Rw { length_days: DEFAULT_RW_DAYS },
            };
            let mut c = StrategyConfig::new(Allocator::EqualWeight, true, window);
            c.seed = config.seed;
            c
        }
    };

    let data_end = streams.iter().filter_map(PriceStream::last_date).max().ok_or(Error::EmptyFile)?;
    let calendar = build_calendar(&streams, config.start, config.end.min(data_end), cfg.window)?;
    let eligible = calendar.eligible_on(date).ok_or_else(|| {
        Error::config("date", format!("{date} is not a rebalance date between {} and {}", config.start, config.end))
    })?;
    let snapshot = cluster_universe(&streams, eligible, date, &cfg.window, cfg.k, cfg.level, cfg.seed)?;
    let points: Vec<Vec<f64>> = snapshot.features.iter().map(|f| f.values.clone()).collect();
    let coords = if points.len() >= 2 { project_2d(&points)? } else { vec![[0.0, 0.0]; points.len()] };
    let reps: BTreeSet<&str> = snapshot.representatives.values().map(String::as_str).collect();

    let mut common_start = NaiveDate::MIN;
    let index: Vec<&PriceStream> = streams.iter().filter(|s| eligible.contains(&s.symbol)).collect();
    for s in &index {
        common_start = common_start.max(eligibility(s, date, &cfg.window)?);
    }
    let returns = compute_returns(&streams, eligible, common_start, date)?;

    let dir = &config.output_dir;
    write_all_or_nothing(dir, |written| {
        write_file(&dir.join(format!("clusters_{tag}_{date}.csv")), written, |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["symbol", "cluster", "pc1", "pc2", "is_representative"])?;
            for ((f, &c), xy) in snapshot.features.iter().zip(&snapshot.assignments).zip(&coords) {
                wtr.write_record([
                    f.symbol.clone(),
                    (c + 1).to_string(),
                    xy[0].to_string(),
                    xy[1].to_string(),
                    reps.contains(f.symbol.as_str()).to_string(),
                ])?;
            }
            wtr.flush()?;
            Ok(())
        })?;
        write_file(&dir.join(format!("returns_{tag}_{date}.csv")), written, |w| {
            let mut wtr = csv::Writer::from_writer(w);
            let mut header = vec!["date".to_string()];
            header.extend(returns.symbols.iter().cloned());
            wtr.write_record(&header)?;
            for (d, row) in returns.dates.iter().zip(&returns.rows) {
                let mut rec = vec![d.to_string()];
                rec.extend(row.iter().map(f64::to_string));
                wtr.write_record(&rec)?;
            }
            wtr.flush()?;
            Ok(())
        })
    })
}

/// Diagnostics of [`cmd_validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub lines: Vec<String>,
    pub issues: usize,
}

/// Reports per-symbol coverage, gaps, duplicates and bad rows of a price file.
pub fn cmd_validate(data: &Path) -> Result<ValidationReport> {
    let file = File::open(data)?;
    let report = scan_prices(file)?;
    let mut lines = Vec::new();
    for c in &report.coverage {
        lines.push(format!("{}: {} .. {} ({} observations)", c.symbol, c.first, c.last, c.observations));
    }
    for issue in &report.issues {
        lines.push(issue.to_string());
    }
    lines.push(format!("{} issues", report.issues.len()));
    Ok(ValidationReport {
        lines,
        issues: report.issues.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_validation() {
        let base = Path::new("/tmp/x");
        let ok = r#"{"data":"p.csv","output_dir":"out","start":"2022-01-01","end":"2022-06-01",
            "strategies":[{"allocator":"EW","filtered":true,"window":{"kind":"rw"}}]}"#;
        let cfg = RunConfig::from_json(ok, base).unwrap();
        assert_eq!(cfg.data, base.join("p.csv"));
        let s = cfg.strategies(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()).unwrap();
        assert_eq!(s[0].0, "PORTFOLIO_SIG_CLUSTER_EW_RW");
        assert_eq!(s[0].1.window, WindowPolicy::Rw { length_days: 30 });
        assert_eq!(s[0].1.k, 4);

        let bad = ok.replace("2022-06-01", "2021-06-01");
        let err = RunConfig::from_json(&bad, base).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("`end`"));

        let bad = ok.replace("2022-01-01", "2022-01-32");
        assert!(RunConfig::from_json(&bad, base).unwrap_err().to_string().contains("`start`"));

        let dup = ok.replace("}}]}", "}},{\"allocator\":\"EW\",\"filtered\":true,\"window\":{\"kind\":\"rw\"}}]}");
        let cfg = RunConfig::from_json(&dup, base).unwrap();
        assert!(cfg.strategies(NaiveDate::MIN).is_err());

        let bad_fee = ok.replace("\"filtered\":true", "\"filtered\":true,\"fee_rate\":0.5");
        let cfg = RunConfig::from_json(&bad_fee, base).unwrap();
        let err = cfg.strategies(NaiveDate::MIN).unwrap_err();
        assert!(err.is_validation() && err.to_string().contains("fee_rate"));
    }

    #[test]
    fn policy_tags() {
        assert_eq!(parse_policy_tag("FOT").unwrap(), "fot");
        assert!(parse_policy_tag("ew").is_err());
    }
}
