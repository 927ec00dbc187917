//! Weekly rebalancing loop with buy-and-hold drift and proportional fees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::allocation::{
    compute_returns, equal_weight, estimate_covariance, max_diversification, min_variance,
    WeightVector, DEFAULT_RIDGE, MIN_RETURN_ROWS,
};
use crate::clustering::{kmeans_fit, select_representatives, standardize, ClusterModel, KMeansParams};
use crate::data::{build_calendar, eligibility, window_slice, PriceStream, WindowPolicy};
use crate::error::{Error, Result};
use crate::signature::{asset_features, FeatureVector};

pub const DEFAULT_FEE_RATE: f64 = 0.0020;
pub const DEFAULT_LEVEL: usize = 4;

const FEE_MAX_ITER: usize = 50;
const FEE_TOL: f64 = 1e-14;
const NO_TRADE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Allocator {
    #[serde(rename = "EW")]
    EqualWeight,
    #[serde(rename = "MVP")]
    MinVariance,
    #[serde(rename = "MDP")]
    MaxDiversification,
}

impl fmt::Display for Allocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Allocator::EqualWeight => "EW",
            Allocator::MinVariance => "MVP",
            Allocator::MaxDiversification => "MDP",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub allocator: Allocator,
    /// Keep only one representative per signature cluster.
    pub filtered: bool,
    pub window: WindowPolicy,
    pub k: usize,
    pub level: usize,
    pub fee_rate: f64,
    pub seed: u64,
    pub ridge: f64,
}

impl StrategyConfig {
    pub fn new(allocator: Allocator, filtered: bool, window: WindowPolicy) -> Self {
        StrategyConfig {
            allocator,
            filtered,
            window,
            k: crate::clustering::DEFAULT_K,
            level: DEFAULT_LEVEL,
            fee_rate: DEFAULT_FEE_RATE,
            seed: 0,
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.01).contains(&self.fee_rate) {
            return Err(Error::config("fee_rate", format!("{} is outside [0, 0.01]", self.fee_rate)));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.level == 0 {
            return Err(Error::config("level", "must be at least 1"));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::config("ridge", "must be non-negative"));
        }
        self.window.validate()
    }

    /// Label in the `PORTFOLIO_SIG_CLUSTER_EW_FOT` style. Unfiltered
    /// fixed-origin runs are the plain `PORTFOLIO_EW` baselines.
    pub fn default_name(&self) -> String {
        let window = match self.window {
            WindowPolicy::Fot { .. } => "FOT",
            WindowPolicy::Rw { .. } => "RW",
        };
        match (self.filtered, self.window) {
            (true, _) => format!("PORTFOLIO_SIG_CLUSTER_{}_{window}", self.allocator),
            (false, WindowPolicy::Fot { .. }) => format!("PORTFOLIO_{}", self.allocator),
            (false, WindowPolicy::Rw { .. }) => format!("PORTFOLIO_{}_{window}", self.allocator),
        }
    }
}

/// Units held per symbol plus idle cash.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Holdings {
    pub units: BTreeMap<String, f64>,
    pub cash: f64,
}

impl Holdings {
    pub fn cash(amount: f64) -> Self {
        Holdings {
            units: BTreeMap::new(),
            cash: amount,
        }
    }

    pub fn value(&self, prices: &BTreeMap<String, f64>) -> Result<f64> {
        let mut v = self.cash;
        for (sym, &u) in &self.units {
            let p = prices.get(sym).ok_or_else(|| Error::UnknownSymbol(sym.clone()))?;
            v += u * p;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceOutcome {
    pub holdings: Holdings,
    pub fee: f64,
    pub turnover: f64,
    pub trades: usize,
}

fn is_unchanged(old: f64, new: f64) -> bool {
    (new - old).abs() <= NO_TRADE_REL * old.abs().max(new.abs())
}

/// Moves `holdings` to `target` weights at `prices`, paying
/// `fee_rate × turnover` out of the portfolio. The post-fee value that the
/// targets are sized against is found by fixed-point iteration, since the
/// turnover itself depends on it.
pub fn apply_rebalance(
    holdings: &Holdings,
    target: &WeightVector,
    prices: &BTreeMap<String, f64>,
    fee_rate: f64,
) -> Result<RebalanceOutcome> {
    let v_pre = holdings.value(prices)?;
    let mut symbols: BTreeSet<&str> = holdings
        .units
        .iter()
        .filter(|(_, &u)| u > 0.0)
        .map(|(s, _)| s.as_str())
        .collect();
    symbols.extend(target.symbols().iter().map(String::as_str));

    let legs: Vec<(&str, f64, f64, f64)> = symbols
        .into_iter()
        .map(|s| {
            let p = *prices.get(s).ok_or_else(|| Error::UnknownSymbol(s.to_string()))?;
            if !(p > 0.0) {
                return Err(Error::InvalidArgument(format!("non-positive price for {s}")));
            }
            let old = holdings.units.get(s).copied().unwrap_or(0.0);
            Ok((s, target.get(s).unwrap_or(0.0), old, p))
        })
        .collect::<Result<_>>()?;

    let turnover_at = |v_post: f64| -> f64 {
        legs.iter()
            .map(|&(_, w, old, p)| {
                let new = w * v_post / p;
                if is_unchanged(old, new) {
                    0.0
                } else {
                    (w * v_post - old * p).abs()
                }
            })
            .sum()
    };

    let mut v_post = v_pre;
    for _ in 0..FEE_MAX_ITER {
        let next = v_pre - fee_rate * turnover_at(v_post);
        let done = (next - v_post).abs() <= FEE_TOL * v_pre;
        v_post = next;
        if done {
            break;
        }
    }
    let turnover = turnover_at(v_post);
    let fee = fee_rate * turnover;
    let v_post = v_pre - fee;
    if !(v_post > 0.0) {
        return Err(Error::InfeasibleRebalance { fee, value: v_pre });
    }

    let mut units = BTreeMap::new();
    let mut trades = 0;
    for &(s, w, old, p) in &legs {
        let new = w * v_post / p;
        let kept = if is_unchanged(old, new) {
            old
        } else {
            trades += 1;
            new
        };
        if kept > 0.0 {
            units.insert(s.to_string(), kept);
        }
    }
    Ok(RebalanceOutcome {
        holdings: Holdings { units, cash: 0.0 },
        fee,
        turnover,
        trades,
    })
}

/// Clustering of the eligible universe at one date.
#[derive(Debug, Clone)]
pub struct ClusterSnapshot {
    /// Standardized signature features, one per eligible symbol, sorted by symbol.
    pub features: Vec<FeatureVector>,
    /// Zero-based cluster of each entry in `features`.
    pub assignments: Vec<usize>,
    pub representatives: BTreeMap<usize, String>,
    /// `None` when there were no more assets than clusters and each asset
    /// forms its own cluster.
    pub model: Option<ClusterModel>,
}

impl ClusterSnapshot {
    /// Representative symbols in sorted order.
    pub fn selected(&self) -> Vec<String> {
        let mut s: Vec<String> = self.representatives.values().cloned().collect();
        s.sort();
        s
    }
}

fn stream_index(streams: &[PriceStream]) -> BTreeMap<&str, &PriceStream> {
    streams.iter().map(|s| (s.symbol.as_str(), s)).collect()
}

/// Signature features, k-means partition and representatives of the
/// `eligible` symbols at date `t`.
pub fn cluster_universe(
    streams: &[PriceStream],
    eligible: &[String],
    t: NaiveDate,
    policy: &WindowPolicy,
    k: usize,
    level: usize,
    seed: u64,
) -> Result<ClusterSnapshot> {
    let index = stream_index(streams);
    let mut syms: Vec<&String> = eligible.iter().collect();
    syms.sort();
    let raw = syms
        .iter()
        .map(|sym| {
            let stream = index.get(sym.as_str()).ok_or_else(|| Error::UnknownSymbol(sym.to_string()))?;
            let closes: Vec<f64> = window_slice(stream, t, policy)?.iter().map(|o| o.1).collect();
            asset_features(sym, &closes, level)
        })
        .collect::<Result<Vec<_>>>()?;
    if raw.is_empty() {
        return Err(Error::EmptyUniverse { date: t });
    }
    if raw.len() <= k {
        let features = if raw.len() >= 2 { standardize(&raw)?.1 } else { raw };
        return Ok(ClusterSnapshot {
            assignments: (0..features.len()).collect(),
            representatives: features.iter().enumerate().map(|(i, f)| (i, f.symbol.clone())).collect(),
            features,
            model: None,
        });
    }
    let (_, features) = standardize(&raw)?;
    let points: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let model = kmeans_fit(&points, KMeansParams::new(k, seed))?;
    let representatives = select_representatives(&model, &features)?;
    Ok(ClusterSnapshot {
        assignments: model.assignments.clone(),
        features,
        representatives,
        model: Some(model),
    })
}

/// Target weights for `selected` at `t`. The flag is set when the rule fell
/// back to equal weight (no asset passed the return floor, or the
/// covariance was degenerate).
pub fn allocate(
    config: &StrategyConfig,
    streams: &[PriceStream],
    selected: &[String],
    t: NaiveDate,
) -> Result<(WeightVector, bool)> {
    if config.allocator == Allocator::EqualWeight {
        return Ok((equal_weight(selected)?, false));
    }
    let index = stream_index(streams);
    let mut usable = Vec::new();
    let mut common_start = NaiveDate::MIN;
    for sym in selected {
        let stream = index.get(sym.as_str()).ok_or_else(|| Error::UnknownSymbol(sym.clone()))?;
        let start = eligibility(stream, t, &config.window)?;
        if (t - start).num_days() as usize >= MIN_RETURN_ROWS {
            usable.push(sym.clone());
            common_start = common_start.max(start);
        }
    }
    if usable.is_empty() {
        return Ok((equal_weight(selected)?, true));
    }
    let returns = compute_returns(streams, &usable, common_start, t)?;
    let cov = estimate_covariance(&returns, config.ridge)?;
    let weights = match config.allocator {
        Allocator::MinVariance => min_variance(&cov),
        Allocator::MaxDiversification => max_diversification(&cov),
        Allocator::EqualWeight => unreachable!(),
    };
    match weights {
        Ok(w) => Ok((w, false)),
        Err(Error::DegenerateAsset { .. }) => Ok((equal_weight(selected)?, true)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceRecord {
    pub date: NaiveDate,
    pub selected: Vec<String>,
    pub weights: WeightVector,
    /// Units held after the rebalance.
    pub units: BTreeMap<String, f64>,
    /// Symbols sold out entirely at this rebalance.
    pub liquidated: Vec<String>,
    pub trades: usize,
    pub fee: f64,
    pub turnover: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    /// Daily marks at each close, taken before that day's rebalance. The
    /// first entry is the initial capital of 1.0.
    pub values: Vec<(NaiveDate, f64)>,
    pub rebalances: Vec<RebalanceRecord>,
    pub total_trades: usize,
    pub total_fees: f64,
    pub total_turnover: f64,
}

impl BacktestResult {
    pub fn value_series(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.1).collect()
    }
}

fn prices_at(index: &BTreeMap<&str, &PriceStream>, symbols: impl IntoIterator<Item = String>, date: NaiveDate) -> Result<BTreeMap<String, f64>> {
    symbols
        .into_iter()
        .map(|s| {
            let p = index
                .get(s.as_str())
                .and_then(|st| st.last_close_at_or_before(date))
                .ok_or_else(|| Error::NotEligible {
                    symbol: s.clone(),
                    date,
                    reason: "no close on or before this date".into(),
                })?;
            Ok((s, p))
        })
        .collect()
}

/// Runs one strategy from the first Monday on or after `start` through
/// `end` (clamped to the last date present in the data).
pub fn run_backtest(
    config: &StrategyConfig,
    streams: &[PriceStream],
    start: NaiveDate,
    end: NaiveDate,
) -> Result<BacktestResult> {
    config.validate()?;
    let data_end = streams
        .iter()
        .filter_map(PriceStream::last_date)
        .max()
        .ok_or(Error::EmptyInput("no price streams"))?;
    let end = end.min(data_end);
    let calendar = build_calendar(streams, start, end, config.window)?;
    let index = stream_index(streams);

    let mut holdings = Holdings::cash(1.0);
    let mut values = Vec::new();
    let mut rebalances = Vec::new();
    let mut total_trades = 0;
    let mut total_fees = 0.0;
    let mut total_turnover = 0.0;
    let mut next_rebalance = 0;

    let mut date = calendar.rebalance_dates[0];
    while date <= end {
        let prices = prices_at(&index, holdings.units.keys().cloned(), date)?;
        values.push((date, holdings.value(&prices)?));

        if calendar.rebalance_dates.get(next_rebalance) == Some(&date) {
            let eligible = &calendar.eligible[next_rebalance];
            next_rebalance += 1;
            let selected = if config.filtered {
                cluster_universe(streams, eligible, date, &config.window, config.k, config.level, config.seed)?
                    .selected()
            } else {
                eligible.clone()
            };
            let (weights, fallback) = allocate(config, streams, &selected, date)?;
            let involved = holdings.units.keys().cloned().chain(weights.symbols().iter().cloned());
            let prices = prices_at(&index, involved, date)?;
            let outcome = apply_rebalance(&holdings, &weights, &prices, config.fee_rate)?;
            let liquidated = holdings
                .units
                .keys()
                .filter(|s| !outcome.holdings.units.contains_key(*s))
                .cloned()
                .collect();
            total_trades += outcome.trades;
            total_fees += outcome.fee;
            total_turnover += outcome.turnover;
            rebalances.push(RebalanceRecord {
                date,
                selected,
                weights,
                units: outcome.holdings.units.clone(),
                liquidated,
                trades: outcome.trades,
                fee: outcome.fee,
                turnover: outcome.turnover,
                fallback,
            });
            holdings = outcome.holdings;
        }
        date += Duration::days(1);
    }

    Ok(BacktestResult {
        values,
        rebalances,
        total_trades,
        total_fees,
        total_turnover,
    })
}

/// Divides each calendar year's values by the value on that year's first date.
pub fn rebase_annually(values: &[(NaiveDate, f64)]) -> Vec<(NaiveDate, f64)> {
    let mut out = Vec::with_capacity(values.len());
    let mut current: Option<(i32, f64)> = None;
    for &(d, v) in values {
        let base = match current {
            Some((year, base)) if year == d.year() => base,
            _ => {
                current = Some((d.year(), v));
                v
            }
        };
        out.push((d, v / base));
    }
    out
}

/// `date,value` rows.
pub fn write_values<W: Write>(out: W, values: &[(NaiveDate, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["date", "value"])?;
    for (d, v) in values {
        wtr.write_record([d.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `date,symbol,weight,units,fee,trades_cum` rows; liquidated symbols
/// appear with zero weight and units.
pub fn write_rebalances<W: Write>(out: W, result: &BacktestResult) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["date", "symbol", "weight", "units", "fee", "trades_cum"])?;
    let mut cum = 0;
    for r in &result.rebalances {
        cum += r.trades;
        let mut rows: Vec<(&str, f64, f64)> = r
            .weights
            .iter()
            .map(|(s, w)| (s, w, r.units.get(s).copied().unwrap_or(0.0)))
            .collect();
        rows.extend(r.liquidated.iter().map(|s| (s.as_str(), 0.0, 0.0)));
        rows.sort_by(|a, b| a.0.cmp(b.0));
        for (s, w, u) in rows {
            wtr.write_record([
                r.date.to_string(),
                s.to_string(),
                w.to_string(),
                u.to_string(),
                r.fee.to_string(),
                cum.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// `date,symbol,weight,strategy` rows for several strategies.
pub fn write_weights<W: Write>(out: W, results: &[(String, &BacktestResult)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["date", "symbol", "weight", "strategy"])?;
    for (name, result) in results {
        for r in &result.rebalances {
            for (s, w) in r.weights.iter() {
                wtr.write_record([r.date.to_string(), s.to_string(), w.to_string(), name.clone()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn prices(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(s, p)| (s.to_string(), *p)).collect()
    }

    #[test]
    fn one_asset_from_cash_pays_fixed_point_fee() {
        let f = 0.0020;
        let target = WeightVector::new(vec!["BTC".into()], vec![1.0]).unwrap();
        let out = apply_rebalance(&Holdings::cash(1.0), &target, &prices(&[("BTC", 20_000.0)]), f).unwrap();
        let fee = f / (1.0 + f);
        assert!((out.fee - fee).abs() < 1e-15);
        assert!((out.holdings.units["BTC"] - (1.0 - fee) / 20_000.0).abs() < 1e-18);
        assert_eq!(out.trades, 1);
    }

    #[test]
    fn drifted_target_is_a_no_op() {
        let mut h = Holdings::default();
        h.units.insert("A".into(), 2.0);
        h.units.insert("B".into(), 3.0);
        let p = prices(&[("A", 10.0), ("B", 20.0)]);
        let v = 2.0 * 10.0 + 3.0 * 20.0;
        let target = WeightVector::new(vec!["A".into(), "B".into()], vec![20.0 / v, 60.0 / v]).unwrap();
        let out = apply_rebalance(&h, &target, &p, 0.002).unwrap();
        assert_eq!(out.fee, 0.0);
        assert_eq!(out.trades, 0);
        assert_eq!(out.holdings.units, h.units);
    }

    #[test]
    fn free_trading_keeps_value() {
        let mut h = Holdings::default();
        h.units.insert("A".into(), 1.5);
        let p = prices(&[("A", 10.0), ("B", 4.0)]);
        let target = WeightVector::new(vec!["B".into()], vec![1.0]).unwrap();
        let out = apply_rebalance(&h, &target, &p, 0.0).unwrap();
        assert_eq!(out.fee, 0.0);
        assert_eq!(out.holdings.units["B"], 15.0 / 4.0);
        assert!(!out.holdings.units.contains_key("A"));
        assert_eq!(out.trades, 2);
        assert_eq!(out.turnover, 30.0);
    }

    #[test]
    fn fee_is_rate_times_turnover() {
        let mut h = Holdings::default();
        h.units.insert("A".into(), 1.0);
        h.units.insert("B".into(), 1.0);
        let p = prices(&[("A", 3.0), ("B", 1.0), ("C", 2.0)]);
        let target = WeightVector::new(vec!["A".into(), "C".into()], vec![0.5, 0.5]).unwrap();
        let out = apply_rebalance(&h, &target, &p, 0.01).unwrap();
        assert_eq!(out.fee, 0.01 * out.turnover);
        let v_post = 4.0 - out.fee;
        let recomputed = (0.5 * v_post - 3.0).abs() + 1.0 + 0.5 * v_post;
        assert!((out.turnover - recomputed).abs() < 1e-13);
    }

    #[test]
    fn missing_price_is_an_error() {
        let target = WeightVector::new(vec!["A".into()], vec![1.0]).unwrap();
        assert!(apply_rebalance(&Holdings::cash(1.0), &target, &BTreeMap::new(), 0.0).is_err());
    }

    #[test]
    fn annual_rebasing() {
        let v = vec![(d("2022-03-01"), 2.0), (d("2022-03-02"), 3.0)];
        assert_eq!(rebase_annually(&v), vec![(d("2022-03-01"), 1.0), (d("2022-03-02"), 1.5)]);

        let v = vec![(d("2022-12-31"), 2.0), (d("2023-01-01"), 2.0), (d("2023-01-02"), 3.0)];
        let r = rebase_annually(&v);
        assert_eq!(r[1].1, 1.0);
        assert_eq!(r[2].1, 1.5);
    }

    #[test]
    fn naming() {
        let fot = WindowPolicy::Fot { origin: d("2022-01-01") };
        let rw = WindowPolicy::Rw { length_days: 30 };
        assert_eq!(StrategyConfig::new(Allocator::EqualWeight, false, fot).default_name(), "PORTFOLIO_EW");
        assert_eq!(
            StrategyConfig::new(Allocator::MaxDiversification, true, rw).default_name(),
            "PORTFOLIO_SIG_CLUSTER_MDP_RW"
        );
        assert_eq!(StrategyConfig::new(Allocator::MinVariance, false, rw).default_name(), "PORTFOLIO_MVP_RW");
    }

    #[test]
    fn config_validation() {
        let mut c = StrategyConfig::new(Allocator::EqualWeight, true, WindowPolicy::Rw { length_days: 30 });
        assert!(c.validate().is_ok());
        c.fee_rate = 0.02;
        assert!(c.validate().is_err());
        c.fee_rate = 0.0;
        c.k = 0;
        assert!(c.validate().is_err());
    }
}
