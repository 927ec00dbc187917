//! Daily close ingestion, the weekly rebalance calendar and lookback windows.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days of history (beyond the endpoint) a fixed-origin window needs before
/// an asset becomes eligible. Matches the default rolling length so both
/// policies start from 30 daily returns.
pub const FOT_WARMUP_DAYS: i64 = 30;

pub const DEFAULT_RW_DAYS: u32 = 30;

/// Dated daily closes of one asset, strictly increasing in date.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceStream {
    pub symbol: String,
    observations: Vec<(NaiveDate, f64)>,
}

impl PriceStream {
    /// Builds a stream, sorting by date and rejecting duplicates and
    /// non-positive closes.
    pub fn new(symbol: impl Into<String>, mut observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let symbol = symbol.into();
        observations.sort_by_key(|(d, _)| *d);
        if let Some(w) = observations.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateObservation {
                symbol,
                date: w[0].0,
                line: 0,
            });
        }
        if observations.iter().any(|(_, c)| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "{symbol}: closes must be positive and finite"
            )));
        }
        Ok(PriceStream {
            symbol,
            observations,
        })
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.observations.first().map(|o| o.0)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.observations.last().map(|o| o.0)
    }

    pub fn close_on(&self, date: NaiveDate) -> Option<f64> {
        self.observations
            .binary_search_by_key(&date, |o| o.0)
            .ok()
            .map(|i| self.observations[i].1)
    }

    /// Most recent close dated on or before `date`.
    pub fn last_close_at_or_before(&self, date: NaiveDate) -> Option<f64> {
        let idx = self.observations.partition_point(|o| o.0 <= date);
        idx.checked_sub(1).map(|i| self.observations[i].1)
    }

    /// Observations with dates in `[from, to]`.
    pub fn range(&self, from: NaiveDate, to: NaiveDate) -> &[(NaiveDate, f64)] {
        let lo = self.observations.partition_point(|o| o.0 < from);
        let hi = self.observations.partition_point(|o| o.0 <= to);
        &self.observations[lo..hi.max(lo)]
    }

    /// Keeps only observations dated on or before `date`.
    pub fn truncated(&self, date: NaiveDate) -> PriceStream {
        let hi = self.observations.partition_point(|o| o.0 <= date);
        PriceStream {
            symbol: self.symbol.clone(),
            observations: self.observations[..hi].to_vec(),
        }
    }

    /// Missing calendar days between the first and last observation, as
    /// inclusive `(first_missing, last_missing)` runs.
    pub fn gaps(&self) -> Vec<(NaiveDate, NaiveDate)> {
        self.observations
            .windows(2)
            .filter(|w| (w[1].0 - w[0].0).num_days() > 1)
            .map(|w| (w[0].0 + Duration::days(1), w[1].0 - Duration::days(1)))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    date: String,
    symbol: String,
    close: String,
}

/// Loads a `date,symbol,close` CSV file.
pub fn load_prices(path: impl AsRef<Path>) -> Result<Vec<PriceStream>> {
    let file = std::fs::File::open(path)?;
    read_prices(file)
}

/// Parses `date,symbol,close` CSV from a reader into one stream per
/// symbol, ordered by symbol. Line numbers in errors count the header as
/// line 1.
pub fn read_prices<R: Read>(reader: R) -> Result<Vec<PriceStream>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(rdr.headers()?)?;
    let mut by_symbol: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let row: PriceRow = rec.deserialize(None).map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let (date, close) = parse_row(&row, line)?;
        if close <= 0.0 {
            return Err(Error::NonPositivePrice { line });
        }
        let entry = by_symbol.entry(row.symbol.clone()).or_default();
        if entry.insert(date, close).is_some() {
            return Err(Error::DuplicateObservation {
                symbol: row.symbol,
                date,
                line,
            });
        }
    }
    if by_symbol.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(by_symbol
        .into_iter()
        .map(|(symbol, obs)| PriceStream {
            symbol,
            observations: obs.into_iter().collect(),
        })
        .collect())
}

fn check_header(headers: &csv::StringRecord) -> Result<()> {
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["date", "symbol", "close"] {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header `date,symbol,close`, found `{}`", cols.join(",")),
        });
    }
    Ok(())
}

fn parse_row(row: &PriceRow, line: u64) -> Result<(NaiveDate, f64)> {
    let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|e| Error::MalformedRow {
        line,
        reason: format!("bad date `{}`: {e}", row.date),
    })?;
    if row.symbol.is_empty() {
        return Err(Error::MalformedRow {
            line,
            reason: "empty symbol".into(),
        });
    }
    let close: f64 = row.close.parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("non-numeric close `{}`", row.close),
    })?;
    if !close.is_finite() {
        return Err(Error::MalformedRow {
            line,
            reason: format!("non-finite close `{}`", row.close),
        });
    }
    Ok((date, close))
}

/// One finding of [`scan_prices`].
#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    Malformed { line: u64, reason: String },
    NonPositive { line: u64, symbol: String },
    Duplicate { line: u64, symbol: String, date: NaiveDate },
    Gap { symbol: String, from: NaiveDate, to: NaiveDate },
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Issue::Malformed { line, reason } => write!(f, "line {line}: malformed row ({reason})"),
            Issue::NonPositive { line, symbol } => {
                write!(f, "line {line}: non-positive price for {symbol}")
            }
            Issue::Duplicate { line, symbol, date } => {
                write!(f, "line {line}: duplicate {symbol} on {date}")
            }
            Issue::Gap { symbol, from, to } => {
                let days = (*to - *from).num_days() + 1;
                write!(f, "gap: {symbol} missing {from} to {to} ({days} days)")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub symbol: String,
    pub first: NaiveDate,
    pub last: NaiveDate,
    pub observations: usize,
}

/// Result of a lenient pass over a price file.
#[derive(Debug, Clone, Default)]
pub struct ScanReport {
    pub coverage: Vec<Coverage>,
    pub issues: Vec<Issue>,
}

/// Reads a price file without stopping at the first problem, collecting
/// coverage per symbol and every structural issue found.
pub fn scan_prices<R: Read>(reader: R) -> Result<ScanReport> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut report = ScanReport::default();
    if let Err(Error::MalformedRow { line, reason }) = check_header(rdr.headers()?) {
        report.issues.push(Issue::Malformed { line, reason });
        return Ok(report);
    }
    let mut by_symbol: BTreeMap<String, BTreeSet<NaiveDate>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = rec
            .map_err(|e| e.to_string())
            .and_then(|r| r.deserialize::<PriceRow>(None).map_err(|e| e.to_string()));
        let row = match row {
            Ok(r) => r,
            Err(reason) => {
                report.issues.push(Issue::Malformed { line, reason });
                continue;
            }
        };
        let (date, close) = match parse_row(&row, line) {
            Ok(v) => v,
            Err(Error::MalformedRow { reason, .. }) => {
                report.issues.push(Issue::Malformed { line, reason });
                continue;
            }
            Err(e) => return Err(e),
        };
        if close <= 0.0 {
            report.issues.push(Issue::NonPositive {
                line,
                symbol: row.symbol,
            });
            continue;
        }
        if !by_symbol.entry(row.symbol.clone()).or_default().insert(date) {
            report.issues.push(Issue::Duplicate {
                line,
                symbol: row.symbol,
                date,
            });
        }
    }
    for (symbol, dates) in by_symbol {
        let dates: Vec<NaiveDate> = dates.into_iter().collect();
        for w in dates.windows(2) {
            if (w[1] - w[0]).num_days() > 1 {
                report.issues.push(Issue::Gap {
                    symbol: symbol.clone(),
                    from: w[0] + Duration::days(1),
                    to: w[1] - Duration::days(1),
                });
            }
        }
        report.coverage.push(Coverage {
            symbol,
            first: dates[0],
            last: dates[dates.len() - 1],
            observations: dates.len(),
        });
    }
    Ok(report)
}

/// Lookback window used for features and covariance at each rebalance date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WindowPolicy {
    /// Expanding window anchored at `origin` (or at the asset's listing
    /// date, if later).
    Fot { origin: NaiveDate },
    /// The last `length_days` days plus the endpoint.
    Rw { length_days: u32 },
}

impl WindowPolicy {
    pub fn rolling(length_days: u32) -> Result<Self> {
        let p = WindowPolicy::Rw { length_days };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WindowPolicy::Rw { length_days } if length_days < 2 => Err(Error::InvalidPolicy(
                format!("rolling window length must be at least 2 days, got {length_days}"),
            )),
            _ => Ok(()),
        }
    }

    /// Short lowercase tag used in file names (`fot` / `rw`).
    pub fn tag(&self) -> &'static str {
        match self {
            WindowPolicy::Fot { .. } => "fot",
            WindowPolicy::Rw { .. } => "rw",
        }
    }

    /// First date of the window ending at `t` for `stream`, before any
    /// eligibility check.
    fn window_start(&self, stream: &PriceStream, t: NaiveDate) -> Option<NaiveDate> {
        match *self {
            WindowPolicy::Fot { origin } => {
                let first = stream.first_date()?;
                Some(origin.max(first))
            }
            WindowPolicy::Rw { length_days } => Some(t - Duration::days(i64::from(length_days))),
        }
    }
}

/// Checks that `stream` has gap-free data over its window ending at `t` and
/// returns the window's first date.
pub fn eligibility(stream: &PriceStream, t: NaiveDate, policy: &WindowPolicy) -> Result<NaiveDate> {
    let not_eligible = |reason: String| Error::NotEligible {
        symbol: stream.symbol.clone(),
        date: t,
        reason,
    };
    let start = policy
        .window_start(stream, t)
        .ok_or_else(|| not_eligible("no observations".into()))?;
    if let WindowPolicy::Fot { .. } = policy {
        if (t - start).num_days() < FOT_WARMUP_DAYS {
            return Err(not_eligible(format!(
                "fewer than {FOT_WARMUP_DAYS} days of history since {start}"
            )));
        }
    }
    let slice = stream.range(start, t);
    let expected = (t - start).num_days() + 1;
    if slice.len() as i64 != expected {
        return Err(not_eligible(format!(
            "{} of {expected} daily closes in [{start}, {t}]",
            slice.len()
        )));
    }
    Ok(start)
}

/// Observations of the window ending at `t` under `policy`, endpoint included.
pub fn window_slice<'a>(
    stream: &'a PriceStream,
    t: NaiveDate,
    policy: &WindowPolicy,
) -> Result<&'a [(NaiveDate, f64)]> {
    let start = eligibility(stream, t, policy)?;
    Ok(stream.range(start, t))
}

/// Weekly rebalance dates with the eligible symbols at each.
#[derive(Debug, Clone, PartialEq)]
pub struct UniverseCalendar {
    pub policy: WindowPolicy,
    pub rebalance_dates: Vec<NaiveDate>,
    /// Sorted eligible symbols, aligned with `rebalance_dates`.
    pub eligible: Vec<Vec<String>>,
}

impl UniverseCalendar {
    pub fn eligible_on(&self, date: NaiveDate) -> Option<&[String]> {
        self.rebalance_dates
            .binary_search(&date)
            .ok()
            .map(|i| self.eligible[i].as_slice())
    }
}

/// Every Monday in `[start, end]`.
pub fn mondays(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    let offset = (7 - start.weekday().num_days_from_monday()) % 7;
    let mut d = start + Duration::days(i64::from(offset));
    let mut out = Vec::new();
    while d <= end {
        debug_assert_eq!(d.weekday(), Weekday::Mon);
        out.push(d);
        d += Duration::days(7);
    }
    out
}

/// Builds the rebalance calendar and the eligible universe at each date.
pub fn build_calendar(
    streams: &[PriceStream],
    start: NaiveDate,
    end: NaiveDate,
    policy: WindowPolicy,
) -> Result<UniverseCalendar> {
    if start >= end {
        return Err(Error::InvalidDateRange { start, end });
    }
    policy.validate()?;
    let dates = mondays(start, end);
    let first = *dates.first().ok_or(Error::NoRebalanceDates { start, end })?;
    if let WindowPolicy::Fot { origin } = policy {
        if origin > first {
            return Err(Error::InvalidPolicy(format!(
                "origin {origin} is after the first rebalance date {first}"
            )));
        }
    }
    let mut eligible = Vec::with_capacity(dates.len());
    for &t in &dates {
        let mut syms: Vec<String> = streams
            .iter()
            .filter(|s| eligibility(s, t, &policy).is_ok())
            .map(|s| s.symbol.clone())
            .collect();
        if syms.is_empty() {
            return Err(Error::EmptyUniverse { date: t });
        }
        syms.sort();
        eligible.push(syms);
    }
    Ok(UniverseCalendar {
        policy,
        rebalance_dates: dates,
        eligible,
    })
}
