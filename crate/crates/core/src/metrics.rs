//! Performance and risk statistics of a daily value series.
//!
//! Conventions: 365-day years, geometric annual return, volatility from
//! daily log returns, zero risk-free rate.

use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub annualized_return: f64,
    pub annualized_volatility: f64,
    /// `None` when volatility is zero.
    pub sharpe: Option<f64>,
    /// `None` when the series never draws down.
    pub calmar: Option<f64>,
    pub mdd: f64,
}

impl MetricSummary {
    /// Summarizes a series sampled once per calendar day.
    pub fn from_daily_values(values: &[f64]) -> Result<Self> {
        let annualized_return = annualized_return(values)?;
        let annualized_volatility = annualized_volatility(values)?;
        let mdd = max_drawdown(values)?;
        Ok(MetricSummary {
            annualized_return,
            annualized_volatility,
            sharpe: sharpe(annualized_return, annualized_volatility).ok(),
            calmar: calmar(annualized_return, mdd).ok(),
            mdd,
        })
    }
}

fn check_positive(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("values must be positive and finite".into()));
    }
    Ok(())
}

/// `(V_end / V_start)^(365 / D) - 1`, where `D = len - 1` days.
pub fn annualized_return(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("annualized return needs a span of at least one day".into()));
    }
    check_positive(values)?;
    let days = (values.len() - 1) as f64;
    let growth = values[values.len() - 1] / values[0];
    Ok(growth.powf(DAYS_PER_YEAR / days) - 1.0)
}

/// Population standard deviation of daily log returns, times `sqrt(365)`.
pub fn annualized_volatility(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument("annualized volatility needs at least 3 values".into()));
    }
    check_positive(values)?;
    let logs: Vec<f64> = values.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() * DAYS_PER_YEAR.sqrt())
}

/// Largest peak-to-trough decline, `max_t (1 - V_t / max_{s<=t} V_s)`.
pub fn max_drawdown(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("max drawdown needs at least one value"));
    }
    check_positive(values)?;
    let mut peak = values[0];
    let mut mdd: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        mdd = mdd.max(1.0 - v / peak);
    }
    Ok(mdd)
}

pub fn sharpe(ann_return: f64, ann_vol: f64) -> Result<f64> {
    if ann_vol == 0.0 {
        return Err(Error::ZeroDenominator("sharpe"));
    }
    Ok(ann_return / ann_vol)
}

pub fn calmar(ann_return: f64, mdd: f64) -> Result<f64> {
    if mdd == 0.0 {
        return Err(Error::ZeroDenominator("calmar"));
    }
    Ok(ann_return / mdd)
}
