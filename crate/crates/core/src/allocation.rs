//! Long-only allocation rules: equal weight, global minimum variance and
//! maximum diversification.

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};

use crate::data::PriceStream;
use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-8;
/// Fewest daily returns an asset needs before MVP/MDP will consider it.
pub const MIN_RETURN_ROWS: usize = 15;

const MAX_ITER: usize = 10_000;
const PG_TOL: f64 = 1e-10;
const POLISH_EVERY: usize = 20;
// Objective slack, relative to the trace-normalized covariance.
const POLISH_SLACK: f64 = 1e-14;

/// Daily simple returns of several assets over a common date range.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub symbols: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `rows[t][i]`: return of `symbols[i]` from `dates[t] - 1` to `dates[t]`.
    pub rows: Vec<Vec<f64>>,
}

/// Returns of `symbols` over `[from, to]`; the first date only serves as
/// the basis of the first return.
pub fn compute_returns(
    streams: &[PriceStream],
    symbols: &[String],
    from: NaiveDate,
    to: NaiveDate,
) -> Result<ReturnMatrix> {
    if from >= to {
        return Err(Error::InvalidDateRange { start: from, end: to });
    }
    let days = (to - from).num_days() as usize + 1;
    let mut columns = Vec::with_capacity(symbols.len());
    for sym in symbols {
        let stream = streams
            .iter()
            .find(|s| &s.symbol == sym)
            .ok_or_else(|| Error::UnknownSymbol(sym.clone()))?;
        let slice = stream.range(from, to);
        if slice.len() != days {
            return Err(Error::NotEligible {
                symbol: sym.clone(),
                date: to,
                reason: format!("{} of {days} daily closes in [{from}, {to}]", slice.len()),
            });
        }
        columns.push(slice.windows(2).map(|w| w[1].1 / w[0].1 - 1.0).collect::<Vec<f64>>());
    }
    let rows = (0..days - 1)
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    Ok(ReturnMatrix {
        symbols: symbols.to_vec(),
        dates: (1..days).map(|t| from + Duration::days(t as i64)).collect(),
        rows,
    })
}

/// Covariance of daily returns with a ridge on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub symbols: Vec<String>,
    pub matrix: DMatrix<f64>,
    /// Per-asset volatility, `sqrt(diag)`.
    pub vol: Vec<f64>,
}

impl CovarianceEstimate {
    /// Wraps an explicit covariance matrix.
    pub fn from_matrix(symbols: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        let n = symbols.len();
        if n == 0 {
            return Err(Error::EmptyInput("covariance needs at least one asset"));
        }
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: matrix.nrows(),
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("covariance entries must be finite".into()));
        }
        let vol = (0..n).map(|i| matrix[(i, i)].max(0.0).sqrt()).collect();
        Ok(CovarianceEstimate { symbols, matrix, vol })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Population covariance of the returns plus `ridge * trace / n` on the
/// diagonal.
pub fn estimate_covariance(returns: &ReturnMatrix, ridge: f64) -> Result<CovarianceEstimate> {
    if returns.rows.len() < MIN_RETURN_ROWS {
        return Err(Error::TooFewReturns {
            required: MIN_RETURN_ROWS,
            actual: returns.rows.len(),
        });
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {ridge}")));
    }
    let n = returns.symbols.len();
    let t = returns.rows.len() as f64;
    let data = DMatrix::from_fn(returns.rows.len(), n, |r, c| returns.rows[r][c]);
    let mut centered = data;
    for j in 0..n {
        let m = centered.column(j).sum() / t;
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let mut cov = centered.transpose() * &centered / t;
    // Symmetrize exactly; the product is symmetric up to rounding only.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let shift = ridge * cov.trace() / n as f64;
    for i in 0..n {
        cov[(i, i)] += shift;
    }
    CovarianceEstimate::from_matrix(returns.symbols.clone(), cov)
}

/// Long-only portfolio weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    symbols: Vec<String>,
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(symbols: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::EmptyInput("weight vector needs at least one asset"));
        }
        if symbols.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: symbols.len(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightVector { symbols, weights })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, symbol: &str) -> Option<f64> {
        self.symbols.iter().position(|s| s == symbol).map(|i| self.weights[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.symbols.iter().map(String::as_str).zip(self.weights.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

pub fn equal_weight(symbols: &[String]) -> Result<WeightVector> {
    if symbols.is_empty() {
        return Err(Error::EmptyInput("equal weight needs at least one symbol"));
    }
    let w = 1.0 / symbols.len() as f64;
    WeightVector::new(symbols.to_vec(), vec![w; symbols.len()])
}

/// `wᵀ Σ w`.
pub fn portfolio_variance(w: &[f64], cov: &DMatrix<f64>) -> f64 {
    let w = DVector::from_column_slice(w);
    (w.transpose() * cov * &w)[(0, 0)]
}

/// `(wᵀσ) / sqrt(wᵀΣw)`; infinite for a zero-variance portfolio.
pub fn diversification_ratio(w: &[f64], cov: &CovarianceEstimate) -> f64 {
    let num: f64 = w.iter().zip(&cov.vol).map(|(a, b)| a * b).sum();
    num / portfolio_variance(w, &cov.matrix).max(0.0).sqrt()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn quad(q: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(q * w))
}

fn gradient_mapping_norm(q: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let g = 2.0 * (q * w);
    let stepped: Vec<f64> = w.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
    let p = DVector::from_vec(project_simplex(&stepped));
    (w - p).norm()
}

// Solves the equality-constrained problem on the support of `w` exactly and
// returns the result if it stays in the simplex. The bordered KKT system
// is solved by SVD so that singular covariances still yield a minimizer.
fn polish(q: &DMatrix<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
    let n = w.len();
    let mut support: Vec<usize> = (0..n).filter(|&i| w[i] > 1e-12).collect();
    for _ in 0..n {
        if support.is_empty() {
            return None;
        }
        let m = support.len();
        let kkt = DMatrix::from_fn(m + 1, m + 1, |a, b| match (a < m, b < m) {
            (true, true) => q[(support[a], support[b])],
            (false, false) => 0.0,
            _ => 1.0,
        });
        // solve for the correction to the current point, so that a singular
        // system picks the minimizer nearest to `w`
        let mut start = DVector::zeros(m + 1);
        for (a, &i) in support.iter().enumerate() {
            start[a] = w[i];
        }
        let mut rhs = -(&kkt * &start);
        rhs[m] += 1.0;
        let step = kkt.svd(true, true).solve(&rhs, 1e-13).ok()?;
        let x = (start + step).rows(0, m).into_owned();
        let total = x.sum();
        if !total.is_finite() || (total - 1.0).abs() > 1e-8 {
            return None;
        }
        let xs = x / total;
        if xs.iter().all(|v| *v >= 0.0) {
            let mut out = DVector::zeros(n);
            for (a, &i) in support.iter().enumerate() {
                out[i] = xs[a];
            }
            return Some(out);
        }
        support = support
            .iter()
            .zip(xs.iter())
            .filter(|(_, v)| **v > 0.0)
            .map(|(&i, _)| i)
            .collect();
    }
    None
}

/// Minimizes `wᵀ q w` over the simplex by projected gradient descent with
/// backtracking. Every few iterations the current support is solved
/// exactly; the result is kept when it improves the objective.
fn minimize_on_simplex(q: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = q.nrows();
    let ew = DVector::from_element(n, 1.0 / n as f64);
    let scale = q.trace() / n as f64;
    if !(scale > 0.0) {
        return Ok(ew.iter().copied().collect());
    }
    let q = q / scale;

    let mut w = ew;
    let mut f = quad(&q, &w);
    let mut step = 1.0;
    let mut residual = gradient_mapping_norm(&q, &w);
    for iter in 1..=MAX_ITER {
        if residual < PG_TOL {
            return Ok(w.iter().copied().collect());
        }
        let g = 2.0 * (&q * &w);
        loop {
            let trial: Vec<f64> = w.iter().zip(g.iter()).map(|(a, b)| a - step * b).collect();
            let cand = DVector::from_vec(project_simplex(&trial));
            let diff = &cand - &w;
            let f_cand = quad(&q, &cand);
            let bound = f + g.dot(&diff) + diff.norm_squared() / (2.0 * step);
            if f_cand <= bound + 1e-15 * f.abs() || step < 1e-12 {
                w = cand;
                f = f_cand;
                break;
            }
            step *= 0.5;
        }
        step = (step * 2.0).min(1e6);
        residual = gradient_mapping_norm(&q, &w);
        if iter % POLISH_EVERY == 0 {
            if let Some(p) = polish(&q, &w) {
                let fp = quad(&q, &p);
                // near a zero-variance optimum both objectives sit at rounding
                // level, so fall back to comparing stationarity
                let tie = fp <= f + POLISH_SLACK && gradient_mapping_norm(&q, &p) < residual;
                if fp <= f || tie {
                    w = p;
                    f = fp;
                    residual = gradient_mapping_norm(&q, &w);
                }
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        residual,
    })
}

fn renormalize(mut w: Vec<f64>) -> Vec<f64> {
    w.iter_mut().for_each(|x| *x = x.max(0.0));
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Long-only global minimum-variance weights.
pub fn min_variance(cov: &CovarianceEstimate) -> Result<WeightVector> {
    if cov.is_empty() {
        return Err(Error::EmptyInput("covariance has no assets"));
    }
    let n = cov.len();
    let w = renormalize(minimize_on_simplex(&cov.matrix)?);
    let ew = vec![1.0 / n as f64; n];
    let w = if portfolio_variance(&w, &cov.matrix) <= portfolio_variance(&ew, &cov.matrix) {
        w
    } else {
        ew
    };
    WeightVector::new(cov.symbols.clone(), w)
}

/// Long-only weights maximizing the diversification ratio. Solved as a
/// minimum-variance problem on the volatility-normalized covariance, then
/// mapped back by dividing by each volatility. On near-singular inputs the
/// ratio is too ill-conditioned for the solver tolerance alone, so the
/// result is also checked against the EW and MVP portfolios.
pub fn max_diversification(cov: &CovarianceEstimate) -> Result<WeightVector> {
    if cov.is_empty() {
        return Err(Error::EmptyInput("covariance has no assets"));
    }
    if let Some(i) = cov.vol.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateAsset {
            symbol: cov.symbols[i].clone(),
        });
    }
    let n = cov.len();
    let corr = DMatrix::from_fn(n, n, |i, j| cov.matrix[(i, j)] / (cov.vol[i] * cov.vol[j]));
    let y = minimize_on_simplex(&corr)?;
    let mut best = renormalize(y.iter().zip(&cov.vol).map(|(a, s)| a / s).collect());
    let mut best_ratio = diversification_ratio(&best, cov);
    let alternatives = [
        min_variance(cov).ok().map(|w| w.weights),
        Some(vec![1.0 / n as f64; n]),
    ];
    for w in alternatives.into_iter().flatten() {
        let ratio = diversification_ratio(&w, cov);
        if ratio > best_ratio {
            best = w;
            best_ratio = ratio;
        }
    }
    WeightVector::new(cov.symbols.clone(), best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i}")).collect()
    }

    fn stream(symbol: &str, closes: &[f64]) -> PriceStream {
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        PriceStream::new(
            symbol,
            closes
                .iter()
                .enumerate()
                .map(|(i, &c)| (start + Duration::days(i as i64), c))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn returns_examples() {
        let s = vec![stream("A", &[100.0, 110.0]), stream("B", &[5.0, 5.0])];
        let from = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let r = compute_returns(&s, &["A".into(), "B".into()], from, from + Duration::days(1)).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!((r.rows[0][0] - 0.1).abs() < 1e-15);
        assert_eq!(r.rows[0][1], 0.0);

        let long: Vec<f64> = (0..31).map(|i| 100.0 + i as f64).collect();
        let s = vec![stream("A", &long)];
        let r = compute_returns(&s, &["A".into()], from, from + Duration::days(30)).unwrap();
        assert_eq!(r.rows.len(), 30);

        assert!(matches!(
            compute_returns(&s, &["A".into()], from, from + Duration::days(40)),
            Err(Error::NotEligible { .. })
        ));
        assert!(compute_returns(&s, &["X".into()], from, from + Duration::days(3)).is_err());
    }

    fn matrix_returns(rows: Vec<Vec<f64>>) -> ReturnMatrix {
        let n = rows[0].len();
        ReturnMatrix {
            symbols: syms(n),
            dates: Vec::new(),
            rows,
        }
    }

    #[test]
    fn covariance_with_constant_column() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![if i % 2 == 0 { 0.01 } else { -0.01 }, 0.0]).collect();
        let ridge = 1e-3;
        let cov = estimate_covariance(&matrix_returns(rows), ridge).unwrap();
        let trace_raw = 1e-4;
        assert!((cov.matrix[(1, 1)] - ridge * trace_raw / 2.0).abs() < 1e-18);
        assert!((cov.matrix[(0, 0)] - 1e-4 * (1.0 + ridge / 2.0)).abs() < 1e-16);
    }

    #[test]
    fn covariance_single_asset_and_floor() {
        let rows: Vec<Vec<f64>> = (0..16).map(|i| vec![(i as f64 - 7.5) * 0.001]).collect();
        let mean = 0.0;
        let var: f64 = rows.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / 16.0;
        let cov = estimate_covariance(&matrix_returns(rows.clone()), 0.5).unwrap();
        assert!((cov.matrix[(0, 0)] - 1.5 * var).abs() < 1e-15);
        assert!(matches!(
            estimate_covariance(&matrix_returns(rows[..14].to_vec()), 0.0),
            Err(Error::TooFewReturns { .. })
        ));
    }

    #[test]
    fn equal_weight_examples() {
        let w = equal_weight(&syms(4)).unwrap();
        assert!(w.weights().iter().all(|&x| x == 0.25));
        assert_eq!(equal_weight(&syms(1)).unwrap().weights(), &[1.0]);
        let w = equal_weight(&syms(30)).unwrap();
        assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(equal_weight(&[]).is_err());
    }

    #[test]
    fn projection_onto_simplex() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, -1.0, 0.9]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn mvp_closed_forms() {
        let cov = CovarianceEstimate::from_matrix(syms(3), DMatrix::identity(3, 3)).unwrap();
        let w = min_variance(&cov).unwrap();
        assert!(w.weights().iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));

        let cov = CovarianceEstimate::from_matrix(syms(2), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        let w = min_variance(&cov).unwrap();
        assert!((w.weights()[0] - 0.8).abs() < 1e-10);
        assert!((w.weights()[1] - 0.2).abs() < 1e-10);
    }

    #[test]
    fn mdp_closed_forms() {
        let vols = [0.5, 1.0, 2.0];
        let cov = CovarianceEstimate::from_matrix(
            syms(3),
            DMatrix::from_diagonal(&DVector::from_iterator(3, vols.iter().map(|v| v * v))),
        )
        .unwrap();
        let w = max_diversification(&cov).unwrap();
        let norm: f64 = vols.iter().map(|v| 1.0 / v).sum();
        for (wi, v) in w.weights().iter().zip(vols) {
            assert!((wi - (1.0 / v) / norm).abs() < 1e-10);
        }

        let s = 0.3;
        let cov = CovarianceEstimate::from_matrix(syms(4), DMatrix::from_element(4, 4, s * s)).unwrap();
        let w = max_diversification(&cov).unwrap();
        assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((diversification_ratio(w.weights(), &cov) - 1.0).abs() < 1e-12);

        let mut m = DMatrix::identity(2, 2);
        m[(1, 1)] = 0.0;
        let cov = CovarianceEstimate::from_matrix(syms(2), m).unwrap();
        assert!(matches!(max_diversification(&cov), Err(Error::DegenerateAsset { .. })));
    }

    #[test]
    fn correlated_pair_goes_to_low_vol_corner() {
        // Correlation 0.9 with vols 1 and 2: the unconstrained minimum would short
        // the second asset, so the long-only answer puts everything in the first.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.8, 1.8, 4.0]);
        let cov = CovarianceEstimate::from_matrix(syms(2), m).unwrap();
        let w = min_variance(&cov).unwrap();
        assert!((w.weights()[0] - 1.0).abs() < 1e-12);
        assert_eq!(w.weights()[1], 0.0);
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(syms(2), vec![0.7, 0.7]).is_err());
        assert!(WeightVector::new(syms(2), vec![1.5, -0.5]).is_err());
        assert!(WeightVector::new(syms(2), vec![1.0]).is_err());
        let w = WeightVector::new(syms(2), vec![0.25, 0.75]).unwrap();
        assert_eq!(w.get("S1"), Some(0.75));
        assert_eq!(w.get("S9"), None);
    }
}
