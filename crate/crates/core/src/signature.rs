//! Truncated path signatures of piecewise-linear paths.
//!
//! Coefficients are stored level by level in one flat buffer. Within level
//! `k` the word `(i_1, ..., i_k)` sits at offset `Σ (i_j - 1) d^(k-j)`, so
//! the flat order is by word length first and lexicographic letters second.
//! Every signature in this crate, and every feature vector derived from
//! one, uses that order.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

/// Number of stored coefficients (constant term included) for a truncated
/// signature of a `dim`-dimensional path at `level`.
pub fn coefficient_count(dim: usize, level: usize) -> usize {
    (0..=level).map(|k| dim.pow(k as u32)).sum()
}

fn validate_shape(dim: usize, level: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidArgument("path dimension must be positive".into()));
    }
    if level == 0 {
        return Err(Error::InvalidArgument("signature level must be at least 1".into()));
    }
    let fits = (1..=level).try_fold(1usize, |acc, _| acc.checked_mul(dim)).is_some();
    if !fits || coefficient_count(dim, level) > 1 << 24 {
        return Err(Error::InvalidArgument(format!(
            "signature with dimension {dim} and level {level} is too large"
        )));
    }
    Ok(())
}

/// A multi-index over the channel alphabet `1..=d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(letters: Vec<usize>, dim: usize) -> Result<Self> {
        if let Some(&bad) = letters.iter().find(|&&l| l == 0 || l > dim) {
            return Err(Error::InvalidArgument(format!(
                "letter {bad} outside channel range 1..={dim}"
            )));
        }
        Ok(Word(letters))
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn letters(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn flat_index(&self, dim: usize) -> usize {
        let within = self.0.iter().fold(0usize, |acc, &l| acc * dim + (l - 1));
        level_offset(dim, self.0.len()) + within
    }
}

/// Renders letters joined by dots, e.g. `1.2.2`.
impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, letter) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{letter}")?;
        }
        Ok(())
    }
}

fn level_offset(dim: usize, k: usize) -> usize {
    (0..k).map(|j| dim.pow(j as u32)).sum()
}

/// All words of length `1..=level` in canonical order.
pub fn words(dim: usize, level: usize) -> Vec<Word> {
    let mut out = Vec::new();
    for k in 1..=level {
        for mut idx in 0..dim.pow(k as u32) {
            let mut letters = vec![0; k];
            for slot in letters.iter_mut().rev() {
                *slot = idx % dim + 1;
                idx /= dim;
            }
            out.push(Word(letters));
        }
    }
    out
}

/// Truncated signature: the iterated integrals of a path for all words of
/// length at most `level`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    dim: usize,
    level: usize,
    coeffs: Vec<f64>,
}

impl Signature {
    /// The signature of a constant path: 1 on the empty word, 0 elsewhere.
    pub fn identity(dim: usize, level: usize) -> Result<Self> {
        validate_shape(dim, level)?;
        let mut coeffs = vec![0.0; coefficient_count(dim, level)];
        coeffs[0] = 1.0;
        Ok(Signature { dim, level, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// All coefficients in canonical order, constant term first.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficients of words of length exactly `k`.
    pub fn level_coefficients(&self, k: usize) -> &[f64] {
        assert!(k <= self.level, "level {k} above truncation {}", self.level);
        let start = level_offset(self.dim, k);
        &self.coeffs[start..start + self.dim.pow(k as u32)]
    }

    pub fn get(&self, word: &Word) -> Option<f64> {
        if word.len() > self.level || word.letters().iter().any(|&l| l == 0 || l > self.dim) {
            return None;
        }
        Some(self.coeffs[word.flat_index(self.dim)])
    }

    /// Iterates `(word, coefficient)` pairs of levels `1..=level`.
    pub fn iter_words(&self) -> impl Iterator<Item = (Word, f64)> + '_ {
        words(self.dim, self.level)
            .into_iter()
            .zip(self.coeffs[1..].iter().copied())
    }
}

/// Signature of a single linear segment with increment `delta`: the
/// truncated tensor exponential, `Π δ_{i_j} / k!` on each word of length k.
pub fn segment_signature(delta: &[f64], level: usize) -> Result<Signature> {
    let mut sig = Signature::identity(delta.len(), level)?;
    fill_segment(&mut sig.coeffs, delta, level);
    Ok(sig)
}

fn fill_segment(coeffs: &mut [f64], delta: &[f64], level: usize) {
    let dim = delta.len();
    coeffs.fill(0.0);
    coeffs[0] = 1.0;
    let mut prev_start = 0;
    let mut prev_len = 1;
    for k in 1..=level {
        let start = prev_start + prev_len;
        let inv_k = 1.0 / k as f64;
        for p in 0..prev_len {
            let base = coeffs[prev_start + p] * inv_k;
            for (i, &d) in delta.iter().enumerate() {
                coeffs[start + p * dim + i] = base * d;
            }
        }
        prev_start = start;
        prev_len *= dim;
    }
}

/// Chen product of two truncated signatures: the signature of the path
/// obtained by running the first path and then the second.
pub fn chen_concatenate(a: &Signature, b: &Signature) -> Result<Signature> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            actual: b.dim,
        });
    }
    if a.level != b.level {
        return Err(Error::LevelMismatch {
            left: a.level,
            right: b.level,
        });
    }
    let mut out = vec![0.0; a.coeffs.len()];
    tensor_product_into(&a.coeffs, &b.coeffs, a.dim, a.level, &mut out);
    Ok(Signature {
        dim: a.dim,
        level: a.level,
        coeffs: out,
    })
}

// out[w] = Σ_{w = uv} a[u] b[v], truncated at `level`.
fn tensor_product_into(a: &[f64], b: &[f64], dim: usize, level: usize, out: &mut [f64]) {
    let offsets: Vec<usize> = (0..=level).map(|k| level_offset(dim, k)).collect();
    let sizes: Vec<usize> = (0..=level).map(|k| dim.pow(k as u32)).collect();
    for n in 0..=level {
        let dst = &mut out[offsets[n]..offsets[n] + sizes[n]];
        dst.fill(0.0);
        for i in 0..=n {
            let j = n - i;
            let au = &a[offsets[i]..offsets[i] + sizes[i]];
            let bv = &b[offsets[j]..offsets[j] + sizes[j]];
            for (u, &x) in au.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &mut dst[u * sizes[j]..(u + 1) * sizes[j]];
                for (r, &y) in row.iter_mut().zip(bv) {
                    *r += x * y;
                }
            }
        }
    }
}

/// A continuous path through `points`, linear between consecutive points.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl PiecewiseLinearPath {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or(Error::EmptyInput("path needs at least one point"))?;
        if dim == 0 {
            return Err(Error::InvalidArgument("path dimension must be positive".into()));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("path coordinates must be finite".into()));
            }
        }
        Ok(PiecewiseLinearPath { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn increments(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.points
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
    }
}

/// Signature of a piecewise-linear path, folding Chen products of the
/// segment exponentials from left to right.
pub fn path_signature(path: &PiecewiseLinearPath, level: usize) -> Result<Signature> {
    let mut acc = Signature::identity(path.dim, level)?;
    let mut seg = vec![0.0; acc.coeffs.len()];
    let mut scratch = vec![0.0; acc.coeffs.len()];
    for delta in path.increments() {
        if delta.iter().all(|&d| d == 0.0) {
            continue;
        }
        fill_segment(&mut seg, &delta, level);
        tensor_product_into(&acc.coeffs, &seg, path.dim, level, &mut scratch);
        std::mem::swap(&mut acc.coeffs, &mut scratch);
    }
    Ok(acc)
}

/// Lead-lag transform of a scalar stream `X_0..X_N` into a 2-d path with
/// `2N + 1` points. The lead channel moves first, then the lag catches up:
/// `(X_0,X_0), (X_1,X_0), (X_1,X_1), (X_2,X_1), ...`.
pub fn lead_lag_transform(values: &[f64]) -> Result<PiecewiseLinearPath> {
    let (first, rest) = values
        .split_first()
        .ok_or(Error::EmptyInput("lead-lag transform needs at least one value"))?;
    let mut points = Vec::with_capacity(2 * values.len() - 1);
    points.push(vec![*first, *first]);
    let mut lag = *first;
    for &x in rest {
        points.push(vec![x, lag]);
        points.push(vec![x, x]);
        lag = x;
    }
    PiecewiseLinearPath::new(points)
}

/// Log prices relative to the first close: `ln p_i - ln p_0`.
pub fn log_rebase(closes: &[f64]) -> Result<Vec<f64>> {
    let first = *closes
        .first()
        .ok_or(Error::EmptyInput("log rebase needs at least one close"))?;
    if let Some(bad) = closes.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidArgument(format!("non-positive price {bad}")));
    }
    let base = first.ln();
    Ok(closes.iter().map(|c| c.ln() - base).collect())
}

/// Flattened signature features of one asset, constant term dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub symbol: String,
    pub values: Vec<f64>,
}

/// Number of features per asset at a given level (lead-lag paths are 2-d).
pub fn feature_len(level: usize) -> usize {
    coefficient_count(2, level) - 1
}

/// Signature features of a window of closes: lead-lag path of the
/// log-rebased series, truncated at `level`.
pub fn asset_features(symbol: &str, closes: &[f64], level: usize) -> Result<FeatureVector> {
    let path = lead_lag_transform(&log_rebase(closes)?)?;
    let sig = path_signature(&path, level)?;
    Ok(FeatureVector {
        symbol: symbol.to_string(),
        values: sig.coeffs[1..].to_vec(),
    })
}

/// Writes features as `symbol,word,value` rows.
pub fn write_feature_dump<W: Write>(out: W, features: &[FeatureVector], level: usize) -> Result<()> {
    let all_words = words(2, level);
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["symbol", "word", "value"])?;
    for fv in features {
        if fv.values.len() != all_words.len() {
            return Err(Error::DimensionMismatch {
                expected: all_words.len(),
                actual: fv.values.len(),
            });
        }
        for (w, v) in all_words.iter().zip(&fv.values) {
            wtr.write_record([fv.symbol.as_str(), &w.to_string(), &v.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(letters: &[usize]) -> Word {
        Word(letters.to_vec())
    }

    #[test]
    fn coefficient_counts() {
        assert_eq!(coefficient_count(1, 3), 4);
        assert_eq!(coefficient_count(2, 4), 31);
        // (d^{K+1} - d)/(d - 1) + 1
        assert_eq!(coefficient_count(3, 3), (81 - 3) / 2 + 1);
        assert_eq!(feature_len(4), 30);
    }

    #[test]
    fn word_order_is_length_then_lexicographic() {
        let ws: Vec<String> = words(2, 2).iter().map(ToString::to_string).collect();
        assert_eq!(ws, ["1", "2", "1.1", "1.2", "2.1", "2.2"]);
        assert!(Word::new(vec![3], 2).is_err());
        assert!(Word::new(vec![0], 2).is_err());
    }

    #[test]
    fn lead_lag_examples() {
        let p = lead_lag_transform(&[1.0]).unwrap();
        assert_eq!(p.points(), &[vec![1.0, 1.0]]);
        let p = lead_lag_transform(&[1.0, 2.0]).unwrap();
        assert_eq!(p.points(), &[vec![1.0, 1.0], vec![2.0, 1.0], vec![2.0, 2.0]]);
        let p = lead_lag_transform(&[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(
            p.points(),
            &[
                vec![1.0, 1.0],
                vec![3.0, 1.0],
                vec![3.0, 3.0],
                vec![2.0, 3.0],
                vec![2.0, 2.0]
            ]
        );
        assert!(lead_lag_transform(&[]).is_err());
    }

    #[test]
    fn log_rebase_examples() {
        assert_eq!(log_rebase(&[100.0, 100.0, 100.0]).unwrap(), vec![0.0; 3]);
        let r = log_rebase(&[100.0, 110.0]).unwrap();
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 1.1f64.ln()).abs() < 1e-15);
        let r = log_rebase(&[50.0, 100.0, 25.0]).unwrap();
        assert!((r[1] - 2f64.ln()).abs() < 1e-15);
        assert!((r[2] + 2f64.ln()).abs() < 1e-15);
        assert!(log_rebase(&[1.0, 0.0]).is_err());
        assert!(log_rebase(&[1.0, -3.0]).is_err());
    }

    #[test]
    fn segment_closed_forms() {
        let a = 0.7;
        let s = segment_signature(&[a], 2).unwrap();
        assert_eq!(s.coefficients(), &[1.0, a, a * a / 2.0]);

        let s = segment_signature(&[0.0, 0.0], 3).unwrap();
        assert_eq!(s, Signature::identity(2, 3).unwrap());

        let s = segment_signature(&[1.0, 1.0], 2).unwrap();
        assert_eq!(s.level_coefficients(1), &[1.0, 1.0]);
        assert_eq!(s.level_coefficients(2), &[0.5; 4]);
        assert!(segment_signature(&[1.0], 0).is_err());
    }

    #[test]
    fn chen_identity_element_and_inverse() {
        let s = segment_signature(&[0.3, -1.2, 0.5], 4).unwrap();
        let id = Signature::identity(3, 4).unwrap();
        assert_eq!(chen_concatenate(&s, &id).unwrap(), s);
        assert_eq!(chen_concatenate(&id, &s).unwrap(), s);

        let back = segment_signature(&[-0.3, 1.2, -0.5], 4).unwrap();
        let c = chen_concatenate(&s, &back).unwrap();
        for (x, y) in c.coefficients().iter().zip(id.coefficients()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn chen_rejects_mismatched_shapes() {
        let a = Signature::identity(2, 3).unwrap();
        assert!(matches!(
            chen_concatenate(&a, &Signature::identity(3, 3).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            chen_concatenate(&a, &Signature::identity(2, 2).unwrap()),
            Err(Error::LevelMismatch { .. })
        ));
    }

    #[test]
    fn l_shaped_path() {
        let path =
            PiecewiseLinearPath::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let s = path_signature(&path, 2).unwrap();
        assert_eq!(s.get(&word(&[1])), Some(1.0));
        assert_eq!(s.get(&word(&[2])), Some(1.0));
        assert_eq!(s.get(&word(&[1, 1])), Some(0.5));
        assert_eq!(s.get(&word(&[2, 2])), Some(0.5));
        assert_eq!(s.get(&word(&[1, 2])), Some(1.0));
        assert_eq!(s.get(&word(&[2, 1])), Some(0.0));
        assert_eq!(s.get(&word(&[1, 1, 1])), None);
    }

    #[test]
    fn single_point_path_is_identity() {
        let path = PiecewiseLinearPath::new(vec![vec![4.0, -2.0]]).unwrap();
        assert_eq!(path_signature(&path, 3).unwrap(), Signature::identity(2, 3).unwrap());
        assert!(PiecewiseLinearPath::new(vec![]).is_err());
        assert!(PiecewiseLinearPath::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(PiecewiseLinearPath::new(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn duplicated_point_changes_nothing() {
        let pts = vec![vec![0.0, 0.1], vec![0.4, -0.3], vec![-0.2, 0.9], vec![1.0, 1.0]];
        let mut dup = pts.clone();
        dup.insert(2, pts[1].clone());
        let a = path_signature(&PiecewiseLinearPath::new(pts).unwrap(), 4).unwrap();
        let b = path_signature(&PiecewiseLinearPath::new(dup).unwrap(), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_examples() {
        let f = asset_features("USDT", &[1.0; 31], 4).unwrap();
        assert_eq!(f.values.len(), 30);
        assert!(f.values.iter().all(|&v| v == 0.0));

        let closes = [100.0, 104.0, 99.0, 101.5, 120.0];
        let scaled: Vec<f64> = closes.iter().map(|c| c * 8.0).collect();
        let a = asset_features("A", &closes, 3).unwrap();
        let b = asset_features("A", &scaled, 3).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
        }
    }

    #[test]
    fn feature_dump_format() {
        let f = asset_features("BTC", &[1.0, 2.0], 2).unwrap();
        let mut buf = Vec::new();
        write_feature_dump(&mut buf, &[f], 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "symbol,word,value");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("BTC,1,"));
        assert!(lines[6].starts_with("BTC,2.2,"));
    }
}
