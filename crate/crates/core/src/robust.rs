//! Server-side update screening: range rescaling, repeated-median line
//! fitting over value ranks, residual confidence scores, and median
//! rectification.
//!
//! All operations act on one parameter column at a time — the vector of the
//! n-th model parameter across the M clients of a round — and are pure, so
//! the N columns of a round can be screened independently.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;

/// Thresholds for the screening pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustConfig {
    /// Maximum allowed value range per column before rescaling kicks in.
    pub range_threshold: f64,
    /// Confidence below or at this gets a value replaced by the column median.
    pub confidence_threshold: f64,
    /// Clamp width multiplier of the confidence interval.
    pub clamp_lambda: f64,
    /// Median absolute residuals below this mean a perfect fit: all scores 1.
    pub residual_epsilon: f64,
    /// Iteration cap for the rescale loop; on hitting it the column is
    /// clamped into a window of width `range_threshold` around its median.
    pub max_rescale_iterations: usize,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            range_threshold: 2.0,
            confidence_threshold: 0.1,
            clamp_lambda: 2.0,
            residual_epsilon: 1e-12,
            max_rescale_iterations: 100,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_threshold > 0.0 && self.range_threshold.is_finite()) {
            return Err(Error::InvalidConfig("range threshold must be positive".into()));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(Error::InvalidConfig(
                "confidence threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.clamp_lambda > 0.0 && self.clamp_lambda.is_finite()) {
            return Err(Error::InvalidConfig("clamp lambda must be positive".into()));
        }
        if self.residual_epsilon < 0.0 {
            return Err(Error::InvalidConfig("residual epsilon must be non-negative".into()));
        }
        if self.max_rescale_iterations == 0 {
            return Err(Error::InvalidConfig("rescale iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// A line fitted through `(rank, value)` points, plus the 1-based ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionLine {
    pub slope: f64,
    pub intercept: f64,
    pub ranks: Vec<usize>,
}

/// Whether a client's value survived rectification in a column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Positive,
    Negative,
}

fn check_column(column: &[f64], required: usize, context: &'static str) -> Result<()> {
    if column.len() < required {
        return Err(Error::TooFewClients {
            required,
            actual: column.len(),
        });
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context));
    }
    Ok(())
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let n = sorted.len();
    if n % 2 == 0 {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    } else {
        sorted[n / 2]
    }
}

/// Lower-middle order statistic. The nested medians of the repeated-median
/// estimator use this convention: averaging the two middle slopes would mix
/// an outlier slope into the estimate at even counts and forfeit the exact
/// fit under up-to-half corruption.
fn median_low(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    values[(values.len() - 1) / 2]
}

/// Population standard deviation (divides by the count).
fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean: f64 = values.iter().sum::<f64>() / n;
    let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    fmath::sqrt(var)
}

/// Index of the maximum and minimum, lowest index winning ties.
fn extremes(values: &[f64]) -> (usize, usize) {
    let mut imax = 0;
    let mut imin = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[imax] {
            imax = i;
        }
        if v < values[imin] {
            imin = i;
        }
    }
    (imax, imin)
}

/// Shrinks a column's value range to at most `cfg.range_threshold`.
///
/// Each iteration recomputes the column's standard deviation, then pulls the
/// current maximum down and the current minimum up by one standard
/// deviation. Client order is preserved and the column sum is invariant
/// per iteration. If the loop has not converged after
/// `max_rescale_iterations`, the column is clamped into
/// `[median - threshold/2, median + threshold/2]`.
pub fn rescale(column: &[f64], cfg: &RobustConfig) -> Result<Vec<f64>> {
    check_column(column, 2, "rescale column")?;
    cfg.validate()?;
    let mut col = column.to_vec();
    let (mut imax, mut imin) = extremes(&col);
    let mut iterations = 0;
    while col[imax] - col[imin] > cfg.range_threshold && iterations < cfg.max_rescale_iterations {
        let sd = population_std(&col);
        col[imax] -= sd;
        col[imin] += sd;
        (imax, imin) = extremes(&col);
        iterations += 1;
    }
    if col[imax] - col[imin] > cfg.range_threshold {
        let mid = median(&col);
        let half = cfg.range_threshold / 2.0;
        for v in col.iter_mut() {
            *v = v.clamp(mid - half, mid + half);
        }
    }
    Ok(col)
}

/// 1-based ranks by ascending value, ties broken by client index.
fn ranks_ascending(column: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&a, &b| {
        column[a]
            .partial_cmp(&column[b])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0usize; column.len()];
    for (rank, &client) in order.iter().enumerate() {
        ranks[client] = rank + 1;
    }
    ranks
}

/// Fits a line through `(rank, value)` with the repeated-median estimator:
/// the slope is the median over points of the median slope to every other
/// point, and the intercept is the median of `value - slope * rank`.
pub fn repeated_median_line(column: &[f64]) -> Result<RegressionLine> {
    check_column(column, 2, "regression column")?;
    let m = column.len();
    let ranks = ranks_ascending(column);
    let mut inner = Vec::with_capacity(m);
    let mut slopes = Vec::with_capacity(m - 1);
    for i in 0..m {
        slopes.clear();
        for j in 0..m {
            if j != i {
                slopes.push((column[j] - column[i]) / (ranks[j] as f64 - ranks[i] as f64));
            }
        }
        inner.push(median_low(&mut slopes));
    }
    let slope = median_low(&mut inner);
    let mut offsets: Vec<f64> = (0..m).map(|i| column[i] - slope * ranks[i] as f64).collect();
    let intercept = median_low(&mut offsets);
    Ok(RegressionLine {
        slope,
        intercept,
        ranks,
    })
}

/// Per-client confidence in `(0, 1]` from normalised regression residuals.
///
/// Residuals are scaled against the column's median absolute residual,
/// leverage-corrected through the hat-matrix diagonal of the `(1, rank)`
/// design, and passed through a clamp of half-width
/// `clamp_lambda * sqrt(2/M)`. Values inside the clamp score exactly 1.
pub fn confidence_scores(
    column: &[f64],
    line: &RegressionLine,
    cfg: &RobustConfig,
) -> Result<Vec<f64>> {
    check_column(column, 3, "confidence column")?;
    cfg.validate()?;
    let m = column.len();
    if line.ranks.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: line.ranks.len(),
            context: "regression ranks",
        });
    }

    let residuals: Vec<f64> = (0..m)
        .map(|i| column[i] - line.slope * line.ranks[i] as f64 - line.intercept)
        .collect();
    let abs_res: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let med_abs = median(&abs_res);
    if med_abs < cfg.residual_epsilon {
        return Ok(vec![1.0; m]);
    }

    let mf = m as f64;
    let rank_mean = line.ranks.iter().map(|&x| x as f64).sum::<f64>() / mf;
    let rank_sumsq: f64 = line
        .ranks
        .iter()
        .map(|&x| (x as f64 - rank_mean) * (x as f64 - rank_mean))
        .sum();
    let bound = cfg.clamp_lambda * fmath::sqrt(2.0 / mf);
    let norm = 25.0 * (mf - 1.0) / (37.0 * (mf + 4.0) * med_abs);

    let scores = (0..m)
        .map(|i| {
            let x = line.ranks[i] as f64;
            let leverage = 1.0 / mf + (x - rank_mean) * (x - rank_mean) / rank_sumsq;
            let spread = fmath::sqrt(1.0 - leverage);
            let e = norm * residuals[i];
            if e.abs() <= bound * spread {
                1.0
            } else {
                bound * spread / e.abs()
            }
        })
        .collect();
    Ok(scores)
}

/// Keeps values whose confidence exceeds `confidence_threshold` and replaces
/// the rest by the column median, reporting a per-client observation flag.
pub fn rectify(
    column: &[f64],
    scores: &[f64],
    confidence_threshold: f64,
) -> Result<(Vec<f64>, Vec<Observation>)> {
    if scores.len() != column.len() {
        return Err(Error::DimensionMismatch {
            expected: column.len(),
            actual: scores.len(),
            context: "confidence scores",
        });
    }
    check_column(column, 1, "rectify column")?;
    let mid = median(column);
    let mut rectified = Vec::with_capacity(column.len());
    let mut flags = Vec::with_capacity(column.len());
    for (&value, &score) in column.iter().zip(scores) {
        if score > confidence_threshold {
            rectified.push(value);
            flags.push(Observation::Positive);
        } else {
            rectified.push(mid);
            flags.push(Observation::Negative);
        }
    }
    Ok((rectified, flags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_hand_trace() {
        let cfg = RobustConfig::default();
        let out = rescale(&[0.0, 1.0, 10.0], &cfg).unwrap();
        let expected = [4.496913, 2.929841, 3.573246];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-6, "{o} vs {e}");
        }
        let range = out.iter().cloned().fold(f64::MIN, f64::max)
            - out.iter().cloned().fold(f64::MAX, f64::min);
        assert!(range <= 2.0);
    }

    #[test]
    fn rescale_leaves_small_ranges_alone() {
        let cfg = RobustConfig::default();
        assert_eq!(rescale(&[1.0, 1.5, 2.0], &cfg).unwrap(), vec![1.0, 1.5, 2.0]);
        assert_eq!(rescale(&[3.0, 3.0, 3.0], &cfg).unwrap(), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn repeated_median_collinear() {
        let line = repeated_median_line(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(line.ranks, vec![1, 2, 3]);
        assert!((line.slope - 1.0).abs() < 1e-12);
        assert!(line.intercept.abs() < 1e-12);
    }

    #[test]
    fn repeated_median_ignores_single_outlier() {
        let line = repeated_median_line(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert!((line.slope - 1.0).abs() < 1e-12);
        assert!(line.intercept.abs() < 1e-12);
    }

    #[test]
    fn repeated_median_two_points() {
        let line = repeated_median_line(&[3.0, 5.0]).unwrap();
        assert!((line.slope - 2.0).abs() < 1e-12);
        assert!((line.intercept - 1.0).abs() < 1e-12);
    }

    fn outlier_fixture() -> (Vec<f64>, RegressionLine) {
        let column = vec![1.1, 1.9, 3.2, 3.8, 100.0];
        let line = RegressionLine {
            slope: 1.0,
            intercept: 0.0,
            ranks: vec![1, 2, 3, 4, 5],
        };
        (column, line)
    }

    #[test]
    fn confidence_hand_example() {
        let (column, line) = outlier_fixture();
        let cfg = RobustConfig::default();
        let scores = confidence_scores(&column, &line, &cfg).unwrap();
        for &s in &scores[..4] {
            assert_eq!(s, 1.0);
        }
        assert!((scores[4] - 0.00560842).abs() < 1e-6, "outlier score {}", scores[4]);
    }

    #[test]
    fn perfect_fit_scores_one() {
        let column = [2.0, 4.0, 6.0, 8.0];
        let line = repeated_median_line(&column).unwrap();
        let scores = confidence_scores(&column, &line, &RobustConfig::default()).unwrap();
        assert_eq!(scores, vec![1.0; 4]);
    }

    #[test]
    fn rectify_replaces_low_confidence_with_median() {
        let (column, _) = outlier_fixture();
        let scores = [1.0, 1.0, 1.0, 1.0, 0.00561];
        let (rectified, flags) = rectify(&column, &scores, 0.1).unwrap();
        assert_eq!(rectified, vec![1.1, 1.9, 3.2, 3.8, 3.2]);
        assert_eq!(flags[..4], vec![Observation::Positive; 4][..]);
        assert_eq!(flags[4], Observation::Negative);
    }

    #[test]
    fn rectify_keeps_all_when_confident() {
        let column = [0.5, 0.7, 0.6];
        let (rectified, flags) = rectify(&column, &[1.0, 1.0, 1.0], 0.1).unwrap();
        assert_eq!(rectified, column.to_vec());
        assert!(flags.iter().all(|&f| f == Observation::Positive));
    }

    #[test]
    fn rectify_all_negative_is_constant_median() {
        let column = [1.0, 2.0, 9.0];
        let (rectified, flags) = rectify(&column, &[0.0, 0.05, 0.1], 0.1).unwrap();
        assert_eq!(rectified, vec![2.0, 2.0, 2.0]);
        assert!(flags.iter().all(|&f| f == Observation::Negative));
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 100.0]), 2.0);
        assert_eq!(median_low(&mut [4.0, 1.0, 3.0, 2.0]), 2.0);
    }
}
