//! Server aggregation rules.
//!
//! Baselines (FedAvg, coordinate-wise median, trimmed mean, residual
//! re-weighting) operate on the raw update matrix. The reputation rule runs
//! the full screening pipeline per coordinate, accumulates per-client
//! observation counts, and averages the rectified updates under normalised
//! windowed reputations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::reputation::{
    minmax_normalize, ClientReputationState, ReputationConfig,
};
use crate::robust::{
    confidence_scores, median, rectify, repeated_median_line, rescale, Observation, RobustConfig,
};

/// The M client updates of one round, one flattened parameter vector each.
#[derive(Clone, Debug)]
pub struct UpdateMatrix {
    rows: Vec<Vec<f64>>,
    client_ids: Vec<usize>,
    sample_counts: Vec<u64>,
}

impl UpdateMatrix {
    pub fn new(rows: Vec<Vec<f64>>, client_ids: Vec<usize>, sample_counts: Vec<u64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("update matrix"));
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(Error::EmptyInput("update rows"));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                actual: rows.iter().map(Vec::len).find(|&l| l != width).unwrap_or(0),
                context: "update rows",
            });
        }
        if client_ids.len() != rows.len() || sample_counts.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: client_ids.len().min(sample_counts.len()),
                context: "update metadata",
            });
        }
        if sample_counts.iter().any(|&q| q == 0) {
            return Err(Error::InvalidConfig("sample counts must be positive".into()));
        }
        Ok(UpdateMatrix {
            rows,
            client_ids,
            sample_counts,
        })
    }

    /// Rows with default ids `0..M` and unit sample counts.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        Self::new(rows, (0..m).collect(), vec![1; m])
    }

    pub fn client_count(&self) -> usize {
        self.rows.len()
    }

    pub fn param_count(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    pub fn sample_counts(&self) -> &[u64] {
        &self.sample_counts
    }

    fn column(&self, n: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[n]).collect()
    }
}

/// Which aggregation rule the server runs.
#[derive(Clone, Debug, PartialEq)]
pub enum AggregatorKind {
    FedAvg,
    CoordMedian,
    TrimmedMean { beta: usize },
    Residual(RobustConfig),
    Reputation(RobustConfig, ReputationConfig),
}

impl AggregatorKind {
    pub fn validate(&self, clients: usize) -> Result<()> {
        match self {
            AggregatorKind::FedAvg | AggregatorKind::CoordMedian => Ok(()),
            AggregatorKind::TrimmedMean { beta } => {
                if 2 * beta >= clients {
                    Err(Error::InvalidConfig(alloc::format!(
                        "trimmed mean needs 2*beta < clients, got beta {beta} with {clients} clients"
                    )))
                } else {
                    Ok(())
                }
            }
            AggregatorKind::Residual(robust) => {
                robust.validate()?;
                if clients < 3 {
                    return Err(Error::TooFewClients {
                        required: 3,
                        actual: clients,
                    });
                }
                Ok(())
            }
            AggregatorKind::Reputation(robust, reputation) => {
                robust.validate()?;
                reputation.validate()?;
                if clients < 3 {
                    return Err(Error::TooFewClients {
                        required: 3,
                        actual: clients,
                    });
                }
                Ok(())
            }
        }
    }
}

/// Sample-count weighted mean: `w_n = sum_i (Q_i / Q) * w_{i,n}`.
pub fn fedavg(updates: &UpdateMatrix) -> Result<Vec<f64>> {
    let total: u64 = updates.sample_counts.iter().sum();
    let mut out = vec![0.0; updates.param_count()];
    for (row, &q) in updates.rows.iter().zip(&updates.sample_counts) {
        let weight = q as f64 / total as f64;
        for (o, v) in out.iter_mut().zip(row) {
            *o += weight * v;
        }
    }
    Ok(out)
}

/// Coordinate-wise median (midpoint convention at even client counts).
pub fn coord_median(updates: &UpdateMatrix) -> Result<Vec<f64>> {
    Ok((0..updates.param_count())
        .map(|n| median(&updates.column(n)))
        .collect())
}

/// Coordinate-wise mean after dropping the `beta` largest and `beta`
/// smallest values.
pub fn trimmed_mean(updates: &UpdateMatrix, beta: usize) -> Result<Vec<f64>> {
    let m = updates.client_count();
    if 2 * beta >= m {
        return Err(Error::InvalidConfig(alloc::format!(
            "trimmed mean needs 2*beta < clients, got beta {beta} with {m} clients"
        )));
    }
    let kept = (m - 2 * beta) as f64;
    Ok((0..updates.param_count())
        .map(|n| {
            let mut col = updates.column(n);
            col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
            col[beta..m - beta].iter().sum::<f64>() / kept
        })
        .collect())
}

/// Residual-based re-weighting baseline: per coordinate, a confidence-score
/// weighted average of the raw column (no rescaling, no rectification, no
/// cross-round state).
pub fn residual_reweight(updates: &UpdateMatrix, robust: &RobustConfig) -> Result<Vec<f64>> {
    if updates.client_count() < 3 {
        return Err(Error::TooFewClients {
            required: 3,
            actual: updates.client_count(),
        });
    }
    let mut out = Vec::with_capacity(updates.param_count());
    for n in 0..updates.param_count() {
        let col = updates.column(n);
        let line = repeated_median_line(&col)?;
        let scores = confidence_scores(&col, &line, robust)?;
        let total: f64 = scores.iter().sum();
        let value = col
            .iter()
            .zip(&scores)
            .map(|(v, s)| v * s)
            .sum::<f64>()
            / total;
        out.push(value);
    }
    Ok(out)
}

/// Per-client outcome of one reputation-aggregation round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClientRoundStat {
    pub client: usize,
    pub positives: u64,
    pub negatives: u64,
    /// Round reputation from this round's counts alone.
    pub reputation: f64,
    /// Decayed windowed reputation.
    pub windowed: f64,
    /// Min-max normalised windowed reputation.
    pub normalized: f64,
    /// Final aggregation weight (normalised reputations summing to 1).
    pub weight: f64,
}

/// Result of [`reputation_aggregate`].
#[derive(Clone, Debug)]
pub struct ReputationOutcome {
    pub global: Vec<f64>,
    pub stats: Vec<ClientRoundStat>,
}

/// The reputation-based aggregation round.
///
/// Every coordinate is rescaled, fitted, scored, and rectified; observation
/// flags accumulate into per-client counts. Each client's round reputation
/// is appended to its history, the windowed reputation is computed and
/// min-max normalised, and the global vector is the reputation-weighted
/// average of the rectified updates.
pub fn reputation_aggregate(
    updates: &UpdateMatrix,
    states: &mut [ClientReputationState],
    robust: &RobustConfig,
    reputation: &ReputationConfig,
    round: u32,
) -> Result<ReputationOutcome> {
    let m = updates.client_count();
    if m < 3 {
        return Err(Error::TooFewClients {
            required: 3,
            actual: m,
        });
    }
    if states.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: states.len(),
            context: "reputation states",
        });
    }
    robust.validate()?;
    reputation.validate()?;

    let n_params = updates.param_count();
    let mut positives = vec![0u64; m];
    let mut negatives = vec![0u64; m];
    // Rectified values, column-major.
    let mut rectified = vec![0.0; n_params * m];

    for n in 0..n_params {
        let column = updates.column(n);
        let scaled = rescale(&column, robust)?;
        let line = repeated_median_line(&scaled)?;
        let scores = confidence_scores(&scaled, &line, robust)?;
        let (values, flags) = rectify(&scaled, &scores, robust.confidence_threshold)?;
        for i in 0..m {
            match flags[i] {
                Observation::Positive => positives[i] += 1,
                Observation::Negative => negatives[i] += 1,
            }
            rectified[n * m + i] = values[i];
        }
    }

    let mut windowed = Vec::with_capacity(m);
    let mut per_round = Vec::with_capacity(m);
    for i in 0..m {
        per_round.push(states[i].record(round, positives[i], negatives[i], reputation)?);
        windowed.push(states[i].windowed_at(reputation, round)?);
    }
    let normalized = minmax_normalize(&windowed);
    let weight_sum: f64 = normalized.iter().sum();
    let weights: Vec<f64> = normalized.iter().map(|r| r / weight_sum).collect();

    let mut global = vec![0.0; n_params];
    for n in 0..n_params {
        let base = n * m;
        global[n] = weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * rectified[base + i])
            .sum();
    }

    let stats = (0..m)
        .map(|i| {
            let state = &mut states[i];
            state.windowed = windowed[i];
            state.normalized = normalized[i];
            state.weight = weights[i];
            ClientRoundStat {
                client: updates.client_ids[i],
                positives: positives[i],
                negatives: negatives[i],
                reputation: per_round[i],
                windowed: windowed[i],
                normalized: normalized[i],
                weight: weights[i],
            }
        })
        .collect();

    Ok(ReputationOutcome { global, stats })
}

/// Dispatches to the configured rule. Reputation aggregation needs the
/// mutable per-client states and the round number.
pub fn aggregate(
    kind: &AggregatorKind,
    updates: &UpdateMatrix,
    states: &mut [ClientReputationState],
    round: u32,
) -> Result<(Vec<f64>, Option<Vec<ClientRoundStat>>)> {
    match kind {
        AggregatorKind::FedAvg => Ok((fedavg(updates)?, None)),
        AggregatorKind::CoordMedian => Ok((coord_median(updates)?, None)),
        AggregatorKind::TrimmedMean { beta } => Ok((trimmed_mean(updates, *beta)?, None)),
        AggregatorKind::Residual(robust) => Ok((residual_reweight(updates, robust)?, None)),
        AggregatorKind::Reputation(robust, reputation) => {
            let outcome = reputation_aggregate(updates, states, robust, reputation, round)?;
            Ok((outcome.global, Some(outcome.stats)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fedavg_weighted_example() {
        let updates =
            UpdateMatrix::new(vec![vec![0.0], vec![4.0]], vec![0, 1], vec![1, 3]).unwrap();
        assert_eq!(fedavg(&updates).unwrap(), vec![3.0]);
    }

    #[test]
    fn fedavg_equal_counts_is_mean() {
        let updates = UpdateMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(fedavg(&updates).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn fedavg_single_client_passthrough() {
        let updates = UpdateMatrix::from_rows(vec![vec![5.0, -1.0]]).unwrap();
        assert_eq!(fedavg(&updates).unwrap(), vec![5.0, -1.0]);
    }

    #[test]
    fn coord_median_examples() {
        let updates =
            UpdateMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![100.0]]).unwrap();
        assert_eq!(coord_median(&updates).unwrap(), vec![2.0]);

        let updates = UpdateMatrix::from_rows(vec![vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(coord_median(&updates).unwrap(), vec![2.0]);

        let rows = vec![vec![0.5, -2.0]; 4];
        let updates = UpdateMatrix::from_rows(rows).unwrap();
        assert_eq!(coord_median(&updates).unwrap(), vec![0.5, -2.0]);
    }

    #[test]
    fn trimmed_mean_examples() {
        let updates = UpdateMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![3.0], vec![100.0]])
            .unwrap();
        assert_eq!(trimmed_mean(&updates, 1).unwrap(), vec![2.5]);
        assert_eq!(trimmed_mean(&updates, 0).unwrap(), vec![26.5]);

        let three = UpdateMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(trimmed_mean(&three, 2).is_err());
    }

    #[test]
    fn residual_reweight_downweights_outlier() {
        let rows = vec![vec![1.1], vec![1.9], vec![3.2], vec![3.8], vec![100.0]];
        let updates = UpdateMatrix::from_rows(rows).unwrap();
        let out = residual_reweight(&updates, &RobustConfig::default()).unwrap();
        let mean = 22.0f64;
        assert!((out[0] - 2.5).abs() < (mean - 2.5).abs());
        assert!(out[0] >= 1.1 && out[0] <= 100.0);
    }

    #[test]
    fn residual_reweight_identical_rows_passthrough() {
        let updates = UpdateMatrix::from_rows(vec![vec![0.7, -0.2]; 5]).unwrap();
        assert_eq!(residual_reweight(&updates, &RobustConfig::default()).unwrap(), vec![0.7, -0.2]);
    }

    fn run_reputation(rows: Vec<Vec<f64>>, rounds: u32) -> (Vec<f64>, Vec<ClientRoundStat>, Vec<ClientReputationState>) {
        let m = rows.len();
        let updates = UpdateMatrix::from_rows(rows).unwrap();
        let mut states = vec![ClientReputationState::new(); m];
        let robust = RobustConfig::default();
        let reputation = ReputationConfig::default();
        let mut last = None;
        for t in 1..=rounds {
            last = Some(
                reputation_aggregate(&updates, &mut states, &robust, &reputation, t).unwrap(),
            );
        }
        let outcome = last.unwrap();
        (outcome.global, outcome.stats, states)
    }

    #[test]
    fn reputation_identical_updates_are_fixed_point() {
        let row = vec![0.25, -1.5, 3.0];
        let (global, stats, _) = run_reputation(vec![row.clone(); 5], 1);
        for (g, r) in global.iter().zip(&row) {
            assert!((g - r).abs() < 1e-12);
        }
        for stat in &stats {
            assert_eq!(stat.positives, 3);
            assert_eq!(stat.negatives, 0);
            assert!((stat.weight - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn reputation_flags_offset_attacker_on_every_coordinate() {
        // Honest rows agree up to a small spread; the attacker adds a
        // constant offset large against that spread but inside the rescale
        // threshold, so every coordinate survives to the residual test.
        let n_params = 40;
        let honest: Vec<f64> = (0..n_params).map(|n| (n as f64) * 0.01).collect();
        // Non-collinear spreads, or the zero-residual guard would excuse everyone.
        let spreads = [0.0, 1e-3, 3e-3, 7e-3];
        let mut rows: Vec<Vec<f64>> = spreads
            .iter()
            .map(|s| honest.iter().map(|v| v + s).collect())
            .collect();
        rows.push(honest.iter().map(|v| v + 1.5).collect());
        let (global, stats, states) = run_reputation(rows, 1);
        let attacker = &stats[4];
        assert_eq!(attacker.negatives, n_params as u64);
        let cfg = ReputationConfig::default();
        let expected =
            cfg.prior_weight * cfg.prior / (cfg.negative_weight * n_params as f64 + cfg.prior_weight);
        assert!((attacker.reputation - expected).abs() < 1e-12);
        assert!(attacker.weight < stats[0].weight);
        assert_eq!(attacker.weight, 0.0);
        assert_eq!(states[4].history().len(), 1);
        // The attacker's values were rectified to the column medians, so the
        // global vector stays inside the honest band on every coordinate.
        for (n, g) in global.iter().enumerate() {
            assert!((g - honest[n]).abs() < 0.01, "coord {n} drifted to {g}");
        }
    }

    #[test]
    fn reputation_output_within_rectified_bounds() {
        let rows = vec![
            vec![0.0, 1.0],
            vec![0.1, 1.1],
            vec![0.2, 0.9],
            vec![0.15, 1.05],
        ];
        let (global, _, _) = run_reputation(rows, 3);
        assert!(global[0] >= 0.0 && global[0] <= 0.2);
        assert!(global[1] >= 0.9 && global[1] <= 1.1);
    }

    #[test]
    fn aggregate_dispatch_matches_direct_calls() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let updates = UpdateMatrix::from_rows(rows).unwrap();
        let mut states = vec![ClientReputationState::new(); 3];
        let (global, stats) = aggregate(&AggregatorKind::CoordMedian, &updates, &mut states, 1).unwrap();
        assert_eq!(global, vec![2.0]);
        assert!(stats.is_none());
    }
}
