//! Subjective-logic client reputation.
//!
//! Per round, every parameter of a client's update is screened into a
//! positive or negative observation. The counts map to a (belief,
//! disbelief, uncertainty) opinion whose expected value is the round
//! reputation; an exponentially decayed sliding window turns round
//! reputations into the final score, and min-max normalisation turns
//! scores into aggregation weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;

/// Parameters of the reputation model.
#[derive(Clone, Debug, PartialEq)]
pub struct ReputationConfig {
    /// Weight of a positive observation (kappa).
    pub positive_weight: f64,
    /// Weight of a negative observation (eta); `positive_weight + negative_weight = 1`.
    pub negative_weight: f64,
    /// Prior probability `a`: the fraction of uncertainty counted as belief.
    pub prior: f64,
    /// Non-information prior weight `W`.
    pub prior_weight: f64,
    /// Exponential time-decay rate `c`.
    pub decay: f64,
    /// Sliding-window length `s` in rounds.
    pub window: u32,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        ReputationConfig {
            positive_weight: 0.3,
            negative_weight: 0.7,
            prior: 0.5,
            prior_weight: 2.0,
            decay: 0.5,
            window: 10,
        }
    }
}

impl ReputationConfig {
    /// Builds a config from kappa alone, deriving `negative_weight = 1 - kappa`.
    pub fn with_kappa(kappa: f64, prior: f64, prior_weight: f64, decay: f64, window: u32) -> Result<Self> {
        let cfg = ReputationConfig {
            positive_weight: kappa,
            negative_weight: 1.0 - kappa,
            prior,
            prior_weight,
            decay,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.positive_weight > 0.0 && self.positive_weight < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "positive observation weight must lie in (0, 1), got {}",
                self.positive_weight
            )));
        }
        if (self.positive_weight + self.negative_weight - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "observation weights must sum to 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(Error::InvalidConfig("prior must lie in [0, 1]".into()));
        }
        if !(self.prior_weight > 0.0 && self.prior_weight.is_finite()) {
            return Err(Error::InvalidConfig("prior weight must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidConfig("decay rate must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window length must be at least 1".into()));
        }
        Ok(())
    }
}

/// A subjective-logic opinion; the three parts sum to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Opinion {
    pub belief: f64,
    pub disbelief: f64,
    pub uncertainty: f64,
}

/// Opinion from weighted observation counts.
pub fn opinion(positives: u64, negatives: u64, cfg: &ReputationConfig) -> Opinion {
    let p = cfg.positive_weight * positives as f64;
    let n = cfg.negative_weight * negatives as f64;
    let denom = p + n + cfg.prior_weight;
    Opinion {
        belief: p / denom,
        disbelief: n / denom,
        uncertainty: cfg.prior_weight / denom,
    }
}

/// Round reputation: the Beta expectation
/// `(kappa*P + W*a) / (kappa*P + eta*N + W)`, which equals
/// `belief + prior * uncertainty` of the corresponding opinion.
pub fn round_reputation(positives: u64, negatives: u64, cfg: &ReputationConfig) -> f64 {
    let p = cfg.positive_weight * positives as f64;
    let n = cfg.negative_weight * negatives as f64;
    (p + cfg.prior_weight * cfg.prior) / (p + n + cfg.prior_weight)
}

/// One round's record in a client's reputation history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub positives: u64,
    pub negatives: u64,
    pub reputation: f64,
}

/// Windowed reputation at round `t`: the decay-weighted mean of round
/// reputations over rounds in `[max(t - window, 0), t]`, with weights
/// `exp(-decay * (t - j))`. Records outside the window are ignored.
pub fn windowed_reputation(history: &[RoundRecord], cfg: &ReputationConfig, t: u32) -> Result<f64> {
    let lo = t.saturating_sub(cfg.window);
    let mut num = 0.0;
    let mut den = 0.0;
    for record in history {
        if record.round >= lo && record.round <= t {
            let theta = fmath::exp(-cfg.decay * (t - record.round) as f64);
            num += theta * record.reputation;
            den += theta;
        }
    }
    if den == 0.0 {
        return Err(Error::EmptyInput("reputation window"));
    }
    Ok(num / den)
}

/// Min-max normalisation to `[0, 1]`. A constant vector maps to `1/M`
/// everywhere so downstream weight normalisation never divides by zero.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![1.0 / values.len() as f64; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

/// A client's reputation state across rounds, owned by the aggregation loop.
#[derive(Clone, Debug, Default)]
pub struct ClientReputationState {
    history: Vec<RoundRecord>,
    /// Most recent windowed reputation.
    pub windowed: f64,
    /// Most recent min-max normalised reputation.
    pub normalized: f64,
    /// Most recent aggregation weight.
    pub weight: f64,
}

impl ClientReputationState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    /// Appends a round's observation counts, returning the round reputation.
    /// Rounds must be recorded in increasing order.
    pub fn record(
        &mut self,
        round: u32,
        positives: u64,
        negatives: u64,
        cfg: &ReputationConfig,
    ) -> Result<f64> {
        if let Some(last) = self.history.last() {
            if round <= last.round {
                return Err(Error::InvalidConfig(alloc::format!(
                    "round {round} recorded after round {}",
                    last.round
                )));
            }
        }
        let reputation = round_reputation(positives, negatives, cfg);
        self.history.push(RoundRecord {
            round,
            positives,
            negatives,
            reputation,
        });
        Ok(reputation)
    }

    pub fn windowed_at(&self, cfg: &ReputationConfig, t: u32) -> Result<f64> {
        windowed_reputation(&self.history, cfg, t)
    }
}
