//! Closed-form convergence-bound quantities for configuration sanity
//! checks: the aggregation-error terms, the iteration lower bound, and the
//! per-parameter error rate used in monotonicity diagnostics.

use crate::error::{Error, Result};
use crate::fmath;

/// Constant of the gradient-concentration bound.
const BOUND_C: f64 = 0.4748;

/// Analytic constants and configuration values the bounds are evaluated at.
///
/// The Lipschitz, convexity, gradient, variance, and residual constants are
/// properties of the loss landscape that the simulation never measures;
/// callers supply them. `strong_convexity` is carried for completeness but
/// the implemented bound formulas do not consume it, and the quantile value
/// `quantile` enters only through [`d_epsilon`].
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryInputs {
    pub clients: usize,
    pub params: usize,
    pub attacker_fraction: f64,
    pub range_threshold: f64,
    pub confidence_threshold: f64,
    pub positive_weight: f64,
    pub negative_weight: f64,
    pub prior: f64,
    pub prior_weight: f64,
    pub lipschitz: f64,
    pub strong_convexity: f64,
    pub learning_rate: f64,
    pub dimension: f64,
    pub max_samples: f64,
    pub gradient_bound: f64,
    pub variance_bound: f64,
    pub residual_sup: f64,
    pub domain_radius: f64,
    pub epsilon: f64,
    pub quantile: f64,
    pub init_distance: f64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.params == 0 {
            return Err(Error::InvalidConfig("client and parameter counts must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.attacker_fraction) {
            return Err(Error::InvalidConfig("attacker fraction must lie in [0, 0.5)".into()));
        }
        if (self.positive_weight + self.negative_weight - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("observation weights must sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(Error::InvalidConfig("prior must lie in [0, 1]".into()));
        }
        for (value, name) in [
            (self.range_threshold, "range threshold"),
            (self.confidence_threshold, "confidence threshold"),
            (self.prior_weight, "prior weight"),
            (self.lipschitz, "lipschitz constant"),
            (self.learning_rate, "learning rate"),
            (self.dimension, "dimension"),
            (self.max_samples, "max sample count"),
            (self.gradient_bound, "gradient bound"),
            (self.domain_radius, "domain radius"),
            (self.init_distance, "initial distance"),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{name} must be positive and finite"
                )));
            }
        }
        if self.variance_bound < 0.0 || self.residual_sup < 0.0 {
            return Err(Error::InvalidConfig(
                "variance and residual bounds must be non-negative".into(),
            ));
        }
        if self.learning_rate * self.lipschitz >= 1.0 {
            return Err(Error::InvalidConfig(
                "learning rate must be below 1/L".into(),
            ));
        }
        Ok(())
    }
}

/// The aggregation-error term contributed by rescaling and rectification:
///
/// `M(range(M-1) + 2E/(sqrt(M) delta)) / (Wa(M-1)(kN+W)/((eN+W)(kN+Wa)) + 1)`.
pub fn delta1(inputs: &TheoryInputs) -> f64 {
    let m = inputs.clients as f64;
    let n = inputs.params as f64;
    let numerator = m
        * (inputs.range_threshold * (m - 1.0)
            + 2.0 * inputs.residual_sup / (fmath::sqrt(m) * inputs.confidence_threshold));
    let kn = inputs.positive_weight * n;
    let denominator = inputs.prior_weight * inputs.prior * (m - 1.0) * (kn + inputs.prior_weight)
        / ((inputs.negative_weight * n + inputs.prior_weight) * (kn + inputs.prior_weight * inputs.prior))
        + 1.0;
    numerator / denominator
}

/// `sqrt(2*pi) * exp(quantile^2 / 2)`.
pub fn d_epsilon(quantile: f64) -> f64 {
    fmath::sqrt(2.0 * core::f64::consts::PI) * fmath::exp(0.5 * quantile * quantile)
}

/// The sampling-error term of the convergence bound.
pub fn delta2(inputs: &TheoryInputs) -> f64 {
    let m = inputs.clients as f64;
    let q = inputs.max_samples;
    let base = 2.0 * fmath::sqrt(2.0) / (m * q);
    let inner = fmath::sqrt(
        inputs.dimension * fmath::ln(1.0 + q * m * inputs.lipschitz * inputs.domain_radius)
            / (m * (1.0 - inputs.attacker_fraction)),
    ) + BOUND_C * inputs.gradient_bound / fmath::sqrt(q)
        + inputs.attacker_fraction;
    base + fmath::sqrt(2.0 / q) * d_epsilon(inputs.quantile) * inputs.variance_bound * inner
}

/// Per-parameter error rate `(sqrt(N) delta1 + delta2) / N`; decreasing in
/// the model size even though `delta1` itself saturates with it.
pub fn error_rate(inputs: &TheoryInputs) -> f64 {
    let n = inputs.params as f64;
    (fmath::sqrt(n) * delta1(inputs) + delta2(inputs)) / n
}

/// Iterations needed before the residual error term dominates:
/// `ceil((1/(Lr)) ln(L ||w0 - w*|| / (sqrt(N) d1 + d2)))`, clamped at zero.
pub fn min_iterations(inputs: &TheoryInputs, delta1: f64, delta2: f64) -> Result<u64> {
    let lr = inputs.lipschitz * inputs.learning_rate;
    if !(0.0..1.0).contains(&lr) || lr == 0.0 {
        return Err(Error::InvalidConfig("Lr must lie in (0, 1)".into()));
    }
    let floor = fmath::sqrt(inputs.params as f64) * delta1 + delta2;
    if !(floor > 0.0) {
        return Err(Error::InvalidConfig(
            "error floor must be positive".into(),
        ));
    }
    let argument = inputs.lipschitz * inputs.init_distance / floor;
    if argument <= 1.0 {
        return Ok(0);
    }
    Ok(fmath::ceil(fmath::ln(argument) / lr) as u64)
}
