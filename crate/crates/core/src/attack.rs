//! Data-poisoning attack construction and activation schedules.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fmath;
use crate::rng;

/// When an attacker's schedule fires (rounds are 1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Never,
    Always,
    /// Active in exactly one round.
    Once(u32),
    /// Active from the given round onwards.
    From(u32),
    /// Active at `start`, then every `period` rounds after it.
    Every { start: u32, period: u32 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Once(t0) | Schedule::From(t0) if t0 == 0 => Err(Error::InvalidConfig(
                "schedule rounds are 1-based; start must be at least 1".into(),
            )),
            Schedule::Every { start, period } if start == 0 || period == 0 => {
                Err(Error::InvalidConfig(
                    "schedule start and period must be at least 1".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn active(&self, round: u32) -> bool {
        schedule_active(self, round)
    }

    /// The same schedule delayed by `offset` rounds; used to stagger
    /// attackers.
    pub fn shifted(&self, offset: u32) -> Schedule {
        match *self {
            Schedule::Never => Schedule::Never,
            Schedule::Always => Schedule::Always,
            Schedule::Once(t0) => Schedule::Once(t0 + offset),
            Schedule::From(t0) => Schedule::From(t0 + offset),
            Schedule::Every { start, period } => Schedule::Every {
                start: start + offset,
                period,
            },
        }
    }
}

/// Whether the schedule is active at the given round.
pub fn schedule_active(schedule: &Schedule, round: u32) -> bool {
    match *schedule {
        Schedule::Never => false,
        Schedule::Always => true,
        Schedule::Once(t0) => round == t0,
        Schedule::From(t0) => round >= t0,
        Schedule::Every { start, period } => round >= start && (round - start) % period == 0,
    }
}

/// How the backdoor trigger pattern is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum TriggerSpec {
    /// Write these values at these feature indices.
    Explicit(Vec<(usize, f64)>),
    /// Use the first `coords` feature indices, all set to the given
    /// percentile of the training features (resolved once at setup).
    Percentile { coords: usize, percentile: f64 },
}

impl TriggerSpec {
    /// Resolves the trigger into concrete `(index, value)` pairs.
    pub fn resolve(&self, train: &Dataset) -> Result<Vec<(usize, f64)>> {
        match self {
            TriggerSpec::Explicit(pairs) => {
                if pairs.is_empty() {
                    return Err(Error::EmptyInput("backdoor trigger"));
                }
                Ok(pairs.clone())
            }
            TriggerSpec::Percentile { coords, percentile } => {
                if *coords == 0 {
                    return Err(Error::EmptyInput("backdoor trigger"));
                }
                if train.is_empty() {
                    return Err(Error::EmptyInput("training data for trigger"));
                }
                if *coords > train.feature_dim() {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "trigger spans {coords} coordinates but features have dimension {}",
                        train.feature_dim()
                    )));
                }
                let mut values = train.features().to_vec();
                values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
                let rank = fmath::ceil(percentile * values.len() as f64) as usize;
                let value = values[rank.clamp(1, values.len()) - 1];
                Ok((0..*coords).map(|i| (i, value)).collect())
            }
        }
    }
}

/// The poisoning strategy attackers apply to their local shards.
#[derive(Clone, Debug, PartialEq)]
pub enum AttackKind {
    /// Relabel a fraction of the source class as the target class.
    LabelFlip {
        source: usize,
        target: usize,
        rate: f64,
    },
    /// Write a trigger pattern into a fraction of samples and relabel them.
    Backdoor {
        trigger: TriggerSpec,
        target: usize,
        rate: f64,
    },
}

impl AttackKind {
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self {
            AttackKind::LabelFlip { source, target, rate } => {
                if source == target {
                    return Err(Error::InvalidConfig(
                        "label flip source and target must differ".into(),
                    ));
                }
                if *source >= classes || *target >= classes {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "flip classes {source}->{target} out of range for {classes} classes"
                    )));
                }
                check_rate(*rate)
            }
            AttackKind::Backdoor { target, rate, .. } => {
                if *target >= classes {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "backdoor target {target} out of range for {classes} classes"
                    )));
                }
                check_rate(*rate)
            }
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(alloc::format!(
            "poison rate must lie in [0, 1], got {rate}"
        )));
    }
    Ok(())
}

/// A full attack scenario: strategy, how many clients are compromised, how
/// much harder they train, and when they strike.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackScenario {
    pub kind: AttackKind,
    /// Fraction of clients compromised; attackers are the first
    /// `ceil(fraction * M)` ids of a seeded shuffle.
    pub fraction: f64,
    /// Additional local epochs attackers train when active.
    pub extra_epochs: usize,
    pub schedule: Schedule,
    /// Offset added to the j-th attacker's schedule, staggering launches.
    pub stagger: u32,
}

impl AttackScenario {
    pub fn validate(&self, classes: usize) -> Result<()> {
        self.kind.validate(classes)?;
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidConfig(alloc::format!(
                "attacker fraction must lie in [0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Relabels `round(rate * |source samples|)` seeded-chosen source-class
/// samples to the target class. Features are untouched.
pub fn flip_labels(
    dataset: &Dataset,
    source: usize,
    target: usize,
    rate: f64,
    seed: u64,
) -> Result<Dataset> {
    if source == target {
        return Err(Error::InvalidConfig(
            "label flip source and target must differ".into(),
        ));
    }
    if source >= dataset.class_count() || target >= dataset.class_count() {
        return Err(Error::InvalidConfig(alloc::format!(
            "flip classes {source}->{target} out of range for {} classes",
            dataset.class_count()
        )));
    }
    check_rate(rate)?;
    let mut candidates: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.label(i) == source)
        .collect();
    let mut rng = rng::seeded(seed);
    candidates.shuffle(&mut rng);
    let n_flip = fmath::round(rate * candidates.len() as f64) as usize;

    let mut labels = dataset.labels().to_vec();
    for &i in candidates.iter().take(n_flip) {
        labels[i] = target;
    }
    Dataset::new(
        dataset.features().to_vec(),
        labels,
        dataset.feature_dim(),
        dataset.class_count(),
    )
}

/// Writes the trigger into `round(rate * |dataset|)` seeded-chosen samples
/// and relabels them to the target class. The source dataset is untouched.
pub fn implant_backdoor(
    dataset: &Dataset,
    trigger: &[(usize, f64)],
    target: usize,
    rate: f64,
    seed: u64,
) -> Result<Dataset> {
    if trigger.is_empty() {
        return Err(Error::EmptyInput("backdoor trigger"));
    }
    if target >= dataset.class_count() {
        return Err(Error::InvalidConfig(alloc::format!(
            "backdoor target {target} out of range for {} classes",
            dataset.class_count()
        )));
    }
    check_rate(rate)?;
    for &(idx, value) in trigger {
        if idx >= dataset.feature_dim() {
            return Err(Error::InvalidConfig(alloc::format!(
                "trigger index {idx} out of range for feature dimension {}",
                dataset.feature_dim()
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("trigger value"));
        }
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = rng::seeded(seed);
    order.shuffle(&mut rng);
    let n_poison = fmath::round(rate * dataset.len() as f64) as usize;

    let mut features = dataset.features().to_vec();
    let mut labels = dataset.labels().to_vec();
    let dim = dataset.feature_dim();
    for &i in order.iter().take(n_poison) {
        for &(idx, value) in trigger {
            features[i * dim + idx] = value;
        }
        labels[i] = target;
    }
    Dataset::new(features, labels, dim, dataset.class_count())
}

/// Applies the trigger to every row of a dataset (used when measuring
/// attack success on a test set). Labels are preserved.
pub fn apply_trigger(dataset: &Dataset, trigger: &[(usize, f64)]) -> Result<Dataset> {
    if trigger.is_empty() {
        return Err(Error::EmptyInput("backdoor trigger"));
    }
    let dim = dataset.feature_dim();
    let mut features = dataset.features().to_vec();
    for &(idx, value) in trigger {
        if idx >= dim {
            return Err(Error::InvalidConfig(alloc::format!(
                "trigger index {idx} out of range for feature dimension {dim}"
            )));
        }
        for row in 0..dataset.len() {
            features[row * dim + idx] = value;
        }
    }
    Dataset::new(features, dataset.labels().to_vec(), dim, dataset.class_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, DataSpec};

    fn toy() -> Dataset {
        synth_dataset(&DataSpec {
            classes: 2,
            feature_dim: 4,
            per_class: 10,
            separation: 3.0,
            noise_std: 1.0,
            seed: 2,
        })
        .unwrap()
    }

    #[test]
    fn flip_rate_one_relabels_whole_source_class() {
        let data = toy();
        let flipped = flip_labels(&data, 0, 1, 1.0, 5).unwrap();
        assert_eq!(flipped.class_histogram(), vec![0, 20]);
        assert_eq!(flipped.features(), data.features());
    }

    #[test]
    fn flip_rate_zero_is_identity() {
        let data = toy();
        assert_eq!(flip_labels(&data, 0, 1, 0.0, 5).unwrap(), data);
    }

    #[test]
    fn flip_rate_half_flips_exactly_half() {
        let data = toy();
        let flipped = flip_labels(&data, 0, 1, 0.5, 5).unwrap();
        assert_eq!(flipped.class_histogram(), vec![5, 15]);
    }

    #[test]
    fn flip_selection_is_seeded() {
        let data = toy();
        assert_eq!(
            flip_labels(&data, 0, 1, 0.5, 9).unwrap(),
            flip_labels(&data, 0, 1, 0.5, 9).unwrap()
        );
        assert_ne!(
            flip_labels(&data, 0, 1, 0.5, 9).unwrap(),
            flip_labels(&data, 0, 1, 0.5, 10).unwrap()
        );
    }

    #[test]
    fn backdoor_rate_zero_is_identity() {
        let data = toy();
        assert_eq!(implant_backdoor(&data, &[(0, 9.9)], 1, 0.0, 3).unwrap(), data);
    }

    #[test]
    fn backdoor_rate_one_stamps_everything() {
        let data = toy();
        let poisoned = implant_backdoor(&data, &[(0, 9.9)], 1, 1.0, 3).unwrap();
        for i in 0..poisoned.len() {
            assert_eq!(poisoned.row(i)[0], 9.9);
            assert_eq!(poisoned.label(i), 1);
        }
        // Other coordinates are untouched.
        assert_eq!(poisoned.row(0)[1..], data.row(0)[1..]);
    }

    #[test]
    fn backdoor_rejects_bad_trigger_index() {
        let data = toy();
        assert!(implant_backdoor(&data, &[(5, 1.0)], 1, 1.0, 3).is_err());
    }

    #[test]
    fn percentile_trigger_resolution() {
        let data = toy();
        let trigger = TriggerSpec::Percentile {
            coords: 2,
            percentile: 0.99,
        }
        .resolve(&data)
        .unwrap();
        assert_eq!(trigger.len(), 2);
        assert_eq!(trigger[0].0, 0);
        assert_eq!(trigger[1].0, 1);
        let max = data.features().iter().cloned().fold(f64::MIN, f64::max);
        assert!(trigger[0].1 <= max);
    }

    #[test]
    fn schedule_table() {
        assert!(!schedule_active(&Schedule::Never, 1));
        assert!(schedule_active(&Schedule::Always, 7));

        assert!(schedule_active(&Schedule::Once(3), 3));
        assert!(!schedule_active(&Schedule::Once(3), 4));

        assert!(!schedule_active(&Schedule::From(3), 2));
        assert!(schedule_active(&Schedule::From(3), 7));

        let looping = Schedule::Every { start: 10, period: 30 };
        for t in [10, 40, 70] {
            assert!(schedule_active(&looping, t));
        }
        assert!(!schedule_active(&looping, 25));
        assert!(!schedule_active(&looping, 9));
    }

    #[test]
    fn shifted_schedules() {
        assert_eq!(Schedule::Once(3).shifted(2), Schedule::Once(5));
        assert_eq!(
            Schedule::Every { start: 10, period: 30 }.shifted(5),
            Schedule::Every { start: 15, period: 30 }
        );
        assert_eq!(Schedule::Always.shifted(4), Schedule::Always);
    }
}
