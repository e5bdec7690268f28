//! Round-based federated training orchestration.
//!
//! A [`Simulation`] owns the global model, the client shards (clean and
//! poisoned), the attacker assignment, and the per-client reputation
//! states. Each round broadcasts the model, trains every client locally
//! (honest clients on their shard, active attackers on their poisoned shard
//! with extra epochs), aggregates, and evaluates on a held-out test split.
//! Everything is a deterministic function of the master seed.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::aggregate::{aggregate, AggregatorKind, ClientRoundStat, UpdateMatrix};
use crate::attack::{apply_trigger, flip_labels, implant_backdoor, AttackKind, AttackScenario, Schedule, TriggerSpec};
use crate::data::{dirichlet_partition, stratified_split, synth_dataset, DataSpec, Dataset};
use crate::error::{Error, Result};
use crate::fmath;
use crate::model::{local_train, mean_loss, mlp_forward, ModelParams, TrainConfig};
use crate::reputation::ClientReputationState;
use crate::rng::{derive_seed, seeded, Stream};

/// Where the experiment's data comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    Synthetic(DataSpec),
    /// An already-featurised dataset (e.g. ingested from CSV).
    Provided(Dataset),
}

/// Full description of one experiment.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub clients: usize,
    pub rounds: u32,
    pub aggregator: AggregatorKind,
    /// Hidden layer widths; empty means a linear softmax model.
    pub hidden: Vec<usize>,
    /// Local training hyper-parameters. The seed field is ignored: the
    /// simulator derives one seed per client per round from `seed`.
    pub train: TrainConfig,
    pub data: DataSource,
    /// Dirichlet concentration for the non-IID client partition.
    pub iota: f64,
    /// Fraction of data held out as the server-side test split.
    pub test_fraction: f64,
    pub attack: Option<AttackScenario>,
    /// Master seed; all randomness in the experiment derives from it.
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::InvalidConfig("need at least one client".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("need at least one round".into()));
        }
        self.aggregator.validate(self.clients)?;
        self.train.validate()?;
        if !(self.iota > 0.0 && self.iota.is_finite()) {
            return Err(Error::InvalidConfig("dirichlet concentration must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidConfig("test fraction must lie in [0, 1)".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Per-round metrics and, for the reputation aggregator, per-client state.
#[derive(Clone, Debug)]
pub struct RoundReport {
    pub round: u32,
    pub accuracy: f64,
    pub attack_success: f64,
    pub mean_loss: f64,
    pub attack_active: bool,
    pub clients: Option<Vec<ClientRoundStat>>,
}

/// Fraction of test samples whose argmax prediction matches the label.
/// Argmax ties resolve to the lowest class index.
pub fn evaluate_accuracy(params: &ModelParams, testset: &Dataset) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let mut correct = 0usize;
    for i in 0..testset.len() {
        let probs = mlp_forward(params, testset.row(i))?;
        if argmax(&probs) == testset.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / testset.len() as f64)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of attackable test samples classified as the attacker's target.
///
/// Label flipping counts over true-source-class samples; the backdoor
/// applies the trigger to every sample whose true label differs from the
/// target and counts predictions of the target. Errors if no sample
/// qualifies. Backdoor triggers must already be resolved to explicit pairs.
pub fn attack_success_rate(
    params: &ModelParams,
    testset: &Dataset,
    attack: &AttackKind,
) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    match attack {
        AttackKind::LabelFlip { source, target, .. } => {
            let mut attacked = 0usize;
            let mut hits = 0usize;
            for i in 0..testset.len() {
                if testset.label(i) == *source {
                    attacked += 1;
                    let probs = mlp_forward(params, testset.row(i))?;
                    if argmax(&probs) == *target {
                        hits += 1;
                    }
                }
            }
            if attacked == 0 {
                return Err(Error::EmptyInput("attacked samples"));
            }
            Ok(hits as f64 / attacked as f64)
        }
        AttackKind::Backdoor { trigger, target, .. } => {
            let pairs = match trigger {
                TriggerSpec::Explicit(pairs) => pairs.clone(),
                TriggerSpec::Percentile { .. } => {
                    return Err(Error::InvalidConfig(
                        "backdoor trigger must be resolved before measuring success".into(),
                    ))
                }
            };
            let candidates: Vec<usize> = (0..testset.len())
                .filter(|&i| testset.label(i) != *target)
                .collect();
            if candidates.is_empty() {
                return Err(Error::EmptyInput("attacked samples"));
            }
            let triggered = apply_trigger(&testset.select(&candidates), &pairs)?;
            let mut hits = 0usize;
            for i in 0..triggered.len() {
                let probs = mlp_forward(params, triggered.row(i))?;
                if argmax(&probs) == *target {
                    hits += 1;
                }
            }
            Ok(hits as f64 / triggered.len() as f64)
        }
    }
}

/// A running experiment.
#[derive(Clone, Debug)]
pub struct Simulation {
    config: SimConfig,
    params: ModelParams,
    shards: Vec<Dataset>,
    poisoned: Vec<Option<Dataset>>,
    test: Dataset,
    attacker_ids: Vec<usize>,
    /// Schedule per client; `None` for honest clients.
    schedules: Vec<Option<Schedule>>,
    /// Attack with the backdoor trigger resolved, used for ASR.
    resolved_attack: Option<AttackKind>,
    reputation_states: Vec<ClientReputationState>,
    next_round: u32,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;

        let full = match &config.data {
            DataSource::Synthetic(spec) => {
                let mut spec = spec.clone();
                spec.seed = derive_seed(seed, Stream::DataGen, 0, 0);
                synth_dataset(&spec)?
            }
            DataSource::Provided(dataset) => {
                if dataset.is_empty() {
                    return Err(Error::EmptyInput("provided dataset"));
                }
                dataset.clone()
            }
        };
        let (train, test) = stratified_split(&full, config.test_fraction, derive_seed(seed, Stream::TestSplit, 0, 0))?;
        if test.is_empty() {
            return Err(Error::InvalidConfig(
                "test fraction leaves an empty test split".into(),
            ));
        }

        let partition = dirichlet_partition(
            &train,
            config.clients,
            config.iota,
            derive_seed(seed, Stream::Partition, 0, 0),
        )?;
        if let Some(empty) = partition.shards.iter().position(Dataset::is_empty) {
            return Err(Error::InvalidConfig(alloc::format!(
                "client {empty} received an empty shard; use more data, fewer clients, or a larger concentration"
            )));
        }

        let mut attacker_ids = Vec::new();
        let mut schedules = vec![None; config.clients];
        let mut poisoned = vec![None; config.clients];
        let mut resolved_attack = None;
        if let Some(attack) = &config.attack {
            attack.validate(train.class_count())?;
            let count = fmath::ceil(attack.fraction * config.clients as f64) as usize;
            let mut ids: Vec<usize> = (0..config.clients).collect();
            ids.shuffle(&mut seeded(derive_seed(seed, Stream::AttackerSelection, 0, 0)));
            attacker_ids = ids[..count].to_vec();
            attacker_ids.sort_unstable();

            let kind = match &attack.kind {
                AttackKind::Backdoor { trigger, target, rate } => AttackKind::Backdoor {
                    trigger: TriggerSpec::Explicit(trigger.resolve(&train)?),
                    target: *target,
                    rate: *rate,
                },
                other => other.clone(),
            };
            for (ordinal, &client) in attacker_ids.iter().enumerate() {
                schedules[client] = Some(attack.schedule.shifted(ordinal as u32 * attack.stagger));
                let poison_seed = derive_seed(seed, Stream::Poison, client as u64, 0);
                let shard = &partition.shards[client];
                poisoned[client] = Some(match &kind {
                    AttackKind::LabelFlip { source, target, rate } => {
                        flip_labels(shard, *source, *target, *rate, poison_seed)?
                    }
                    AttackKind::Backdoor { trigger, target, rate } => {
                        let pairs = match trigger {
                            TriggerSpec::Explicit(pairs) => pairs.clone(),
                            TriggerSpec::Percentile { .. } => unreachable!("resolved above"),
                        };
                        implant_backdoor(shard, &pairs, *target, *rate, poison_seed)?
                    }
                });
            }
            resolved_attack = Some(kind);
        }

        let mut dims = vec![train.feature_dim()];
        dims.extend_from_slice(&config.hidden);
        dims.push(train.class_count());
        let params = ModelParams::seeded_init(&dims, derive_seed(seed, Stream::ModelInit, 0, 0))?;

        let reputation_states = vec![ClientReputationState::new(); config.clients];
        Ok(Simulation {
            config,
            params,
            shards: partition.shards,
            poisoned,
            test,
            attacker_ids,
            schedules,
            resolved_attack,
            reputation_states,
            next_round: 1,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn global_params(&self) -> &ModelParams {
        &self.params
    }

    pub fn attacker_ids(&self) -> &[usize] {
        &self.attacker_ids
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn reputation_states(&self) -> &[ClientReputationState] {
        &self.reputation_states
    }

    /// The attack with its trigger resolved against the training split.
    pub fn resolved_attack(&self) -> Option<&AttackKind> {
        self.resolved_attack.as_ref()
    }

    pub fn next_round(&self) -> u32 {
        self.next_round
    }

    /// Runs one synchronous round: broadcast, local training on all M
    /// clients, aggregation, evaluation.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.next_round;
        let extra = self.config.attack.as_ref().map_or(0, |a| a.extra_epochs);

        let mut rows = Vec::with_capacity(self.config.clients);
        let mut counts = Vec::with_capacity(self.config.clients);
        let mut attack_active = false;
        for client in 0..self.config.clients {
            let active = self.schedules[client]
                .as_ref()
                .is_some_and(|s| s.active(round));
            attack_active |= active;
            let (data, epochs) = if active {
                (
                    self.poisoned[client].as_ref().expect("attacker has a poisoned shard"),
                    self.config.train.local_epochs + extra,
                )
            } else {
                (&self.shards[client], self.config.train.local_epochs)
            };
            let train_cfg = TrainConfig {
                local_epochs: epochs,
                seed: derive_seed(self.config.seed, Stream::LocalTrain, client as u64, round as u64),
                ..self.config.train
            };
            rows.push(local_train(&self.params, data, &train_cfg)?.flatten());
            counts.push(self.shards[client].len() as u64);
        }

        let updates = UpdateMatrix::new(rows, (0..self.config.clients).collect(), counts)?;
        let (global, stats) = aggregate(
            &self.config.aggregator,
            &updates,
            &mut self.reputation_states,
            round,
        )?;
        self.params = self.params.unflatten(&global)?;

        let accuracy = evaluate_accuracy(&self.params, &self.test)?;
        let attack_success = match &self.resolved_attack {
            Some(kind) => attack_success_rate(&self.params, &self.test, kind)?,
            None => 0.0,
        };
        let mean_loss = self.training_loss()?;

        self.next_round += 1;
        Ok(RoundReport {
            round,
            accuracy,
            attack_success,
            mean_loss,
            attack_active,
            clients: stats,
        })
    }

    /// Sample-weighted mean training loss of the global model over all
    /// clean shards.
    fn training_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut samples = 0usize;
        for shard in &self.shards {
            total += mean_loss(&self.params, shard)? * shard.len() as f64;
            samples += shard.len();
        }
        Ok(total / samples as f64)
    }
}

/// Runs the full experiment, returning one report per round.
pub fn run_experiment(config: &SimConfig) -> Result<Vec<RoundReport>> {
    run_experiment_with(config, |_| {})
}

/// Like [`run_experiment`], invoking `on_round` as each report is produced
/// so callers can stream results.
pub fn run_experiment_with(
    config: &SimConfig,
    mut on_round: impl FnMut(&RoundReport),
) -> Result<Vec<RoundReport>> {
    let mut sim = Simulation::new(config.clone())?;
    let mut reports = Vec::with_capacity(config.rounds as usize);
    for _ in 0..config.rounds {
        let report = sim.run_round()?;
        on_round(&report);
        reports.push(report);
    }
    Ok(reports)
}
