//! Federated averaging and the round state machine.
//!
//! One round: the coordinator distributes the current global model, clients
//! train locally and report weight updates, the coordinator aggregates a
//! sample-count-weighted mean and atomically commits it as the next global.
//! Aggregation sums in f64 over clients sorted by id, so the result is
//! independent of arrival order down to the bit.
//!
//! Centralized training is the same loop with a single client holding the
//! pooled data (see `eval::train_centralized`); both paths call
//! [`train_epochs`] with identical seed derivation, which is what makes the
//! two modes bitwise comparable at equal compute budgets.

use crate::data::EnvironmentDataset;
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::nn;
use crate::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Training schedule shared by both modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub rounds: u32,
    pub local_epochs: u32,
    pub lr: f32,
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule { rounds: 20, local_epochs: 2, lr: 0.05, batch_size: 32 }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::Config("schedule needs at least one round and one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub params: ModelParams,
    pub sample_count: u32,
}

/// Sample-count-weighted elementwise mean over raw parameter vectors.
///
/// Entries are (weights, sample_count) pairs accumulated in the given
/// order; all vectors must share one length and at least one count must be
/// non-zero. Accumulation runs in f64.
pub fn weighted_mean(entries: &[(&[f32], u32)]) -> Result<Vec<f32>> {
    let Some(first) = entries.first() else {
        return Err(Error::Protocol("cannot average an empty entry list".into()));
    };
    let n = first.0.len();
    if let Some((w, _)) = entries.iter().find(|(w, _)| w.len() != n) {
        return Err(Error::IncompatibleArch(format!(
            "parameter vectors disagree on length: {} vs {}",
            w.len(),
            n
        )));
    }
    let total: u64 = entries.iter().map(|&(_, c)| u64::from(c)).sum();
    if total == 0 {
        return Err(Error::Protocol("all sample counts are zero".into()));
    }
    let total = total as f64;

    let mut acc = vec![0.0_f64; n];
    let mut weight_sum = 0.0_f64;
    for (weights, count) in entries {
        let w = f64::from(*count) / total;
        weight_sum += w;
        for (a, &v) in acc.iter_mut().zip(*weights) {
            *a += w * f64::from(v);
        }
    }
    debug_assert!((weight_sum - 1.0).abs() < 1e-12, "mixing weights must sum to 1");
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

/// Sample-count-weighted elementwise mean of client models.
///
/// All updates must share one architecture digest, weight length, and
/// version; the result carries version + 1 (the committed round's output).
/// Summation runs in f64 over clients sorted by id.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::Protocol("cannot aggregate an empty update list".into()));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for pair in sorted.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::Protocol(format!(
                "duplicate client id '{}' in update list",
                pair[0].client_id
            )));
        }
    }

    let first = sorted[0];
    let arch = first.params.arch;
    let version = first.params.version;
    let n_weights = first.params.weights.len();
    if n_weights != arch.param_count() {
        return Err(Error::IncompatibleArch(format!(
            "update from '{}' has {} weights, {} wants {}",
            first.client_id,
            n_weights,
            arch,
            arch.param_count()
        )));
    }
    for u in &sorted[1..] {
        if u.params.arch != arch {
            return Err(Error::IncompatibleArch(format!(
                "update from '{}' is for {}, round is {}",
                u.client_id, u.params.arch, arch
            )));
        }
        if u.params.weights.len() != n_weights {
            return Err(Error::IncompatibleArch(format!(
                "update from '{}' has {} weights, expected {}",
                u.client_id,
                u.params.weights.len(),
                n_weights
            )));
        }
        if u.params.version != version {
            return Err(Error::Protocol(format!(
                "update from '{}' is for model version {}, round base is {}",
                u.client_id, u.params.version, version
            )));
        }
    }

    let entries: Vec<(&[f32], u32)> =
        sorted.iter().map(|u| (u.params.weights.as_slice(), u.sample_count)).collect();
    Ok(ModelParams { arch, version: version + 1, weights: weighted_mean(&entries)? })
}

/// Runs SGD for a number of epochs over one dataset; returns updated weights
/// (same version — the round machinery bumps versions, not the trainer).
///
/// Batch order is a seeded shuffle per epoch; the final partial batch is
/// included. This function is the compute unit both training modes share.
pub fn train_epochs(
    model: &ModelParams,
    ds: &EnvironmentDataset,
    epochs: u32,
    lr: f32,
    batch_size: usize,
    seed: u64,
) -> Result<ModelParams> {
    if ds.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if ds.split != crate::data::Split::Train {
        return Err(Error::Config("refusing to train on a validation split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let arch = model.arch.architecture();
    let mut store = model.to_store()?;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        let mut shuffle_rng =
            rng::rng_from(rng::derive_indexed(seed, "epoch-shuffle", &[u64::from(epoch)]));
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch_size) {
            let (batch, labels) = ds.batch(chunk)?;
            let (_, grads) = nn::loss_and_grads(&arch, &store, &batch, &labels)?;
            nn::sgd_step(&mut store, &grads, lr)?;
        }
    }
    ModelParams::from_store(model.arch, model.version, &store)
}

/// Seed for round `round` of client index `client` under a base seed.
///
/// Centralized training is defined as client index 0, so a federated run
/// with one client replays the exact same batch order.
pub fn round_seed(base: u64, round: u32, client: u64) -> u64 {
    rng::derive_indexed(base, "train-round", &[u64::from(round), client])
}

/// One client's local step for a round: train on the local shard, report
/// the new weights plus the shard size.
pub fn local_train(
    global: &ModelParams,
    ds: &EnvironmentDataset,
    schedule: &TrainSchedule,
    seed: u64,
    client_id: &str,
) -> Result<ClientUpdate> {
    let params = train_epochs(global, ds, schedule.local_epochs, schedule.lr, schedule.batch_size, seed)?;
    Ok(ClientUpdate {
        client_id: client_id.to_string(),
        params,
        sample_count: ds.len() as u32,
    })
}

/// Lifecycle of one federated round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Distributing,
    Collecting,
    Aggregating,
    Committed,
    Aborted,
}

/// Mutable state of a round in progress.
#[derive(Debug)]
pub struct RoundState {
    pub round: u32,
    pub phase: Phase,
    pub expected: BTreeSet<String>,
    pub received: BTreeMap<String, ClientUpdate>,
}

/// Disposition of one offered update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OfferOutcome {
    Accepted,
    /// A first-wins duplicate; the earlier update stands.
    DuplicateIgnored,
    UnknownClient,
    WrongRound { got: u32 },
    IncompatibleModel,
    RoundClosed,
}

/// Result of finalizing a round.
#[derive(Debug)]
pub enum RoundOutcome {
    Committed,
    Aborted { reason: String },
}

/// Owns the global model and drives rounds to quorum.
pub struct RoundCoordinator {
    global: ModelParams,
    expected: BTreeSet<String>,
    quorum: f64,
}

impl RoundCoordinator {
    /// `quorum` is the fraction of expected clients required to commit;
    /// 1.0 (the default elsewhere) means everyone.
    pub fn new(global: ModelParams, client_ids: &[String], quorum: f64) -> Result<RoundCoordinator> {
        if client_ids.is_empty() {
            return Err(Error::Config("coordinator needs at least one client".into()));
        }
        let expected: BTreeSet<String> = client_ids.iter().cloned().collect();
        if expected.len() != client_ids.len() {
            return Err(Error::Config("duplicate client ids".into()));
        }
        if !(quorum > 0.0 && quorum <= 1.0) {
            return Err(Error::Config(format!("quorum must be in (0, 1], got {quorum}")));
        }
        Ok(RoundCoordinator { global, expected, quorum })
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    /// The round index the next `begin_round` will run (= global version).
    pub fn round(&self) -> u32 {
        self.global.version
    }

    pub fn expected_clients(&self) -> &BTreeSet<String> {
        &self.expected
    }

    /// Number of received updates needed to commit.
    pub fn quorum_count(&self) -> usize {
        let n = self.expected.len();
        (((self.quorum * n as f64).ceil() as usize).max(1)).min(n)
    }

    pub fn begin_round(&self) -> RoundState {
        RoundState {
            round: self.global.version,
            phase: Phase::Distributing,
            expected: self.expected.clone(),
            received: BTreeMap::new(),
        }
    }

    /// Offers one client update to the round. Never mutates the global;
    /// invalid updates are reported and dropped.
    pub fn offer_update(&self, state: &mut RoundState, update: ClientUpdate) -> OfferOutcome {
        match state.phase {
            Phase::Distributing => state.phase = Phase::Collecting,
            Phase::Collecting => {}
            _ => return OfferOutcome::RoundClosed,
        }
        if !state.expected.contains(&update.client_id) {
            return OfferOutcome::UnknownClient;
        }
        if update.params.version != state.round {
            return OfferOutcome::WrongRound { got: update.params.version };
        }
        if update.params.arch != self.global.arch
            || update.params.weights.len() != self.global.weights.len()
        {
            return OfferOutcome::IncompatibleModel;
        }
        if state.received.contains_key(&update.client_id) {
            return OfferOutcome::DuplicateIgnored;
        }
        state.received.insert(update.client_id.clone(), update);
        OfferOutcome::Accepted
    }

    /// Closes the round: aggregates and commits if quorum was reached,
    /// otherwise aborts leaving the global untouched. Commit is a single
    /// assignment — observers see either the old or the new model.
    pub fn finalize(&mut self, state: &mut RoundState) -> Result<RoundOutcome> {
        match state.phase {
            Phase::Distributing | Phase::Collecting => {}
            _ => return Err(Error::Protocol("round already finalized".into())),
        }
        if state.received.len() < self.quorum_count() {
            state.phase = Phase::Aborted;
            return Ok(RoundOutcome::Aborted {
                reason: format!(
                    "quorum not met: {}/{} updates (need {})",
                    state.received.len(),
                    state.expected.len(),
                    self.quorum_count()
                ),
            });
        }
        state.phase = Phase::Aggregating;
        let updates: Vec<ClientUpdate> = state.received.values().cloned().collect();
        let new_global = aggregate(&updates)?;
        debug_assert_eq!(new_global.version, state.round + 1);
        self.global = new_global;
        state.phase = Phase::Committed;
        Ok(RoundOutcome::Committed)
    }
}

/// Feeds a fixed batch of updates through one full round.
pub fn run_round(
    coordinator: &mut RoundCoordinator,
    updates: Vec<ClientUpdate>,
) -> Result<(RoundState, RoundOutcome)> {
    let mut state = coordinator.begin_round();
    for u in updates {
        coordinator.offer_update(&mut state, u);
    }
    let outcome = coordinator.finalize(&mut state)?;
    Ok((state, outcome))
}

/// In-process federated training: one client per dataset, ids `c0..cN-1`
/// (client index = position), full quorum, every round driven to commit.
///
/// Invokes `on_round(round, global)` after each commit.
pub fn run_federated_with(
    init: &ModelParams,
    clients: &[EnvironmentDataset],
    schedule: &TrainSchedule,
    base_seed: u64,
    mut on_round: impl FnMut(u32, &ModelParams),
) -> Result<ModelParams> {
    schedule.validate()?;
    if clients.is_empty() {
        return Err(Error::Config("federated run needs at least one client".into()));
    }
    let ids: Vec<String> = (0..clients.len()).map(|i| format!("c{i}")).collect();
    let mut coordinator = RoundCoordinator::new(init.clone(), &ids, 1.0)?;
    for _ in 0..schedule.rounds {
        let round = coordinator.round();
        let global = coordinator.global().clone();
        let mut updates = Vec::with_capacity(clients.len());
        for (k, ds) in clients.iter().enumerate() {
            let seed = round_seed(base_seed, round, k as u64);
            updates.push(local_train(&global, ds, schedule, seed, &ids[k])?);
        }
        let (_, outcome) = run_round(&mut coordinator, updates)?;
        if let RoundOutcome::Aborted { reason } = outcome {
            return Err(Error::Protocol(format!("round {round} aborted: {reason}")));
        }
        on_round(round, coordinator.global());
    }
    Ok(coordinator.global().clone())
}

/// [`run_federated_with`] without the per-round callback.
pub fn run_federated(
    init: &ModelParams,
    clients: &[EnvironmentDataset],
    schedule: &TrainSchedule,
    base_seed: u64,
) -> Result<ModelParams> {
    run_federated_with(init, clients, schedule, base_seed, |_, _| {})
}
