//! Deterministic in-memory network simulation.
//!
//! [`SimLink`] is a unidirectional lossy channel driven by virtual ticks.
//! Every send consumes PRNG draws in a pinned order, so a test can replay
//! the exact drop/duplicate/latency decisions from the seed alone:
//!
//! 1. `u_drop = rng.gen::<f64>()` — dropped iff `u_drop < drop` (no further
//!    draws for dropped frames);
//! 2. `lat = rng.gen_range(latency_min..=latency_max)`;
//! 3. iff `reorder_window > 0`: `disp = rng.gen_range(0..=reorder_window)`;
//! 4. `u_dup = rng.gen::<f64>()` — duplicated iff `u_dup < dup`, in which
//!    case the copy draws its own `lat2` (and `disp2` iff the window is
//!    positive).
//!
//! A frame sent at tick `t` is delivered when the receiver polls at or after
//! `t + lat + disp`; deliveries due at the same tick arrive in send order.
//! With drop = dup = 0 and a zero reorder window the link is exactly FIFO.
//!
//! [`run_sim_session`] drives a complete federated session (server plus N
//! clients) over such links, including the client retry policy: re-HELLO
//! while no global has arrived, re-send the local update on a fixed
//! interval with a bounded attempt budget, and reset that budget when the
//! server re-distributes the round's global. The server side re-broadcasts
//! to silent clients, answers stale updates with the matching commit, and
//! may re-run an aborted round a configurable number of times.

use crate::data::EnvironmentDataset;
use crate::error::{Error, Result};
use crate::federation::{
    local_train, round_seed, OfferOutcome, RoundCoordinator, RoundOutcome, RoundState,
    TrainSchedule,
};
use crate::models::ModelParams;
use crate::rng;
use crate::transport::{codec, MessageBody, RoundMessage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Channel fault model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConditions {
    /// Probability a frame is silently dropped.
    pub drop: f64,
    /// Probability a kept frame is delivered twice.
    pub dup: f64,
    /// Max extra delivery displacement in ticks (0 = in-order).
    pub reorder_window: u64,
    pub latency_min: u64,
    pub latency_max: u64,
}

impl Default for NetConditions {
    fn default() -> Self {
        NetConditions { drop: 0.0, dup: 0.0, reorder_window: 0, latency_min: 1, latency_max: 1 }
    }
}

impl NetConditions {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("drop", self.drop), ("dup", self.dup)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1)")));
            }
        }
        if self.latency_min > self.latency_max {
            return Err(Error::Config(format!(
                "latency_min {} exceeds latency_max {}",
                self.latency_min, self.latency_max
            )));
        }
        Ok(())
    }
}

/// Unidirectional lossy link.
pub struct SimLink {
    conditions: NetConditions,
    rng: ChaCha8Rng,
    queue: Vec<(u64, u64, Vec<u8>)>, // (delivery tick, sequence, frame)
    seq: u64,
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

impl SimLink {
    pub fn new(conditions: NetConditions, seed: u64) -> Result<SimLink> {
        conditions.validate()?;
        Ok(SimLink {
            conditions,
            rng: rng::rng_from(seed),
            queue: Vec::new(),
            seq: 0,
            sent: 0,
            dropped: 0,
            delivered: 0,
        })
    }

    fn enqueue(&mut self, at: u64, frame: Vec<u8>) {
        self.queue.push((at, self.seq, frame));
        self.seq += 1;
    }

    /// Submits a frame at tick `now`, consuming PRNG draws as documented in
    /// the module header.
    pub fn send(&mut self, now: u64, frame: Vec<u8>) {
        self.sent += 1;
        let c = self.conditions;
        if self.rng.gen::<f64>() < c.drop {
            self.dropped += 1;
            return;
        }
        let lat = self.rng.gen_range(c.latency_min..=c.latency_max);
        let disp = if c.reorder_window > 0 { self.rng.gen_range(0..=c.reorder_window) } else { 0 };
        let duplicate = self.rng.gen::<f64>() < c.dup;
        self.enqueue(now + lat + disp, frame.clone());
        if duplicate {
            let lat2 = self.rng.gen_range(c.latency_min..=c.latency_max);
            let disp2 =
                if c.reorder_window > 0 { self.rng.gen_range(0..=c.reorder_window) } else { 0 };
            self.enqueue(now + lat2 + disp2, frame);
        }
    }

    /// Frames due at or before `now`, ordered by (delivery tick, send order).
    pub fn poll(&mut self, now: u64) -> Vec<Vec<u8>> {
        let mut due: Vec<(u64, u64, Vec<u8>)> = Vec::new();
        let mut rest = Vec::with_capacity(self.queue.len());
        for item in self.queue.drain(..) {
            if item.0 <= now {
                due.push(item);
            } else {
                rest.push(item);
            }
        }
        self.queue = rest;
        due.sort_by_key(|(t, s, _)| (*t, *s));
        self.delivered += due.len() as u64;
        due.into_iter().map(|(_, _, f)| f).collect()
    }

    /// Frames still in flight.
    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

/// Knobs for a simulated session.
#[derive(Debug, Clone)]
pub struct SimSessionConfig {
    pub schedule: TrainSchedule,
    pub conditions: NetConditions,
    /// Base seed for training (shared contract with the in-process runner).
    pub train_seed: u64,
    /// Seed for all channel randomness.
    pub net_seed: u64,
    /// Ticks between client re-sends of an unacknowledged message.
    pub retry_interval: u64,
    /// Max sends of one message per distribution of a round's global.
    pub max_attempts: u32,
    /// Ticks the server waits for quorum before aborting the round.
    pub round_deadline: u64,
    /// Ticks between server re-broadcasts to clients that have not reported.
    pub rebroadcast_interval: u64,
    /// How many times one round may be attempted (1 = no retry after abort).
    pub max_round_attempts: u32,
    /// Hard stop for the whole session.
    pub max_ticks: u64,
}

impl Default for SimSessionConfig {
    fn default() -> Self {
        SimSessionConfig {
            schedule: TrainSchedule::default(),
            conditions: NetConditions::default(),
            train_seed: 0,
            net_seed: 0,
            retry_interval: 20,
            max_attempts: 5,
            round_deadline: 160,
            rebroadcast_interval: 25,
            max_round_attempts: 2,
            max_ticks: 50_000,
        }
    }
}

/// Outcome of a simulated session.
#[derive(Debug)]
pub struct SimSessionReport {
    pub final_global: ModelParams,
    pub committed_rounds: u32,
    /// Total round attempts, including re-runs of aborted rounds.
    pub round_attempts: u32,
    pub ticks: u64,
    pub frames_sent: u64,
    pub frames_dropped: u64,
    /// True iff every scheduled round committed.
    pub completed: bool,
}

struct SimClient {
    id: String,
    index: u64,
    /// Round of the cached update, if the client has trained.
    trained_round: Option<u32>,
    cached_update: Option<Vec<u8>>,
    /// Sends consumed for the current distribution of the round.
    attempts: u32,
    next_send: Option<u64>,
    /// Round the client has seen committed (suppresses further re-sends).
    committed_round: Option<u32>,
    hello_attempts: u32,
    next_hello: Option<u64>,
    dead: bool,
}

/// Runs a full federated session over simulated links. Client `k` uses id
/// `ck` and the same per-round training seeds as the in-process runner, so
/// under perfect network conditions the final global is bitwise identical
/// to `federation::run_federated`.
pub fn run_sim_session(
    init: &ModelParams,
    clients: &[EnvironmentDataset],
    cfg: &SimSessionConfig,
) -> Result<SimSessionReport> {
    cfg.schedule.validate()?;
    cfg.conditions.validate()?;
    if clients.is_empty() {
        return Err(Error::Config("simulated session needs at least one client".into()));
    }
    if cfg.max_attempts == 0 || cfg.max_round_attempts == 0 {
        return Err(Error::Config("attempt budgets must be positive".into()));
    }

    let n = clients.len();
    let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let digest = init.digest();
    let mut coordinator = RoundCoordinator::new(init.clone(), &ids, 1.0)?;

    let mut c2s: Vec<SimLink> = (0..n)
        .map(|k| SimLink::new(cfg.conditions, rng::derive_indexed(cfg.net_seed, "c2s", &[k as u64])))
        .collect::<Result<_>>()?;
    let mut s2c: Vec<SimLink> = (0..n)
        .map(|k| SimLink::new(cfg.conditions, rng::derive_indexed(cfg.net_seed, "s2c", &[k as u64])))
        .collect::<Result<_>>()?;

    let mut sims: Vec<SimClient> = ids
        .iter()
        .enumerate()
        .map(|(k, id)| SimClient {
            id: id.clone(),
            index: k as u64,
            trained_round: None,
            cached_update: None,
            attempts: 0,
            next_send: None,
            committed_round: None,
            hello_attempts: 1,
            next_hello: Some(cfg.retry_interval),
            dead: false,
        })
        .collect();

    let encode_global = |coordinator: &RoundCoordinator| -> Result<Vec<u8>> {
        codec::encode(&RoundMessage::new(
            coordinator.round(),
            MessageBody::GlobalModel { params: coordinator.global().clone() },
        ))
    };

    // Tick 0: clients introduce themselves, server distributes round 0.
    for k in 0..n {
        let hello = codec::encode(&RoundMessage::new(
            0,
            MessageBody::Hello { client_id: ids[k].clone(), digest, capacity: clients[k].len() as u32 },
        ))?;
        c2s[k].send(0, hello);
    }
    let mut state: RoundState = coordinator.begin_round();
    let mut attempt_of_round: u32 = 1;
    let mut total_attempts: u32 = 1;
    let mut deadline: u64 = cfg.round_deadline;
    let mut last_rebroadcast: u64 = 0;
    {
        let frame = encode_global(&coordinator)?;
        for link in s2c.iter_mut() {
            link.send(0, frame.clone());
        }
    }

    let mut committed_rounds: u32 = 0;
    let mut completed = false;
    let mut failed = false;
    let mut end_tick = cfg.max_ticks;

    for t in 1..=cfg.max_ticks {
        // --- Server: inbound frames ---
        for k in 0..n {
            for raw in c2s[k].poll(t) {
                let msg = codec::decode(&raw).map_err(Error::from)?;
                match msg.body {
                    MessageBody::Hello { digest: d, .. } => {
                        if d != digest {
                            let err = codec::encode(&RoundMessage::new(
                                msg.round,
                                MessageBody::Error { code: 1, text: "architecture digest mismatch".into() },
                            ))?;
                            s2c[k].send(t, err);
                        } else {
                            // Idempotent re-introduction: re-send current global.
                            let frame = encode_global(&coordinator)?;
                            s2c[k].send(t, frame);
                        }
                    }
                    MessageBody::LocalUpdate { params, sample_count } => {
                        let update_round = msg.round;
                        if update_round == state.round {
                            let outcome = coordinator.offer_update(
                                &mut state,
                                crate::federation::ClientUpdate {
                                    client_id: ids[k].clone(),
                                    params,
                                    sample_count,
                                },
                            );
                            match outcome {
                                OfferOutcome::Accepted | OfferOutcome::DuplicateIgnored => {}
                                OfferOutcome::RoundClosed => {}
                                other => {
                                    let err = codec::encode(&RoundMessage::new(
                                        update_round,
                                        MessageBody::Error {
                                            code: 2,
                                            text: format!("update rejected: {other:?}"),
                                        },
                                    ))?;
                                    s2c[k].send(t, err);
                                }
                            }
                        } else if update_round < state.round {
                            // That round already committed; tell the client.
                            let commit = codec::encode(&RoundMessage::new(
                                update_round,
                                MessageBody::RoundCommit { code: 0, text: String::new() },
                            ))?;
                            s2c[k].send(t, commit);
                        }
                        // Updates from future rounds cannot occur: clients only
                        // train on globals the server has distributed.
                    }
                    _ => {
                        let err = codec::encode(&RoundMessage::new(
                            msg.round,
                            MessageBody::Error { code: 3, text: "unexpected message type".into() },
                        ))?;
                        s2c[k].send(t, err);
                    }
                }
            }
        }

        // --- Server: quorum / deadline / re-broadcast timers ---
        let advance = |coordinator: &mut RoundCoordinator,
                           state: &mut RoundState,
                           s2c: &mut [SimLink],
                           committed_rounds: &mut u32|
         -> Result<Option<bool>> {
            // Returns Some(done) after a commit, None if the session goes on.
            let commit = codec::encode(&RoundMessage::new(
                state.round,
                MessageBody::RoundCommit { code: 0, text: String::new() },
            ))?;
            for link in s2c.iter_mut() {
                link.send(t, commit.clone());
            }
            *committed_rounds += 1;
            if *committed_rounds == cfg.schedule.rounds {
                return Ok(Some(true));
            }
            *state = coordinator.begin_round();
            let frame = encode_global(coordinator)?;
            for link in s2c.iter_mut() {
                link.send(t, frame.clone());
            }
            Ok(Some(false))
        };

        let mut round_closed = false;
        if state.received.len() >= coordinator.quorum_count() {
            match coordinator.finalize(&mut state)? {
                RoundOutcome::Committed => {
                    match advance(&mut coordinator, &mut state, &mut s2c, &mut committed_rounds)? {
                        Some(true) => {
                            completed = true;
                            end_tick = t;
                        }
                        _ => {
                            attempt_of_round = 1;
                            total_attempts += 1;
                            deadline = t + cfg.round_deadline;
                            last_rebroadcast = t;
                        }
                    }
                    round_closed = true;
                }
                RoundOutcome::Aborted { .. } => unreachable!("quorum was just checked"),
            }
        } else if t >= deadline {
            if let RoundOutcome::Aborted { .. } = coordinator.finalize(&mut state)? {
                if attempt_of_round < cfg.max_round_attempts {
                    let abort = codec::encode(&RoundMessage::new(
                        state.round,
                        MessageBody::RoundAbort { code: 0, text: String::new() },
                    ))?;
                    for link in s2c.iter_mut() {
                        link.send(t, abort.clone());
                    }
                    state = coordinator.begin_round();
                    attempt_of_round += 1;
                    total_attempts += 1;
                    deadline = t + cfg.round_deadline;
                    last_rebroadcast = t;
                    let frame = encode_global(&coordinator)?;
                    for link in s2c.iter_mut() {
                        link.send(t, frame.clone());
                    }
                } else {
                    failed = true;
                    end_tick = t;
                }
            }
            round_closed = true;
        }

        if completed || failed {
            // Fall through to the report below.
        } else if !round_closed && t.saturating_sub(last_rebroadcast) >= cfg.rebroadcast_interval {
            last_rebroadcast = t;
            let frame = encode_global(&coordinator)?;
            for (k, id) in ids.iter().enumerate() {
                if !state.received.contains_key(id) {
                    s2c[k].send(t, frame.clone());
                }
            }
        }

        if completed || failed {
            break;
        }

        // --- Clients: inbound frames ---
        for k in 0..n {
            if sims[k].dead {
                continue;
            }
            for raw in s2c[k].poll(t) {
                let msg = codec::decode(&raw).map_err(Error::from)?;
                let sim = &mut sims[k];
                match msg.body {
                    MessageBody::GlobalModel { params } => {
                        let r = msg.round;
                        match sim.trained_round {
                            Some(tr) if r < tr => {} // stale duplicate
                            Some(tr) if r == tr => {
                                // Server re-distributed the round we already
                                // trained for: fresh attempt budget, re-send.
                                if sim.committed_round != Some(r) {
                                    if let Some(frame) = sim.cached_update.clone() {
                                        c2s[k].send(t, frame);
                                        sim.attempts = 1;
                                        sim.next_send = Some(t + cfg.retry_interval);
                                    }
                                }
                            }
                            _ => {
                                let seed = round_seed(cfg.train_seed, r, sim.index);
                                let update =
                                    local_train(&params, &clients[k], &cfg.schedule, seed, &sim.id)?;
                                let frame = codec::encode(&RoundMessage::new(
                                    r,
                                    MessageBody::LocalUpdate {
                                        params: update.params,
                                        sample_count: update.sample_count,
                                    },
                                ))?;
                                sim.trained_round = Some(r);
                                sim.cached_update = Some(frame.clone());
                                sim.attempts = 1;
                                sim.next_send = Some(t + cfg.retry_interval);
                                sim.next_hello = None;
                                c2s[k].send(t, frame);
                            }
                        }
                    }
                    MessageBody::RoundCommit { .. } => {
                        if sim.trained_round == Some(msg.round) {
                            sim.committed_round = Some(msg.round);
                            sim.next_send = None;
                        }
                    }
                    MessageBody::RoundAbort { .. } => {
                        if sim.trained_round == Some(msg.round) && sim.committed_round != Some(msg.round)
                        {
                            // Wait for the re-distribution; keep the cached
                            // update (same global means the same result).
                            sim.next_send = None;
                            sim.attempts = 0;
                        }
                    }
                    MessageBody::Error { code, text } => {
                        sim.dead = true;
                        sim.next_send = None;
                        sim.next_hello = None;
                        let _ = (code, text);
                    }
                    _ => {}
                }
            }
        }

        // --- Client timers ---
        for k in 0..n {
            let sim = &mut sims[k];
            if sim.dead {
                continue;
            }
            if let Some(due) = sim.next_send {
                if t >= due
                    && sim.attempts < cfg.max_attempts
                    && sim.committed_round != sim.trained_round
                {
                    if let Some(frame) = sim.cached_update.clone() {
                        c2s[k].send(t, frame);
                        sim.attempts += 1;
                        sim.next_send = Some(t + cfg.retry_interval);
                    }
                } else if sim.attempts >= cfg.max_attempts {
                    sim.next_send = None;
                }
            }
            if sim.trained_round.is_none() {
                if let Some(due) = sim.next_hello {
                    if t >= due && sim.hello_attempts < cfg.max_attempts {
                        let hello = codec::encode(&RoundMessage::new(
                            0,
                            MessageBody::Hello {
                                client_id: sim.id.clone(),
                                digest,
                                capacity: clients[k].len() as u32,
                            },
                        ))?;
                        c2s[k].send(t, hello);
                        sim.hello_attempts += 1;
                        sim.next_hello = Some(t + cfg.retry_interval);
                    }
                }
            }
        }
    }

    let frames_sent = c2s.iter().chain(s2c.iter()).map(|l| l.sent).sum();
    let frames_dropped = c2s.iter().chain(s2c.iter()).map(|l| l.dropped).sum();
    Ok(SimSessionReport {
        final_global: coordinator.global().clone(),
        committed_rounds,
        round_attempts: total_attempts,
        ticks: end_tick,
        frames_sent,
        frames_dropped,
        completed,
    })
}
