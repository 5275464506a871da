//! Blocking TCP carrier for federated sessions.
//!
//! The server accepts a fixed number of clients (each introduced by a HELLO
//! whose architecture digest must match the server's model), then drives
//! rounds: broadcast the global, collect updates until quorum or timeout,
//! commit. TCP delivery is reliable, so unlike the simulated channel there
//! is no retry machinery here; a quorum failure aborts the session.
//!
//! Framing on the stream is the `codec` frame format, one frame after
//! another; the reader reconstructs frame boundaries from the length field.

use crate::data::EnvironmentDataset;
use crate::error::{Error, Result};
use crate::federation::{
    local_train, round_seed, OfferOutcome, RoundCoordinator, RoundOutcome, TrainSchedule,
};
use crate::models::{ArchName, ModelParams};
use crate::transport::{codec, MessageBody, RoundMessage};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc;
use std::time::{Duration, Instant};

/// Reads one complete frame. `Ok(None)` means clean EOF at a frame boundary.
fn read_frame(stream: &mut TcpStream) -> std::io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; codec::HEADER_LEN];
    let mut filled = 0;
    while filled < header.len() {
        match stream.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "connection closed mid-frame",
                ))
            }
            Ok(n) => filled += n,
            Err(e) => return Err(e),
        }
    }
    let payload_len = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    if payload_len > codec::MAX_PAYLOAD {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("declared payload of {payload_len} bytes exceeds cap"),
        ));
    }
    let mut frame = vec![0u8; codec::HEADER_LEN + payload_len + 4];
    frame[..codec::HEADER_LEN].copy_from_slice(&header);
    stream.read_exact(&mut frame[codec::HEADER_LEN..])?;
    Ok(Some(frame))
}

fn write_frame(stream: &mut TcpStream, frame: &[u8]) -> std::io::Result<()> {
    stream.write_all(frame)
}

/// Server-side configuration.
#[derive(Debug, Clone)]
pub struct TcpServerConfig {
    pub addr: String,
    pub expected_clients: usize,
    pub rounds: u32,
    /// Fraction of clients required to commit a round (1.0 = all).
    pub quorum: f64,
    pub round_timeout: Duration,
    pub register_timeout: Duration,
}

impl Default for TcpServerConfig {
    fn default() -> Self {
        TcpServerConfig {
            addr: "127.0.0.1:7070".into(),
            expected_clients: 1,
            rounds: TrainSchedule::default().rounds,
            quorum: 1.0,
            round_timeout: Duration::from_secs(120),
            register_timeout: Duration::from_secs(30),
        }
    }
}

enum Event {
    Msg(String, RoundMessage),
    Gone,
}

/// Runs a federated session over TCP and returns the final global model.
///
/// Binding to port 0 picks a free port; use [`serve_on`] to learn it.
pub fn serve(init: ModelParams, cfg: &TcpServerConfig) -> Result<ModelParams> {
    let listener = TcpListener::bind(&cfg.addr)?;
    serve_on(listener, init, cfg)
}

/// [`serve`] on an already-bound listener.
pub fn serve_on(listener: TcpListener, init: ModelParams, cfg: &TcpServerConfig) -> Result<ModelParams> {
    if cfg.expected_clients == 0 {
        return Err(Error::Config("expected_clients must be positive".into()));
    }
    if cfg.rounds == 0 {
        return Err(Error::Config("server needs at least one round".into()));
    }
    let digest = init.digest();

    // --- Registration: collect HELLOs until the roster is full. ---
    let reg_deadline = Instant::now() + cfg.register_timeout;
    let mut streams: BTreeMap<String, TcpStream> = BTreeMap::new();
    while streams.len() < cfg.expected_clients {
        if Instant::now() >= reg_deadline {
            return Err(Error::Protocol(format!(
                "only {}/{} clients registered before timeout",
                streams.len(),
                cfg.expected_clients
            )));
        }
        let (mut stream, _) = listener.accept()?;
        stream.set_read_timeout(Some(cfg.register_timeout))?;
        let frame = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            _ => continue, // dropped before introducing itself
        };
        let msg = match codec::decode(&frame) {
            Ok(m) => m,
            Err(e) => {
                let reply = codec::encode(&RoundMessage::new(
                    0,
                    MessageBody::Error { code: 4, text: format!("bad frame: {e}") },
                ))?;
                let _ = write_frame(&mut stream, &reply);
                continue;
            }
        };
        let MessageBody::Hello { client_id, digest: d, .. } = msg.body else {
            let reply = codec::encode(&RoundMessage::new(
                0,
                MessageBody::Error { code: 3, text: "expected HELLO".into() },
            ))?;
            let _ = write_frame(&mut stream, &reply);
            continue;
        };
        if d != digest {
            let reply = codec::encode(&RoundMessage::new(
                0,
                MessageBody::Error { code: 1, text: "architecture digest mismatch".into() },
            ))?;
            let _ = write_frame(&mut stream, &reply);
            continue;
        }
        if streams.contains_key(&client_id) {
            let reply = codec::encode(&RoundMessage::new(
                0,
                MessageBody::Error { code: 5, text: format!("client id '{client_id}' taken") },
            ))?;
            let _ = write_frame(&mut stream, &reply);
            continue;
        }
        stream.set_read_timeout(None)?;
        streams.insert(client_id, stream);
    }

    let ids: Vec<String> = streams.keys().cloned().collect();
    let mut coordinator = RoundCoordinator::new(init, &ids, cfg.quorum)?;

    // --- Reader threads feed one event channel. ---
    let (tx, rx) = mpsc::channel::<Event>();
    let mut writers: BTreeMap<String, TcpStream> = BTreeMap::new();
    let mut handles = Vec::new();
    for (id, stream) in &streams {
        writers.insert(id.clone(), stream.try_clone()?);
        let mut reader = stream.try_clone()?;
        let tx = tx.clone();
        let id = id.clone();
        handles.push(std::thread::spawn(move || loop {
            match read_frame(&mut reader) {
                Ok(Some(frame)) => match codec::decode(&frame) {
                    Ok(msg) => {
                        if tx.send(Event::Msg(id.clone(), msg)).is_err() {
                            break;
                        }
                    }
                    Err(_) => {
                        let _ = tx.send(Event::Gone);
                        break;
                    }
                },
                _ => {
                    let _ = tx.send(Event::Gone);
                    break;
                }
            }
        }));
    }
    drop(tx);

    let broadcast = |writers: &mut BTreeMap<String, TcpStream>, frame: &[u8]| {
        for stream in writers.values_mut() {
            let _ = write_frame(stream, frame);
        }
    };

    let mut result: Result<ModelParams> = Err(Error::Protocol("session did not run".into()));
    'session: for _ in 0..cfg.rounds {
        let round = coordinator.round();
        let global_frame = codec::encode(&RoundMessage::new(
            round,
            MessageBody::GlobalModel { params: coordinator.global().clone() },
        ))?;
        broadcast(&mut writers, &global_frame);

        let mut state = coordinator.begin_round();
        let deadline = Instant::now() + cfg.round_timeout;
        while state.received.len() < coordinator.quorum_count() {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            let event = match rx.recv_timeout(deadline - now) {
                Ok(e) => e,
                Err(mpsc::RecvTimeoutError::Timeout) => break,
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            };
            match event {
                Event::Msg(id, msg) => match msg.body {
                    MessageBody::LocalUpdate { params, sample_count } if msg.round == round => {
                        let outcome = coordinator.offer_update(
                            &mut state,
                            crate::federation::ClientUpdate {
                                client_id: id.clone(),
                                params,
                                sample_count,
                            },
                        );
                        if !matches!(
                            outcome,
                            OfferOutcome::Accepted | OfferOutcome::DuplicateIgnored
                        ) {
                            if let Some(stream) = writers.get_mut(&id) {
                                let reply = codec::encode(&RoundMessage::new(
                                    msg.round,
                                    MessageBody::Error {
                                        code: 2,
                                        text: format!("update rejected: {outcome:?}"),
                                    },
                                ))?;
                                let _ = write_frame(stream, &reply);
                            }
                        }
                    }
                    MessageBody::LocalUpdate { .. } => {
                        if let Some(stream) = writers.get_mut(&id) {
                            let reply = codec::encode(&RoundMessage::new(
                                msg.round,
                                MessageBody::Error { code: 2, text: "wrong round".into() },
                            ))?;
                            let _ = write_frame(stream, &reply);
                        }
                    }
                    MessageBody::Hello { .. } => {
                        // Re-introduction on an existing connection: re-send
                        // the current global.
                        if let Some(stream) = writers.get_mut(&id) {
                            let _ = write_frame(stream, &global_frame);
                        }
                    }
                    _ => {}
                },
                Event::Gone => {}
            }
        }

        match coordinator.finalize(&mut state)? {
            RoundOutcome::Committed => {
                let commit = codec::encode(&RoundMessage::new(
                    round,
                    MessageBody::RoundCommit { code: 0, text: String::new() },
                ))?;
                broadcast(&mut writers, &commit);
                result = Ok(coordinator.global().clone());
            }
            RoundOutcome::Aborted { reason } => {
                let abort = codec::encode(&RoundMessage::new(
                    round,
                    MessageBody::RoundAbort { code: 6, text: reason.clone() },
                ))?;
                broadcast(&mut writers, &abort);
                result = Err(Error::Protocol(format!("round {round} aborted: {reason}")));
                break 'session;
            }
        }
    }

    for stream in streams.values() {
        let _ = stream.shutdown(Shutdown::Both);
    }
    for h in handles {
        let _ = h.join();
    }
    result
}

/// Client-side configuration.
#[derive(Debug, Clone)]
pub struct TcpClientConfig {
    pub addr: String,
    pub client_id: String,
    /// Index used in per-round seed derivation (matches the in-process
    /// convention where client k of round r trains with `round_seed(base, r, k)`).
    pub client_index: u64,
    pub schedule: TrainSchedule,
    pub train_seed: u64,
    /// How long to wait for a server frame before giving up.
    pub io_timeout: Duration,
}

impl Default for TcpClientConfig {
    fn default() -> Self {
        TcpClientConfig {
            addr: "127.0.0.1:7070".into(),
            client_id: "c0".into(),
            client_index: 0,
            schedule: TrainSchedule::default(),
            train_seed: 0,
            io_timeout: Duration::from_secs(300),
        }
    }
}

/// Participates in a TCP session; returns the last global model received.
pub fn run_client(
    ds: &EnvironmentDataset,
    arch: ArchName,
    cfg: &TcpClientConfig,
) -> Result<ModelParams> {
    if ds.is_empty() {
        return Err(Error::Config("client dataset is empty".into()));
    }
    let mut stream = TcpStream::connect(&cfg.addr)?;
    stream.set_read_timeout(Some(cfg.io_timeout))?;
    let hello = codec::encode(&RoundMessage::new(
        0,
        MessageBody::Hello {
            client_id: cfg.client_id.clone(),
            digest: arch.digest(),
            capacity: ds.len() as u32,
        },
    ))?;
    write_frame(&mut stream, &hello)?;

    let mut last_global: Option<ModelParams> = None;
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            Ok(None) => break, // server closed: session over
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock
                || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                return Err(Error::Protocol("server went silent".into()))
            }
            Err(e) => return Err(e.into()),
        };
        let msg = codec::decode(&frame).map_err(Error::from)?;
        match msg.body {
            MessageBody::GlobalModel { params } => {
                let seed = round_seed(cfg.train_seed, msg.round, cfg.client_index);
                let update = local_train(&params, ds, &cfg.schedule, seed, &cfg.client_id)?;
                let reply = codec::encode(&RoundMessage::new(
                    msg.round,
                    MessageBody::LocalUpdate {
                        params: update.params,
                        sample_count: update.sample_count,
                    },
                ))?;
                write_frame(&mut stream, &reply)?;
                last_global = Some(params);
            }
            MessageBody::RoundCommit { .. } | MessageBody::RoundAbort { .. } => {}
            MessageBody::Error { code, text } => {
                return Err(Error::Protocol(format!("server error {code}: {text}")));
            }
            _ => {}
        }
    }
    last_global.ok_or_else(|| Error::Protocol("session ended before any global arrived".into()))
}
