//! Wire format hardening, simulated channel behavior, and carrier
//! equivalence with in-process training.

use fedrover::data::{self, EnvironmentId, ShiftKnobs, Split};
use fedrover::error::Error;
use fedrover::federation::{run_federated, TrainSchedule};
use fedrover::models::{ArchName, ModelParams};
use fedrover::rng;
use fedrover::transport::codec::{decode, encode, DecodeErrorKind, HEADER_LEN, MAX_PAYLOAD};
use fedrover::transport::sim::{run_sim_session, NetConditions, SimLink, SimSessionConfig};
use fedrover::transport::tcp::{run_client, serve_on, TcpClientConfig, TcpServerConfig};
use fedrover::transport::{MessageBody, RoundMessage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn commit(round: u32) -> RoundMessage {
    RoundMessage::new(round, MessageBody::RoundCommit { code: 0, text: String::new() })
}

fn model_message(seed: u64, round: u32) -> RoundMessage {
    let mut params = ModelParams::init(ArchName::ResnetLite, seed);
    params.version = round;
    RoundMessage::new(round, MessageBody::GlobalModel { params })
}

fn shard(env: EnvironmentId, size: usize, seed: u64) -> data::EnvironmentDataset {
    data::generate(env, Split::Train, size, seed, &ShiftKnobs::default()).unwrap()
}

#[test]
fn plain_commit_frame_is_exactly_eighteen_bytes() {
    let frame = encode(&commit(7)).unwrap();
    assert_eq!(frame.len(), 18);
    assert_eq!(&frame[0..4], b"FEDA");
    assert_eq!(frame[4], 1, "protocol version");
    assert_eq!(frame[5], 4, "commit message type");
    assert_eq!(u32::from_le_bytes(frame[6..10].try_into().unwrap()), 7);
    assert_eq!(u32::from_le_bytes(frame[10..14].try_into().unwrap()), 0, "empty payload");
    assert_eq!(
        u32::from_le_bytes(frame[14..18].try_into().unwrap()),
        crc32fast::hash(b""),
        "trailing CRC covers the (empty) payload"
    );
}

#[test]
fn header_layout_is_frozen() {
    let msg = RoundMessage::new(
        0x01020304,
        MessageBody::Hello { client_id: "rover".into(), digest: 0xABCD, capacity: 9 },
    );
    let frame = encode(&msg).unwrap();
    assert_eq!(&frame[0..4], b"FEDA");
    assert_eq!(frame[5], 1, "hello message type");
    assert_eq!(&frame[6..10], &[0x04, 0x03, 0x02, 0x01], "round is little-endian");
    let payload_len = u32::from_le_bytes(frame[10..14].try_into().unwrap()) as usize;
    assert_eq!(frame.len(), HEADER_LEN + payload_len + 4);
    let payload = &frame[HEADER_LEN..HEADER_LEN + payload_len];
    assert_eq!(&payload[..2], &[5, 0], "id length prefix");
    assert_eq!(&payload[2..7], b"rover");
    assert_eq!(
        u32::from_le_bytes(frame[frame.len() - 4..].try_into().unwrap()),
        crc32fast::hash(payload)
    );
}

#[test]
fn every_message_kind_round_trips() {
    let messages = vec![
        RoundMessage::new(0, MessageBody::Hello { client_id: "c0".into(), digest: 1, capacity: 0 }),
        model_message(3, 2),
        RoundMessage::new(
            5,
            MessageBody::LocalUpdate {
                params: ModelParams::init(ArchName::AlexnetLite, 8),
                sample_count: 321,
            },
        ),
        commit(0),
        RoundMessage::new(9, MessageBody::RoundCommit { code: 2, text: "late".into() }),
        RoundMessage::new(1, MessageBody::RoundAbort { code: 6, text: "quorum not met".into() }),
        RoundMessage::new(u32::MAX, MessageBody::Error { code: 500, text: "ünïcode ✓".into() }),
    ];
    for msg in messages {
        let frame = encode(&msg).unwrap();
        assert_eq!(decode(&frame).unwrap(), msg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn control_frames_round_trip(round in any::<u32>(), code in any::<u16>(), text in ".{0,80}", kind in 0u8..3) {
        let body = match kind {
            0 => MessageBody::RoundCommit { code, text },
            1 => MessageBody::RoundAbort { code, text },
            _ => MessageBody::Error { code, text },
        };
        let msg = RoundMessage::new(round, body);
        let decoded = decode(&encode(&msg).unwrap()).unwrap();
        // Code 0 plus empty text is defined to encode as the bare frame.
        prop_assert_eq!(decoded, msg);
    }

    #[test]
    fn hello_frames_round_trip(round in any::<u32>(), id in "[a-zA-Z0-9_-]{1,40}", digest in any::<u64>(), capacity in any::<u32>()) {
        let msg = RoundMessage::new(round, MessageBody::Hello { client_id: id, digest, capacity });
        prop_assert_eq!(decode(&encode(&msg).unwrap()).unwrap(), msg);
    }
}

#[test]
fn randomized_model_frames_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
    for case in 0..40 {
        let arch = if case % 2 == 0 { ArchName::ResnetLite } else { ArchName::AlexnetLite };
        let mut params = ModelParams::init(arch, rng.gen());
        params.version = rng.gen();
        for w in params.weights.iter_mut().take(50) {
            *w = rng.gen_range(-100.0..100.0);
        }
        let round = rng.gen();
        let msg = if rng.gen() {
            RoundMessage::new(round, MessageBody::GlobalModel { params })
        } else {
            RoundMessage::new(
                round,
                MessageBody::LocalUpdate { params, sample_count: rng.gen() },
            )
        };
        let frame = encode(&msg).unwrap();
        assert_eq!(decode(&frame).unwrap(), msg, "case {case}");
    }
}

#[test]
fn decoder_survives_arbitrary_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    for _ in 0..20_000 {
        let len = rng.gen_range(0..200);
        let buf: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let _ = decode(&buf); // must return, never panic
    }
    // Noise that keeps a plausible header is the nastier case.
    let valid = encode(&commit(3)).unwrap();
    for _ in 0..20_000 {
        let mut buf = valid.clone();
        for _ in 0..rng.gen_range(1..=4) {
            let i = rng.gen_range(0..buf.len());
            buf[i] = rng.gen();
        }
        if rng.gen_bool(0.3) {
            buf.truncate(rng.gen_range(0..buf.len()));
        }
        let _ = decode(&buf);
    }
}

#[test]
fn payload_and_crc_corruption_is_always_caught() {
    // Exhaustive: every byte of the payload + CRC region, every wrong value.
    let msg = RoundMessage::new(4, MessageBody::RoundAbort { code: 17, text: "deadline".into() });
    let frame = encode(&msg).unwrap();
    for at in HEADER_LEN..frame.len() {
        for v in 0..=255u8 {
            if v == frame[at] {
                continue;
            }
            let mut bad = frame.clone();
            bad[at] = v;
            let e = decode(&bad).expect_err("corruption must not decode");
            assert_eq!(
                e.kind,
                DecodeErrorKind::BadCrc {
                    stored: u32::from_le_bytes(bad[frame.len() - 4..].try_into().unwrap()),
                    computed: crc32fast::hash(&bad[HEADER_LEN..frame.len() - 4]),
                },
                "byte {at} value {v}"
            );
        }
    }
}

#[test]
fn no_single_byte_change_yields_the_original_message() {
    // Header bytes are guarded by field validation rather than the CRC; a
    // change there may still parse, but never back into the same message.
    let msg = RoundMessage::new(9, MessageBody::RoundCommit { code: 3, text: "ok".into() });
    let frame = encode(&msg).unwrap();
    for at in 0..frame.len() {
        for v in 0..=255u8 {
            if v == frame[at] {
                continue;
            }
            let mut bad = frame.clone();
            bad[at] = v;
            if let Ok(decoded) = decode(&bad) {
                assert_ne!(decoded, msg, "byte {at} value {v} slipped through unchanged");
            }
        }
    }
}

#[test]
fn truncations_are_reported_with_the_needed_length() {
    let frame = encode(&model_message(1, 0)).unwrap();
    for keep in [0, 3, 4, 10, 13, HEADER_LEN, HEADER_LEN + 5, frame.len() - 1] {
        match decode(&frame[..keep]) {
            Err(e) => {
                let DecodeErrorKind::Truncated { needed } = e.kind else {
                    panic!("prefix {keep}: expected truncation, got {:?}", e.kind);
                };
                if keep >= HEADER_LEN {
                    assert_eq!(needed, frame.len(), "length field is readable at {keep}");
                }
            }
            Ok(_) => panic!("prefix {keep} decoded"),
        }
    }
}

#[test]
fn oversize_length_claims_are_rejected_early() {
    let mut frame = encode(&commit(0)).unwrap();
    frame[10..14].copy_from_slice(&((MAX_PAYLOAD as u32) + 1).to_le_bytes());
    let e = decode(&frame).unwrap_err();
    assert_eq!(e.offset, 10);
    assert!(matches!(e.kind, DecodeErrorKind::Oversize { .. }));
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut frame = encode(&commit(0)).unwrap();
    let end = frame.len();
    frame.extend_from_slice(b"xy");
    let e = decode(&frame).unwrap_err();
    assert_eq!(e.offset, end);
    assert_eq!(e.kind, DecodeErrorKind::TrailingData { extra: 2 });
}

#[test]
fn bad_magic_version_and_type_are_pinpointed() {
    let good = encode(&commit(0)).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(decode(&bad).unwrap_err().kind, DecodeErrorKind::BadMagic);

    let mut bad = good.clone();
    bad[4] = 2;
    assert_eq!(decode(&bad).unwrap_err().kind, DecodeErrorKind::BadVersion { got: 2 });

    let mut bad = good.clone();
    bad[5] = 7;
    let e = decode(&bad).unwrap_err();
    assert_eq!(e.offset, 5);
    assert_eq!(e.kind, DecodeErrorKind::BadMsgType { got: 7 });
}

#[test]
fn non_finite_weights_cannot_cross_the_wire() {
    let mut params = ModelParams::init(ArchName::ResnetLite, 2);
    params.weights[10] = f32::NAN;
    let msg = RoundMessage::new(0, MessageBody::GlobalModel { params });
    assert!(matches!(encode(&msg), Err(Error::Protocol(_))));

    // A handcrafted frame with a NaN weight must be caught on decode too.
    let mut frame = encode(&model_message(2, 0)).unwrap();
    let weight5_at = HEADER_LEN + 8 + 4 + 4 + 5 * 4;
    frame[weight5_at..weight5_at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
    let crc_at = frame.len() - 4;
    let crc = crc32fast::hash(&frame[HEADER_LEN..crc_at]);
    frame[crc_at..].copy_from_slice(&crc.to_le_bytes());
    let e = decode(&frame).unwrap_err();
    assert_eq!(e.offset, weight5_at);
    assert!(matches!(e.kind, DecodeErrorKind::BadBody { .. }));
}

#[test]
fn unknown_architecture_digests_are_rejected_in_the_body() {
    let mut frame = encode(&model_message(1, 0)).unwrap();
    frame[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&0xDEAD_BEEFu64.to_le_bytes());
    let crc_at = frame.len() - 4;
    let crc = crc32fast::hash(&frame[HEADER_LEN..crc_at]);
    frame[crc_at..].copy_from_slice(&crc.to_le_bytes());
    let e = decode(&frame).unwrap_err();
    assert_eq!(e.offset, HEADER_LEN);
    assert!(matches!(e.kind, DecodeErrorKind::BadBody { .. }));
}

// ---- simulated links ----

#[test]
fn perfect_link_delivers_in_order_after_one_tick() {
    let mut link = SimLink::new(NetConditions::default(), 1).unwrap();
    for i in 0..10u8 {
        link.send(0, vec![i]);
    }
    assert!(link.poll(0).is_empty(), "latency floor is one tick");
    assert_eq!(link.in_flight(), 10);
    let got = link.poll(1);
    assert_eq!(got, (0..10u8).map(|i| vec![i]).collect::<Vec<_>>());
    assert_eq!((link.sent, link.dropped, link.delivered), (10, 0, 10));
}

#[test]
fn link_faults_replay_the_seeded_draw_sequence() {
    // An independent walk of the same PRNG predicts every drop, latency,
    // and duplicate the link produces.
    let conditions = NetConditions {
        drop: 0.3,
        dup: 0.2,
        reorder_window: 3,
        latency_min: 1,
        latency_max: 4,
    };
    let seed = 99;
    let mut link = SimLink::new(conditions, seed).unwrap();
    let mut oracle = rng::rng_from(seed);
    let mut expected: Vec<(u64, u64, u8)> = Vec::new(); // (tick, seq, frame id)
    let mut seq = 0u64;
    let mut predicted_drops = 0u64;
    for i in 0..200u8 {
        link.send(0, vec![i]);
        if oracle.gen::<f64>() < conditions.drop {
            predicted_drops += 1;
            continue;
        }
        let lat = oracle.gen_range(conditions.latency_min..=conditions.latency_max);
        let disp = oracle.gen_range(0..=conditions.reorder_window);
        let dup = oracle.gen::<f64>() < conditions.dup;
        expected.push((lat + disp, seq, i));
        seq += 1;
        if dup {
            let lat2 = oracle.gen_range(conditions.latency_min..=conditions.latency_max);
            let disp2 = oracle.gen_range(0..=conditions.reorder_window);
            expected.push((lat2 + disp2, seq, i));
            seq += 1;
        }
    }
    expected.sort_by_key(|&(t, s, _)| (t, s));
    let got = link.poll(1_000);
    let want: Vec<Vec<u8>> = expected.iter().map(|&(_, _, id)| vec![id]).collect();
    assert_eq!(got, want);
    assert_eq!(link.dropped, predicted_drops);
    assert_eq!(link.delivered as usize, want.len());
    assert!(predicted_drops > 30, "seed produced implausibly few drops");
    assert!(want.len() > 150, "duplicates should push deliveries past kept sends");
}

#[test]
fn invalid_channel_parameters_are_rejected() {
    for conditions in [
        NetConditions { drop: 1.0, ..NetConditions::default() },
        NetConditions { drop: -0.1, ..NetConditions::default() },
        NetConditions { dup: 1.5, ..NetConditions::default() },
        NetConditions { latency_min: 5, latency_max: 2, ..NetConditions::default() },
    ] {
        assert!(SimLink::new(conditions, 0).is_err(), "{conditions:?}");
    }
}

// ---- simulated sessions ----

fn small_schedule() -> TrainSchedule {
    TrainSchedule { rounds: 2, local_epochs: 1, lr: 0.05, batch_size: 4 }
}

#[test]
fn perfect_channel_session_matches_in_process_run() {
    let init = ModelParams::init(ArchName::ResnetLite, 40);
    let shards =
        [shard(EnvironmentId::Sim(0), 8, 1), shard(EnvironmentId::Sim(1), 8, 2)];
    let cfg = SimSessionConfig {
        schedule: small_schedule(),
        train_seed: 1234,
        ..SimSessionConfig::default()
    };
    let report = run_sim_session(&init, &shards, &cfg).unwrap();
    assert!(report.completed);
    assert_eq!(report.committed_rounds, 2);
    assert_eq!(report.frames_dropped, 0);

    let direct = run_federated(&init, &shards, &small_schedule(), 1234).unwrap();
    assert_eq!(report.final_global.weights, direct.weights, "must be bitwise identical");
    assert_eq!(report.final_global.version, direct.version);
}

#[test]
fn lossy_sessions_retry_to_completion() {
    let init = ModelParams::init(ArchName::ResnetLite, 41);
    let shards =
        [shard(EnvironmentId::Sim(0), 8, 3), shard(EnvironmentId::Real(1), 8, 4)];
    let cfg = SimSessionConfig {
        schedule: small_schedule(),
        conditions: NetConditions {
            drop: 0.2,
            dup: 0.1,
            reorder_window: 2,
            latency_min: 1,
            latency_max: 3,
        },
        train_seed: 9,
        net_seed: 17,
        ..SimSessionConfig::default()
    };
    let report = run_sim_session(&init, &shards, &cfg).unwrap();
    assert!(report.completed, "retries must carry the session through 20% loss");
    assert_eq!(report.committed_rounds, 2);
    assert_eq!(report.final_global.version, 2);
    assert!(report.frames_dropped > 0, "the channel was supposed to be lossy");
}

#[test]
fn sim_sessions_validate_their_configuration() {
    let init = ModelParams::init(ArchName::ResnetLite, 0);
    let ds = shard(EnvironmentId::Sim(0), 4, 1);
    assert!(run_sim_session(&init, &[], &SimSessionConfig::default()).is_err());
    let cfg = SimSessionConfig { max_attempts: 0, ..SimSessionConfig::default() };
    assert!(run_sim_session(&init, std::slice::from_ref(&ds), &cfg).is_err());
}

// ---- TCP carrier ----

#[test]
fn tcp_session_reproduces_in_process_training() {
    let init = ModelParams::init(ArchName::ResnetLite, 50);
    let shards =
        [shard(EnvironmentId::Sim(0), 6, 11), shard(EnvironmentId::Sim(2), 6, 12)];
    let schedule = small_schedule();
    let train_seed = 777;

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server_cfg = TcpServerConfig {
        addr: addr.clone(),
        expected_clients: 2,
        rounds: schedule.rounds,
        ..TcpServerConfig::default()
    };
    let server_init = init.clone();
    let server =
        std::thread::spawn(move || serve_on(listener, server_init, &server_cfg));

    let mut clients = Vec::new();
    for (k, ds) in shards.iter().cloned().enumerate() {
        let cfg = TcpClientConfig {
            addr: addr.clone(),
            client_id: format!("c{k}"),
            client_index: k as u64,
            schedule,
            train_seed,
            ..TcpClientConfig::default()
        };
        clients.push(std::thread::spawn(move || run_client(&ds, ArchName::ResnetLite, &cfg)));
    }

    let served = server.join().unwrap().unwrap();
    let direct = run_federated(&init, &shards, &schedule, train_seed).unwrap();
    assert_eq!(served.weights, direct.weights, "TCP and in-process runs must agree bitwise");
    assert_eq!(served.version, schedule.rounds);

    for handle in clients {
        let last_seen = handle.join().unwrap().unwrap();
        assert_eq!(last_seen.version, schedule.rounds - 1, "clients hold the final distribution");
    }
}

#[test]
fn tcp_server_turns_away_mismatched_architectures() {
    let init = ModelParams::init(ArchName::AlexnetLite, 1);
    let ds = shard(EnvironmentId::Sim(0), 4, 5);

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server_cfg = TcpServerConfig {
        addr: addr.clone(),
        expected_clients: 1,
        rounds: 1,
        register_timeout: std::time::Duration::from_secs(5),
        ..TcpServerConfig::default()
    };
    let server = std::thread::spawn(move || serve_on(listener, init, &server_cfg));

    // Wrong architecture: rejected with a typed error frame.
    let bad_cfg = TcpClientConfig {
        addr: addr.clone(),
        client_id: "impostor".into(),
        schedule: small_schedule(),
        ..TcpClientConfig::default()
    };
    let err = run_client(&ds, ArchName::ResnetLite, &bad_cfg).unwrap_err();
    assert!(matches!(err, Error::Protocol(ref m) if m.contains("digest mismatch")), "{err}");

    // A correct client can still complete the session afterwards.
    let good_cfg = TcpClientConfig {
        addr,
        client_id: "c0".into(),
        schedule: TrainSchedule { rounds: 1, ..small_schedule() },
        ..TcpClientConfig::default()
    };
    let last = run_client(&ds, ArchName::AlexnetLite, &good_cfg).unwrap();
    assert_eq!(last.version, 0);
    assert_eq!(server.join().unwrap().unwrap().version, 1);
}
