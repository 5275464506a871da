//! Wire protocol and carriers for federated rounds.
//!
//! [`codec`] defines the binary frame format, [`sim`] a deterministic lossy
//! in-memory channel plus a full simulated session driver, and [`tcp`] a
//! blocking localhost carrier. The round logic itself lives in
//! `federation`; everything here only moves bytes and feeds events in.

pub mod codec;
pub mod sim;
pub mod tcp;

pub use codec::{decode, encode, DecodeError, DecodeErrorKind, MAX_PAYLOAD};

use crate::models::ModelParams;

/// Message kinds exchanged between server and clients.
///
/// `RoundCommit`, `RoundAbort`, and `Error` carry a numeric code plus text;
/// code 0 with empty text is the canonical "plain" form and encodes as an
/// empty payload.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    /// Client introduction: id, architecture digest, examples-per-round hint.
    Hello { client_id: String, digest: u64, capacity: u32 },
    /// Server distributing the current global model.
    GlobalModel { params: ModelParams },
    /// Client reporting trained weights plus its local sample count.
    LocalUpdate { params: ModelParams, sample_count: u32 },
    RoundCommit { code: u16, text: String },
    RoundAbort { code: u16, text: String },
    Error { code: u16, text: String },
}

impl MessageBody {
    /// Wire value of the message type byte.
    pub fn msg_type(&self) -> u8 {
        match self {
            MessageBody::Hello { .. } => 1,
            MessageBody::GlobalModel { .. } => 2,
            MessageBody::LocalUpdate { .. } => 3,
            MessageBody::RoundCommit { .. } => 4,
            MessageBody::RoundAbort { .. } => 5,
            MessageBody::Error { .. } => 6,
        }
    }
}

/// One protocol message: the round it belongs to plus the body.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub round: u32,
    pub body: MessageBody,
}

impl RoundMessage {
    pub fn new(round: u32, body: MessageBody) -> Self {
        RoundMessage { round, body }
    }
}
