//! Binary frame codec.
//!
//! Frame layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FEDA"
//! 4       1     protocol version (1)
//! 5       1     message type (1..=6)
//! 6       4     round, u32
//! 10      4     payload length, u32
//! 14      n     payload
//! 14+n    4     CRC32 (IEEE) of the payload bytes
//! ```
//!
//! A `ROUND_COMMIT` with the canonical empty body is exactly 18 bytes.
//!
//! Payload layouts per message type:
//!
//! * `HELLO` (1): id length u16, id bytes (UTF-8), digest u64, capacity u32.
//! * `GLOBAL_MODEL` (2): digest u64, model version u32, weight count u32,
//!   weights f32 each.
//! * `LOCAL_UPDATE` (3): digest u64, model version u32, sample count u32,
//!   weight count u32, weights f32 each.
//! * `ROUND_COMMIT`/`ROUND_ABORT`/`ERROR` (4/5/6): empty, or code u16,
//!   text length u16, text bytes (UTF-8). Code 0 with empty text always
//!   encodes as the empty payload.
//!
//! The decoder is total: any byte sequence yields either a message or a
//! typed [`DecodeError`] carrying the offset of the first problem. The
//! payload CRC is verified before any body field is interpreted.

use crate::error::{Error, Result};
use crate::models::{ArchName, ModelParams};
use crate::transport::{MessageBody, RoundMessage};
use thiserror::Error as ThisError;

pub const MAGIC: &[u8; 4] = b"FEDA";
pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
/// Upper bound on payload size: 64 MiB.
pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

/// What went wrong while decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    BadMagic,
    BadVersion { got: u8 },
    BadMsgType { got: u8 },
    /// Buffer ends before the frame does; `needed` is the full frame length.
    Truncated { needed: usize },
    Oversize { len: usize },
    BadCrc { stored: u32, computed: u32 },
    /// Structurally invalid payload for the declared message type.
    BadBody { reason: String },
    /// Bytes remain after a complete frame.
    TrailingData { extra: usize },
}

/// Decode failure with the byte offset of the first problem.
#[derive(Debug, Clone, PartialEq, Eq, ThisError)]
#[error("frame error at byte {offset}: {kind:?}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

fn err<T>(offset: usize, kind: DecodeErrorKind) -> std::result::Result<T, DecodeError> {
    Err(DecodeError { offset, kind })
}

fn check_weights_finite(weights: &[f32]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Protocol("refusing to encode non-finite weights".into()));
    }
    Ok(())
}

fn put_params(buf: &mut Vec<u8>, params: &ModelParams, sample_count: Option<u32>) {
    buf.extend_from_slice(&params.digest().to_le_bytes());
    buf.extend_from_slice(&params.version.to_le_bytes());
    if let Some(n) = sample_count {
        buf.extend_from_slice(&n.to_le_bytes());
    }
    buf.extend_from_slice(&(params.weights.len() as u32).to_le_bytes());
    for w in &params.weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
}

fn put_code_text(buf: &mut Vec<u8>, code: u16, text: &str) -> Result<()> {
    if code == 0 && text.is_empty() {
        return Ok(()); // canonical empty payload
    }
    if text.len() > u16::MAX as usize {
        return Err(Error::Protocol(format!("status text too long ({} bytes)", text.len())));
    }
    buf.extend_from_slice(&code.to_le_bytes());
    buf.extend_from_slice(&(text.len() as u16).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    Ok(())
}

/// Encodes a message into one frame.
pub fn encode(msg: &RoundMessage) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    match &msg.body {
        MessageBody::Hello { client_id, digest, capacity } => {
            if client_id.len() > u16::MAX as usize {
                return Err(Error::Protocol("client id too long".into()));
            }
            payload.extend_from_slice(&(client_id.len() as u16).to_le_bytes());
            payload.extend_from_slice(client_id.as_bytes());
            payload.extend_from_slice(&digest.to_le_bytes());
            payload.extend_from_slice(&capacity.to_le_bytes());
        }
        MessageBody::GlobalModel { params } => {
            check_weights_finite(&params.weights)?;
            put_params(&mut payload, params, None);
        }
        MessageBody::LocalUpdate { params, sample_count } => {
            check_weights_finite(&params.weights)?;
            put_params(&mut payload, params, Some(*sample_count));
        }
        MessageBody::RoundCommit { code, text }
        | MessageBody::RoundAbort { code, text }
        | MessageBody::Error { code, text } => put_code_text(&mut payload, *code, text)?,
    }
    if payload.len() > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload of {} bytes exceeds the {MAX_PAYLOAD}-byte cap",
            payload.len()
        )));
    }

    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    frame.extend_from_slice(MAGIC);
    frame.push(PROTOCOL_VERSION);
    frame.push(msg.body.msg_type());
    frame.extend_from_slice(&msg.round.to_le_bytes());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    frame.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(frame)
}

/// Bounds-checked little-endian reader over a payload.
struct Cursor<'a> {
    buf: &'a [u8],
    /// Absolute offset of `buf[0]` within the frame, for error reporting.
    base: usize,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Cursor { buf, base, pos: 0 }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], DecodeError> {
        if self.pos + n > self.buf.len() {
            return err(
                self.offset(),
                DecodeErrorKind::BadBody {
                    reason: format!("payload ends {} bytes short", self.pos + n - self.buf.len()),
                },
            );
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, DecodeError> {
        let len = self.u16()? as usize;
        let at = self.offset();
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DecodeError {
            offset: at,
            kind: DecodeErrorKind::BadBody { reason: "invalid UTF-8".into() },
        })
    }

    fn finished(&self) -> std::result::Result<(), DecodeError> {
        if self.pos != self.buf.len() {
            return err(
                self.offset(),
                DecodeErrorKind::BadBody {
                    reason: format!("{} unexpected trailing payload bytes", self.buf.len() - self.pos),
                },
            );
        }
        Ok(())
    }
}

fn read_params(
    cur: &mut Cursor<'_>,
    with_sample_count: bool,
) -> std::result::Result<(ModelParams, u32), DecodeError> {
    let digest_at = cur.offset();
    let digest = cur.u64()?;
    let arch = ArchName::from_digest(digest).map_err(|_| DecodeError {
        offset: digest_at,
        kind: DecodeErrorKind::BadBody {
            reason: format!("unknown architecture digest {digest:#018x}"),
        },
    })?;
    let version = cur.u32()?;
    let sample_count = if with_sample_count { cur.u32()? } else { 0 };
    let count_at = cur.offset();
    let count = cur.u32()? as usize;
    if count != arch.param_count() {
        return err(
            count_at,
            DecodeErrorKind::BadBody {
                reason: format!("weight count {count} does not match {arch} ({})", arch.param_count()),
            },
        );
    }
    let weights_at = cur.offset();
    let raw = cur.take(count * 4)?;
    let mut weights = Vec::with_capacity(count);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return err(
                weights_at + i * 4,
                DecodeErrorKind::BadBody { reason: "non-finite weight".into() },
            );
        }
        weights.push(v);
    }
    Ok((ModelParams { arch, version, weights }, sample_count))
}

fn read_code_text(cur: &mut Cursor<'_>) -> std::result::Result<(u16, String), DecodeError> {
    if cur.buf.is_empty() {
        return Ok((0, String::new()));
    }
    let code = cur.u16()?;
    let text = cur.string()?;
    Ok((code, text))
}

/// Decodes exactly one frame spanning the whole buffer.
pub fn decode(buf: &[u8]) -> std::result::Result<RoundMessage, DecodeError> {
    if buf.len() < 4 {
        return err(buf.len(), DecodeErrorKind::Truncated { needed: HEADER_LEN + 4 });
    }
    if &buf[0..4] != MAGIC {
        return err(0, DecodeErrorKind::BadMagic);
    }
    if buf.len() < HEADER_LEN {
        return err(buf.len(), DecodeErrorKind::Truncated { needed: HEADER_LEN + 4 });
    }
    if buf[4] != PROTOCOL_VERSION {
        return err(4, DecodeErrorKind::BadVersion { got: buf[4] });
    }
    let msg_type = buf[5];
    if !(1..=6).contains(&msg_type) {
        return err(5, DecodeErrorKind::BadMsgType { got: msg_type });
    }
    let round = u32::from_le_bytes(buf[6..10].try_into().unwrap());
    let payload_len = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD {
        return err(10, DecodeErrorKind::Oversize { len: payload_len });
    }
    let total = HEADER_LEN + payload_len + 4;
    if buf.len() < total {
        return err(buf.len(), DecodeErrorKind::Truncated { needed: total });
    }
    if buf.len() > total {
        return err(total, DecodeErrorKind::TrailingData { extra: buf.len() - total });
    }

    let payload = &buf[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u32::from_le_bytes(buf[HEADER_LEN + payload_len..total].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return err(HEADER_LEN + payload_len, DecodeErrorKind::BadCrc { stored, computed });
    }

    let mut cur = Cursor::new(payload, HEADER_LEN);
    let body = match msg_type {
        1 => {
            let client_id = cur.string()?;
            let digest = cur.u64()?;
            let capacity = cur.u32()?;
            MessageBody::Hello { client_id, digest, capacity }
        }
        2 => {
            let (params, _) = read_params(&mut cur, false)?;
            MessageBody::GlobalModel { params }
        }
        3 => {
            let (params, sample_count) = read_params(&mut cur, true)?;
            MessageBody::LocalUpdate { params, sample_count }
        }
        4 => {
            let (code, text) = read_code_text(&mut cur)?;
            MessageBody::RoundCommit { code, text }
        }
        5 => {
            let (code, text) = read_code_text(&mut cur)?;
            MessageBody::RoundAbort { code, text }
        }
        6 => {
            let (code, text) = read_code_text(&mut cur)?;
            MessageBody::Error { code, text }
        }
        _ => unreachable!("validated above"),
    };
    cur.finished()?;
    Ok(RoundMessage { round, body })
}
