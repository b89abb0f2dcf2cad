//! Append-only event journal, its file framing, and replay.

use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::Digest;

use super::{Command, LedgerError, LedgerState, Settlement};

const EVENT_TAG: u8 = 0x30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Mint,
    OrderCreated,
    SellersSelected,
    AuditTopup,
    ResponseClosed,
    OrderClosed,
}

impl EventKind {
    const ALL: [EventKind; 6] = [
        EventKind::Mint,
        EventKind::OrderCreated,
        EventKind::SellersSelected,
        EventKind::AuditTopup,
        EventKind::ResponseClosed,
        EventKind::OrderClosed,
    ];

    fn code(self) -> u8 {
        Self::ALL.iter().position(|k| *k == self).expect("listed") as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// One journal record. `state_digest` is the ledger digest after applying
/// the payload command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEvent {
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: Vec<u8>,
    pub state_digest: Digest,
}

impl LedgerEvent {
    pub fn command(&self) -> Result<Command, CodecError> {
        Command::from_canonical(&self.payload)
    }
}

impl Canonical for LedgerEvent {
    const TAG: u8 = EVENT_TAG;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.u64(self.sequence)
            .u8(self.kind.code())
            .bytes(&self.payload)
            .bytes(self.state_digest.as_bytes());
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(LedgerEvent {
            sequence: dec.u64()?,
            kind: EventKind::from_code(dec.u8()?)
                .ok_or_else(|| CodecError::Invalid("event kind".into()))?,
            payload: dec.bytes()?.to_vec(),
            state_digest: Digest(dec.fixed()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JournalError {
    #[error("journal truncated inside event {sequence}")]
    Truncated { sequence: u64 },
    #[error("event {sequence} is malformed: {source}")]
    Decode { sequence: u64, source: CodecError },
}

/// Each event as `len (4 bytes, big-endian) || canonical bytes`.
pub fn write_journal(events: &[LedgerEvent]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in events {
        let bytes = e.canonical_bytes();
        out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn read_journal(mut bytes: &[u8]) -> Result<Vec<LedgerEvent>, JournalError> {
    let mut events = Vec::new();
    while !bytes.is_empty() {
        let sequence = events.len() as u64;
        if bytes.len() < 4 {
            return Err(JournalError::Truncated { sequence });
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let frame = bytes
            .get(4..4 + len)
            .ok_or(JournalError::Truncated { sequence })?;
        let event = LedgerEvent::from_canonical(frame)
            .map_err(|source| JournalError::Decode { sequence, source })?;
        events.push(event);
        bytes = &bytes[4 + len..];
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("expected sequence {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
    #[error("event {sequence}: payload does not decode: {source}")]
    Decode { sequence: u64, source: CodecError },
    #[error("event {sequence}: recorded kind does not match its payload")]
    KindMismatch { sequence: u64 },
    #[error("event {sequence}: command rejected on replay: {source}")]
    Rejected { sequence: u64, source: LedgerError },
    #[error("event {sequence}: state digest mismatch")]
    DigestMismatch { sequence: u64 },
}

impl ReplayError {
    pub fn sequence(&self) -> u64 {
        match self {
            ReplayError::Gap { expected, .. } => *expected,
            ReplayError::Decode { sequence, .. }
            | ReplayError::KindMismatch { sequence }
            | ReplayError::Rejected { sequence, .. }
            | ReplayError::DigestMismatch { sequence } => *sequence,
        }
    }
}

/// Replays `events` from an empty ledger, calling `observe` after each one.
pub fn replay_with<F>(events: &[LedgerEvent], mut observe: F) -> Result<LedgerState, ReplayError>
where
    F: FnMut(&LedgerEvent, &LedgerState, Option<&Settlement>),
{
    let mut state = LedgerState::default();
    for (i, event) in events.iter().enumerate() {
        let expected = i as u64;
        if event.sequence != expected {
            return Err(ReplayError::Gap {
                expected,
                found: event.sequence,
            });
        }
        let command = event.command().map_err(|source| ReplayError::Decode {
            sequence: expected,
            source,
        })?;
        if command.kind() != event.kind {
            return Err(ReplayError::KindMismatch { sequence: expected });
        }
        let settlement = state.apply(&command).map_err(|source| ReplayError::Rejected {
            sequence: expected,
            source,
        })?;
        if state.digest() != event.state_digest {
            return Err(ReplayError::DigestMismatch { sequence: expected });
        }
        observe(event, &state, settlement.as_ref());
    }
    Ok(state)
}

pub fn replay(events: &[LedgerEvent]) -> Result<LedgerState, ReplayError> {
    replay_with(events, |_, _, _| {})
}
