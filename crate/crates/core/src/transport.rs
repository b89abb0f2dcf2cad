//! Simulated off-chain network and the buyer's upload endpoint.
//!
//! Time is a discrete tick counter. Each send draws a latency from the
//! configured range and a drop decision from a seeded RNG, so a given
//! (config, send schedule) always produces the same delivery transcript.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{sha256, Address, Digest};
use crate::messages::{tag, DataResponse, PayloadDelivery};

/// Routable destination: an actor inbox or a buyer upload URL.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint(pub String);

impl Endpoint {
    /// Inbox of the actor owning `address`.
    pub fn actor(address: &Address) -> Self {
        Endpoint(format!("actor:{address}"))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Endpoint({})", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: Address,
    pub to: Endpoint,
    /// Leading type tag of `payload`, or 0 for an empty payload.
    pub tag: u8,
    pub payload: Vec<u8>,
    pub sent_at: u64,
    pub delivery_time: u64,
}

const ENVELOPE_TAG: u8 = 0x50;

impl Canonical for Envelope {
    const TAG: u8 = ENVELOPE_TAG;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(self.from.as_bytes())
            .str(&self.to.0)
            .u8(self.tag)
            .bytes(&self.payload)
            .u64(self.sent_at)
            .u64(self.delivery_time);
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Envelope {
            from: Address(dec.fixed()?),
            to: Endpoint(dec.string()?),
            tag: dec.u8()?,
            payload: dec.bytes()?.to_vec(),
            sent_at: dec.u64()?,
            delivery_time: dec.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub latency_min: u64,
    pub latency_max: u64,
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            latency_min: 1,
            latency_max: 1,
            drop_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(Endpoint),
    #[error("latency range [{0}, {1}] is invalid; need 1 <= min <= max")]
    LatencyRange(u64, u64),
    #[error("drop rate {0} is outside [0, 1]")]
    DropRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptKind {
    Sent,
    Dropped,
    Delivered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub time: u64,
    pub kind: TranscriptKind,
    pub envelope: Envelope,
}

#[derive(Debug)]
pub struct Network {
    config: NetworkConfig,
    rng: ChaCha8Rng,
    now: u64,
    endpoints: BTreeSet<Endpoint>,
    /// (delivery_time, send sequence) -> envelope
    in_flight: BTreeMap<(u64, u64), Envelope>,
    next_seq: u64,
    last_delivery: HashMap<(Address, Endpoint), u64>,
    transcript: Vec<TranscriptEntry>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self, TransportError> {
        if config.latency_min == 0 || config.latency_min > config.latency_max {
            return Err(TransportError::LatencyRange(config.latency_min, config.latency_max));
        }
        if !(0.0..=1.0).contains(&config.drop_rate) {
            return Err(TransportError::DropRate(config.drop_rate));
        }
        Ok(Network {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            now: 0,
            endpoints: BTreeSet::new(),
            in_flight: BTreeMap::new(),
            next_seq: 0,
            last_delivery: HashMap::new(),
            transcript: Vec::new(),
        })
    }

    pub fn register(&mut self, endpoint: Endpoint) {
        self.endpoints.insert(endpoint);
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Queues `payload` for delivery. Delivery order between one sender and
    /// one endpoint is FIFO.
    pub fn send(&mut self, from: Address, to: &Endpoint, payload: Vec<u8>) -> Result<(), TransportError> {
        if !self.endpoints.contains(to) {
            return Err(TransportError::UnknownEndpoint(to.clone()));
        }
        let latency = self
            .rng
            .gen_range(self.config.latency_min..=self.config.latency_max);
        let dropped = self.rng.gen::<f64>() < self.config.drop_rate;
        let key = (from, to.clone());
        let earliest = self.last_delivery.get(&key).copied().unwrap_or(0);
        let delivery_time = (self.now + latency).max(earliest);
        let envelope = Envelope {
            from,
            to: to.clone(),
            tag: payload.first().copied().unwrap_or(0),
            payload,
            sent_at: self.now,
            delivery_time,
        };
        self.transcript.push(TranscriptEntry {
            time: self.now,
            kind: TranscriptKind::Sent,
            envelope: envelope.clone(),
        });
        if dropped {
            self.transcript.push(TranscriptEntry {
                time: self.now,
                kind: TranscriptKind::Dropped,
                envelope,
            });
            return Ok(());
        }
        self.last_delivery.insert(key, delivery_time);
        self.in_flight.insert((delivery_time, self.next_seq), envelope);
        self.next_seq += 1;
        Ok(())
    }

    /// Advances the clock one tick and returns everything due by then.
    pub fn tick(&mut self) -> Vec<Envelope> {
        self.now += 1;
        let later = self.in_flight.split_off(&(self.now + 1, 0));
        let due = std::mem::replace(&mut self.in_flight, later);
        due.into_values()
            .inspect(|env| {
                self.transcript.push(TranscriptEntry {
                    time: self.now,
                    kind: TranscriptKind::Delivered,
                    envelope: env.clone(),
                })
            })
            .collect()
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// Delivered envelopes, length-prefixed, in delivery order.
    pub fn export_transcript(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for entry in &self.transcript {
            if entry.kind == TranscriptKind::Delivered {
                let bytes = entry.envelope.canonical_bytes();
                out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
                out.extend_from_slice(&bytes);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Buyer upload endpoint
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ack {
    Stored(Digest),
    Duplicate(Digest),
}

impl Ack {
    pub fn digest(&self) -> Digest {
        match self {
            Ack::Stored(d) | Ack::Duplicate(d) => *d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PostRejection {
    #[error("unparseable upload: {0}")]
    Parse(String),
    #[error("payload for unknown response {0}")]
    UnknownResponse(Digest),
}

/// Inbox behind an upload URL: accepts responses and payload deliveries,
/// idempotently.
#[derive(Debug, Default, Clone)]
pub struct BuyerInbox {
    responses: Vec<(Digest, DataResponse)>,
    payloads: BTreeMap<Digest, PayloadDelivery>,
    seen: BTreeSet<Digest>,
}

impl BuyerInbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn post(&mut self, bytes: &[u8]) -> Result<Ack, PostRejection> {
        match bytes.first() {
            Some(&tag::DATA_RESPONSE) => {
                let response = DataResponse::from_canonical(bytes)
                    .map_err(|e| PostRejection::Parse(e.to_string()))?;
                let digest = sha256(bytes);
                if !self.seen.insert(digest) {
                    return Ok(Ack::Duplicate(digest));
                }
                self.responses.push((digest, response));
                Ok(Ack::Stored(digest))
            }
            Some(&tag::PAYLOAD_DELIVERY) => {
                let delivery = PayloadDelivery::from_canonical(bytes)
                    .map_err(|e| PostRejection::Parse(e.to_string()))?;
                let target = delivery.response_digest;
                if !self.seen.contains(&target) {
                    return Err(PostRejection::UnknownResponse(target));
                }
                let digest = sha256(bytes);
                if self.payloads.contains_key(&target) {
                    return Ok(Ack::Duplicate(digest));
                }
                self.payloads.insert(target, delivery);
                Ok(Ack::Stored(digest))
            }
            Some(t) => Err(PostRejection::Parse(format!("unexpected message tag {t:#04x}"))),
            None => Err(PostRejection::Parse("empty upload".into())),
        }
    }

    /// Responses in arrival order.
    pub fn responses(&self) -> impl Iterator<Item = &DataResponse> {
        self.responses.iter().map(|(_, r)| r)
    }

    pub fn payload(&self, response_digest: &Digest) -> Option<&PayloadDelivery> {
        self.payloads.get(response_digest)
    }
}
