//! Buyer, seller and notary agents.
//!
//! Actors share no state. They react to delivered envelopes and to clock
//! ticks, talk to each other only through the [`Network`], and touch the
//! ledger only through its command methods.

mod buyer;
mod notary;
mod seller;

pub use buyer::{Buyer, BuyerOrderPlan, BuyerTiming, OrderStage};
pub use notary::{audit_verdict, AuditChecks, AuditMaterial, Notary, NotaryRefusal};
pub use seller::{evaluate_order, Decision, DeclineReason, Seller, SellerMutation, SellerPolicy, SellerProfile};

use std::collections::BTreeMap;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{sha256, Address, Digest};
use crate::ledger::{Ledger, LedgerError, Settlement};
use crate::messages::{
    tag, DataOrder, DataResponse, NotarizationRequest, NotaryCertificate, NotaryTerms, OrderId,
    PayloadDelivery, PostedOrder, ResponseRejection,
};
use crate::transport::{Endpoint, Network};

const DECLINE_TAG: u8 = 0x60;
const ACK_TAG: u8 = 0x61;
const REJECT_TAG: u8 = 0x62;
const REFUSAL_TAG: u8 = 0x63;

/// Everything that travels over the simulated network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Wire {
    OrderProposal(DataOrder),
    NotaryReply(NotaryTerms),
    NotaryDecline(OrderId),
    Announcement(PostedOrder),
    Response(DataResponse),
    Payload(PayloadDelivery),
    /// Upload stored; carries SHA-256 of the uploaded bytes.
    Ack(Digest),
    Reject { digest: Digest, reason: String },
    NotarizationRequest(NotarizationRequest),
    Certificate(NotaryCertificate),
    Refusal { response_digest: Digest, reason: String },
}

fn tagged(tag: u8, f: impl FnOnce(&mut Encoder)) -> Vec<u8> {
    let mut enc = Encoder::new(tag);
    f(&mut enc);
    enc.finish()
}

impl Wire {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Wire::OrderProposal(m) => m.canonical_bytes(),
            Wire::NotaryReply(m) => m.canonical_bytes(),
            Wire::Announcement(m) => m.canonical_bytes(),
            Wire::Response(m) => m.canonical_bytes(),
            Wire::Payload(m) => m.canonical_bytes(),
            Wire::NotarizationRequest(m) => m.canonical_bytes(),
            Wire::Certificate(m) => m.canonical_bytes(),
            Wire::NotaryDecline(id) => tagged(DECLINE_TAG, |e| {
                e.bytes(id.0.as_bytes());
            }),
            Wire::Ack(d) => tagged(ACK_TAG, |e| {
                e.bytes(d.as_bytes());
            }),
            Wire::Reject { digest, reason } => tagged(REJECT_TAG, |e| {
                e.bytes(digest.as_bytes()).str(reason);
            }),
            Wire::Refusal {
                response_digest,
                reason,
            } => tagged(REFUSAL_TAG, |e| {
                e.bytes(response_digest.as_bytes()).str(reason);
            }),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let t = *bytes.first().ok_or(CodecError::Empty)?;
        Ok(match t {
            tag::DATA_ORDER => Wire::OrderProposal(DataOrder::from_canonical(bytes)?),
            tag::NOTARY_TERMS => Wire::NotaryReply(NotaryTerms::from_canonical(bytes)?),
            tag::POSTED_ORDER => Wire::Announcement(PostedOrder::from_canonical(bytes)?),
            tag::DATA_RESPONSE => Wire::Response(DataResponse::from_canonical(bytes)?),
            tag::PAYLOAD_DELIVERY => Wire::Payload(PayloadDelivery::from_canonical(bytes)?),
            tag::NOTARIZATION_REQUEST => {
                Wire::NotarizationRequest(NotarizationRequest::from_canonical(bytes)?)
            }
            tag::NOTARY_CERTIFICATE => Wire::Certificate(NotaryCertificate::from_canonical(bytes)?),
            DECLINE_TAG | ACK_TAG | REJECT_TAG | REFUSAL_TAG => {
                let mut d = Decoder::new(bytes, t)?;
                let digest = Digest(d.fixed()?);
                let wire = match t {
                    DECLINE_TAG => Wire::NotaryDecline(OrderId(digest)),
                    ACK_TAG => Wire::Ack(digest),
                    REJECT_TAG => Wire::Reject {
                        digest,
                        reason: d.string()?,
                    },
                    _ => Wire::Refusal {
                        response_digest: digest,
                        reason: d.string()?,
                    },
                };
                d.finish()?;
                wire
            }
            other => return Err(CodecError::UnknownTag(other)),
        })
    }
}

/// Things actors report to the scenario runner.
#[derive(Debug, Clone, PartialEq)]
pub enum ActorEvent {
    OrderPosted {
        buyer: Address,
        plan: usize,
        order_id: OrderId,
        notaries: usize,
    },
    OrderAborted {
        buyer: Address,
        plan: usize,
        reason: String,
    },
    ResponseRejected {
        order_id: OrderId,
        seller: Address,
        response: Digest,
        reason: ResponseRejection,
    },
    SellersSelected {
        order_id: OrderId,
        responses: Vec<Digest>,
        audit_topup: u64,
    },
    AuditToppedUp {
        order_id: OrderId,
        amount: u64,
    },
    Settled(Settlement),
    OrderClosed {
        order_id: OrderId,
        residual: u64,
    },
    /// An adversarial ledger call; `accepted` should always be false.
    Attack {
        actor: Address,
        kind: &'static str,
        accepted: bool,
        state_unchanged: bool,
        error: Option<LedgerError>,
    },
    LedgerRejected {
        actor: Address,
        operation: &'static str,
        error: LedgerError,
    },
    SendFailed {
        from: Address,
        to: Endpoint,
    },
}

/// Per-call view handed to actors by the scheduler.
pub struct Ctx<'a> {
    pub net: &'a mut Network,
    pub ledger: &'a mut Ledger,
    pub events: &'a mut Vec<ActorEvent>,
}

impl Ctx<'_> {
    pub fn now(&self) -> u64 {
        self.net.now()
    }

    pub fn send(&mut self, from: Address, to: &Endpoint, message: &Wire) {
        self.send_raw(from, to, message.encode());
    }

    pub fn send_raw(&mut self, from: Address, to: &Endpoint, bytes: Vec<u8>) {
        if self.net.send(from, to, bytes).is_err() {
            self.events.push(ActorEvent::SendFailed {
                from,
                to: to.clone(),
            });
        }
    }
}

/// Notary's authoritative records, keyed by (seller identity, schema id).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruthStore {
    records: BTreeMap<(String, String), Vec<u8>>,
}

impl GroundTruthStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, identity: impl Into<String>, schema: impl Into<String>, data: Vec<u8>) {
        self.records.insert((identity.into(), schema.into()), data);
    }

    pub fn get(&self, identity: &str, schema: &str) -> Option<&[u8]> {
        self.records
            .get(&(identity.to_string(), schema.to_string()))
            .map(Vec::as_slice)
    }

    pub fn has_schema(&self, schema: &str) -> bool {
        self.records.keys().any(|(_, s)| s == schema)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NotarizationMode {
    Always,
    Never,
    Sample { rate: f64 },
}

/// Decides which responses a notary audits when the buyer does not force it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotarizationPolicy {
    pub mode: NotarizationMode,
    pub seed: u64,
}

impl NotarizationPolicy {
    pub fn always() -> Self {
        NotarizationPolicy {
            mode: NotarizationMode::Always,
            seed: 0,
        }
    }

    pub fn never() -> Self {
        NotarizationPolicy {
            mode: NotarizationMode::Never,
            seed: 0,
        }
    }

    /// Sampling is a pure function of (seed, response digest).
    pub fn should_audit(&self, response_digest: &Digest) -> bool {
        match self.mode {
            NotarizationMode::Always => true,
            NotarizationMode::Never => false,
            NotarizationMode::Sample { rate } => {
                let mut buf = Vec::with_capacity(40);
                buf.extend_from_slice(&self.seed.to_be_bytes());
                buf.extend_from_slice(response_digest.as_bytes());
                let h = sha256(&buf);
                let x = u64::from_be_bytes(h.0[..8].try_into().expect("8 bytes"));
                (x as f64 / u64::MAX as f64) < rate
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    AllValid,
    FirstK(usize),
    BudgetCap(u64),
}

impl SelectionPolicy {
    /// Picks from validated responses, kept in arrival order.
    pub fn select<T: Clone>(&self, valid: &[T], price: u64) -> Vec<T> {
        match *self {
            SelectionPolicy::AllValid => valid.to_vec(),
            SelectionPolicy::FirstK(k) => valid.iter().take(k).cloned().collect(),
            SelectionPolicy::BudgetCap(cap) => {
                let n = cap.checked_div(price).map_or(valid.len(), |n| n as usize);
                valid.iter().take(n).cloned().collect()
            }
        }
    }
}
