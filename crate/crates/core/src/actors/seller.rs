use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;

use crate::codec::Canonical;
use crate::crypto::{commit, sha256, Address, Digest, KeyPair, Salt};
use crate::ledger::Phase;
use crate::messages::{
    build_data_response, DataResponse, NotaryCertificate, PayloadDelivery, PostedOrder, TermsLink,
    Verdict,
};
use crate::transport::{Endpoint, Envelope};

use super::{ActorEvent, Ctx, Wire};

#[derive(Debug, Clone)]
pub struct SellerProfile {
    /// Identity the seller authenticates with at notaries.
    pub name: String,
    pub attributes: BTreeMap<String, String>,
    pub dataset: BTreeMap<String, Vec<u8>>,
    pub keys: KeyPair,
}

impl SellerProfile {
    pub fn payment_address(&self) -> Address {
        self.keys.address()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SellerPolicy {
    pub min_price: u64,
    /// Terms texts the seller agrees to; `None` accepts any.
    pub accepted_terms: Option<Vec<TermsLink>>,
    pub max_notary_fee: Option<u64>,
    pub trusted_notaries: Option<BTreeSet<Address>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SellerMutation {
    /// Delivers different data than committed to.
    SubstituteData,
    /// Flips one bit of the delivered data.
    FlipBit { bit: usize },
    /// Names a notary outside the order's list.
    WrongNotary,
    /// Offers a price other than the posted one.
    PriceMismatch,
    /// Tries to settle its own response with a self-signed certificate.
    ForgedCertificate,
}

impl SellerMutation {
    pub fn tamper(&self, data: &[u8]) -> Vec<u8> {
        match *self {
            SellerMutation::SubstituteData => {
                let mut out: Vec<u8> = data.iter().rev().copied().collect();
                out.extend_from_slice(b"#substituted");
                out
            }
            SellerMutation::FlipBit { bit } => {
                let mut out = data.to_vec();
                let i = bit % (out.len() * 8);
                out[i / 8] ^= 1 << (i % 8);
                out
            }
            _ => data.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeclineReason {
    InvalidOrder,
    AudienceMismatch,
    SchemaMissing,
    NoAcceptableNotary,
    PriceRejected,
    TermsRejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Participate { notary: Address },
    /// Every failed check, in evaluation order.
    Decline(Vec<DeclineReason>),
}

/// Runs the seller's five checks (audience, requested data, notary, price,
/// terms) and picks the cheapest acceptable notary.
pub fn evaluate_order(profile: &SellerProfile, policy: &SellerPolicy, posted: &PostedOrder) -> Decision {
    let id = posted.id();
    if !posted.order.verify_signature() || !posted.notaries.iter().all(|n| n.verify_for(&id)) {
        return Decision::Decline(vec![DeclineReason::InvalidOrder]);
    }
    let mut failed = Vec::new();
    if !posted.order.audience.matches(&profile.attributes) {
        failed.push(DeclineReason::AudienceMismatch);
    }
    if !profile.dataset.contains_key(&posted.order.request.schema_id) {
        failed.push(DeclineReason::SchemaMissing);
    }
    let notary = posted
        .notaries
        .iter()
        .filter(|n| policy.max_notary_fee.is_none_or(|max| n.fee <= max))
        .filter(|n| {
            policy
                .trusted_notaries
                .as_ref()
                .is_none_or(|t| t.contains(&n.notary_address))
        })
        .min_by_key(|n| n.fee)
        .map(|n| n.notary_address);
    if notary.is_none() {
        failed.push(DeclineReason::NoAcceptableNotary);
    }
    if posted.price < policy.min_price {
        failed.push(DeclineReason::PriceRejected);
    }
    if let Some(accepted) = &policy.accepted_terms {
        if !accepted.contains(&posted.order.terms) {
            failed.push(DeclineReason::TermsRejected);
        }
    }
    match (failed.is_empty(), notary) {
        (true, Some(notary)) => Decision::Participate { notary },
        _ => Decision::Decline(failed),
    }
}

#[derive(Debug, Clone)]
struct Upload {
    bytes: Vec<u8>,
    digest: Digest,
    attempts: u32,
    last_sent: u64,
    done: bool,
}

impl Upload {
    fn new(bytes: Vec<u8>) -> Self {
        Upload {
            digest: sha256(&bytes),
            bytes,
            attempts: 0,
            last_sent: 0,
            done: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Offer {
    posted: PostedOrder,
    response: DataResponse,
    salt: Salt,
    data: Vec<u8>,
    upload_to: Endpoint,
    response_upload: Upload,
    delivery: Option<Upload>,
    attacked: bool,
}

/// Seller agent. Holds its salts locally until selected.
#[derive(Debug)]
pub struct Seller {
    pub profile: SellerProfile,
    pub policy: SellerPolicy,
    pub mutation: Option<SellerMutation>,
    pub retry_interval: u64,
    pub max_retries: u32,
    rng: ChaCha20Rng,
    seen: BTreeSet<crate::messages::OrderId>,
    offers: Vec<Offer>,
    declined: Vec<(crate::messages::OrderId, Vec<DeclineReason>)>,
}

impl Seller {
    pub fn new(profile: SellerProfile, policy: SellerPolicy, rng: ChaCha20Rng) -> Self {
        Seller {
            profile,
            policy,
            mutation: None,
            retry_interval: 4,
            max_retries: 5,
            rng,
            seen: BTreeSet::new(),
            offers: Vec::new(),
            declined: Vec::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.profile.payment_address()
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::actor(&self.address())
    }

    /// Responses this seller has sent, with the order they answer.
    pub fn responses(&self) -> impl Iterator<Item = (&PostedOrder, &DataResponse)> {
        self.offers.iter().map(|o| (&o.posted, &o.response))
    }

    pub fn declined(&self) -> &[(crate::messages::OrderId, Vec<DeclineReason>)] {
        &self.declined
    }

    /// Bytes this seller has ever held as data, tampered variants included.
    pub fn data_variants(&self) -> Vec<Vec<u8>> {
        let mut out: Vec<Vec<u8>> = self.profile.dataset.values().cloned().collect();
        if let Some(m) = self.mutation {
            out.extend(self.profile.dataset.values().map(|d| m.tamper(d)));
        }
        out
    }

    pub fn is_idle(&self) -> bool {
        let pending = |u: &Upload| !u.done && u.attempts <= self.max_retries;
        self.offers
            .iter()
            .all(|o| !pending(&o.response_upload) && o.delivery.as_ref().is_none_or(|d| !pending(d)))
    }

    fn make_response(&mut self, posted: &PostedOrder, notary: Address, data: &[u8]) -> Option<(DataResponse, Salt)> {
        let keys = &self.profile.keys;
        match self.mutation {
            Some(SellerMutation::WrongNotary) | Some(SellerMutation::PriceMismatch) => {
                let salt = Salt::random(&mut self.rng);
                let commitment = commit(salt.as_bytes(), data).ok()?;
                let (price, notary) = if self.mutation == Some(SellerMutation::PriceMismatch) {
                    (posted.price + 1, notary)
                } else {
                    let unlisted = sha256(&[b"unlisted".as_slice(), self.address().as_bytes()].concat());
                    (posted.price, Address::from_slice(&unlisted.0[..20]).expect("20 bytes"))
                };
                let r = DataResponse::new_signed(keys, posted.id(), price, commitment, notary, posted.order.terms);
                Some((r, salt))
            }
            _ => build_data_response(keys, posted, posted.price, data, notary, &mut self.rng).ok(),
        }
    }

    fn on_announcement(&mut self, posted: PostedOrder, ctx: &mut Ctx<'_>) {
        let id = posted.id();
        if !self.seen.insert(id) {
            return;
        }
        let notary = match evaluate_order(&self.profile, &self.policy, &posted) {
            Decision::Participate { notary } => notary,
            Decision::Decline(reasons) => {
                self.declined.push((id, reasons));
                return;
            }
        };
        let data = self.profile.dataset[&posted.order.request.schema_id].clone();
        let Some((response, salt)) = self.make_response(&posted, notary, &data) else {
            return;
        };
        let upload_to = Endpoint(posted.order.upload_url.clone());
        let mut upload = Upload::new(response.canonical_bytes());
        upload.attempts = 1;
        upload.last_sent = ctx.now();
        ctx.send_raw(self.address(), &upload_to, upload.bytes.clone());
        self.offers.push(Offer {
            posted,
            response,
            salt,
            data,
            upload_to,
            response_upload: upload,
            delivery: None,
            attacked: false,
        });
    }

    pub fn on_message(&mut self, envelope: &Envelope, ctx: &mut Ctx<'_>) {
        let Ok(wire) = Wire::decode(&envelope.payload) else {
            return;
        };
        match wire {
            Wire::Announcement(posted) => self.on_announcement(posted, ctx),
            Wire::Ack(digest) | Wire::Reject { digest, .. } => {
                for offer in &mut self.offers {
                    for u in std::iter::once(&mut offer.response_upload).chain(offer.delivery.as_mut()) {
                        if u.digest == digest {
                            u.done = true;
                        }
                    }
                }
            }
            _ => {}
        }
    }

    pub fn on_tick(&mut self, ctx: &mut Ctx<'_>) {
        let me = self.address();
        let now = ctx.now();
        let (interval, max) = (self.retry_interval, self.max_retries);
        let resend = |u: &mut Upload, to: &Endpoint, ctx: &mut Ctx<'_>| {
            if !u.done && u.attempts <= max && now >= u.last_sent + interval {
                u.attempts += 1;
                u.last_sent = now;
                ctx.send_raw(me, to, u.bytes.clone());
            }
        };
        for i in 0..self.offers.len() {
            let offer = &mut self.offers[i];
            resend(&mut offer.response_upload, &offer.upload_to, ctx);

            let selected = ctx
                .ledger
                .state()
                .response_phase(&offer.posted.id(), &offer.response.digest())
                == Some(Phase::Selected);
            if selected && offer.delivery.is_none() {
                let data = match self.mutation {
                    Some(m) => m.tamper(&offer.data),
                    None => offer.data.clone(),
                };
                let Ok(delivery) = PayloadDelivery::seal(
                    &offer.response,
                    &offer.posted.order.buyer_key,
                    &offer.salt,
                    &data,
                    &mut self.rng,
                ) else {
                    continue;
                };
                let mut upload = Upload::new(delivery.canonical_bytes());
                upload.attempts = 1;
                upload.last_sent = now;
                ctx.send_raw(me, &offer.upload_to, upload.bytes.clone());
                offer.delivery = Some(upload);
            } else if let Some(d) = offer.delivery.as_mut() {
                resend(d, &offer.upload_to, ctx);
            }

            if selected && self.mutation == Some(SellerMutation::ForgedCertificate) && !offer.attacked {
                offer.attacked = true;
                let order_id = offer.posted.id();
                let digest = offer.response.digest();
                let forged = NotaryCertificate::new_signed(
                    &self.profile.keys,
                    order_id,
                    digest,
                    Verdict::NotarizedValid,
                );
                let before = ctx.ledger.state_digest();
                let result = ctx.ledger.close_response(order_id, digest, forged);
                let state_unchanged = ctx.ledger.state_digest() == before;
                ctx.events.push(ActorEvent::Attack {
                    actor: me,
                    kind: "forged-certificate",
                    accepted: result.is_ok(),
                    state_unchanged,
                    error: result.err(),
                });
            }
        }
    }
}
