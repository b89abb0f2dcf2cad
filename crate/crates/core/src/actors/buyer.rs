use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;

use crate::codec::Canonical;
use crate::crypto::{decrypt, encrypt_for, verify_commitment, Address, Digest, KeyPair};
use crate::ledger::LedgerError;
use crate::messages::{
    build_data_order, open_payload, seal_payload, validate_response, Audience, DataOrder,
    DataRequest, DataResponse, NotarizationRequest, NotaryCertificate, NotaryTerms,
    PostedOrder, TermsLink,
};
use crate::transport::{BuyerInbox, Endpoint, Envelope};

use super::{ActorEvent, Ctx, SelectionPolicy, Wire};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuyerTiming {
    /// Ticks to wait for notary countersignatures.
    pub gather_timeout: u64,
    /// Ticks to wait for a payload after selection before forcing an audit.
    pub delivery_timeout: u64,
    /// Ticks between resends of unanswered proposals and requests.
    pub retry_interval: u64,
    pub max_retries: u32,
}

impl Default for BuyerTiming {
    fn default() -> Self {
        BuyerTiming {
            gather_timeout: 8,
            delivery_timeout: 20,
            retry_interval: 6,
            max_retries: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuyerOrderPlan {
    pub audience: Audience,
    pub request: DataRequest,
    pub upload_url: String,
    pub min_audit_budget: i64,
    pub terms: TermsLink,
    pub price: u64,
    pub notaries: Vec<Address>,
    pub selection: SelectionPolicy,
    pub audit_topup: u64,
    /// Sellers (by payment address) whose responses are always audited.
    pub force_audit: BTreeSet<Address>,
    pub post_at: u64,
    pub collect_ticks: u64,
    /// Resubmit every certificate after it settles (adversarial check).
    pub replay_certificates: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderStage {
    Pending,
    Gathering { started: u64, last_sent: u64 },
    Collecting { until: u64 },
    Settling,
    Closed,
    Aborted(String),
}

#[derive(Debug, Clone)]
struct Tracked {
    response: DataResponse,
    digest: Digest,
    selected_at: u64,
    request: Option<NotarizationRequest>,
    requests_sent: u32,
    last_request: u64,
    settled: bool,
}

#[derive(Debug, Clone)]
struct BuyerOrder {
    plan: BuyerOrderPlan,
    stage: OrderStage,
    order: Option<DataOrder>,
    replies: BTreeMap<Address, Option<NotaryTerms>>,
    posted: Option<PostedOrder>,
    inbox: BuyerInbox,
    tracked: Vec<Tracked>,
}

#[derive(Debug)]
pub struct Buyer {
    pub name: String,
    keys: KeyPair,
    rng: ChaCha20Rng,
    orders: Vec<BuyerOrder>,
    /// Where new orders are announced.
    pub board: Vec<Endpoint>,
    pub force_audit_on_mismatch: bool,
    pub timing: BuyerTiming,
}

impl Buyer {
    pub fn new(name: impl Into<String>, keys: KeyPair, rng: ChaCha20Rng) -> Self {
        Buyer {
            name: name.into(),
            keys,
            rng,
            orders: Vec::new(),
            board: Vec::new(),
            force_audit_on_mismatch: true,
            timing: BuyerTiming::default(),
        }
    }

    pub fn address(&self) -> Address {
        self.keys.address()
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::actor(&self.address())
    }

    pub fn add_order(&mut self, plan: BuyerOrderPlan) {
        self.orders.push(BuyerOrder {
            plan,
            stage: OrderStage::Pending,
            order: None,
            replies: BTreeMap::new(),
            posted: None,
            inbox: BuyerInbox::new(),
            tracked: Vec::new(),
        });
    }

    pub fn upload_endpoints(&self) -> Vec<Endpoint> {
        self.orders
            .iter()
            .map(|o| Endpoint(o.plan.upload_url.clone()))
            .collect()
    }

    pub fn stages(&self) -> Vec<&OrderStage> {
        self.orders.iter().map(|o| &o.stage).collect()
    }

    pub fn posted_orders(&self) -> Vec<Option<&PostedOrder>> {
        self.orders.iter().map(|o| o.posted.as_ref()).collect()
    }

    pub fn is_done(&self) -> bool {
        self.orders
            .iter()
            .all(|o| matches!(o.stage, OrderStage::Closed | OrderStage::Aborted(_)))
    }

    /// Upload URL traffic: store in the order's inbox and acknowledge.
    pub fn on_upload(&mut self, envelope: &Envelope, ctx: &mut Ctx<'_>) {
        let Some(order) = self
            .orders
            .iter_mut()
            .find(|o| o.plan.upload_url == envelope.to.0)
        else {
            return;
        };
        let reply = match order.inbox.post(&envelope.payload) {
            Ok(ack) => Wire::Ack(ack.digest()),
            Err(e) => Wire::Reject {
                digest: crate::crypto::sha256(&envelope.payload),
                reason: e.to_string(),
            },
        };
        ctx.send(self.keys.address(), &Endpoint::actor(&envelope.from), &reply);
    }

    pub fn on_message(&mut self, envelope: &Envelope, ctx: &mut Ctx<'_>) {
        let Ok(wire) = Wire::decode(&envelope.payload) else {
            return;
        };
        match wire {
            Wire::NotaryReply(terms) => {
                for o in &mut self.orders {
                    let expects = matches!(o.stage, OrderStage::Gathering { .. })
                        && o.order.as_ref().is_some_and(|ord| terms.verify_for(&ord.id()))
                        && o.plan.notaries.contains(&terms.notary_address)
                        && terms.notary_address == envelope.from;
                    if expects {
                        o.replies.insert(terms.notary_address, Some(terms.clone()));
                    }
                }
            }
            Wire::NotaryDecline(id) => {
                for o in &mut self.orders {
                    if matches!(o.stage, OrderStage::Gathering { .. })
                        && o.order.as_ref().is_some_and(|ord| ord.id() == id)
                        && o.plan.notaries.contains(&envelope.from)
                    {
                        o.replies.entry(envelope.from).or_insert(None);
                    }
                }
            }
            Wire::Certificate(cert) => self.on_certificate(cert, ctx),
            _ => {}
        }
    }

    fn on_certificate(&mut self, cert: NotaryCertificate, ctx: &mut Ctx<'_>) {
        let me = self.address();
        let Some(order) = self.orders.iter_mut().find(|o| {
            o.posted.as_ref().is_some_and(|p| p.id() == cert.order_ref)
                && o.tracked.iter().any(|t| t.digest == cert.response_digest && !t.settled)
        }) else {
            return;
        };
        let order_id = cert.order_ref;
        let digest = cert.response_digest;
        let mut result = ctx.ledger.close_response(order_id, digest, cert.clone());
        if let Err(LedgerError::AuditBudgetExhausted { fee, available }) = result {
            let amount = fee - available;
            match ctx.ledger.select_sellers(order_id, vec![], amount) {
                Ok(()) => {
                    ctx.events.push(ActorEvent::AuditToppedUp { order_id, amount });
                    result = ctx.ledger.close_response(order_id, digest, cert.clone());
                }
                Err(error) => ctx.events.push(ActorEvent::LedgerRejected {
                    actor: me,
                    operation: "audit-topup",
                    error,
                }),
            }
        }
        match result {
            Ok(settlement) => {
                ctx.events.push(ActorEvent::Settled(settlement));
                if let Some(t) = order.tracked.iter_mut().find(|t| t.digest == digest) {
                    t.settled = true;
                }
                if order.plan.replay_certificates {
                    let before = ctx.ledger.state_digest();
                    let replay = ctx.ledger.close_response(order_id, digest, cert);
                    let state_unchanged = ctx.ledger.state_digest() == before;
                    ctx.events.push(ActorEvent::Attack {
                        actor: me,
                        kind: "certificate-replay",
                        accepted: replay.is_ok(),
                        state_unchanged,
                        error: replay.err(),
                    });
                }
            }
            Err(error) => ctx.events.push(ActorEvent::LedgerRejected {
                actor: me,
                operation: "close-response",
                error,
            }),
        }
    }

    pub fn on_tick(&mut self, ctx: &mut Ctx<'_>) {
        for i in 0..self.orders.len() {
            self.step_order(i, ctx);
        }
    }

    fn step_order(&mut self, index: usize, ctx: &mut Ctx<'_>) {
        let now = ctx.now();
        let me = self.address();
        let timing = self.timing;
        let o = &mut self.orders[index];
        match o.stage.clone() {
            OrderStage::Pending if now >= o.plan.post_at => {
                let plan = &o.plan;
                match build_data_order(
                    &self.keys,
                    plan.audience.clone(),
                    plan.request.clone(),
                    plan.upload_url.clone(),
                    plan.min_audit_budget,
                    plan.terms,
                ) {
                    Ok(order) => {
                        let wire = Wire::OrderProposal(order.clone());
                        for n in &plan.notaries {
                            ctx.send(me, &Endpoint::actor(n), &wire);
                        }
                        o.order = Some(order);
                        o.stage = OrderStage::Gathering {
                            started: now,
                            last_sent: now,
                        };
                    }
                    Err(e) => {
                        o.stage = OrderStage::Aborted(e.to_string());
                        ctx.events.push(ActorEvent::OrderAborted {
                            buyer: me,
                            plan: index,
                            reason: e.to_string(),
                        });
                    }
                }
            }
            OrderStage::Gathering { started, last_sent } => {
                let all_replied = o.plan.notaries.iter().all(|n| o.replies.contains_key(n));
                if all_replied || now >= started + timing.gather_timeout {
                    self.post_order(index, ctx);
                } else if now >= last_sent + timing.retry_interval {
                    let wire = Wire::OrderProposal(o.order.clone().expect("built"));
                    for n in o.plan.notaries.iter().filter(|n| !o.replies.contains_key(n)) {
                        ctx.send(me, &Endpoint::actor(n), &wire);
                    }
                    o.stage = OrderStage::Gathering {
                        started,
                        last_sent: now,
                    };
                }
            }
            OrderStage::Collecting { until } if now >= until => self.select(index, ctx),
            OrderStage::Settling => self.settle(index, ctx),
            _ => {}
        }
    }

    fn post_order(&mut self, index: usize, ctx: &mut Ctx<'_>) {
        let me = self.address();
        let now = ctx.now();
        let o = &mut self.orders[index];
        let order = o.order.clone().expect("built before gathering");
        let notaries: Vec<NotaryTerms> = o
            .plan
            .notaries
            .iter()
            .filter_map(|n| o.replies.get(n).cloned().flatten())
            .collect();
        if notaries.is_empty() {
            let reason = "no notary countersigned the order".to_string();
            o.stage = OrderStage::Aborted(reason.clone());
            ctx.events.push(ActorEvent::OrderAborted {
                buyer: me,
                plan: index,
                reason,
            });
            return;
        }
        match ctx.ledger.register_order(&order, notaries.clone(), o.plan.price) {
            Ok(order_id) => {
                ctx.events.push(ActorEvent::OrderPosted {
                    buyer: me,
                    plan: index,
                    order_id,
                    notaries: notaries.len(),
                });
                let posted = PostedOrder {
                    order,
                    notaries,
                    price: o.plan.price,
                };
                let wire = Wire::Announcement(posted.clone());
                for seller in &self.board {
                    ctx.send(me, seller, &wire);
                }
                o.posted = Some(posted);
                o.stage = OrderStage::Collecting {
                    until: now + o.plan.collect_ticks,
                };
            }
            Err(error) => {
                o.stage = OrderStage::Aborted(error.to_string());
                ctx.events.push(ActorEvent::LedgerRejected {
                    actor: me,
                    operation: "register-order",
                    error,
                });
            }
        }
    }

    fn select(&mut self, index: usize, ctx: &mut Ctx<'_>) {
        let me = self.address();
        let now = ctx.now();
        let o = &mut self.orders[index];
        let posted = o.posted.clone().expect("posted before collecting");
        let order_id = posted.id();
        let mut valid = Vec::new();
        for r in o.inbox.responses() {
            match validate_response(r, &order_id, posted.price, &posted.notaries) {
                Ok(()) => valid.push(r.clone()),
                Err(reason) => ctx.events.push(ActorEvent::ResponseRejected {
                    order_id,
                    seller: r.payment_address,
                    response: r.digest(),
                    reason,
                }),
            }
        }
        let mut chosen = o.plan.selection.select(&valid, posted.price);
        // Escrow every fee the selection could cost up front, so a settled
        // audit never waits on funds the buyer has spent elsewhere.
        let escrowed = ctx
            .ledger
            .state()
            .contract(&order_id)
            .map_or(0, |c| c.audit_escrow);
        let balance = ctx.ledger.balance(&me);
        let cost = |picked: &[DataResponse]| {
            let fees: u64 = picked
                .iter()
                .filter_map(|r| posted.notary(&r.chosen_notary))
                .map(|n| n.fee)
                .sum();
            let topup = o.plan.audit_topup.max(fees.saturating_sub(escrowed));
            (posted.price.saturating_mul(picked.len() as u64).saturating_add(topup), topup)
        };
        while !chosen.is_empty() && cost(&chosen).0 > balance {
            chosen.pop();
        }
        let topup = cost(&chosen).1;

        if !chosen.is_empty() {
            match ctx.ledger.select_sellers(order_id, chosen.clone(), topup) {
                Ok(()) => {
                    ctx.events.push(ActorEvent::SellersSelected {
                        order_id,
                        responses: chosen.iter().map(Canonical::digest).collect(),
                        audit_topup: topup,
                    });
                    o.tracked = chosen
                        .into_iter()
                        .map(|r| Tracked {
                            digest: r.digest(),
                            response: r,
                            selected_at: now,
                            request: None,
                            requests_sent: 0,
                            last_request: 0,
                            settled: false,
                        })
                        .collect();
                    o.stage = OrderStage::Settling;
                    return;
                }
                Err(error) => ctx.events.push(ActorEvent::LedgerRejected {
                    actor: me,
                    operation: "select-sellers",
                    error,
                }),
            }
        }
        self.close(index, ctx);
    }

    fn close(&mut self, index: usize, ctx: &mut Ctx<'_>) {
        let me = self.address();
        let o = &mut self.orders[index];
        let order_id = o.posted.as_ref().expect("posted").id();
        match ctx.ledger.close_order(order_id) {
            Ok(residual) => {
                ctx.events.push(ActorEvent::OrderClosed { order_id, residual });
                o.stage = OrderStage::Closed;
            }
            Err(error) => ctx.events.push(ActorEvent::LedgerRejected {
                actor: me,
                operation: "close-order",
                error,
            }),
        }
    }

    fn settle(&mut self, index: usize, ctx: &mut Ctx<'_>) {
        let me = self.address();
        let now = ctx.now();
        let timing = self.timing;
        let force_on_mismatch = self.force_audit_on_mismatch;
        let o = &mut self.orders[index];
        let posted = o.posted.clone().expect("posted");
        let order_id = posted.id();

        for t in o.tracked.iter_mut().filter(|t| !t.settled) {
            let Some(terms) = posted.notary(&t.response.chosen_notary) else {
                continue;
            };
            let notary = Endpoint::actor(&terms.notary_address);
            match &t.request {
                None => {
                    let payload = o.inbox.payload(&t.digest);
                    if payload.is_none() && now < t.selected_at + timing.delivery_timeout {
                        continue;
                    }
                    let opened = payload
                        .and_then(|p| decrypt(&self.keys.secret_key, &p.ciphertext).ok())
                        .and_then(|plain| {
                            open_payload(&plain).map(|(salt, data)| (salt, data.to_vec()))
                        });
                    let forced = o.plan.force_audit.contains(&t.response.payment_address);
                    let (force_audit, audit_payload) = match opened {
                        Some((salt, data)) => {
                            let mismatch =
                                !verify_commitment(salt.as_bytes(), &data, &t.response.commitment);
                            let sealed = encrypt_for(
                                &terms.notary_key,
                                &seal_payload(&salt, &data),
                                &mut self.rng,
                            )
                            .ok();
                            (forced || (mismatch && force_on_mismatch), sealed)
                        }
                        None => (true, None),
                    };
                    let request = NotarizationRequest {
                        order_ref: order_id,
                        response: t.response.clone(),
                        force_audit,
                        audit_payload,
                    };
                    ctx.send(me, &notary, &Wire::NotarizationRequest(request.clone()));
                    t.request = Some(request);
                    t.requests_sent = 1;
                    t.last_request = now;
                }
                Some(request) => {
                    if t.requests_sent <= timing.max_retries
                        && now >= t.last_request + timing.retry_interval
                    {
                        ctx.send(me, &notary, &Wire::NotarizationRequest(request.clone()));
                        t.requests_sent += 1;
                        t.last_request = now;
                    }
                }
            }
        }
        if o.tracked.iter().all(|t| t.settled) {
            self.close(index, ctx);
        }
    }
}
