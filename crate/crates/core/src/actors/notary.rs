use std::collections::BTreeMap;

use thiserror::Error;

use crate::codec::Canonical;
use crate::crypto::{decrypt, verify_commitment, Address, KeyPair, Salt};
use crate::ledger::{LedgerState, Phase};
use crate::messages::{
    countersign_order, issue_certificate, open_payload, DataOrder, DataResponse,
    NotarizationRequest, NotaryCertificate, OrderId, TermsLink, Verdict,
};
use crate::transport::{Endpoint, Envelope};

use super::{Ctx, GroundTruthStore, NotarizationPolicy, Wire};

/// Which checks an audit runs. Both are on in normal operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditChecks {
    pub commitment: bool,
    pub ground_truth: bool,
}

impl Default for AuditChecks {
    fn default() -> Self {
        AuditChecks {
            commitment: true,
            ground_truth: true,
        }
    }
}

/// What the notary could recover from the buyer's audit payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditMaterial {
    Missing,
    Undecryptable,
    Opened { salt: Salt, data: Vec<u8> },
}

/// Verdict for an audited response: (b) iff the data opens the commitment
/// and equals the ground-truth record, (c) otherwise.
pub fn audit_verdict(
    material: &AuditMaterial,
    response: &DataResponse,
    ground_truth: Option<&[u8]>,
    checks: AuditChecks,
) -> Verdict {
    let AuditMaterial::Opened { salt, data } = material else {
        return Verdict::NotarizedInvalid;
    };
    let commitment_ok =
        !checks.commitment || verify_commitment(salt.as_bytes(), data, &response.commitment);
    let truth_ok = !checks.ground_truth || ground_truth == Some(data.as_slice());
    if commitment_ok && truth_ok {
        Verdict::NotarizedValid
    } else {
        Verdict::NotarizedInvalid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotaryRefusal {
    #[error("order {0} was not countersigned by this notary")]
    UnknownOrder(OrderId),
    #[error("response does not belong to this order or names another notary")]
    UnknownResponse,
    #[error("response is not in the SELECTED phase on the ledger")]
    NotSelected,
}

#[derive(Debug)]
pub struct Notary {
    pub name: String,
    keys: KeyPair,
    pub fee: u64,
    pub service_terms: TermsLink,
    pub accept_orders: bool,
    pub policy: NotarizationPolicy,
    pub checks: AuditChecks,
    ground_truth: GroundTruthStore,
    /// Payment address -> enrolled seller identity. Never leaves the notary.
    enrollment: BTreeMap<Address, String>,
    orders: BTreeMap<OrderId, DataOrder>,
}

impl Notary {
    pub fn new(
        name: impl Into<String>,
        keys: KeyPair,
        fee: u64,
        service_terms: TermsLink,
        policy: NotarizationPolicy,
        ground_truth: GroundTruthStore,
    ) -> Self {
        Notary {
            name: name.into(),
            keys,
            fee,
            service_terms,
            accept_orders: true,
            policy,
            checks: AuditChecks::default(),
            ground_truth,
            enrollment: BTreeMap::new(),
            orders: BTreeMap::new(),
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

    /// Records that `payment_address` belongs to the authenticated `identity`.
    pub fn enroll(&mut self, payment_address: Address, identity: impl Into<String>) {
        self.enrollment.insert(payment_address, identity.into());
    }

    pub fn ground_truth(&self) -> &GroundTruthStore {
        &self.ground_truth
    }

    /// Countersigns an order, or `None` when declining.
    pub fn review_order(&mut self, order: &DataOrder) -> Option<crate::messages::NotaryTerms> {
        if !self.accept_orders {
            return None;
        }
        let terms = countersign_order(&self.keys, order, self.fee, self.service_terms).ok()?;
        self.orders.insert(order.id(), order.clone());
        Some(terms)
    }

    fn audit_material(&self, request: &NotarizationRequest) -> AuditMaterial {
        let Some(ct) = &request.audit_payload else {
            return AuditMaterial::Missing;
        };
        match decrypt(&self.keys.secret_key, ct) {
            Ok(plain) => match open_payload(&plain) {
                Some((salt, data)) => AuditMaterial::Opened {
                    salt,
                    data: data.to_vec(),
                },
                None => AuditMaterial::Undecryptable,
            },
            Err(_) => AuditMaterial::Undecryptable,
        }
    }

    /// Chooses (a), (b) or (c) for a selected response and signs it.
    pub fn decide_and_certify(
        &self,
        request: &NotarizationRequest,
        ledger: &LedgerState,
    ) -> Result<NotaryCertificate, NotaryRefusal> {
        let order = self
            .orders
            .get(&request.order_ref)
            .ok_or(NotaryRefusal::UnknownOrder(request.order_ref))?;
        let response = &request.response;
        if response.order_ref != request.order_ref || response.chosen_notary != self.address() {
            return Err(NotaryRefusal::UnknownResponse);
        }
        let digest = response.digest();
        if ledger.response_phase(&request.order_ref, &digest) != Some(Phase::Selected) {
            return Err(NotaryRefusal::NotSelected);
        }

        let verdict = if request.force_audit || self.policy.should_audit(&digest) {
            let expected = self
                .enrollment
                .get(&response.payment_address)
                .and_then(|id| self.ground_truth.get(id, &order.request.schema_id));
            audit_verdict(&self.audit_material(request), response, expected, self.checks)
        } else {
            Verdict::NotNotarized
        };
        issue_certificate(&self.keys, &request.order_ref, response, verdict)
            .map_err(|_| NotaryRefusal::UnknownResponse)
    }

    pub fn on_message(&mut self, envelope: &Envelope, ctx: &mut Ctx<'_>) {
        let Ok(wire) = Wire::decode(&envelope.payload) else {
            return;
        };
        let me = self.address();
        let reply_to = Endpoint::actor(&envelope.from);
        match wire {
            Wire::OrderProposal(order) => {
                let reply = match self.review_order(&order) {
                    Some(terms) => Wire::NotaryReply(terms),
                    None => Wire::NotaryDecline(order.id()),
                };
                ctx.send(me, &reply_to, &reply);
            }
            Wire::NotarizationRequest(req) => {
                let reply = match self.decide_and_certify(&req, ctx.ledger.state()) {
                    Ok(cert) => Wire::Certificate(cert),
                    Err(e) => Wire::Refusal {
                        response_digest: req.response.digest(),
                        reason: e.to_string(),
                    },
                };
                ctx.send(me, &reply_to, &reply);
            }
            _ => {}
        }
    }
}
