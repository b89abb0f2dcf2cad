use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{Address, Digest, PublicKey};
use crate::messages::{
    validate_response, DataOrder, DataResponse, NotaryTerms, OrderId, TermsLink, Verdict,
};

use super::{Amount, Command, LedgerError};

const HEADER_TAG: u8 = 0x21;
const STATE_TAG: u8 = 0x40;

/// On-ledger record of an order. The audience, request and upload URL
/// circulate off-ledger; the contract only needs what settlement uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderHeader {
    pub order_id: OrderId,
    pub buyer_key: PublicKey,
    pub min_audit_budget: Amount,
    pub terms: TermsLink,
    pub price: Amount,
    pub notaries: Vec<NotaryTerms>,
}

impl OrderHeader {
    pub fn new(order: &DataOrder, notaries: Vec<NotaryTerms>, price: Amount) -> Self {
        OrderHeader {
            order_id: order.id(),
            buyer_key: order.buyer_key,
            min_audit_budget: order.min_audit_budget,
            terms: order.terms,
            price,
            notaries,
        }
    }

    pub fn buyer(&self) -> Address {
        self.buyer_key.address()
    }

    pub fn notary(&self, address: &Address) -> Option<&NotaryTerms> {
        self.notaries.iter().find(|n| n.notary_address == *address)
    }
}

impl Canonical for OrderHeader {
    const TAG: u8 = HEADER_TAG;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(self.order_id.0.as_bytes())
            .bytes(self.buyer_key.as_bytes())
            .u64(self.min_audit_budget)
            .bytes(self.terms.0.as_bytes())
            .u64(self.price)
            .list(self.notaries.iter().map(Canonical::canonical_bytes));
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(OrderHeader {
            order_id: OrderId(Digest(dec.fixed()?)),
            buyer_key: PublicKey::from_bytes(dec.bytes()?)?,
            min_audit_budget: dec.u64()?,
            terms: TermsLink(Digest(dec.fixed()?)),
            price: dec.u64()?,
            notaries: dec
                .list()?
                .into_iter()
                .map(NotaryTerms::from_canonical)
                .collect::<Result<_, _>>()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Account {
    pub address: Address,
    pub balance: Amount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettlementOutcome {
    SellerPaid,
    BuyerRefunded,
}

impl SettlementOutcome {
    pub fn for_verdict(verdict: Verdict) -> Self {
        match verdict {
            Verdict::NotNotarized | Verdict::NotarizedValid => SettlementOutcome::SellerPaid,
            Verdict::NotarizedInvalid => SettlementOutcome::BuyerRefunded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Selected,
    Settled {
        verdict: Verdict,
        outcome: SettlementOutcome,
    },
}

impl Phase {
    pub fn is_settled(&self) -> bool {
        matches!(self, Phase::Settled { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseState {
    pub response: DataResponse,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderContract {
    pub header: OrderHeader,
    pub audit_escrow: Amount,
    pub payment_escrow: Amount,
    pub responses: BTreeMap<Digest, ResponseState>,
    pub status: ContractStatus,
}

impl OrderContract {
    pub fn unsettled(&self) -> usize {
        self.responses.values().filter(|r| !r.phase.is_settled()).count()
    }
}

/// Money movement produced by closing one response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Settlement {
    pub order_id: OrderId,
    pub response_digest: Digest,
    pub verdict: Verdict,
    pub outcome: SettlementOutcome,
    pub seller: Address,
    pub recipient: Address,
    pub amount: Amount,
    pub notary: Address,
    pub notary_fee: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerState {
    accounts: BTreeMap<Address, Amount>,
    contracts: BTreeMap<OrderId, OrderContract>,
    total_supply: Amount,
    genesis_open: bool,
}

impl Default for LedgerState {
    fn default() -> Self {
        LedgerState {
            accounts: BTreeMap::new(),
            contracts: BTreeMap::new(),
            total_supply: 0,
            genesis_open: true,
        }
    }
}

impl LedgerState {
    pub fn balance(&self, address: &Address) -> Amount {
        self.accounts.get(address).copied().unwrap_or(0)
    }

    pub fn accounts(&self) -> impl Iterator<Item = Account> + '_ {
        self.accounts.iter().map(|(a, b)| Account {
            address: *a,
            balance: *b,
        })
    }

    pub fn contract(&self, id: &OrderId) -> Option<&OrderContract> {
        self.contracts.get(id)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &OrderContract> {
        self.contracts.values()
    }

    pub fn response_phase(&self, order: &OrderId, response: &Digest) -> Option<Phase> {
        self.contracts
            .get(order)
            .and_then(|c| c.responses.get(response))
            .map(|r| r.phase)
    }

    pub fn total_supply(&self) -> Amount {
        self.total_supply
    }

    pub fn total_balances(&self) -> u128 {
        self.accounts.values().map(|&b| b as u128).sum()
    }

    pub fn total_escrowed(&self) -> u128 {
        self.contracts
            .values()
            .map(|c| c.audit_escrow as u128 + c.payment_escrow as u128)
            .sum()
    }

    /// Σ balances + Σ escrows = minted supply.
    pub fn is_conserved(&self) -> bool {
        self.total_balances() + self.total_escrowed() == self.total_supply as u128
    }

    /// SHA-256 over the canonical encoding of sorted accounts and contracts.
    pub fn digest(&self) -> Digest {
        let mut enc = Encoder::new(STATE_TAG);
        enc.u64(self.total_supply).u8(self.genesis_open as u8);
        enc.list(self.accounts.iter().map(|(addr, bal)| {
            let mut e = Encoder::new(0x41);
            e.bytes(addr.as_bytes()).u64(*bal);
            e.finish()
        }));
        enc.list(self.contracts.values().map(|c| {
            let mut e = Encoder::new(0x42);
            e.message(&c.header)
                .u64(c.audit_escrow)
                .u64(c.payment_escrow)
                .u8(matches!(c.status, ContractStatus::Closed) as u8)
                .list(c.responses.iter().map(|(d, r)| {
                    let mut re = Encoder::new(0x43);
                    re.bytes(d.as_bytes()).message(&r.response);
                    match r.phase {
                        Phase::Selected => re.u8(0),
                        Phase::Settled { verdict, outcome } => re
                            .u8(1 + verdict.code())
                            .u8(matches!(outcome, SettlementOutcome::BuyerRefunded) as u8),
                    };
                    re.finish()
                }));
            e.finish()
        }));
        crate::crypto::sha256(&enc.finish())
    }

    fn credit(&mut self, address: Address, amount: Amount) {
        *self.accounts.entry(address).or_insert(0) += amount;
    }

    fn debit(&mut self, address: Address, amount: Amount) -> Result<(), LedgerError> {
        let available = self.balance(&address);
        if available < amount {
            return Err(LedgerError::InsufficientFunds {
                address,
                needed: amount,
                available,
            });
        }
        if amount > 0 {
            *self.accounts.get_mut(&address).expect("checked balance") -= amount;
        }
        Ok(())
    }

    fn open_contract(&self, id: &OrderId) -> Result<&OrderContract, LedgerError> {
        let c = self.contracts.get(id).ok_or(LedgerError::UnknownOrder(*id))?;
        if c.status == ContractStatus::Closed {
            return Err(LedgerError::OrderClosed(*id));
        }
        Ok(c)
    }

    /// Applies one command. Validation completes before any mutation, so a
    /// rejected command leaves the state untouched.
    pub fn apply(&mut self, command: &Command) -> Result<Option<Settlement>, LedgerError> {
        match command {
            Command::Mint { address, amount } => {
                if !self.genesis_open {
                    return Err(LedgerError::MintAfterGenesis);
                }
                if *amount == 0 {
                    return Err(LedgerError::ZeroMint);
                }
                self.total_supply = self
                    .total_supply
                    .checked_add(*amount)
                    .ok_or(LedgerError::SupplyOverflow)?;
                self.credit(*address, *amount);
                Ok(None)
            }
            Command::CreateOrder { header } => {
                self.create_order(header)?;
                Ok(None)
            }
            Command::SelectSellers {
                order_id,
                responses,
                audit_topup,
            } => {
                self.select(order_id, responses, *audit_topup)?;
                Ok(None)
            }
            Command::CloseResponse {
                order_id,
                response_digest,
                certificate,
            } => self
                .close_response(order_id, response_digest, certificate)
                .map(Some),
            Command::CloseOrder { order_id } => {
                let c = self.open_contract(order_id)?;
                let unsettled = c.unsettled();
                if unsettled > 0 {
                    return Err(LedgerError::UnsettledResponses(unsettled));
                }
                let buyer = c.header.buyer();
                let residual = c.audit_escrow;
                let c = self.contracts.get_mut(order_id).expect("checked");
                c.audit_escrow = 0;
                c.status = ContractStatus::Closed;
                self.credit(buyer, residual);
                Ok(None)
            }
        }
    }

    fn create_order(&mut self, header: &OrderHeader) -> Result<(), LedgerError> {
        if header.notaries.is_empty() {
            return Err(LedgerError::EmptyNotaryList);
        }
        if header.price == 0 {
            return Err(LedgerError::ZeroPrice);
        }
        let mut seen = BTreeSet::new();
        for n in &header.notaries {
            if !n.verify_for(&header.order_id) || !seen.insert(n.notary_address) {
                return Err(LedgerError::InvalidNotaryTerms(n.notary_address));
            }
        }
        if self.contracts.contains_key(&header.order_id) {
            return Err(LedgerError::DuplicateOrder(header.order_id));
        }
        let buyer = header.buyer();
        self.debit(buyer, header.min_audit_budget)?;
        self.genesis_open = false;
        self.contracts.insert(
            header.order_id,
            OrderContract {
                header: header.clone(),
                audit_escrow: header.min_audit_budget,
                payment_escrow: 0,
                responses: BTreeMap::new(),
                status: ContractStatus::Open,
            },
        );
        Ok(())
    }

    fn select(
        &mut self,
        order_id: &OrderId,
        responses: &[DataResponse],
        audit_topup: Amount,
    ) -> Result<(), LedgerError> {
        let c = self.open_contract(order_id)?;
        if responses.is_empty() && audit_topup == 0 {
            return Err(LedgerError::EmptySelection);
        }
        let mut digests = BTreeSet::new();
        for r in responses {
            let digest = r.digest();
            validate_response(r, order_id, c.header.price, &c.header.notaries)
                .map_err(|reason| LedgerError::InvalidResponse { digest, reason })?;
            if c.responses.contains_key(&digest) || !digests.insert(digest) {
                return Err(LedgerError::DuplicateResponse(digest));
            }
        }
        let payment = c
            .header
            .price
            .checked_mul(responses.len() as Amount)
            .ok_or(LedgerError::SupplyOverflow)?;
        let total = payment
            .checked_add(audit_topup)
            .ok_or(LedgerError::SupplyOverflow)?;
        let buyer = c.header.buyer();
        self.debit(buyer, total)?;

        let c = self.contracts.get_mut(order_id).expect("checked");
        c.payment_escrow += payment;
        c.audit_escrow += audit_topup;
        for (r, digest) in responses.iter().zip(responses.iter().map(Canonical::digest)) {
            c.responses.insert(
                digest,
                ResponseState {
                    response: r.clone(),
                    phase: Phase::Selected,
                },
            );
        }
        Ok(())
    }

    fn close_response(
        &mut self,
        order_id: &OrderId,
        response_digest: &Digest,
        certificate: &crate::messages::NotaryCertificate,
    ) -> Result<Settlement, LedgerError> {
        let c = self.open_contract(order_id)?;
        let state = c
            .responses
            .get(response_digest)
            .ok_or(LedgerError::UnknownResponse(*response_digest))?;
        if state.phase.is_settled() {
            return Err(LedgerError::AlreadySettled(*response_digest));
        }
        if certificate.order_ref != *order_id || certificate.response_digest != *response_digest {
            return Err(LedgerError::CertificateMismatch);
        }
        let chosen = state.response.chosen_notary;
        let terms = c
            .header
            .notary(&chosen)
            .expect("selected responses name a listed notary");
        if !certificate.verify_signature(&terms.notary_key) {
            let other = c
                .header
                .notaries
                .iter()
                .find(|n| certificate.verify_signature(&n.notary_key));
            return Err(match other {
                Some(n) => LedgerError::WrongNotary {
                    chosen,
                    signer: n.notary_address,
                },
                None => LedgerError::InvalidCertificateSignature,
            });
        }
        let verdict = certificate.verdict;
        let fee = if verdict.is_notarized() { terms.fee } else { 0 };
        if fee > c.audit_escrow {
            return Err(LedgerError::AuditBudgetExhausted {
                fee,
                available: c.audit_escrow,
            });
        }
        let outcome = SettlementOutcome::for_verdict(verdict);
        let seller = state.response.payment_address;
        let recipient = match outcome {
            SettlementOutcome::SellerPaid => seller,
            SettlementOutcome::BuyerRefunded => c.header.buyer(),
        };
        let price = c.header.price;
        let notary = terms.notary_address;

        let c = self.contracts.get_mut(order_id).expect("checked");
        c.payment_escrow -= price;
        c.audit_escrow -= fee;
        c.responses.get_mut(response_digest).expect("checked").phase =
            Phase::Settled { verdict, outcome };
        self.credit(recipient, price);
        if fee > 0 {
            self.credit(notary, fee);
        }
        Ok(Settlement {
            order_id: *order_id,
            response_digest: *response_digest,
            verdict,
            outcome,
            seller,
            recipient,
            amount: price,
            notary,
            notary_fee: fee,
        })
    }
}
