//! Single-writer token ledger hosting data-order contracts.
//!
//! Every state change is expressed as a [`Command`], applied to
//! [`LedgerState`], and appended to the journal together with the resulting
//! state digest. Replaying the journal through the same `apply` path
//! reproduces the state exactly.

mod journal;
mod state;

pub use journal::{
    read_journal, replay, replay_with, write_journal, EventKind, JournalError, LedgerEvent,
    ReplayError,
};
pub use state::{
    Account, ContractStatus, LedgerState, OrderContract, OrderHeader, Phase, ResponseState,
    Settlement, SettlementOutcome,
};

use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{Address, Digest};
use crate::messages::{DataOrder, DataResponse, NotaryCertificate, NotaryTerms, OrderId, ResponseRejection};

pub type Amount = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("minting is only allowed before the first order")]
    MintAfterGenesis,
    #[error("mint amount must be positive")]
    ZeroMint,
    #[error("total supply overflow")]
    SupplyOverflow,
    #[error("order carries an invalid buyer signature")]
    InvalidBuyerSignature,
    #[error("notary list is empty")]
    EmptyNotaryList,
    #[error("notary terms from {0} do not verify against this order")]
    InvalidNotaryTerms(Address),
    #[error("price must be positive")]
    ZeroPrice,
    #[error("order {0} already registered")]
    DuplicateOrder(OrderId),
    #[error("unknown order {0}")]
    UnknownOrder(OrderId),
    #[error("order {0} is closed")]
    OrderClosed(OrderId),
    #[error("{address} needs {needed} tokens, has {available}")]
    InsufficientFunds {
        address: Address,
        needed: Amount,
        available: Amount,
    },
    #[error("response {digest} rejected: {reason}")]
    InvalidResponse {
        digest: Digest,
        reason: ResponseRejection,
    },
    #[error("response {0} appears more than once")]
    DuplicateResponse(Digest),
    #[error("selection has no responses and no audit top-up")]
    EmptySelection,
    #[error("unknown response {0}")]
    UnknownResponse(Digest),
    #[error("response {0} is already settled")]
    AlreadySettled(Digest),
    #[error("certificate is not for this order and response")]
    CertificateMismatch,
    #[error("certificate signed by {signer}, but the response chose {chosen}")]
    WrongNotary { chosen: Address, signer: Address },
    #[error("certificate signature does not verify under the chosen notary")]
    InvalidCertificateSignature,
    #[error("notary fee {fee} exceeds audit escrow {available}; top up the audit budget")]
    AuditBudgetExhausted { fee: Amount, available: Amount },
    #[error("{0} selected responses are not settled")]
    UnsettledResponses(usize),
}

/// A ledger transaction. Its canonical bytes are the journal payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Mint {
        address: Address,
        amount: Amount,
    },
    CreateOrder {
        header: OrderHeader,
    },
    SelectSellers {
        order_id: OrderId,
        responses: Vec<DataResponse>,
        audit_topup: Amount,
    },
    CloseResponse {
        order_id: OrderId,
        response_digest: Digest,
        certificate: NotaryCertificate,
    },
    CloseOrder {
        order_id: OrderId,
    },
}

const COMMAND_TAG: u8 = 0x20;

impl Command {
    pub fn kind(&self) -> EventKind {
        match self {
            Command::Mint { .. } => EventKind::Mint,
            Command::CreateOrder { .. } => EventKind::OrderCreated,
            Command::SelectSellers { responses, .. } if responses.is_empty() => EventKind::AuditTopup,
            Command::SelectSellers { .. } => EventKind::SellersSelected,
            Command::CloseResponse { .. } => EventKind::ResponseClosed,
            Command::CloseOrder { .. } => EventKind::OrderClosed,
        }
    }
}

impl Canonical for Command {
    const TAG: u8 = COMMAND_TAG;

    fn encode_fields(&self, enc: &mut Encoder) {
        match self {
            Command::Mint { address, amount } => {
                enc.u8(0).bytes(address.as_bytes()).u64(*amount);
            }
            Command::CreateOrder { header } => {
                enc.u8(1).message(header);
            }
            Command::SelectSellers {
                order_id,
                responses,
                audit_topup,
            } => {
                enc.u8(2)
                    .bytes(order_id.0.as_bytes())
                    .list(responses.iter().map(Canonical::canonical_bytes))
                    .u64(*audit_topup);
            }
            Command::CloseResponse {
                order_id,
                response_digest,
                certificate,
            } => {
                enc.u8(3)
                    .bytes(order_id.0.as_bytes())
                    .bytes(response_digest.as_bytes())
                    .message(certificate);
            }
            Command::CloseOrder { order_id } => {
                enc.u8(4).bytes(order_id.0.as_bytes());
            }
        }
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.u8()? {
            0 => Command::Mint {
                address: Address(dec.fixed()?),
                amount: dec.u64()?,
            },
            1 => Command::CreateOrder {
                header: dec.message()?,
            },
            2 => Command::SelectSellers {
                order_id: OrderId(Digest(dec.fixed()?)),
                responses: dec
                    .list()?
                    .into_iter()
                    .map(DataResponse::from_canonical)
                    .collect::<Result<_, _>>()?,
                audit_topup: dec.u64()?,
            },
            3 => Command::CloseResponse {
                order_id: OrderId(Digest(dec.fixed()?)),
                response_digest: Digest(dec.fixed()?),
                certificate: dec.message()?,
            },
            4 => Command::CloseOrder {
                order_id: OrderId(Digest(dec.fixed()?)),
            },
            k => return Err(CodecError::Invalid(format!("command {k}"))),
        })
    }
}

/// The live ledger: state plus its journal.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    state: LedgerState,
    journal: Vec<LedgerEvent>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    fn execute(&mut self, command: Command) -> Result<Option<Settlement>, LedgerError> {
        let settlement = self.state.apply(&command)?;
        let event = LedgerEvent {
            sequence: self.journal.len() as u64,
            kind: command.kind(),
            payload: command.canonical_bytes(),
            state_digest: self.state.digest(),
        };
        self.journal.push(event);
        Ok(settlement)
    }

    pub fn mint(&mut self, address: Address, amount: Amount) -> Result<(), LedgerError> {
        self.execute(Command::Mint { address, amount }).map(drop)
    }

    /// Escrows the order's audit budget and opens its contract.
    pub fn register_order(
        &mut self,
        order: &DataOrder,
        notaries: Vec<NotaryTerms>,
        price: Amount,
    ) -> Result<OrderId, LedgerError> {
        if !order.verify_signature() {
            return Err(LedgerError::InvalidBuyerSignature);
        }
        let header = OrderHeader::new(order, notaries, price);
        let id = header.order_id;
        self.execute(Command::CreateOrder { header })?;
        Ok(id)
    }

    /// Funds the given responses and optionally tops up the audit budget.
    /// All-or-nothing. With no responses this is a pure audit top-up.
    pub fn select_sellers(
        &mut self,
        order_id: OrderId,
        responses: Vec<DataResponse>,
        audit_topup: Amount,
    ) -> Result<(), LedgerError> {
        self.execute(Command::SelectSellers {
            order_id,
            responses,
            audit_topup,
        })
        .map(drop)
    }

    pub fn close_response(
        &mut self,
        order_id: OrderId,
        response_digest: Digest,
        certificate: NotaryCertificate,
    ) -> Result<Settlement, LedgerError> {
        self.execute(Command::CloseResponse {
            order_id,
            response_digest,
            certificate,
        })
        .map(|s| s.expect("close_response yields a settlement"))
    }

    pub fn close_order(&mut self, order_id: OrderId) -> Result<Amount, LedgerError> {
        let residual = self
            .state
            .contract(&order_id)
            .map(|c| c.audit_escrow)
            .unwrap_or(0);
        self.execute(Command::CloseOrder { order_id })?;
        Ok(residual)
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn journal(&self) -> &[LedgerEvent] {
        &self.journal
    }

    pub fn balance(&self, address: &Address) -> Amount {
        self.state.balance(address)
    }

    pub fn state_digest(&self) -> Digest {
        self.state.digest()
    }
}
