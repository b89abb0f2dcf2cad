use std::fmt::Write as _;

use serde::Serialize;

use crate::crypto::{Address, Digest};
use crate::ledger::SettlementOutcome;
use crate::messages::{OrderId, ResponseRejection};

pub const MACHINE_MARKER: &str = "--- machine-readable ---";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvariantResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl InvariantResult {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        InvariantResult {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrderRow {
    pub index: usize,
    pub buyer: String,
    pub order_id: Option<OrderId>,
    /// pending, gathering, collecting, settling, closed or aborted
    pub status: String,
    pub notaries: usize,
    pub selected: usize,
    pub audit_topups: u64,
    pub residual: Option<u64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SettlementRow {
    pub order: usize,
    pub seller: String,
    pub seller_address: Address,
    pub response: Digest,
    pub verdict: String,
    pub outcome: SettlementOutcome,
    pub amount: u64,
    pub recipient: String,
    pub notary: String,
    pub notary_fee: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectionRow {
    pub order: usize,
    pub seller: String,
    pub reason: ResponseRejection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackRow {
    pub actor: String,
    pub kind: String,
    pub accepted: bool,
    pub state_unchanged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalanceRow {
    pub role: String,
    pub name: String,
    pub address: Address,
    pub balance: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub supply: u64,
    pub balances: u64,
    pub escrowed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SettlementReport {
    pub scenario: String,
    pub seed: u64,
    pub ticks_used: u64,
    pub tick_limit: u64,
    pub journal_events: usize,
    pub state_digest: Digest,
    pub orders: Vec<OrderRow>,
    pub settlements: Vec<SettlementRow>,
    pub rejections: Vec<RejectionRow>,
    pub attacks: Vec<AttackRow>,
    /// Ledger calls refused during the run that were not attacks.
    pub ledger_errors: Vec<String>,
    pub balances: Vec<BalanceRow>,
    pub totals: Totals,
    pub invariants: Vec<InvariantResult>,
    pub passed: bool,
}

impl SettlementReport {
    pub fn invariant(&self, name: &str) -> Option<&InvariantResult> {
        self.invariants.iter().find(|i| i.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable text followed by the JSON section.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let name = if self.scenario.is_empty() { "(unnamed)" } else { &self.scenario };
        writeln!(s, "scenario {name}  seed {}", self.seed).unwrap();
        writeln!(s, "ticks {} of {}", self.ticks_used, self.tick_limit).unwrap();
        writeln!(
            s,
            "journal {} events  state {}",
            self.journal_events, self.state_digest
        )
        .unwrap();

        if !self.orders.is_empty() {
            writeln!(s, "\norders").unwrap();
        }
        for o in &self.orders {
            let id = o.order_id.map(|i| i.0.to_hex()[..12].to_string()).unwrap_or_else(|| "-".into());
            write!(
                s,
                "  #{:<3} {:<12} {:<10} id {id}  notaries {}  selected {}",
                o.index, o.buyer, o.status, o.notaries, o.selected
            )
            .unwrap();
            if o.audit_topups > 0 {
                write!(s, "  topups {}", o.audit_topups).unwrap();
            }
            if let Some(r) = o.residual {
                write!(s, "  residual {r}").unwrap();
            }
            if let Some(r) = &o.reason {
                write!(s, "  ({r})").unwrap();
            }
            s.push('\n');
        }

        if !self.settlements.is_empty() {
            writeln!(s, "\nsettlements").unwrap();
        }
        for r in &self.settlements {
            let outcome = match r.outcome {
                SettlementOutcome::SellerPaid => "seller-paid",
                SettlementOutcome::BuyerRefunded => "buyer-refunded",
            };
            writeln!(
                s,
                "  #{:<3} {:<12} ({}) verdict {}  {:<14} {} to {}  fee {} to {}",
                r.order,
                r.seller,
                &r.seller_address.to_hex()[..8],
                r.verdict,
                outcome,
                r.amount,
                r.recipient,
                r.notary_fee,
                r.notary
            )
            .unwrap();
        }

        if !self.rejections.is_empty() {
            writeln!(s, "\nrejected responses").unwrap();
        }
        for r in &self.rejections {
            writeln!(s, "  #{:<3} {:<12} {}", r.order, r.seller, r.reason).unwrap();
        }

        if !self.attacks.is_empty() {
            writeln!(s, "\nattacks").unwrap();
        }
        for a in &self.attacks {
            let result = if a.accepted { "ACCEPTED" } else { "rejected" };
            writeln!(
                s,
                "  {:<12} {:<20} {result}: {}",
                a.actor,
                a.kind,
                a.error.as_deref().unwrap_or("-")
            )
            .unwrap();
        }

        if !self.ledger_errors.is_empty() {
            writeln!(s, "\nledger refusals").unwrap();
        }
        for e in &self.ledger_errors {
            writeln!(s, "  {e}").unwrap();
        }

        if !self.balances.is_empty() {
            writeln!(s, "\nbalances").unwrap();
        }
        for b in &self.balances {
            writeln!(s, "  {:<7} {:<12} {:>10}", b.role, b.name, b.balance).unwrap();
        }
        writeln!(
            s,
            "  supply {}  held {}  escrowed {}",
            self.totals.supply, self.totals.balances, self.totals.escrowed
        )
        .unwrap();

        writeln!(s, "\ninvariants").unwrap();
        for i in &self.invariants {
            let mark = if i.passed { "PASS" } else { "FAIL" };
            writeln!(s, "  {mark} {:<22} {}", i.name, i.detail).unwrap();
        }
        writeln!(s, "\nresult {}", if self.passed { "PASS" } else { "FAIL" }).unwrap();
        writeln!(s, "\n{MACHINE_MARKER}").unwrap();
        s.push_str(&self.to_json());
        s.push('\n');
        s
    }
}
