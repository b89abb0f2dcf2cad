//! Checks run after every scenario and by `verify`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use memchr::memmem;

use crate::codec::Canonical;
use crate::crypto::Digest;
use crate::ledger::{
    read_journal, replay_with, JournalError, LedgerEvent, LedgerState, SettlementOutcome,
};
use crate::transport::{TranscriptEntry, TranscriptKind};

use super::report::InvariantResult;

/// Strings shorter than this are too likely to occur by chance in
/// binary data to be scanned for.
pub const MIN_SCAN_LEN: usize = 4;

/// Replays the journal and checks conservation after every event and
/// exclusivity of settlements. Returns the replayed state when the journal
/// is intact.
pub fn ledger_checks(
    events: &[LedgerEvent],
) -> (Vec<InvariantResult>, Result<LedgerState, (u64, String)>) {
    let mut conservation_fail: Option<String> = None;
    let mut exclusivity_fail: Option<String> = None;
    let mut settled: BTreeSet<(Digest, Digest)> = BTreeSet::new();
    let replayed = replay_with(events, |event, state, settlement| {
        if conservation_fail.is_none() && !state.is_conserved() {
            conservation_fail = Some(format!(
                "event {}: supply {} but balances {} + escrow {}",
                event.sequence,
                state.total_supply(),
                state.total_balances(),
                state.total_escrowed()
            ));
        }
        if let Some(s) = settlement {
            let fresh = settled.insert((s.order_id.0, s.response_digest));
            let consistent = s.outcome == SettlementOutcome::for_verdict(s.verdict)
                && match s.outcome {
                    SettlementOutcome::SellerPaid => s.recipient == s.seller,
                    SettlementOutcome::BuyerRefunded => s.recipient != s.seller,
                };
            if exclusivity_fail.is_none() && !(fresh && consistent) {
                exclusivity_fail = Some(format!(
                    "event {}: response {} {}",
                    event.sequence,
                    s.response_digest,
                    if fresh { "paid against its verdict" } else { "settled twice" }
                ));
            }
        }
    });

    let mut results = Vec::new();
    match &replayed {
        Ok(state) => {
            let open_ok = state.contracts().all(|c| {
                c.responses.values().filter(|r| r.phase.is_settled()).count()
                    == settled.iter().filter(|(o, _)| *o == c.header.order_id.0).count()
            });
            if exclusivity_fail.is_none() && !open_ok {
                exclusivity_fail = Some("settled responses disagree with settlement events".into());
            }
            results.push(InvariantResult::new(
                "conservation",
                conservation_fail.is_none() && state.is_conserved(),
                conservation_fail.unwrap_or_else(|| {
                    format!(
                        "supply {} after each of {} events",
                        state.total_supply(),
                        events.len()
                    )
                }),
            ));
            results.push(InvariantResult::new(
                "settlement-exclusivity",
                exclusivity_fail.is_none(),
                exclusivity_fail
                    .unwrap_or_else(|| format!("{} responses settled once each", settled.len())),
            ));
        }
        Err(e) => {
            let detail = format!("journal does not replay: {e}");
            results.push(InvariantResult::new("conservation", false, detail.clone()));
            results.push(InvariantResult::new("settlement-exclusivity", false, detail));
        }
    }
    (results, replayed.map_err(|e| (e.sequence(), e.to_string())))
}

/// Secrets (at least [`MIN_SCAN_LEN`] bytes) found anywhere in `haystack`.
pub fn find_secrets<'a>(haystack: &[u8], secrets: impl IntoIterator<Item = &'a [u8]>) -> Vec<&'a [u8]> {
    secrets
        .into_iter()
        .filter(|s| s.len() >= MIN_SCAN_LEN && memmem::find(haystack, s).is_some())
        .collect()
}

fn describe(found: &[&[u8]]) -> String {
    let mut out = String::new();
    for (i, f) in found.iter().take(3).enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{:?}", String::from_utf8_lossy(f));
    }
    if found.len() > 3 {
        let _ = write!(out, " and {} more", found.len() - 3);
    }
    out
}

pub fn anonymity_check(journal: &[u8], secrets: &BTreeSet<Vec<u8>>) -> InvariantResult {
    let scanned = secrets.iter().filter(|s| s.len() >= MIN_SCAN_LEN).count();
    let found = find_secrets(journal, secrets.iter().map(Vec::as_slice));
    InvariantResult::new(
        "anonymity",
        found.is_empty(),
        if found.is_empty() {
            format!("{scanned} seller secrets absent from {} journal bytes", journal.len())
        } else {
            format!("journal contains {}", describe(&found))
        },
    )
}

/// Every byte string ever handed to the transport must be free of
/// plaintext data.
pub fn plaintext_check(transcript: &[TranscriptEntry], data: &BTreeSet<Vec<u8>>) -> InvariantResult {
    let mut found: BTreeSet<&[u8]> = BTreeSet::new();
    let mut sent = 0;
    for e in transcript.iter().filter(|e| e.kind == TranscriptKind::Sent) {
        sent += 1;
        found.extend(find_secrets(&e.envelope.payload, data.iter().map(Vec::as_slice)));
    }
    let found: Vec<&[u8]> = found.into_iter().collect();
    InvariantResult::new(
        "no-plaintext",
        found.is_empty(),
        if found.is_empty() {
            format!("{} data values absent from {sent} sent messages", data.len())
        } else {
            format!("clear data on the wire: {}", describe(&found))
        },
    )
}

/// Delivered envelopes must be byte-identical to sent ones.
pub fn neutrality_check(transcript: &[TranscriptEntry]) -> InvariantResult {
    let mut outstanding: BTreeMap<Digest, i64> = BTreeMap::new();
    let mut delivered = 0;
    for e in transcript {
        let d = e.envelope.digest();
        match e.kind {
            TranscriptKind::Sent => *outstanding.entry(d).or_default() += 1,
            TranscriptKind::Dropped => *outstanding.entry(d).or_default() -= 1,
            TranscriptKind::Delivered => {
                delivered += 1;
                *outstanding.entry(d).or_default() -= 1;
            }
        }
    }
    let bad = outstanding.values().filter(|n| **n < 0).count();
    InvariantResult::new(
        "transport-neutrality",
        bad == 0,
        if bad == 0 {
            format!("{delivered} deliveries match what was sent")
        } else {
            format!("{bad} delivered envelopes were never sent as delivered")
        },
    )
}

/// Result of checking a journal file on its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub events: usize,
    pub state_digest: Option<Digest>,
    pub invariants: Vec<InvariantResult>,
    /// Sequence number of the first offending event, with the reason.
    pub failure: Option<(u64, String)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.invariants.iter().all(|i| i.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "journal {} events", self.events);
        if let Some(d) = &self.state_digest {
            let _ = writeln!(s, "state {d}");
        }
        if let Some((seq, why)) = &self.failure {
            let _ = writeln!(s, "FAIL at sequence {seq}: {why}");
        }
        for i in &self.invariants {
            let mark = if i.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "  {mark} {:<22} {}", i.name, i.detail);
        }
        let _ = writeln!(s, "result {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

pub fn verify_journal(bytes: &[u8]) -> VerifyReport {
    let events = match read_journal(bytes) {
        Ok(e) => e,
        Err(e) => {
            let seq = match &e {
                JournalError::Truncated { sequence } | JournalError::Decode { sequence, .. } => {
                    *sequence
                }
            };
            return VerifyReport {
                events: 0,
                state_digest: None,
                invariants: Vec::new(),
                failure: Some((seq, e.to_string())),
            };
        }
    };
    let (invariants, replayed) = ledger_checks(&events);
    match replayed {
        Ok(state) => VerifyReport {
            events: events.len(),
            state_digest: Some(state.digest()),
            invariants,
            failure: None,
        },
        Err(failure) => VerifyReport {
            events: events.len(),
            state_digest: None,
            invariants,
            failure: Some(failure),
        },
    }
}
