//! Acceptance criteria 1-7. Runs without the libtest harness so every
//! criterion prints exactly one PASS or FAIL line.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use datamarket::actors::{audit_verdict, AuditChecks, AuditMaterial};
use datamarket::codec::Canonical;
use datamarket::crypto::{commit, generate_keypair, sha256, verify_commitment, Commitment, Salt};
use datamarket::ledger::{
    read_journal, replay, replay_with, write_journal, Command, LedgerEvent, LedgerState, Phase,
    SettlementOutcome,
};
use datamarket::messages::{DataResponse, OrderId, TermsLink, Verdict};
use datamarket::scenario::{
    random_scenario, run_scenario, GeneratorConfig, MutationKind, PolicySpec, RecordSpec,
    RunOptions, RunOutcome, Scenario, SettlementRow,
};

use common::{market, mutate, scenario_path, sha256_ref};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

fn run(s: &Scenario) -> Result<RunOutcome, String> {
    run_scenario(s, RunOptions::default()).map_err(|e| format!("{}: {e}", s.name))
}

fn only_row(out: &RunOutcome, seller: &str) -> Result<SettlementRow, String> {
    let rows: Vec<_> = out.report.settlements.iter().filter(|r| r.seller == seller).collect();
    match rows.as_slice() {
        [r] => Ok((*r).clone()),
        _ => Err(format!("{}: {} settlements for {seller}", out.report.scenario, rows.len())),
    }
}

fn balance(out: &RunOutcome, name: &str) -> u64 {
    out.report
        .balances
        .iter()
        .find(|b| b.name == name)
        .map(|b| b.balance)
        .unwrap_or(0)
}

/// Who receives the unit price for a verdict: the seller for (a) and (b),
/// the buyer for (c).
fn paid_to_seller(verdict: char) -> bool {
    matches!(verdict, 'a' | 'b')
}

// 1 -------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Tamper {
    None,
    Substitute,
    FlipBit,
    FalseRecord,
}

fn truth_table() -> Check {
    let mut reached = BTreeSet::new();
    let price = 7;
    let fee = 2;
    for tamper in [Tamper::None, Tamper::Substitute, Tamper::FlipBit, Tamper::FalseRecord] {
        for policy in [PolicySpec::Always, PolicySpec::Never] {
            let mut s = market(1, policy, 3);
            match tamper {
                Tamper::None => {}
                Tamper::Substitute => mutate(&mut s, 0, MutationKind::SubstituteData, 0),
                Tamper::FlipBit => mutate(&mut s, 0, MutationKind::FlipBit, 13),
                Tamper::FalseRecord => s.notaries[0].records.push(RecordSpec {
                    seller: "seller-00".into(),
                    schema: "records-v1".into(),
                    data: "what the notary actually holds".into(),
                }),
            }
            let out = run(&s)?;
            let row = only_row(&out, "seller-00")?;
            let verdict = row.verdict.chars().next().unwrap();
            let audited = verdict != 'a';
            let tampered = tamper != Tamper::None;
            let cell = (verdict, tampered, audited);
            reached.insert(cell);

            let to_seller = paid_to_seller(verdict);
            let seller_gets = if to_seller { price } else { 0 };
            let fee_paid = if audited { fee } else { 0 };
            let buyer_expected = 1_000 - price - fee_paid + if to_seller { 0 } else { price };
            let ok = balance(&out, "seller-00") == seller_gets
                && balance(&out, "buyer-main") == buyer_expected
                && balance(&out, "notary-main") == fee_paid
                && (row.outcome == SettlementOutcome::SellerPaid) == to_seller;
            if !ok {
                return Err(format!("cell {cell:?} ({tamper:?}, {policy:?}) pays the wrong party"));
            }
        }
    }

    // The excluded cells cannot be produced: an audit never yields (a),
    // never yields (b) for data other than what was committed and recorded,
    // and an unaudited response is always (a).
    let keys = generate_keypair(&[9u8; 32]).unwrap();
    let truth = b"ground truth".to_vec();
    let salt = Salt([3; 32]);
    let response = DataResponse::new_signed(
        &keys,
        OrderId(sha256(b"order")),
        price,
        commit(salt.as_bytes(), &truth).unwrap(),
        keys.address(),
        TermsLink::of(""),
    );
    let materials = [
        (false, AuditMaterial::Opened { salt, data: truth.clone() }),
        (true, AuditMaterial::Opened { salt, data: b"ground truti".to_vec() }),
        (true, AuditMaterial::Opened { salt: Salt([0; 32]), data: truth.clone() }),
        (true, AuditMaterial::Missing),
        (true, AuditMaterial::Undecryptable),
    ];
    for (tampered, m) in &materials {
        let v = audit_verdict(m, &response, Some(&truth), AuditChecks::default());
        if v == Verdict::NotNotarized || (*tampered && v == Verdict::NotarizedValid) {
            return Err(format!("audit of {m:?} produced {v:?}"));
        }
        if !*tampered && v != Verdict::NotarizedValid {
            return Err("honest audit is not (b)".into());
        }
    }

    let expected: BTreeSet<(char, bool, bool)> =
        [('a', false, false), ('a', true, false), ('b', false, true), ('c', true, true)].into();
    if reached != expected {
        return Err(format!("reached cells {reached:?}"));
    }
    Ok(format!(
        "{} reachable cells pay as ruled, {} excluded by construction",
        reached.len(),
        12 - reached.len()
    ))
}

// 2 -------------------------------------------------------------------------

/// Independent conservation check: sums balances and escrows through the
/// public accessors.
fn conserved(state: &LedgerState, minted: u128) -> bool {
    let balances: u128 = state.accounts().map(|a| a.balance as u128).sum();
    let escrow: u128 = state
        .contracts()
        .map(|c| c.audit_escrow as u128 + c.payment_escrow as u128)
        .sum();
    balances + escrow == minted && state.total_supply() as u128 == minted
}

fn conservation() -> Check {
    let cfg = GeneratorConfig::default();
    let mut events = 0usize;
    let mut settled = 0usize;
    for seed in 0..1_000u64 {
        let s = random_scenario(seed, &cfg);
        let out = run(&s)?;
        let minted: u128 = s
            .notaries
            .iter()
            .map(|x| x.balance)
            .chain(s.buyers.iter().map(|x| x.balance))
            .chain(s.sellers.iter().map(|x| x.balance))
            .map(u128::from)
            .sum();
        let journal = out.ledger.journal();
        let mut minted_so_far = 0u128;
        let mut bad = None;
        replay_with(journal, |event, state, settlement| {
            if let Ok(Command::Mint { amount, .. }) = event.command() {
                minted_so_far += amount as u128;
            }
            if bad.is_none() && !conserved(state, minted_so_far) {
                bad = Some(event.sequence);
            }
            settled += settlement.is_some() as usize;
        })
        .map_err(|e| format!("seed {seed}: replay failed: {e}"))?;
        if let Some(seq) = bad {
            return Err(format!("seed {seed}: not conserved after event {seq}"));
        }
        if minted_so_far != minted || !conserved(out.ledger.state(), minted) {
            return Err(format!("seed {seed}: final supply differs from minted {minted}"));
        }
        events += journal.len();
    }
    Ok(format!("1000 scenarios, {events} events, {settled} settlements, all exact"))
}

// 3 -------------------------------------------------------------------------

fn tamper_detection() -> Check {
    let mut detected = 0;
    for i in 0..256usize {
        let n = 1 + i % 3;
        let target = i % n;
        let mut s = market(n, PolicySpec::Always, 10_000 + i as u64);
        let kind = if i % 2 == 0 {
            MutationKind::SubstituteData
        } else {
            MutationKind::FlipBit
        };
        mutate(&mut s, target, kind, i * 7);
        let out = run(&s)?;
        let row = only_row(&out, &s.sellers[target].name)?;
        if row.verdict == "c"
            && row.outcome == SettlementOutcome::BuyerRefunded
            && row.recipient == "buyer-main"
            && balance(&out, &s.sellers[target].name) == 0
        {
            detected += 1;
        }
    }
    if detected == 256 {
        Ok("256/256 tampered deliveries got (c) and a refund".into())
    } else {
        Err(format!("{detected}/256 detected"))
    }
}

// 4 -------------------------------------------------------------------------

fn commitment_correctness() -> Check {
    const EMPTY: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
    if common::hex(&sha256_ref(b"")) != EMPTY {
        return Err("reference SHA-256 fails the empty-input known answer".into());
    }
    if Commitment::compute_unchecked(&[], &[]).digest.to_hex() != EMPTY || sha256(b"").to_hex() != EMPTY {
        return Err("crate SHA-256 fails the empty-input known answer".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let mut salt = [0u8; 32];
        rng.fill_bytes(&mut salt);
        let mut data = vec![0u8; rng.gen_range(1..300)];
        rng.fill_bytes(&mut data);
        let c = commit(&salt, &data).map_err(|e| e.to_string())?;
        let reference = sha256_ref(&[salt.as_slice(), &data].concat());
        if c.digest.as_bytes() != &reference || !verify_commitment(&salt, &data, &c) {
            return Err(format!("pair {i} disagrees with the reference"));
        }
    }
    let salt = [7u8; 32];
    let payload = *b"8 bytes!";
    let c = commit(&salt, &payload).unwrap();
    for bit in 0..64 {
        let mut flipped = payload;
        flipped[bit / 8] ^= 1 << (bit % 8);
        if verify_commitment(&salt, &flipped, &c) {
            return Err(format!("bit flip {bit} still verifies"));
        }
    }
    Ok("empty-input KAT, 100 random pairs, 64/64 bit flips rejected".into())
}

// 5 -------------------------------------------------------------------------

fn frames(journal: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut at = 0;
    while at < journal.len() {
        let len = u32::from_be_bytes(journal[at..at + 4].try_into().unwrap()) as usize;
        out.push((at, 4 + len));
        at += 4 + len;
    }
    out
}

fn detected(journal: &[u8]) -> bool {
    match read_journal(journal) {
        Err(_) => true,
        Ok(events) => replay(&events).is_err(),
    }
}

fn replay_determinism() -> Check {
    let cfg = GeneratorConfig {
        max_drop_rate: 0.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scenarios = 0;
    let mut tampers = 0;
    let mut seed = 50_000u64;
    while scenarios < 50 {
        seed += 1;
        let s = random_scenario(seed, &cfg);
        let out = run(&s)?;
        let journal = &out.journal;
        let events = read_journal(journal).map_err(|e| e.to_string())?;
        if events.len() < 3 {
            continue;
        }
        scenarios += 1;
        let state = replay(&events).map_err(|e| format!("seed {seed}: {e}"))?;
        if state.digest() != out.ledger.state_digest() || write_journal(&events) != *journal {
            return Err(format!("seed {seed}: replay digest differs"));
        }

        let spans = frames(journal);
        let mut attempts: Vec<Vec<u8>> = Vec::new();
        for _ in 0..8 {
            let (start, len) = spans[rng.gen_range(0..spans.len())];
            let mut j = journal.clone();
            j[start + rng.gen_range(0..len)] ^= rng.gen_range(1..=255u8);
            attempts.push(j);
        }
        // drop one event from the middle
        let (start, len) = spans[rng.gen_range(0..spans.len() - 1)];
        let mut j = journal.clone();
        j.drain(start..start + len);
        attempts.push(j);
        // swap two neighbours
        let k = rng.gen_range(0..spans.len() - 1);
        let (a, alen) = spans[k];
        let (b, blen) = spans[k + 1];
        let mut j = journal[..a].to_vec();
        j.extend_from_slice(&journal[b..b + blen]);
        j.extend_from_slice(&journal[a..a + alen]);
        j.extend_from_slice(&journal[b + blen..]);
        attempts.push(j);
        // change an amount and re-encode the event cleanly
        let mint = events
            .iter()
            .position(|e| matches!(e.command(), Ok(Command::Mint { .. })))
            .ok_or("no mint event")?;
        let mut edited = events.clone();
        if let Ok(Command::Mint { address, amount }) = edited[mint].command() {
            edited[mint] = LedgerEvent {
                payload: Command::Mint { address, amount: amount + 1 }.canonical_bytes(),
                ..edited[mint].clone()
            };
        }
        attempts.push(write_journal(&edited));

        for (n, attempt) in attempts.iter().enumerate() {
            tampers += 1;
            if attempt != journal && !detected(attempt) {
                return Err(format!("seed {seed}: tamper {n} went unnoticed"));
            }
        }
    }
    Ok(format!("50 journals replay to the live digest, {tampers}/{tampers} tampers caught"))
}

// 6 -------------------------------------------------------------------------

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

fn anonymity() -> Check {
    let mut scanned = 0;
    for name in ["bank.toml", "telco.toml"] {
        let s = Scenario::load(&scenario_path(name)).map_err(|e| e.to_string())?;
        let out = run(&s)?;
        let mut needles: Vec<Vec<u8>> = Vec::new();
        for seller in &s.sellers {
            needles.extend(seller.attributes.values().map(|v| v.as_bytes().to_vec()));
            // every 8-byte window of the seller's data
            for d in seller.data.values() {
                needles.extend(d.as_bytes().windows(8.min(d.len())).map(<[u8]>::to_vec));
            }
        }
        needles.extend(s.secrets.iter().map(|x| x.as_bytes().to_vec()));
        for n in &needles {
            scanned += 1;
            if contains(&out.journal, n) {
                return Err(format!("{name}: journal contains {:?}", String::from_utf8_lossy(n)));
            }
        }
    }
    Ok(format!("bank and telco journals free of {scanned} attribute values and data substrings"))
}

// 7 -------------------------------------------------------------------------

fn honest_liveness() -> Check {
    let s = Scenario::load(&scenario_path("bank.toml")).map_err(|e| e.to_string())?;
    let out = run(&s)?;
    let order = &s.orders[0];
    let fee = s.notaries[0].fee;
    let state = out.ledger.state();
    let contract = state.contracts().next().ok_or("no order reached the ledger")?;
    let n = contract.responses.len() as u64;
    if n == 0 {
        return Err("no response was selected".into());
    }
    let all_paid = contract.responses.values().all(|r| {
        matches!(r.phase, Phase::Settled { outcome: SettlementOutcome::SellerPaid, .. })
    });
    if !all_paid {
        return Err("a selected response was not paid to its seller".into());
    }
    if out.report.ticks_used > s.ticks || !out.report.invariant("liveness").is_some_and(|l| l.passed) {
        return Err(format!("not settled within {} ticks", s.ticks));
    }

    // fees come out of the audit escrow, one per settlement
    let mut audit_before = None;
    let mut fee_steps = 0;
    let mut fee_ok = true;
    replay_with(out.ledger.journal(), |_, st, settlement| {
        let c = st.contracts().next();
        if let (Some(stl), Some(c), Some(before)) = (settlement, c, audit_before) {
            fee_steps += 1;
            fee_ok &= stl.notary_fee == fee && before - c.audit_escrow == fee;
        }
        audit_before = c.map(|c| c.audit_escrow);
    })
    .map_err(|e| e.to_string())?;

    let residual = order.min_audit_budget as u64 - n * fee;
    let row = &out.report.orders[0];
    let buyer = s.buyers[0].balance - n * order.price - n * fee;
    let ok = fee_ok
        && fee_steps == n
        && row.residual == Some(residual)
        && contract.audit_escrow == 0
        && contract.payment_escrow == 0
        && balance(&out, &s.buyers[0].name) == buyer
        && balance(&out, &s.notaries[0].name) == n * fee;
    if !ok {
        return Err(format!("fee or refund accounting off (residual {:?})", row.residual));
    }
    Ok(format!(
        "{n} responses seller-paid in {} ticks, fees {}x{fee} from audit escrow, residual {residual} refunded",
        out.report.ticks_used, n
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("settlement truth table", truth_table, Duration::from_secs(1)),
        ("token conservation", conservation, Duration::from_secs(60)),
        ("tamper detection", tamper_detection, Duration::from_secs(30)),
        ("commitment correctness", commitment_correctness, Duration::from_secs(1)),
        ("replay determinism", replay_determinism, Duration::from_secs(30)),
        ("anonymity scan", anonymity, Duration::from_secs(5)),
        ("honest-path liveness", honest_liveness, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if took <= *budget => (true, d),
            Ok(d) => (false, format!("{d}, but took longer than {budget:?}")),
            Err(e) => (false, e),
        };
        failed += !ok as usize;
        println!(
            "criterion {}: {} {name}: {detail} ({:.2}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
