//! Scenario files, the scheduler loop that runs them, and the report.

mod config;
mod generate;
mod invariants;
mod report;

pub use config::{
    BuyerSpec, ExpectedSettlement, MutationKind, MutationSpec, NetworkSpec, NotarySpec, OrderSpec,
    PolicySpec, PredicateSpec, RecordSpec, Scenario, ScenarioError, SelectionSpec, SellerSpec,
    TimingSpec,
};
pub use generate::{random_scenario, GeneratorConfig};
pub use invariants::{
    anonymity_check, find_secrets, ledger_checks, neutrality_check, plaintext_check,
    verify_journal, VerifyReport, MIN_SCAN_LEN,
};
pub use report::{
    AttackRow, BalanceRow, InvariantResult, OrderRow, RejectionRow, SettlementReport,
    SettlementRow, Totals, MACHINE_MARKER,
};

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::actors::{
    ActorEvent, Buyer, BuyerOrderPlan, BuyerTiming, Ctx, GroundTruthStore, NotarizationPolicy,
    Notary, OrderStage, Seller, SellerPolicy, SellerProfile,
};
use crate::crypto::{generate_keypair, sha256, Address, KeyPair};
use crate::ledger::{write_journal, ContractStatus, Ledger, SettlementOutcome};
use crate::messages::{Audience, DataRequest, OrderId, TermsLink};
use crate::transport::{Endpoint, Network, NetworkConfig};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Command-line overrides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub ticks: Option<u64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: SettlementReport,
    /// Length-prefixed ledger events.
    pub journal: Vec<u8>,
    /// Length-prefixed delivered envelopes.
    pub transcript: Vec<u8>,
    pub ledger: Ledger,
    pub events: Vec<ActorEvent>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.passed {
            EXIT_PASS
        } else {
            EXIT_INVARIANT
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Route {
    Notary(usize),
    Buyer(usize),
    Seller(usize),
    Upload(usize),
}

struct World {
    net: Network,
    ledger: Ledger,
    events: Vec<ActorEvent>,
    notaries: Vec<Notary>,
    buyers: Vec<Buyer>,
    sellers: Vec<Seller>,
    routes: BTreeMap<Endpoint, Route>,
    names: BTreeMap<Address, (String, String)>,
    /// (buyer index, plan index) -> scenario order index
    plan_index: BTreeMap<(usize, usize), usize>,
}

fn keypair(seed: [u8; 32]) -> KeyPair {
    generate_keypair(&seed).expect("32-byte seed")
}

fn rng_for(seed: &[u8; 32]) -> ChaCha20Rng {
    let mut buf = b"datamarket/actor-rng/v1".to_vec();
    buf.extend_from_slice(seed);
    ChaCha20Rng::from_seed(sha256(&buf).0)
}

fn u64_of(seed: &[u8; 32]) -> u64 {
    u64::from_be_bytes(seed[..8].try_into().expect("8 bytes"))
}

fn build_world(s: &Scenario, seed: u64) -> Result<World, ScenarioError> {
    s.validate()?;
    let net_seed = s.network.seed.unwrap_or_else(|| {
        u64_of(&s.actor_seed(seed, "network", "", None))
    });
    let mut net = Network::new(NetworkConfig {
        latency_min: s.network.latency[0],
        latency_max: s.network.latency[1],
        drop_rate: s.network.drop_rate,
        seed: net_seed,
    })?;
    let mut ledger = Ledger::new();
    let mut routes = BTreeMap::new();
    let mut names = BTreeMap::new();
    let mut add = |role: &str, name: &str, addr: Address, route: Route| -> Result<(), ScenarioError> {
        if names.insert(addr, (role.to_string(), name.to_string())).is_some() {
            return Err(ScenarioError::DuplicateName {
                role: "address",
                name: name.to_string(),
            });
        }
        routes.insert(Endpoint::actor(&addr), route);
        Ok(())
    };

    let seller_keys: Vec<([u8; 32], KeyPair)> = s
        .sellers
        .iter()
        .map(|x| {
            let sd = s.actor_seed(seed, "seller", &x.name, x.seed.as_deref());
            (sd, keypair(sd))
        })
        .collect();
    let seller_addr: BTreeMap<&str, Address> = s
        .sellers
        .iter()
        .zip(&seller_keys)
        .map(|(x, (_, k))| (x.name.as_str(), k.address()))
        .collect();

    let mut notaries = Vec::new();
    for (i, n) in s.notaries.iter().enumerate() {
        let sd = s.actor_seed(seed, "notary", &n.name, n.seed.as_deref());
        let keys = keypair(sd);
        add("notary", &n.name, keys.address(), Route::Notary(i))?;
        let mut truth = GroundTruthStore::new();
        for ((seller, schema), data) in s.ground_truth_for(n) {
            truth.insert(seller, schema, data);
        }
        let policy = NotarizationPolicy {
            mode: n.policy.mode(),
            seed: u64_of(&sd),
        };
        let mut notary = Notary::new(&n.name, keys, n.fee, TermsLink::of(&n.terms), policy, truth);
        notary.accept_orders = n.accept_orders;
        notary.checks = n.checks();
        for x in &s.sellers {
            if n.enroll.as_ref().is_none_or(|e| e.contains(&x.name)) {
                notary.enroll(seller_addr[x.name.as_str()], &x.name);
            }
        }
        notaries.push(notary);
    }
    let notary_addr: BTreeMap<&str, Address> = s
        .notaries
        .iter()
        .zip(&notaries)
        .map(|(spec, n)| (spec.name.as_str(), n.address()))
        .collect();

    let mut sellers = Vec::new();
    for (i, (x, (sd, keys))) in s.sellers.iter().zip(seller_keys).enumerate() {
        add("seller", &x.name, keys.address(), Route::Seller(i))?;
        let profile = SellerProfile {
            name: x.name.clone(),
            attributes: x.attributes.clone(),
            dataset: x
                .data
                .iter()
                .map(|(k, v)| (k.clone(), v.as_bytes().to_vec()))
                .collect(),
            keys,
        };
        let policy = SellerPolicy {
            min_price: x.min_price,
            accepted_terms: x
                .accepted_terms
                .as_ref()
                .map(|t| t.iter().map(|t| TermsLink::of(t)).collect()),
            max_notary_fee: x.max_notary_fee,
            trusted_notaries: x
                .trusted_notaries
                .as_ref()
                .map(|t| t.iter().map(|n| notary_addr[n.as_str()]).collect()),
        };
        let mut seller = Seller::new(profile, policy, rng_for(&sd));
        if let Some(r) = s.timing.retry_interval {
            seller.retry_interval = r;
        }
        if let Some(m) = s.timing.max_retries {
            seller.max_retries = m;
        }
        seller.mutation = s
            .mutations
            .iter()
            .find(|m| m.seller.as_ref() == Some(&x.name))
            .and_then(MutationSpec::seller_mutation);
        sellers.push(seller);
    }
    let board: Vec<Endpoint> = sellers.iter().map(Seller::endpoint).collect();

    let defaults = BuyerTiming::default();
    let timing = BuyerTiming {
        gather_timeout: s.timing.gather_timeout.unwrap_or(defaults.gather_timeout),
        delivery_timeout: s.timing.delivery_timeout.unwrap_or(defaults.delivery_timeout),
        retry_interval: s.timing.retry_interval.unwrap_or(defaults.retry_interval),
        max_retries: s.timing.max_retries.unwrap_or(defaults.max_retries),
    };
    let mut buyers = Vec::new();
    let mut plan_index = BTreeMap::new();
    let mut uploads = Vec::new();
    for (i, b) in s.buyers.iter().enumerate() {
        let sd = s.actor_seed(seed, "buyer", &b.name, b.seed.as_deref());
        let keys = keypair(sd);
        add("buyer", &b.name, keys.address(), Route::Buyer(i))?;
        let mut buyer = Buyer::new(&b.name, keys, rng_for(&sd));
        buyer.board = board.clone();
        buyer.timing = timing;
        let replay = s.mutations.iter().any(|m| {
            m.kind == MutationKind::CertificateReplay && m.buyer.as_ref() == Some(&b.name)
        });
        for (oi, o) in s.orders.iter().enumerate().filter(|(_, o)| o.buyer == b.name) {
            let audience = Audience::new(
                o.audience
                    .iter()
                    .map(PredicateSpec::to_predicate)
                    .collect::<Result<Vec<_>, _>>()?,
            );
            plan_index.insert((i, buyer.stages().len()), oi);
            buyer.add_order(BuyerOrderPlan {
                audience,
                request: DataRequest::new(&o.schema, o.fields.clone())?,
                upload_url: o.upload_url.clone(),
                min_audit_budget: o.min_audit_budget,
                terms: TermsLink::of(&o.terms),
                price: o.price,
                notaries: o.notaries.iter().map(|n| notary_addr[n.as_str()]).collect(),
                selection: o.selection.into(),
                audit_topup: o.audit_topup,
                force_audit: o
                    .force_audit
                    .iter()
                    .map(|n| seller_addr[n.as_str()])
                    .collect(),
                post_at: o.post_at,
                collect_ticks: o.collect_ticks,
                replay_certificates: replay,
            });
        }
        uploads.extend(buyer.upload_endpoints().into_iter().map(|u| (u, Route::Upload(i))));
        buyers.push(buyer);
    }
    routes.extend(uploads);

    for endpoint in routes.keys() {
        net.register(endpoint.clone());
    }
    let funded = s
        .notaries
        .iter()
        .zip(&notaries)
        .map(|(x, n)| (n.address(), x.balance))
        .chain(s.buyers.iter().zip(&buyers).map(|(x, b)| (b.address(), x.balance)))
        .chain(s.sellers.iter().zip(&sellers).map(|(x, b)| (b.address(), x.balance)));
    for (addr, amount) in funded {
        if amount > 0 {
            ledger.mint(addr, amount).map_err(|_| ScenarioError::Supply)?;
        }
    }

    Ok(World {
        net,
        ledger,
        events: Vec::new(),
        notaries,
        buyers,
        sellers,
        routes,
        names,
        plan_index,
    })
}

impl World {
    fn step(&mut self) {
        let delivered = self.net.tick();
        let mut ctx = Ctx {
            net: &mut self.net,
            ledger: &mut self.ledger,
            events: &mut self.events,
        };
        for env in delivered {
            match self.routes.get(&env.to) {
                Some(Route::Notary(i)) => self.notaries[*i].on_message(&env, &mut ctx),
                Some(Route::Buyer(i)) => self.buyers[*i].on_message(&env, &mut ctx),
                Some(Route::Seller(i)) => self.sellers[*i].on_message(&env, &mut ctx),
                Some(Route::Upload(i)) => self.buyers[*i].on_upload(&env, &mut ctx),
                None => {}
            }
        }
        for b in &mut self.buyers {
            b.on_tick(&mut ctx);
        }
        for s in &mut self.sellers {
            s.on_tick(&mut ctx);
        }
    }

    fn quiescent(&self) -> bool {
        self.net.in_flight() == 0
            && self.buyers.iter().all(Buyer::is_done)
            && self.sellers.iter().all(Seller::is_idle)
    }

    fn name(&self, addr: &Address) -> String {
        self.names
            .get(addr)
            .map(|(_, n)| n.clone())
            .unwrap_or_else(|| addr.to_hex()[..12].to_string())
    }
}

/// Runs a scenario to quiescence or the tick limit and checks every
/// invariant. Input problems are errors; invariant failures are reported.
pub fn run_scenario(s: &Scenario, options: RunOptions) -> Result<RunOutcome, ScenarioError> {
    let seed = options.seed.unwrap_or(s.seed);
    let limit = options.ticks.unwrap_or(s.ticks);
    let mut w = build_world(s, seed)?;
    while w.net.now() < limit {
        w.step();
        if w.quiescent() {
            break;
        }
    }
    let finished = w.quiescent();

    let journal = write_journal(w.ledger.journal());
    let transcript = w.net.export_transcript();

    // order rows
    let mut order_of: BTreeMap<OrderId, usize> = BTreeMap::new();
    let mut orders: Vec<OrderRow> = s
        .orders
        .iter()
        .enumerate()
        .map(|(i, o)| OrderRow {
            index: i,
            buyer: o.buyer.clone(),
            order_id: None,
            status: "pending".into(),
            notaries: 0,
            selected: 0,
            audit_topups: 0,
            residual: None,
            reason: None,
        })
        .collect();
    for (bi, b) in w.buyers.iter().enumerate() {
        for (pi, stage) in b.stages().into_iter().enumerate() {
            let row = &mut orders[w.plan_index[&(bi, pi)]];
            row.status = match stage {
                OrderStage::Pending => "pending",
                OrderStage::Gathering { .. } => "gathering",
                OrderStage::Collecting { .. } => "collecting",
                OrderStage::Settling => "settling",
                OrderStage::Closed => "closed",
                OrderStage::Aborted(reason) => {
                    row.reason = Some(reason.clone());
                    "aborted"
                }
            }
            .into();
        }
        for (pi, posted) in b.posted_orders().into_iter().enumerate() {
            if let Some(p) = posted {
                let idx = w.plan_index[&(bi, pi)];
                orders[idx].order_id = Some(p.id());
                orders[idx].notaries = p.notaries.len();
                order_of.insert(p.id(), idx);
            }
        }
    }

    let mut settlements = Vec::new();
    let mut rejections = Vec::new();
    let mut attacks = Vec::new();
    let mut ledger_errors = Vec::new();
    for e in &w.events {
        match e {
            ActorEvent::SellersSelected {
                order_id,
                responses,
                audit_topup,
            } => {
                let row = &mut orders[order_of[order_id]];
                row.selected += responses.len();
                row.audit_topups += audit_topup;
            }
            ActorEvent::AuditToppedUp { order_id, amount } => {
                orders[order_of[order_id]].audit_topups += amount;
            }
            ActorEvent::OrderClosed { order_id, residual } => {
                orders[order_of[order_id]].residual = Some(*residual);
            }
            ActorEvent::Settled(st) => settlements.push(SettlementRow {
                order: order_of[&st.order_id],
                seller: w.name(&st.seller),
                seller_address: st.seller,
                response: st.response_digest,
                verdict: st.verdict.letter().to_string(),
                outcome: st.outcome,
                amount: st.amount,
                recipient: w.name(&st.recipient),
                notary: w.name(&st.notary),
                notary_fee: st.notary_fee,
            }),
            ActorEvent::ResponseRejected {
                order_id,
                seller,
                reason,
                ..
            } => rejections.push(RejectionRow {
                order: order_of[order_id],
                seller: w.name(seller),
                reason: *reason,
            }),
            ActorEvent::Attack {
                actor,
                kind,
                accepted,
                state_unchanged,
                error,
            } => attacks.push(AttackRow {
                actor: w.name(actor),
                kind: kind.to_string(),
                accepted: *accepted,
                state_unchanged: *state_unchanged,
                error: error.as_ref().map(ToString::to_string),
            }),
            ActorEvent::LedgerRejected {
                actor,
                operation,
                error,
            } => ledger_errors.push(format!("{} {operation}: {error}", w.name(actor))),
            ActorEvent::SendFailed { from, to } => {
                ledger_errors.push(format!("{} could not reach {to}", w.name(from)))
            }
            ActorEvent::OrderPosted { .. } | ActorEvent::OrderAborted { .. } => {}
        }
    }

    let state = w.ledger.state();
    let balances: Vec<BalanceRow> = w
        .names
        .iter()
        .map(|(addr, (role, name))| BalanceRow {
            role: role.clone(),
            name: name.clone(),
            address: *addr,
            balance: state.balance(addr),
        })
        .collect::<Vec<_>>();
    let mut balances = balances;
    balances.sort_by(|a, b| (role_rank(&a.role), &a.name).cmp(&(role_rank(&b.role), &b.name)));

    // invariants
    let (mut invariants, replayed) = ledger_checks(w.ledger.journal());
    let replay_ok = replayed
        .as_ref()
        .is_ok_and(|st| st.digest() == w.ledger.state_digest());
    invariants.push(InvariantResult::new(
        "replay",
        replay_ok,
        match &replayed {
            Ok(_) if replay_ok => format!("journal reproduces state {}", w.ledger.state_digest()),
            Ok(_) => "replayed state differs from live state".to_string(),
            Err((seq, why)) => format!("sequence {seq}: {why}"),
        },
    ));
    invariants.push(anonymity_check(&journal, &s.secret_values()));
    let data: BTreeSet<Vec<u8>> = w.sellers.iter().flat_map(Seller::data_variants).collect();
    invariants.push(plaintext_check(w.net.transcript(), &data));
    invariants.push(neutrality_check(w.net.transcript()));
    let bad_attacks = attacks
        .iter()
        .filter(|a| a.accepted || !a.state_unchanged)
        .count();
    invariants.push(InvariantResult::new(
        "attacks-rejected",
        bad_attacks == 0,
        format!("{} of {} attacks changed the ledger", bad_attacks, attacks.len()),
    ));
    invariants.push(liveness(&w, finished, limit));
    if !s.expected.is_empty() {
        invariants.push(oracle_check(&s.expected, &settlements));
    }

    let report = SettlementReport {
        scenario: s.name.clone(),
        seed,
        ticks_used: w.net.now(),
        tick_limit: limit,
        journal_events: w.ledger.journal().len(),
        state_digest: w.ledger.state_digest(),
        orders,
        settlements,
        rejections,
        attacks,
        ledger_errors,
        balances,
        totals: Totals {
            supply: state.total_supply(),
            balances: state.total_balances() as u64,
            escrowed: state.total_escrowed() as u64,
        },
        passed: invariants.iter().all(|i| i.passed),
        invariants,
    };
    Ok(RunOutcome {
        report,
        journal,
        transcript,
        ledger: w.ledger,
        events: w.events,
    })
}

fn role_rank(role: &str) -> u8 {
    match role {
        "buyer" => 0,
        "seller" => 1,
        _ => 2,
    }
}

fn liveness(w: &World, finished: bool, limit: u64) -> InvariantResult {
    let state = w.ledger.state();
    let unsettled: usize = state
        .contracts()
        .map(|c| c.unsettled())
        .sum();
    let open = state
        .contracts()
        .filter(|c| c.status == ContractStatus::Open)
        .count();
    let unfinished = w
        .buyers
        .iter()
        .flat_map(Buyer::stages)
        .filter(|st| !matches!(st, OrderStage::Closed | OrderStage::Aborted(_)))
        .count();
    let ok = unsettled == 0 && open == 0 && unfinished == 0;
    let detail = if ok && finished {
        format!("quiescent after {} ticks", w.net.now())
    } else if ok {
        format!("all orders settled; actors still busy at tick limit {limit}")
    } else {
        format!(
            "tick limit {limit} reached with {unsettled} selected responses unsettled, \
             {open} contracts open and {unfinished} orders unfinished"
        )
    };
    InvariantResult::new("liveness", ok, detail)
}

fn oracle_check(expected: &[ExpectedSettlement], actual: &[SettlementRow]) -> InvariantResult {
    let outcome = |o: SettlementOutcome| match o {
        SettlementOutcome::SellerPaid => "seller-paid",
        SettlementOutcome::BuyerRefunded => "buyer-refunded",
    };
    let mut want: Vec<ExpectedSettlement> = expected.to_vec();
    want.sort();
    let mut got: Vec<ExpectedSettlement> = actual
        .iter()
        .map(|r| ExpectedSettlement {
            order: r.order,
            seller: r.seller.clone(),
            verdict: r.verdict.clone(),
            outcome: outcome(r.outcome).to_string(),
            amount: r.amount,
        })
        .collect();
    got.sort();
    let mismatch = want
        .iter()
        .zip(&got)
        .position(|(a, b)| a != b)
        .or((want.len() != got.len()).then(|| want.len().min(got.len())));
    let detail = match mismatch {
        None => format!("{} rows match", want.len()),
        Some(i) => {
            let show = |r: Option<&ExpectedSettlement>| {
                r.map(|r| format!("#{} {} {} {} {}", r.order, r.seller, r.verdict, r.outcome, r.amount))
                    .unwrap_or_else(|| "nothing".into())
            };
            format!(
                "row {i}: expected {}, got {}",
                show(want.get(i)),
                show(got.get(i))
            )
        }
    };
    InvariantResult::new("expected-settlements", mismatch.is_none(), detail)
}
