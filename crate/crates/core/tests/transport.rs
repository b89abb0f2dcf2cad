use std::collections::BTreeMap;

use datamarket::crypto::Address;
use datamarket::transport::{Endpoint, Envelope, Network, NetworkConfig, TranscriptKind};
use proptest::prelude::*;

/// (tick offset, sender, endpoint) send schedule.
type Schedule = Vec<(u8, u8, u8)>;

fn schedule() -> impl Strategy<Value = Schedule> {
    proptest::collection::vec((0u8..4, 0u8..3, 0u8..3), 0..60)
}

fn endpoint(n: u8) -> Endpoint {
    Endpoint(format!("inbox-{n}"))
}

/// Runs the schedule, tagging every payload with its send index, and drains.
fn drive(cfg: NetworkConfig, sched: &Schedule) -> (Network, Vec<(u64, Envelope)>) {
    let mut net = Network::new(cfg).unwrap();
    for n in 0..3 {
        net.register(endpoint(n));
    }
    let mut delivered = Vec::new();
    for (i, &(wait, from, to)) in sched.iter().enumerate() {
        for _ in 0..wait {
            let now = net.now() + 1;
            delivered.extend(net.tick().into_iter().map(|e| (now, e)));
        }
        let mut payload = vec![0x99];
        payload.extend_from_slice(&(i as u32).to_be_bytes());
        net.send(Address([from; 20]), &endpoint(to), payload).unwrap();
    }
    while net.in_flight() > 0 {
        let now = net.now() + 1;
        delivered.extend(net.tick().into_iter().map(|e| (now, e)));
    }
    (net, delivered)
}

fn index(e: &Envelope) -> u32 {
    u32::from_be_bytes(e.payload[1..5].try_into().unwrap())
}

fn config(lo: u64, span: u64, drop_rate: f64, seed: u64) -> NetworkConfig {
    NetworkConfig {
        latency_min: lo,
        latency_max: lo + span,
        drop_rate,
        seed,
    }
}

#[test]
fn bad_configs_are_refused() {
    assert!(Network::new(config(0, 1, 0.0, 0)).is_err());
    assert!(Network::new(NetworkConfig { latency_min: 3, latency_max: 2, drop_rate: 0.0, seed: 0 }).is_err());
    assert!(Network::new(config(1, 0, 1.5, 0)).is_err());
    let mut net = Network::new(config(1, 0, 0.0, 0)).unwrap();
    assert!(net.send(Address([0; 20]), &endpoint(9), vec![1]).is_err());
}

proptest! {
    #[test]
    fn same_seed_same_transcript(sched in schedule(), lo in 1u64..4, span in 0u64..5, drop in 0.0f64..0.5, seed in any::<u64>()) {
        let (a, da) = drive(config(lo, span, drop, seed), &sched);
        let (b, db) = drive(config(lo, span, drop, seed), &sched);
        prop_assert_eq!(a.export_transcript(), b.export_transcript());
        prop_assert_eq!(a.transcript(), b.transcript());
        prop_assert_eq!(da, db);
    }

    #[test]
    fn lossless_delivery_is_exactly_once(sched in schedule(), lo in 1u64..4, span in 0u64..5, seed in any::<u64>()) {
        let (_, delivered) = drive(config(lo, span, 0.0, seed), &sched);
        let mut seen: Vec<u32> = delivered.iter().map(|(_, e)| index(e)).collect();
        seen.sort_unstable();
        let want: Vec<u32> = (0..sched.len() as u32).collect();
        prop_assert_eq!(seen, want);
    }

    #[test]
    fn lossy_delivery_is_at_most_once(sched in schedule(), drop in 0.0f64..=1.0, seed in any::<u64>()) {
        let (net, delivered) = drive(config(1, 3, drop, seed), &sched);
        let mut seen: Vec<u32> = delivered.iter().map(|(_, e)| index(e)).collect();
        let n = seen.len();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), n);
        let dropped = net.transcript().iter().filter(|t| t.kind == TranscriptKind::Dropped).count();
        prop_assert_eq!(n + dropped, sched.len());
    }

    #[test]
    fn per_pair_order_is_fifo(sched in schedule(), lo in 1u64..3, span in 0u64..6, drop in 0.0f64..0.3, seed in any::<u64>()) {
        let (_, delivered) = drive(config(lo, span, drop, seed), &sched);
        let mut last: BTreeMap<(Address, Endpoint), u32> = BTreeMap::new();
        for (_, e) in &delivered {
            let i = index(e);
            if let Some(prev) = last.insert((e.from, e.to.clone()), i) {
                prop_assert!(prev < i, "{prev} delivered before {i} was reversed");
            }
        }
    }

    #[test]
    fn delivery_respects_minimum_latency(sched in schedule(), lo in 1u64..4, span in 0u64..5, seed in any::<u64>()) {
        let (_, delivered) = drive(config(lo, span, 0.0, seed), &sched);
        for (at, e) in &delivered {
            prop_assert_eq!(*at, e.delivery_time);
            prop_assert!(e.delivery_time >= e.sent_at + lo);
        }
    }
}
