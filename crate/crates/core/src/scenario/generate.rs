//! Random scenarios for property checks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{
    BuyerSpec, MutationKind, MutationSpec, NetworkSpec, NotarySpec, OrderSpec, PolicySpec,
    PredicateSpec, Scenario, SelectionSpec, SellerSpec,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub min_sellers: usize,
    pub max_sellers: usize,
    /// Probability that a seller carries a mutation.
    pub mutation_rate: f64,
    pub max_drop_rate: f64,
    pub ticks: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            min_sellers: 1,
            max_sellers: 10,
            mutation_rate: 0.3,
            max_drop_rate: 0.1,
            ticks: 400,
        }
    }
}

const REGIONS: [&str; 4] = ["region-north", "region-south", "region-east", "region-west"];
const SCHEMAS: [&str; 2] = ["balance-v1", "location-v1"];

fn record(rng: &mut ChaCha8Rng, seller: usize, schema: &str) -> String {
    let tail: u64 = rng.gen();
    format!("{schema}:{seller:02}:{tail:016x}")
}

/// A valid scenario drawn from `seed`: random actors, balances, policies,
/// orders, mutations and network conditions.
pub fn random_scenario(seed: u64, cfg: &GeneratorConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let notaries: Vec<NotarySpec> = (0..rng.gen_range(1..=3))
        .map(|i| {
            let mut n = NotarySpec::new(format!("notary-{i}"), rng.gen_range(0..=4));
            n.balance = rng.gen_range(0..=20);
            n.terms = format!("notary terms {i}");
            n.policy = match rng.gen_range(0..4) {
                0 => PolicySpec::Never,
                1 => PolicySpec::Sample(0.5),
                _ => PolicySpec::Always,
            };
            n.accept_orders = rng.gen_bool(0.9);
            n
        })
        .collect();

    let buyers: Vec<BuyerSpec> = (0..rng.gen_range(1..=2))
        .map(|i| BuyerSpec {
            name: format!("buyer-{i}"),
            balance: rng.gen_range(0..=150),
            replay_certificates: false,
            seed: None,
        })
        .collect();

    let n_sellers = rng.gen_range(cfg.min_sellers..=cfg.max_sellers);
    let sellers: Vec<SellerSpec> = (0..n_sellers)
        .map(|i| {
            let mut data = BTreeMap::new();
            for schema in SCHEMAS {
                if rng.gen_bool(0.8) {
                    data.insert(schema.to_string(), record(&mut rng, i, schema));
                }
            }
            let mut attributes = BTreeMap::new();
            attributes.insert("region".into(), REGIONS.choose(&mut rng).unwrap().to_string());
            attributes.insert("age".into(), rng.gen_range(18..90).to_string());
            SellerSpec {
                name: format!("seller-{i:02}"),
                balance: rng.gen_range(0..=10),
                attributes,
                data,
                min_price: rng.gen_range(0..=6),
                max_notary_fee: rng.gen_bool(0.3).then(|| rng.gen_range(0..=4)),
                trusted_notaries: None,
                accepted_terms: None,
                seed: None,
            }
        })
        .collect();

    let orders: Vec<OrderSpec> = (0..rng.gen_range(1..=3))
        .map(|i| {
            let mut audience = Vec::new();
            if rng.gen_bool(0.4) {
                audience.push(PredicateSpec {
                    attribute: "region".into(),
                    any_of: Some(
                        REGIONS
                            .choose_multiple(&mut rng, 2)
                            .map(|r| r.to_string())
                            .collect(),
                    ),
                    ..Default::default()
                });
            }
            if rng.gen_bool(0.4) {
                audience.push(PredicateSpec {
                    attribute: "age".into(),
                    ge: Some(rng.gen_range(18..60)),
                    ..Default::default()
                });
            }
            let mut listed: Vec<String> = notaries.iter().map(|n| n.name.clone()).collect();
            listed.shuffle(&mut rng);
            listed.truncate(rng.gen_range(1..=listed.len()));
            let force_audit = sellers
                .iter()
                .filter(|_| rng.gen_bool(0.1))
                .map(|s| s.name.clone())
                .collect();
            OrderSpec {
                buyer: buyers.choose(&mut rng).unwrap().name.clone(),
                schema: SCHEMAS.choose(&mut rng).unwrap().to_string(),
                fields: vec!["value".into()],
                audience,
                upload_url: format!("https://buyer.example/upload/{i}"),
                price: rng.gen_range(1..=8),
                min_audit_budget: rng.gen_range(0..=10),
                terms: "standard terms".into(),
                notaries: listed,
                selection: match rng.gen_range(0..3) {
                    0 => SelectionSpec::First(rng.gen_range(0..=n_sellers)),
                    1 => SelectionSpec::Budget(rng.gen_range(0..=40)),
                    _ => SelectionSpec::All,
                },
                audit_topup: rng.gen_range(0..=4),
                force_audit,
                post_at: rng.gen_range(1..=10),
                collect_ticks: rng.gen_range(8..=16),
            }
        })
        .collect();

    let kinds = [
        MutationKind::SubstituteData,
        MutationKind::FlipBit,
        MutationKind::WrongNotary,
        MutationKind::PriceMismatch,
        MutationKind::ForgedCertificate,
    ];
    let mut mutations = Vec::new();
    for s in &sellers {
        if rng.gen_bool(cfg.mutation_rate) {
            mutations.push(MutationSpec {
                kind: *kinds.choose(&mut rng).unwrap(),
                seller: Some(s.name.clone()),
                buyer: None,
                bit: rng.gen_range(0..256),
            });
        }
    }
    for b in &buyers {
        if rng.gen_bool(cfg.mutation_rate / 2.0) {
            mutations.push(MutationSpec {
                kind: MutationKind::CertificateReplay,
                seller: None,
                buyer: Some(b.name.clone()),
                bit: 0,
            });
        }
    }

    let drop_rate = if rng.gen_bool(0.3) {
        rng.gen_range(0.0..=cfg.max_drop_rate)
    } else {
        0.0
    };
    Scenario {
        name: format!("random-{seed}"),
        seed,
        ticks: cfg.ticks,
        network: NetworkSpec {
            latency: [1, rng.gen_range(1..=4)],
            drop_rate,
            seed: None,
        },
        notaries,
        buyers,
        sellers,
        orders,
        mutations,
        absent_schemas: SCHEMAS.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    }
}
