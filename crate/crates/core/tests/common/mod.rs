#![allow(dead_code)]

use datamarket::scenario::{
    BuyerSpec, MutationKind, MutationSpec, NotarySpec, OrderSpec, PolicySpec, Scenario,
    SellerSpec,
};

/// Straight-line FIPS 180-4 SHA-256, kept separate from the crate's hashing.
pub fn sha256_ref(msg: &[u8]) -> [u8; 32] {
    const K: [u32; 64] = [
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2,
    ];
    let mut h: [u32; 8] = [
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab,
        0x5be0cd19,
    ];
    let mut data = msg.to_vec();
    let bit_len = (msg.len() as u64).wrapping_mul(8);
    data.push(0x80);
    while data.len() % 64 != 56 {
        data.push(0);
    }
    data.extend_from_slice(&bit_len.to_be_bytes());

    for block in data.chunks(64) {
        let mut w = [0u32; 64];
        for i in 0..16 {
            w[i] = u32::from_be_bytes([
                block[4 * i],
                block[4 * i + 1],
                block[4 * i + 2],
                block[4 * i + 3],
            ]);
        }
        for i in 16..64 {
            let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
            let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16]
                .wrapping_add(s0)
                .wrapping_add(w[i - 7])
                .wrapping_add(s1);
        }
        let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
        for i in 0..64 {
            let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
            let ch = (e & f) ^ (!e & g);
            let t1 = hh
                .wrapping_add(s1)
                .wrapping_add(ch)
                .wrapping_add(K[i])
                .wrapping_add(w[i]);
            let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
            let maj = (a & b) ^ (a & c) ^ (b & c);
            let t2 = s0.wrapping_add(maj);
            hh = g;
            g = f;
            f = e;
            e = d.wrapping_add(t1);
            d = c;
            c = b;
            b = a;
            a = t1.wrapping_add(t2);
        }
        for (x, y) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
            *x = x.wrapping_add(y);
        }
    }
    let mut out = [0u8; 32];
    for (i, word) in h.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&word.to_be_bytes());
    }
    out
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One notary, one funded buyer, `n` sellers who all match the order.
pub fn market(n: usize, policy: PolicySpec, seed: u64) -> Scenario {
    let mut notary = NotarySpec::new("notary-main", 2);
    notary.policy = policy;
    notary.terms = "audit terms".into();
    let sellers = (0..n)
        .map(|i| SellerSpec {
            name: format!("seller-{i:02}"),
            attributes: [("region".to_string(), "region-west".to_string())].into(),
            data: [(
                "records-v1".to_string(),
                format!("record body of seller {i:02} / {seed}"),
            )]
            .into(),
            ..Default::default()
        })
        .collect();
    Scenario {
        name: format!("market-{n}"),
        seed,
        ticks: 300,
        notaries: vec![notary],
        buyers: vec![BuyerSpec {
            name: "buyer-main".into(),
            balance: 1_000,
            replay_certificates: false,
            seed: None,
        }],
        sellers,
        orders: vec![OrderSpec {
            buyer: "buyer-main".into(),
            schema: "records-v1".into(),
            fields: vec!["body".into()],
            audience: vec![],
            upload_url: "https://buyer-main.example/upload".into(),
            price: 7,
            min_audit_budget: 2 * n as i64,
            terms: "standard terms".into(),
            notaries: vec!["notary-main".into()],
            selection: Default::default(),
            audit_topup: 0,
            force_audit: vec![],
            post_at: 1,
            collect_ticks: 12,
        }],
        ..Default::default()
    }
}

pub fn mutate(s: &mut Scenario, seller: usize, kind: MutationKind, bit: usize) {
    s.mutations.push(MutationSpec {
        kind,
        seller: Some(s.sellers[seller].name.clone()),
        buyer: None,
        bit,
    });
}

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}
