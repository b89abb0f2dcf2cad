mod common;

use datamarket::crypto::{
    commit, decrypt, derive_address, encrypt_for, generate_keypair, sha256, sign, verify,
    verify_commitment, Ciphertext, Signature, SALT_LEN,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use common::{hex, sha256_ref};

#[test]
fn hash_agrees_with_reference_across_padding_edges() {
    for len in [0usize, 1, 3, 55, 56, 57, 63, 64, 65, 119, 120, 128, 1000] {
        let msg: Vec<u8> = (0..len).map(|i| (i * 31 + 7) as u8).collect();
        assert_eq!(sha256(&msg).0, sha256_ref(&msg), "length {len}");
    }
}

#[test]
fn reference_hash_known_answers() {
    assert_eq!(
        hex(&sha256_ref(b"abc")),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    assert_eq!(
        hex(&sha256_ref(b"")),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
}

#[test]
fn address_is_hash_prefix_of_the_public_key() {
    for n in 0..16u8 {
        let kp = generate_keypair(&[n; 32]).unwrap();
        let want = sha256_ref(kp.public_key.as_bytes());
        assert_eq!(derive_address(&kp.public_key).0[..], want[..20]);
    }
}

#[test]
fn commit_rejects_bad_inputs() {
    assert!(commit(&[0; 31], b"x").is_err());
    assert!(commit(&[0; SALT_LEN], b"").is_err());
    assert!(generate_keypair(&[0; 31]).is_err());
}

fn flip(bytes: &mut [u8], bit: usize) {
    let i = bit % (bytes.len() * 8);
    bytes[i / 8] ^= 1 << (i % 8);
}

proptest! {
    #[test]
    fn hash_matches_reference(msg in proptest::collection::vec(any::<u8>(), 0..300)) {
        prop_assert_eq!(sha256(&msg).0, sha256_ref(&msg));
    }

    #[test]
    fn commitment_is_salted_hash(salt in any::<[u8; 32]>(), data in proptest::collection::vec(any::<u8>(), 1..200)) {
        let c = commit(&salt, &data).unwrap();
        let mut joined = salt.to_vec();
        joined.extend_from_slice(&data);
        prop_assert_eq!(c.digest.0, sha256_ref(&joined));
        prop_assert!(verify_commitment(&salt, &data, &c));
    }

    #[test]
    fn commitment_binds_every_bit(salt in any::<[u8; 32]>(), data in proptest::collection::vec(any::<u8>(), 1..64), bit in any::<usize>(), in_salt in any::<bool>()) {
        let c = commit(&salt, &data).unwrap();
        let (mut s, mut d) = (salt, data);
        if in_salt { flip(&mut s, bit) } else { flip(&mut d, bit) }
        prop_assert!(!verify_commitment(&s, &d, &c));
    }

    #[test]
    fn signatures_verify_only_for_signer_and_message(seed in any::<[u8; 32]>(), other in any::<[u8; 32]>(), msg in proptest::collection::vec(any::<u8>(), 1..128), bit in any::<usize>()) {
        prop_assume!(seed != other);
        let kp = generate_keypair(&seed).unwrap();
        let sig = sign(&kp.secret_key, &msg);
        prop_assert!(verify(&kp.public_key, &msg, &sig));

        let mut tampered = msg.clone();
        flip(&mut tampered, bit);
        prop_assert!(!verify(&kp.public_key, &tampered, &sig));

        let mut bad_sig = sig.0;
        flip(&mut bad_sig, bit);
        prop_assert!(!verify(&kp.public_key, &msg, &Signature(bad_sig)));

        let stranger = generate_keypair(&other).unwrap();
        prop_assert!(!verify(&stranger.public_key, &msg, &sig));
    }

    #[test]
    fn envelope_round_trips_and_resists_tampering(seed in any::<[u8; 32]>(), other in any::<[u8; 32]>(), rng_seed in any::<u64>(), msg in proptest::collection::vec(any::<u8>(), 1..256), bit in any::<usize>()) {
        prop_assume!(seed != other);
        let kp = generate_keypair(&seed).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        let ct = encrypt_for(&kp.public_key, &msg, &mut rng).unwrap();
        prop_assert_eq!(decrypt(&kp.secret_key, &ct).unwrap(), msg.clone());

        let stranger = generate_keypair(&other).unwrap();
        prop_assert!(decrypt(&stranger.secret_key, &ct).is_err());

        let mut raw = ct.0.clone();
        flip(&mut raw, bit);
        prop_assert!(decrypt(&kp.secret_key, &Ciphertext(raw)).is_err());

        let truncated = Ciphertext(ct.0[..ct.0.len() - 1].to_vec());
        prop_assert!(decrypt(&kp.secret_key, &truncated).is_err());
    }

    #[test]
    fn ciphertext_hides_the_plaintext(seed in any::<[u8; 32]>(), msg in proptest::collection::vec(any::<u8>(), 8..64)) {
        let kp = generate_keypair(&seed).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ct = encrypt_for(&kp.public_key, &msg, &mut rng).unwrap();
        prop_assert!(memchr_window(&ct.0, &msg).is_none());
    }
}

fn memchr_window(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
