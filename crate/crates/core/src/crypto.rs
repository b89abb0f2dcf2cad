//! Keys, addresses, salted commitments, signatures and the payload envelope.
//!
//! Every identity owns one 32-byte seed. The seed is the Ed25519 signing
//! key; an X25519 decryption key is derived from it. The public half of an
//! identity is the pair of both public keys, so a single [`PublicKey`] can
//! both verify signatures and receive encrypted payloads.

use std::fmt;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as DhPublic, StaticSecret};

pub const SEED_LEN: usize = 32;
pub const SALT_LEN: usize = 32;
pub const ADDRESS_LEN: usize = 20;
pub const PUBLIC_KEY_LEN: usize = 64;
pub const SIGNATURE_LEN: usize = 64;

const ENVELOPE_INFO: &[u8] = b"datamarket/envelope/v1";
const ENC_KEY_DOMAIN: &[u8] = b"datamarket/x25519-from-seed/v1";
const EPHEMERAL_LEN: usize = 32;
const NONCE_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("seed must be {SEED_LEN} bytes, got {0}")]
    SeedLength(usize),
    #[error("public key must be {PUBLIC_KEY_LEN} bytes, got {0}")]
    PublicKeyLength(usize),
    #[error("public key is not a valid curve point")]
    InvalidPublicKey,
    #[error("salt must be {SALT_LEN} bytes, got {0}")]
    SaltLength(usize),
    #[error("commitment data must not be empty")]
    EmptyData,
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("decryption failed")]
    DecryptionFailed,
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
}

/// SHA-256 of `data`.
pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        impl $name {
            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                let arr: [u8; $len] = bytes.try_into().map_err(|_| CryptoError::Length {
                    expected: $len,
                    got: bytes.len(),
                })?;
                Ok(Self(arr))
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), hex::encode(self.0))
            }
        }

        impl FromStr for $name {
            type Err = CryptoError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let raw = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
                Self::from_slice(&raw)
            }
        }

        impl serde::Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> serde::Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <String as serde::Deserialize>::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);
hex_bytes!(Digest, 32);

/// 20-byte account identifier: the first 20 bytes of SHA-256(public key).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; ADDRESS_LEN]);
hex_bytes!(Address, ADDRESS_LEN);

/// Random salt prepended to committed data.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Salt(pub [u8; SALT_LEN]);
hex_bytes!(Salt, SALT_LEN);

impl Salt {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut salt = [0u8; SALT_LEN];
        rng.fill_bytes(&mut salt);
        Salt(salt)
    }
}

/// Detached Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);
hex_bytes!(Signature, SIGNATURE_LEN);

/// Verification key followed by encryption key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    /// Parses and validates a 64-byte public key.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::PublicKeyLength(bytes.len()))?;
        let vk: [u8; 32] = arr[..32].try_into().expect("split");
        VerifyingKey::from_bytes(&vk).map_err(|_| CryptoError::InvalidPublicKey)?;
        Ok(PublicKey(arr))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    fn verifying_key(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(self.0[..32].try_into().expect("split")).ok()
    }

    fn dh_key(&self) -> DhPublic {
        let raw: [u8; 32] = self.0[32..].try_into().expect("split");
        DhPublic::from(raw)
    }

    pub fn address(&self) -> Address {
        derive_address(self)
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

impl FromStr for PublicKey {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
        PublicKey::from_bytes(&raw)
    }
}

/// Secret half of an identity. Holds the seed; both secret keys derive from it.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; SEED_LEN]);

impl SecretKey {
    pub fn as_bytes(&self) -> &[u8; SEED_LEN] {
        &self.0
    }

    fn signing_key(&self) -> SigningKey {
        SigningKey::from_bytes(&self.0)
    }

    fn dh_secret(&self) -> StaticSecret {
        let mut h = Sha256::new();
        h.update(ENC_KEY_DOMAIN);
        h.update(self.0);
        StaticSecret::from(<[u8; 32]>::from(h.finalize()))
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub public_key: PublicKey,
    pub secret_key: SecretKey,
}

impl KeyPair {
    pub fn address(&self) -> Address {
        derive_address(&self.public_key)
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(&self.secret_key, message)
    }
}

/// Deterministically derives an identity from 32 bytes of entropy.
pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: [u8; SEED_LEN] = seed
        .try_into()
        .map_err(|_| CryptoError::SeedLength(seed.len()))?;
    let secret_key = SecretKey(seed);
    let vk = secret_key.signing_key().verifying_key();
    let dh = DhPublic::from(&secret_key.dh_secret());
    let mut pk = [0u8; PUBLIC_KEY_LEN];
    pk[..32].copy_from_slice(vk.as_bytes());
    pk[32..].copy_from_slice(dh.as_bytes());
    Ok(KeyPair {
        public_key: PublicKey(pk),
        secret_key,
    })
}

pub fn derive_address(public_key: &PublicKey) -> Address {
    let digest = sha256(public_key.as_bytes());
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&digest.0[..ADDRESS_LEN]);
    Address(out)
}

/// Parses raw key bytes and derives the address.
pub fn derive_address_from_bytes(public_key: &[u8]) -> Result<Address, CryptoError> {
    Ok(derive_address(&PublicKey::from_bytes(public_key)?))
}

/// Binding commitment `SHA-256(salt || data)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Commitment {
    pub digest: Digest,
}

impl Commitment {
    /// Hashes without length checks. Used for known-answer vectors.
    pub fn compute_unchecked(salt: &[u8], data: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(salt);
        h.update(data);
        Commitment {
            digest: Digest(h.finalize().into()),
        }
    }
}

pub fn commit(salt: &[u8], data: &[u8]) -> Result<Commitment, CryptoError> {
    if salt.len() != SALT_LEN {
        return Err(CryptoError::SaltLength(salt.len()));
    }
    if data.is_empty() {
        return Err(CryptoError::EmptyData);
    }
    Ok(Commitment::compute_unchecked(salt, data))
}

pub fn verify_commitment(salt: &[u8], data: &[u8], commitment: &Commitment) -> bool {
    Commitment::compute_unchecked(salt, data) == *commitment
}

pub fn sign(secret_key: &SecretKey, message: &[u8]) -> Signature {
    Signature(secret_key.signing_key().sign(message).to_bytes())
}

/// Never panics; malformed keys or signatures simply fail verification.
pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Some(vk) = public_key.verifying_key() else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify_strict(message, &sig).is_ok()
}

/// Ephemeral X25519 key ‖ nonce ‖ ChaCha20-Poly1305 ciphertext.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext(pub Vec<u8>);

impl Ciphertext {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ciphertext({} bytes)", self.0.len())
    }
}

fn envelope_key(shared: &[u8; 32], ephemeral: &DhPublic, recipient: &DhPublic) -> Key {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral.as_bytes());
    salt[32..].copy_from_slice(recipient.as_bytes());
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; 32];
    hk.expand(ENVELOPE_INFO, &mut okm).expect("32 bytes is a valid HKDF length");
    Key::from(okm)
}

pub fn encrypt_for<R: RngCore + CryptoRng + ?Sized>(
    public_key: &PublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<Ciphertext, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let mut eph_seed = [0u8; 32];
    rng.fill_bytes(&mut eph_seed);
    let eph_secret = StaticSecret::from(eph_seed);
    let eph_public = DhPublic::from(&eph_secret);
    let recipient = public_key.dh_key();
    let shared = eph_secret.diffie_hellman(&recipient);
    let key = envelope_key(shared.as_bytes(), &eph_public, &recipient);

    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let sealed = ChaCha20Poly1305::new(&key)
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .map_err(|_| CryptoError::DecryptionFailed)?;

    let mut out = Vec::with_capacity(EPHEMERAL_LEN + NONCE_LEN + sealed.len());
    out.extend_from_slice(eph_public.as_bytes());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&sealed);
    Ok(Ciphertext(out))
}

pub fn decrypt(secret_key: &SecretKey, ciphertext: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    let raw = &ciphertext.0;
    if raw.len() < EPHEMERAL_LEN + NONCE_LEN + 16 {
        return Err(CryptoError::DecryptionFailed);
    }
    let eph: [u8; 32] = raw[..EPHEMERAL_LEN].try_into().expect("split");
    let eph_public = DhPublic::from(eph);
    let nonce = &raw[EPHEMERAL_LEN..EPHEMERAL_LEN + NONCE_LEN];
    let body = &raw[EPHEMERAL_LEN + NONCE_LEN..];

    let secret = secret_key.dh_secret();
    let recipient = DhPublic::from(&secret);
    let shared = secret.diffie_hellman(&eph_public);
    if !shared.was_contributory() {
        return Err(CryptoError::DecryptionFailed);
    }
    let key = envelope_key(shared.as_bytes(), &eph_public, &recipient);
    ChaCha20Poly1305::new(&key)
        .decrypt(Nonce::from_slice(nonce), body)
        .map_err(|_| CryptoError::DecryptionFailed)
}
