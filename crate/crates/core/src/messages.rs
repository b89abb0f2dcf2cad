//! Protocol messages exchanged between buyers, sellers, notaries and the
//! ledger, with their canonical encodings, constructors and validators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{
    self, commit, sha256, Address, Ciphertext, CryptoError, Digest, KeyPair, PublicKey, Salt,
    Signature, SALT_LEN,
};

pub mod tag {
    pub const PREDICATE: u8 = 0x01;
    pub const AUDIENCE: u8 = 0x02;
    pub const DATA_REQUEST: u8 = 0x03;
    pub const DATA_ORDER: u8 = 0x10;
    pub const NOTARY_TERMS: u8 = 0x11;
    pub const DATA_RESPONSE: u8 = 0x12;
    pub const NOTARY_CERTIFICATE: u8 = 0x13;
    pub const PAYLOAD_DELIVERY: u8 = 0x14;
    pub const NOTARIZATION_REQUEST: u8 = 0x15;
    pub const POSTED_ORDER: u8 = 0x16;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("minimum audit budget must be non-negative, got {0}")]
    NegativeBudget(i64),
    #[error("order carries an invalid buyer signature")]
    InvalidOrderSignature,
    #[error("chosen notary {0} is not in the order's notary list")]
    NotaryNotListed(Address),
    #[error("offered price {offered} differs from posted price {posted}")]
    PriceMismatch { offered: u64, posted: u64 },
    #[error("response does not belong to order {0}")]
    UnknownResponse(OrderId),
    #[error("response names notary {chosen}, not {signer}")]
    NotChosenNotary { chosen: Address, signer: Address },
    #[error("audience predicate has an empty attribute name")]
    EmptyAttribute,
    #[error("data request schema id is empty")]
    EmptySchema,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Identifier of a data order: SHA-256 of its canonical encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrderId(pub Digest);

impl fmt::Display for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OrderId({})", &self.0.to_hex()[..12])
    }
}

impl serde::Serialize for OrderId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

/// Content-addressed link to a terms text.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TermsLink(pub Digest);

impl TermsLink {
    pub fn of(text: &str) -> Self {
        TermsLink(sha256(text.as_bytes()))
    }

    pub fn matches(&self, text: &str) -> bool {
        *self == Self::of(text)
    }
}

// ---------------------------------------------------------------------------
// Audience and data request
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Comparator {
    Eq(String),
    Ne(String),
    /// Numeric comparison; non-numeric profile values never match.
    Ge(i64),
    Le(i64),
    In(BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Predicate {
    pub attribute: String,
    pub comparator: Comparator,
}

impl Predicate {
    pub fn new(attribute: impl Into<String>, comparator: Comparator) -> Result<Self, MessageError> {
        let attribute = attribute.into();
        if attribute.is_empty() {
            return Err(MessageError::EmptyAttribute);
        }
        Ok(Predicate {
            attribute,
            comparator,
        })
    }

    pub fn matches(&self, attributes: &BTreeMap<String, String>) -> bool {
        let Some(value) = attributes.get(&self.attribute) else {
            return false;
        };
        match &self.comparator {
            Comparator::Eq(v) => value == v,
            Comparator::Ne(v) => value != v,
            Comparator::Ge(n) => value.parse::<i64>().is_ok_and(|x| x >= *n),
            Comparator::Le(n) => value.parse::<i64>().is_ok_and(|x| x <= *n),
            Comparator::In(set) => set.contains(value),
        }
    }
}

impl Canonical for Predicate {
    const TAG: u8 = tag::PREDICATE;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.attribute);
        match &self.comparator {
            Comparator::Eq(v) => enc.u8(0).str(v),
            Comparator::Ne(v) => enc.u8(1).str(v),
            Comparator::Ge(n) => enc.u8(2).i64(*n),
            Comparator::Le(n) => enc.u8(3).i64(*n),
            Comparator::In(set) => enc.u8(4).set(set.iter().map(String::as_bytes)),
        };
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let attribute = dec.string()?;
        if attribute.is_empty() {
            return Err(CodecError::Invalid("empty attribute name".into()));
        }
        let comparator = match dec.u8()? {
            0 => Comparator::Eq(dec.string()?),
            1 => Comparator::Ne(dec.string()?),
            2 => Comparator::Ge(dec.i64()?),
            3 => Comparator::Le(dec.i64()?),
            4 => Comparator::In(
                dec.list()?
                    .into_iter()
                    .map(|b| String::from_utf8(b.to_vec()).map_err(|e| CodecError::Invalid(e.to_string())))
                    .collect::<Result<_, _>>()?,
            ),
            op => return Err(CodecError::Invalid(format!("comparator {op}"))),
        };
        Ok(Predicate {
            attribute,
            comparator,
        })
    }
}

/// Conjunction of predicates. Empty matches everyone.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Audience {
    pub predicates: BTreeSet<Predicate>,
}

impl Audience {
    pub fn new(predicates: impl IntoIterator<Item = Predicate>) -> Self {
        Audience {
            predicates: predicates.into_iter().collect(),
        }
    }

    pub fn matches(&self, attributes: &BTreeMap<String, String>) -> bool {
        self.predicates.iter().all(|p| p.matches(attributes))
    }
}

impl Canonical for Audience {
    const TAG: u8 = tag::AUDIENCE;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.set(self.predicates.iter().map(Canonical::canonical_bytes));
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let predicates = dec
            .list()?
            .into_iter()
            .map(Predicate::from_canonical)
            .collect::<Result<_, _>>()?;
        Ok(Audience { predicates })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataRequest {
    pub schema_id: String,
    pub fields: Vec<String>,
}

impl DataRequest {
    pub fn new(schema_id: impl Into<String>, fields: Vec<String>) -> Result<Self, MessageError> {
        let schema_id = schema_id.into();
        if schema_id.is_empty() {
            return Err(MessageError::EmptySchema);
        }
        Ok(DataRequest { schema_id, fields })
    }
}

impl Canonical for DataRequest {
    const TAG: u8 = tag::DATA_REQUEST;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.schema_id)
            .list(self.fields.iter().map(String::as_bytes));
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let schema_id = dec.string()?;
        if schema_id.is_empty() {
            return Err(CodecError::Invalid("empty schema id".into()));
        }
        let fields = dec
            .list()?
            .into_iter()
            .map(|b| String::from_utf8(b.to_vec()).map_err(|e| CodecError::Invalid(e.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(DataRequest { schema_id, fields })
    }
}

// ---------------------------------------------------------------------------
// Data order
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataOrder {
    pub audience: Audience,
    pub request: DataRequest,
    pub buyer_key: PublicKey,
    pub upload_url: String,
    pub min_audit_budget: u64,
    pub terms: TermsLink,
    pub buyer_signature: Signature,
}

impl DataOrder {
    fn encode_body(&self, enc: &mut Encoder) {
        enc.message(&self.audience)
            .message(&self.request)
            .bytes(self.buyer_key.as_bytes())
            .str(&self.upload_url)
            .u64(self.min_audit_budget)
            .bytes(self.terms.0.as_bytes());
    }

    /// Bytes covered by the buyer signature: every field before it.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(Self::TAG);
        self.encode_body(&mut enc);
        enc.finish()
    }

    pub fn id(&self) -> OrderId {
        OrderId(self.digest())
    }

    pub fn buyer_address(&self) -> Address {
        self.buyer_key.address()
    }

    pub fn verify_signature(&self) -> bool {
        crypto::verify(&self.buyer_key, &self.signing_bytes(), &self.buyer_signature)
    }
}

impl Canonical for DataOrder {
    const TAG: u8 = tag::DATA_ORDER;

    fn encode_fields(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.bytes(self.buyer_signature.as_bytes());
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(DataOrder {
            audience: dec.message()?,
            request: dec.message()?,
            buyer_key: PublicKey::from_bytes(dec.bytes()?)?,
            upload_url: dec.string()?,
            min_audit_budget: dec.u64()?,
            terms: TermsLink(Digest(dec.fixed()?)),
            buyer_signature: Signature(dec.fixed()?),
        })
    }
}

pub fn build_data_order(
    buyer: &KeyPair,
    audience: Audience,
    request: DataRequest,
    upload_url: impl Into<String>,
    min_audit_budget: i64,
    terms: TermsLink,
) -> Result<DataOrder, MessageError> {
    let min_audit_budget =
        u64::try_from(min_audit_budget).map_err(|_| MessageError::NegativeBudget(min_audit_budget))?;
    let mut order = DataOrder {
        audience,
        request,
        buyer_key: buyer.public_key,
        upload_url: upload_url.into(),
        min_audit_budget,
        terms,
        buyer_signature: Signature([0; 64]),
    };
    order.buyer_signature = buyer.sign(&order.signing_bytes());
    Ok(order)
}

// ---------------------------------------------------------------------------
// Notary terms
// ---------------------------------------------------------------------------

/// A notary's countersignature on one order: its fee and service terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotaryTerms {
    pub notary_address: Address,
    pub notary_key: PublicKey,
    pub fee: u64,
    pub service_terms: TermsLink,
    pub order_digest: OrderId,
    pub notary_signature: Signature,
}

impl NotaryTerms {
    /// The signature covers (order digest, fee, service terms).
    pub fn signing_bytes(order_digest: &OrderId, fee: u64, service_terms: &TermsLink) -> Vec<u8> {
        let mut enc = Encoder::new(tag::NOTARY_TERMS);
        enc.bytes(order_digest.0.as_bytes())
            .u64(fee)
            .bytes(service_terms.0.as_bytes());
        enc.finish()
    }

    pub fn verify(&self) -> bool {
        self.notary_key.address() == self.notary_address
            && crypto::verify(
                &self.notary_key,
                &Self::signing_bytes(&self.order_digest, self.fee, &self.service_terms),
                &self.notary_signature,
            )
    }

    pub fn verify_for(&self, order: &OrderId) -> bool {
        self.order_digest == *order && self.verify()
    }
}

impl Canonical for NotaryTerms {
    const TAG: u8 = tag::NOTARY_TERMS;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(self.notary_address.as_bytes())
            .bytes(self.notary_key.as_bytes())
            .u64(self.fee)
            .bytes(self.service_terms.0.as_bytes())
            .bytes(self.order_digest.0.as_bytes())
            .bytes(self.notary_signature.as_bytes());
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(NotaryTerms {
            notary_address: Address(dec.fixed()?),
            notary_key: PublicKey::from_bytes(dec.bytes()?)?,
            fee: dec.u64()?,
            service_terms: TermsLink(Digest(dec.fixed()?)),
            order_digest: OrderId(Digest(dec.fixed()?)),
            notary_signature: Signature(dec.fixed()?),
        })
    }
}

pub fn countersign_order(
    notary: &KeyPair,
    order: &DataOrder,
    fee: u64,
    service_terms: TermsLink,
) -> Result<NotaryTerms, MessageError> {
    if !order.verify_signature() {
        return Err(MessageError::InvalidOrderSignature);
    }
    let order_digest = order.id();
    Ok(NotaryTerms {
        notary_address: notary.address(),
        notary_key: notary.public_key,
        fee,
        service_terms,
        order_digest,
        notary_signature: notary.sign(&NotaryTerms::signing_bytes(&order_digest, fee, &service_terms)),
    })
}

/// An order as announced to sellers: the order, its notary list and price.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostedOrder {
    pub order: DataOrder,
    pub notaries: Vec<NotaryTerms>,
    pub price: u64,
}

impl PostedOrder {
    pub fn id(&self) -> OrderId {
        self.order.id()
    }

    pub fn notary(&self, address: &Address) -> Option<&NotaryTerms> {
        self.notaries.iter().find(|n| n.notary_address == *address)
    }
}

impl Canonical for PostedOrder {
    const TAG: u8 = tag::POSTED_ORDER;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.message(&self.order)
            .list(self.notaries.iter().map(Canonical::canonical_bytes))
            .u64(self.price);
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(PostedOrder {
            order: dec.message()?,
            notaries: dec
                .list()?
                .into_iter()
                .map(NotaryTerms::from_canonical)
                .collect::<Result<_, _>>()?,
            price: dec.u64()?,
        })
    }
}

// ---------------------------------------------------------------------------
// Data response
// ---------------------------------------------------------------------------

/// A seller's signed offer. Commits to the data without carrying it; the
/// salt stays with the seller until delivery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataResponse {
    pub payment_address: Address,
    pub seller_key: PublicKey,
    pub order_ref: OrderId,
    pub price: u64,
    pub commitment: crypto::Commitment,
    pub chosen_notary: Address,
    pub terms: TermsLink,
    pub seller_signature: Signature,
}

impl DataResponse {
    /// Signs the given fields as-is, with no protocol checks.
    #[allow(clippy::too_many_arguments)]
    pub fn new_signed(
        seller: &KeyPair,
        order_ref: OrderId,
        price: u64,
        commitment: crypto::Commitment,
        chosen_notary: Address,
        terms: TermsLink,
    ) -> Self {
        let mut r = DataResponse {
            payment_address: seller.address(),
            seller_key: seller.public_key,
            order_ref,
            price,
            commitment,
            chosen_notary,
            terms,
            seller_signature: Signature([0; 64]),
        };
        r.seller_signature = seller.sign(&r.signing_bytes());
        r
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.bytes(self.payment_address.as_bytes())
            .bytes(self.seller_key.as_bytes())
            .bytes(self.order_ref.0.as_bytes())
            .u64(self.price)
            .bytes(self.commitment.digest.as_bytes())
            .bytes(self.chosen_notary.as_bytes())
            .bytes(self.terms.0.as_bytes());
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(Self::TAG);
        self.encode_body(&mut enc);
        enc.finish()
    }

    pub fn verify_signature(&self) -> bool {
        self.seller_key.address() == self.payment_address
            && crypto::verify(&self.seller_key, &self.signing_bytes(), &self.seller_signature)
    }
}

impl Canonical for DataResponse {
    const TAG: u8 = tag::DATA_RESPONSE;

    fn encode_fields(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.bytes(self.seller_signature.as_bytes());
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(DataResponse {
            payment_address: Address(dec.fixed()?),
            seller_key: PublicKey::from_bytes(dec.bytes()?)?,
            order_ref: OrderId(Digest(dec.fixed()?)),
            price: dec.u64()?,
            commitment: crypto::Commitment {
                digest: Digest(dec.fixed()?),
            },
            chosen_notary: Address(dec.fixed()?),
            terms: TermsLink(Digest(dec.fixed()?)),
            seller_signature: Signature(dec.fixed()?),
        })
    }
}

/// Builds a response to `posted`, returning it with the salt the seller
/// must keep until delivery.
pub fn build_data_response<R: RngCore + ?Sized>(
    seller: &KeyPair,
    posted: &PostedOrder,
    price: u64,
    data: &[u8],
    chosen_notary: Address,
    rng: &mut R,
) -> Result<(DataResponse, Salt), MessageError> {
    if posted.notary(&chosen_notary).is_none() {
        return Err(MessageError::NotaryNotListed(chosen_notary));
    }
    if price != posted.price {
        return Err(MessageError::PriceMismatch {
            offered: price,
            posted: posted.price,
        });
    }
    let salt = Salt::random(rng);
    let commitment = commit(salt.as_bytes(), data)?;
    let response = DataResponse::new_signed(
        seller,
        posted.id(),
        price,
        commitment,
        chosen_notary,
        posted.order.terms,
    );
    Ok((response, salt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseRejection {
    #[error("seller signature does not verify")]
    Signature,
    #[error("response refers to a different order")]
    OrderMismatch,
    #[error("price differs from the posted price")]
    PriceMismatch,
    #[error("chosen notary is not in the notary list")]
    NotaryNotListed,
}

/// Buyer- and ledger-side screening of a response.
pub fn validate_response(
    response: &DataResponse,
    order_id: &OrderId,
    price: u64,
    notaries: &[NotaryTerms],
) -> Result<(), ResponseRejection> {
    if !response.verify_signature() {
        return Err(ResponseRejection::Signature);
    }
    if response.order_ref != *order_id {
        return Err(ResponseRejection::OrderMismatch);
    }
    if response.price != price {
        return Err(ResponseRejection::PriceMismatch);
    }
    if !notaries
        .iter()
        .any(|n| n.notary_address == response.chosen_notary)
    {
        return Err(ResponseRejection::NotaryNotListed);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Certificates, deliveries, notarization requests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Verdict {
    /// (a) the data will not be notarized.
    #[serde(rename = "a")]
    NotNotarized,
    /// (b) notarized and valid.
    #[serde(rename = "b")]
    NotarizedValid,
    /// (c) notarized and invalid.
    #[serde(rename = "c")]
    NotarizedInvalid,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [
        Verdict::NotNotarized,
        Verdict::NotarizedValid,
        Verdict::NotarizedInvalid,
    ];

    pub fn code(self) -> u8 {
        match self {
            Verdict::NotNotarized => 0,
            Verdict::NotarizedValid => 1,
            Verdict::NotarizedInvalid => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn letter(self) -> char {
        (b'a' + self.code()) as char
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        match s {
            "a" => Some(Verdict::NotNotarized),
            "b" => Some(Verdict::NotarizedValid),
            "c" => Some(Verdict::NotarizedInvalid),
            _ => None,
        }
    }

    pub fn is_notarized(self) -> bool {
        self != Verdict::NotNotarized
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotaryCertificate {
    pub order_ref: OrderId,
    pub response_digest: Digest,
    pub verdict: Verdict,
    pub notary_signature: Signature,
}

impl NotaryCertificate {
    fn encode_body(&self, enc: &mut Encoder) {
        enc.bytes(self.order_ref.0.as_bytes())
            .bytes(self.response_digest.as_bytes())
            .u8(self.verdict.code());
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(Self::TAG);
        self.encode_body(&mut enc);
        enc.finish()
    }

    /// Signs an arbitrary verdict. Used by notaries and adversarial tests.
    pub fn new_signed(signer: &KeyPair, order_ref: OrderId, response_digest: Digest, verdict: Verdict) -> Self {
        let mut c = NotaryCertificate {
            order_ref,
            response_digest,
            verdict,
            notary_signature: Signature([0; 64]),
        };
        c.notary_signature = signer.sign(&c.signing_bytes());
        c
    }

    pub fn verify_signature(&self, notary_key: &PublicKey) -> bool {
        crypto::verify(notary_key, &self.signing_bytes(), &self.notary_signature)
    }

    /// True iff the certificate is for exactly this (order, response) and
    /// signed by `notary_key`.
    pub fn validates(&self, notary_key: &PublicKey, order: &OrderId, response: &DataResponse) -> bool {
        self.order_ref == *order
            && self.response_digest == response.digest()
            && self.verify_signature(notary_key)
    }
}

impl Canonical for NotaryCertificate {
    const TAG: u8 = tag::NOTARY_CERTIFICATE;

    fn encode_fields(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.bytes(self.notary_signature.as_bytes());
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(NotaryCertificate {
            order_ref: OrderId(Digest(dec.fixed()?)),
            response_digest: Digest(dec.fixed()?),
            verdict: Verdict::from_code(dec.u8()?)
                .ok_or_else(|| CodecError::Invalid("verdict".into()))?,
            notary_signature: Signature(dec.fixed()?),
        })
    }
}

pub fn issue_certificate(
    notary: &KeyPair,
    order_ref: &OrderId,
    response: &DataResponse,
    verdict: Verdict,
) -> Result<NotaryCertificate, MessageError> {
    if response.order_ref != *order_ref {
        return Err(MessageError::UnknownResponse(*order_ref));
    }
    if response.chosen_notary != notary.address() {
        return Err(MessageError::NotChosenNotary {
            chosen: response.chosen_notary,
            signer: notary.address(),
        });
    }
    Ok(NotaryCertificate::new_signed(
        notary,
        *order_ref,
        response.digest(),
        verdict,
    ))
}

/// Packs `salt || data` for encryption.
pub fn seal_payload(salt: &Salt, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SALT_LEN + data.len());
    out.extend_from_slice(salt.as_bytes());
    out.extend_from_slice(data);
    out
}

/// Splits a decrypted payload into salt and data.
pub fn open_payload(plaintext: &[u8]) -> Option<(Salt, &[u8])> {
    if plaintext.len() <= SALT_LEN {
        return None;
    }
    let salt = Salt::from_slice(&plaintext[..SALT_LEN]).ok()?;
    Some((salt, &plaintext[SALT_LEN..]))
}

/// Seller upload: `salt || data` encrypted to the buyer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadDelivery {
    pub response_digest: Digest,
    pub ciphertext: Ciphertext,
}

impl PayloadDelivery {
    pub fn seal<R: RngCore + CryptoRng + ?Sized>(
        response: &DataResponse,
        buyer_key: &PublicKey,
        salt: &Salt,
        data: &[u8],
        rng: &mut R,
    ) -> Result<Self, MessageError> {
        Ok(PayloadDelivery {
            response_digest: response.digest(),
            ciphertext: crypto::encrypt_for(buyer_key, &seal_payload(salt, data), rng)?,
        })
    }
}

impl Canonical for PayloadDelivery {
    const TAG: u8 = tag::PAYLOAD_DELIVERY;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(self.response_digest.as_bytes())
            .bytes(self.ciphertext.as_bytes());
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(PayloadDelivery {
            response_digest: Digest(dec.fixed()?),
            ciphertext: Ciphertext(dec.bytes()?.to_vec()),
        })
    }
}

/// Buyer asks the chosen notary for a certificate. The audit payload is the
/// delivered `salt || data` re-encrypted to the notary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotarizationRequest {
    pub order_ref: OrderId,
    pub response: DataResponse,
    pub force_audit: bool,
    pub audit_payload: Option<Ciphertext>,
}

impl Canonical for NotarizationRequest {
    const TAG: u8 = tag::NOTARIZATION_REQUEST;

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(self.order_ref.0.as_bytes())
            .message(&self.response)
            .u8(self.force_audit as u8)
            .list(self.audit_payload.iter().map(Ciphertext::as_bytes));
    }

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let order_ref = OrderId(Digest(dec.fixed()?));
        let response = dec.message()?;
        let force_audit = match dec.u8()? {
            0 => false,
            1 => true,
            b => return Err(CodecError::Invalid(format!("flag {b}"))),
        };
        let mut payloads = dec.list()?;
        if payloads.len() > 1 {
            return Err(CodecError::Invalid("more than one audit payload".into()));
        }
        Ok(NotarizationRequest {
            order_ref,
            response,
            force_audit,
            audit_payload: payloads.pop().map(|b| Ciphertext(b.to_vec())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn kp(n: u8) -> KeyPair {
        crypto::generate_keypair(&[n; 32]).unwrap()
    }

    fn order(budget: i64) -> DataOrder {
        let audience = Audience::new([
            Predicate::new("country", Comparator::Eq("AR".into())).unwrap(),
            Predicate::new("age", Comparator::Ge(18)).unwrap(),
        ]);
        build_data_order(
            &kp(1),
            audience,
            DataRequest::new("cc", vec!["amount".into()]).unwrap(),
            "https://buyer/upload",
            budget,
            TermsLink::of("use for model training only"),
        )
        .unwrap()
    }

    fn posted() -> PostedOrder {
        let order = order(10);
        let terms = countersign_order(&kp(2), &order, 2, TermsLink::of("notary tos")).unwrap();
        PostedOrder {
            order,
            notaries: vec![terms],
            price: 5,
        }
    }

    fn attrs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn order_signature_and_budget() {
        let o = order(0);
        assert!(o.verify_signature());
        assert_eq!(o.min_audit_budget, 0);
        let err = build_data_order(
            &kp(1),
            Audience::default(),
            DataRequest::new("x", vec![]).unwrap(),
            "u",
            -1,
            TermsLink::of("t"),
        );
        assert_eq!(err, Err(MessageError::NegativeBudget(-1)));
        assert_ne!(order(3).canonical_bytes(), order(4).canonical_bytes());
    }

    #[test]
    fn audience_matching() {
        let a = order(1).audience;
        assert!(a.matches(&attrs(&[("country", "AR"), ("age", "30")])));
        assert!(!a.matches(&attrs(&[("country", "BR"), ("age", "30")])));
        assert!(!a.matches(&attrs(&[("country", "AR"), ("age", "12")])));
        assert!(!a.matches(&attrs(&[("country", "AR"), ("age", "thirty")])));
        assert!(Audience::default().matches(&attrs(&[])));
        let set = Predicate::new(
            "region",
            Comparator::In(["north".to_string(), "south".to_string()].into()),
        )
        .unwrap();
        assert!(set.matches(&attrs(&[("region", "south")])));
        assert!(!set.matches(&attrs(&[("region", "east")])));
        assert_eq!(
            Predicate::new("", Comparator::Eq("x".into())),
            Err(MessageError::EmptyAttribute)
        );
    }

    #[test]
    fn countersign_checks_buyer_signature() {
        let o = order(10);
        let t = countersign_order(&kp(2), &o, 0, TermsLink::of("tos")).unwrap();
        assert!(t.verify_for(&o.id()));
        let mut tampered = o.clone();
        tampered.min_audit_budget = 11;
        assert_eq!(
            countersign_order(&kp(2), &tampered, 2, TermsLink::of("tos")),
            Err(MessageError::InvalidOrderSignature)
        );
        // Terms for a different order digest do not verify against this order.
        let mut wrong = t.clone();
        wrong.order_digest = OrderId(sha256(b"other"));
        assert!(!wrong.verify_for(&o.id()));
        assert!(!wrong.verify());
    }

    #[test]
    fn response_construction_rules() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = posted();
        let notary = p.notaries[0].notary_address;
        let (r, salt) = build_data_response(&kp(3), &p, 5, b"rows", notary, &mut rng).unwrap();
        assert!(r.verify_signature());
        assert!(crypto::verify_commitment(salt.as_bytes(), b"rows", &r.commitment));
        assert_eq!(validate_response(&r, &p.id(), 5, &p.notaries), Ok(()));

        assert_eq!(
            build_data_response(&kp(3), &p, 5, b"rows", kp(9).address(), &mut rng),
            Err(MessageError::NotaryNotListed(kp(9).address()))
        );
        assert_eq!(
            build_data_response(&kp(3), &p, 6, b"rows", notary, &mut rng),
            Err(MessageError::PriceMismatch { offered: 6, posted: 5 })
        );
    }

    #[test]
    fn validate_response_reports_each_failure() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let p = posted();
        let notary = p.notaries[0].notary_address;
        let (r, _) = build_data_response(&kp(3), &p, 5, b"rows", notary, &mut rng).unwrap();

        let mut forged = r.clone();
        forged.seller_signature = kp(4).sign(&r.signing_bytes());
        assert_eq!(validate_response(&forged, &p.id(), 5, &p.notaries), Err(ResponseRejection::Signature));

        let stale = OrderId(sha256(b"stale"));
        assert_eq!(validate_response(&r, &stale, 5, &p.notaries), Err(ResponseRejection::OrderMismatch));
        assert_eq!(validate_response(&r, &p.id(), 6, &p.notaries), Err(ResponseRejection::PriceMismatch));

        let off_list = DataResponse::new_signed(&kp(3), p.id(), 5, r.commitment, kp(9).address(), r.terms);
        assert_eq!(
            validate_response(&off_list, &p.id(), 5, &p.notaries),
            Err(ResponseRejection::NotaryNotListed)
        );
    }

    #[test]
    fn certificate_binds_one_response() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let p = posted();
        let notary_kp = kp(2);
        let n = notary_kp.address();
        let (r1, _) = build_data_response(&kp(3), &p, 5, b"one", n, &mut rng).unwrap();
        let (r2, _) = build_data_response(&kp(4), &p, 5, b"two", n, &mut rng).unwrap();
        let cert = issue_certificate(&notary_kp, &p.id(), &r1, Verdict::NotarizedValid).unwrap();
        assert!(cert.validates(&notary_kp.public_key, &p.id(), &r1));
        assert!(!cert.validates(&notary_kp.public_key, &p.id(), &r2));
        assert!(!cert.validates(&kp(5).public_key, &p.id(), &r1));

        let other = OrderId(sha256(b"x"));
        assert_eq!(
            issue_certificate(&notary_kp, &other, &r1, Verdict::NotNotarized),
            Err(MessageError::UnknownResponse(other))
        );
        assert!(matches!(
            issue_certificate(&kp(6), &p.id(), &r1, Verdict::NotNotarized),
            Err(MessageError::NotChosenNotary { .. })
        ));
    }

    #[test]
    fn signed_messages_survive_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let p = posted();
        let o2 = DataOrder::from_canonical(&p.order.canonical_bytes()).unwrap();
        assert!(o2.verify_signature());
        let t2 = NotaryTerms::from_canonical(&p.notaries[0].canonical_bytes()).unwrap();
        assert!(t2.verify_for(&p.id()));
        let n = p.notaries[0].notary_address;
        let (r, salt) = build_data_response(&kp(3), &p, 5, b"rows", n, &mut rng).unwrap();
        let r2 = DataResponse::from_canonical(&r.canonical_bytes()).unwrap();
        assert!(r2.verify_signature());
        let c = issue_certificate(&kp(2), &p.id(), &r, Verdict::NotarizedInvalid).unwrap();
        let c2 = NotaryCertificate::from_canonical(&c.canonical_bytes()).unwrap();
        assert!(c2.validates(&kp(2).public_key, &p.id(), &r2));
        assert_eq!(PostedOrder::from_canonical(&p.canonical_bytes()).unwrap(), p);

        let d = PayloadDelivery::seal(&r, &p.order.buyer_key, &salt, b"rows", &mut rng).unwrap();
        assert_eq!(PayloadDelivery::from_canonical(&d.canonical_bytes()).unwrap(), d);
        let plain = crypto::decrypt(&kp(1).secret_key, &d.ciphertext).unwrap();
        let (s, data) = open_payload(&plain).unwrap();
        assert!(crypto::verify_commitment(s.as_bytes(), data, &r.commitment));

        let req = NotarizationRequest {
            order_ref: p.id(),
            response: r.clone(),
            force_audit: true,
            audit_payload: Some(d.ciphertext.clone()),
        };
        assert_eq!(NotarizationRequest::from_canonical(&req.canonical_bytes()).unwrap(), req);
        let bare = NotarizationRequest {
            audit_payload: None,
            force_audit: false,
            ..req
        };
        assert_eq!(NotarizationRequest::from_canonical(&bare.canonical_bytes()).unwrap(), bare);
    }

    #[test]
    fn open_payload_requires_salt_and_data() {
        assert!(open_payload(&[0u8; 32]).is_none());
        assert!(open_payload(&[0u8; 33]).is_some());
    }
}
