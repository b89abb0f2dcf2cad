//! Canonical binary encoding used for hashing, signing, the ledger journal
//! and the wire.
//!
//! ```text
//! tag (1 byte) || field_1 || field_2 || ...
//! field = length (4 bytes, big-endian) || bytes
//! ```
//!
//! Integers are 8-byte big-endian inside their field. Nested messages are
//! encoded as a field holding the nested message's own canonical bytes.
//! Sets are sorted by their encoded element bytes before concatenation, so
//! equal sets always produce equal bytes.

use thiserror::Error;

use crate::crypto::{sha256, Digest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("expected tag {expected:#04x}, found {found:#04x}")]
    Tag { expected: u8, found: u8 },
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("field has {got} bytes, expected {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("invalid field value: {0}")]
    Invalid(String),
    #[error("empty input")]
    Empty,
}

impl From<crate::crypto::CryptoError> for CodecError {
    fn from(e: crate::crypto::CryptoError) -> Self {
        CodecError::Invalid(e.to_string())
    }
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(tag: u8) -> Self {
        Encoder { buf: vec![tag] }
    }

    pub fn bytes(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("field exceeds 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.bytes(&[v])
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn message<T: Canonical>(&mut self, m: &T) -> &mut Self {
        self.bytes(&m.canonical_bytes())
    }

    /// Ordered sequence: one field of length-prefixed elements.
    pub fn list<I>(&mut self, items: I) -> &mut Self
    where
        I: IntoIterator,
        I::Item: AsRef<[u8]>,
    {
        let mut inner = Vec::new();
        for item in items {
            let item = item.as_ref();
            inner.extend_from_slice(&(item.len() as u32).to_be_bytes());
            inner.extend_from_slice(item);
        }
        self.bytes(&inner)
    }

    /// Unordered collection: elements sorted before encoding.
    pub fn set<I>(&mut self, items: I) -> &mut Self
    where
        I: IntoIterator,
        I::Item: AsRef<[u8]>,
    {
        let mut items: Vec<Vec<u8>> = items.into_iter().map(|i| i.as_ref().to_vec()).collect();
        items.sort();
        self.list(items)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Reads the leading tag and checks it.
    pub fn new(buf: &'a [u8], tag: u8) -> Result<Self, CodecError> {
        let found = *buf.first().ok_or(CodecError::Empty)?;
        if found != tag {
            return Err(CodecError::Tag { expected: tag, found });
        }
        Ok(Decoder { buf, pos: 1 })
    }

    /// Decoder over a list body (no tag).
    fn untagged(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let end = self.pos + 4;
        if end > self.buf.len() {
            return Err(CodecError::Truncated(self.pos));
        }
        let len = u32::from_be_bytes(self.buf[self.pos..end].try_into().expect("4 bytes")) as usize;
        let stop = end
            .checked_add(len)
            .filter(|&s| s <= self.buf.len())
            .ok_or(CodecError::Truncated(end))?;
        self.pos = stop;
        Ok(&self.buf[end..stop])
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let b = self.bytes()?;
        b.try_into().map_err(|_| CodecError::FieldLength {
            expected: N,
            got: b.len(),
        })
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.fixed::<8>()?))
    }

    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_be_bytes(self.fixed::<8>()?))
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.fixed::<1>()?[0])
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|e| CodecError::Invalid(e.to_string()))
    }

    pub fn message<T: Canonical>(&mut self) -> Result<T, CodecError> {
        T::from_canonical(self.bytes()?)
    }

    pub fn list(&mut self) -> Result<Vec<&'a [u8]>, CodecError> {
        let body = self.bytes()?;
        let mut inner = Decoder::untagged(body);
        let mut out = Vec::new();
        while inner.pos < body.len() {
            out.push(inner.bytes()?);
        }
        Ok(out)
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}

/// A type with a fixed canonical byte form.
pub trait Canonical: Sized {
    const TAG: u8;

    fn encode_fields(&self, enc: &mut Encoder);

    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, CodecError>;

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(Self::TAG);
        self.encode_fields(&mut enc);
        enc.finish()
    }

    fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes, Self::TAG)?;
        let v = Self::decode_fields(&mut dec)?;
        dec.finish()?;
        Ok(v)
    }

    fn digest(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }
}
