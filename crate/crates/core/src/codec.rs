//! Canonical byte encoding.
//!
//! Every signed, hashed or transmitted structure is encoded as its fields in
//! declaration order, each written as a 4-byte big-endian length followed by
//! the raw field bytes. Composite fields nest: a struct-valued field carries
//! the full encoding of that struct, a list-valued field carries the
//! concatenation of one length-prefixed entry per element, and an optional
//! field is a list of zero or one elements. Integers are fixed-width
//! big-endian.

use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeErrorKind {
    /// Fewer bytes remain than a length prefix announced.
    Truncated,
    /// Bytes remain after the outermost structure was read.
    TrailingBytes,
    /// A fixed-width field has the wrong length.
    BadLength { expected: usize, found: usize },
    /// An enum discriminant outside the known set.
    UnknownTag(u8),
    /// Structurally well-framed but semantically invalid.
    Invalid(&'static str),
}

/// Decoding failure with the byte offset (relative to the buffer handed to
/// the outermost decoder) where it was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DecodeErrorKind::Truncated => write!(f, "truncated input at byte {}", self.offset),
            DecodeErrorKind::TrailingBytes => write!(f, "trailing bytes at byte {}", self.offset),
            DecodeErrorKind::BadLength { expected, found } => {
                write!(f, "field at byte {} has length {found}, expected {expected}", self.offset)
            }
            DecodeErrorKind::UnknownTag(t) => write!(f, "unknown tag {t} at byte {}", self.offset),
            DecodeErrorKind::Invalid(what) => write!(f, "invalid {what} at byte {}", self.offset),
        }
    }
}

pub trait Encode {
    fn encode_fields(&self, enc: &mut Encoder);

    fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_fields(&mut enc);
        enc.finish()
    }
}

pub trait Decode: Sized {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let value = Self::decode_fields(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn nested<T: Encode + ?Sized>(&mut self, value: &T) -> &mut Self {
        let inner = value.to_bytes();
        self.bytes(&inner)
    }

    pub fn list<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        let mut inner = Encoder::new();
        for item in items {
            inner.nested(item);
        }
        self.bytes(&inner.buf)
    }

    pub fn option<T: Encode>(&mut self, value: Option<&T>) -> &mut Self {
        let mut inner = Encoder::new();
        if let Some(v) = value {
            inner.nested(v);
        }
        self.bytes(&inner.buf)
    }

    pub fn byte_list(&mut self, items: &[Vec<u8>]) -> &mut Self {
        let mut inner = Encoder::new();
        for item in items {
            inner.bytes(item);
        }
        self.bytes(&inner.buf)
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0, base: 0 }
    }

    fn sub(&self, data: &'a [u8], start: usize) -> Decoder<'a> {
        Decoder { data, pos: 0, base: self.base + start }
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn error(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError { offset: self.offset(), kind }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn field_with_start(&mut self) -> Result<(&'a [u8], usize), DecodeError> {
        let rest = &self.data[self.pos..];
        if rest.len() < 4 {
            return Err(self.error(DecodeErrorKind::Truncated));
        }
        let len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        if rest.len() - 4 < len {
            return Err(self.error(DecodeErrorKind::Truncated));
        }
        let start = self.pos + 4;
        self.pos = start + len;
        Ok((&self.data[start..start + len], start))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        self.field_with_start().map(|(f, _)| f)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let at = self.offset();
        let field = self.bytes()?;
        field.try_into().map_err(|_| DecodeError {
            offset: at,
            kind: DecodeErrorKind::BadLength { expected: N, found: field.len() },
        })
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn nested<T: Decode>(&mut self) -> Result<T, DecodeError> {
        let (field, start) = self.field_with_start()?;
        let mut inner = self.sub(field, start);
        let value = T::decode_fields(&mut inner)?;
        inner.finish()?;
        Ok(value)
    }

    pub fn list<T: Decode>(&mut self) -> Result<Vec<T>, DecodeError> {
        let (field, start) = self.field_with_start()?;
        let mut inner = self.sub(field, start);
        let mut out = Vec::new();
        while !inner.is_empty() {
            out.push(inner.nested()?);
        }
        Ok(out)
    }

    pub fn option<T: Decode>(&mut self) -> Result<Option<T>, DecodeError> {
        let at = self.offset();
        let mut items = self.list::<T>()?;
        match items.len() {
            0 => Ok(None),
            1 => Ok(items.pop()),
            _ => Err(DecodeError { offset: at, kind: DecodeErrorKind::Invalid("optional field") }),
        }
    }

    pub fn byte_list(&mut self) -> Result<Vec<Vec<u8>>, DecodeError> {
        let (field, start) = self.field_with_start()?;
        let mut inner = self.sub(field, start);
        let mut out = Vec::new();
        while !inner.is_empty() {
            out.push(inner.bytes()?.to_vec());
        }
        Ok(out)
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.pos != self.data.len() {
            return Err(self.error(DecodeErrorKind::TrailingBytes));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[derive(Debug, PartialEq)]
    struct Pair {
        a: u64,
        b: Vec<u8>,
    }

    impl Encode for Pair {
        fn encode_fields(&self, enc: &mut Encoder) {
            enc.u64(self.a).bytes(&self.b);
        }
    }

    impl Decode for Pair {
        fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
            Ok(Pair { a: dec.u64()?, b: dec.bytes()?.to_vec() })
        }
    }

    #[test]
    fn length_prefixed_layout() {
        let p = Pair { a: 1, b: vec![0xaa, 0xbb] };
        assert_eq!(p.to_bytes(), vec![0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 2, 0xaa, 0xbb]);
    }

    #[test]
    fn list_and_option_round_trip() {
        let items = vec![Pair { a: 1, b: vec![] }, Pair { a: 2, b: vec![9] }];
        let mut enc = Encoder::new();
        enc.list(&items).option::<Pair>(None).option(Some(&items[1]));
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes);
        assert_eq!(dec.list::<Pair>().unwrap(), items);
        assert_eq!(dec.option::<Pair>().unwrap(), None);
        assert_eq!(dec.option::<Pair>().unwrap(), Some(Pair { a: 2, b: vec![9] }));
        dec.finish().unwrap();
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = Pair { a: 7, b: vec![1, 2, 3] }.to_bytes();
        let err = Pair::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err.kind, DecodeErrorKind::Truncated);
        assert_eq!(err.offset, 12);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = Pair { a: 7, b: vec![] }.to_bytes();
        bytes.push(0);
        assert_eq!(Pair::from_bytes(&bytes).unwrap_err().kind, DecodeErrorKind::TrailingBytes);
    }

    #[test]
    fn nested_errors_carry_absolute_offsets() {
        let mut enc = Encoder::new();
        enc.u8(1).bytes(&[0, 0, 0, 1, 5, 0, 0, 0, 4, 1]);
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes);
        dec.u8().unwrap();
        let err = dec.nested::<Pair>().unwrap_err();
        // inner field starts at 9; the bad u64 length prefix sits at its start
        assert_eq!(err.offset, 9);
        assert!(matches!(err.kind, DecodeErrorKind::BadLength { expected: 8, found: 1 }));
    }
}
