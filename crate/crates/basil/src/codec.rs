//! Canonical byte encoding for everything that is hashed or signed.
//!
//! The layout is fixed: integers are big-endian and fixed width, variable
//! length fields carry a `u32` length prefix, optional fields carry a one byte
//! presence flag, and every top-level message starts with a one byte type tag.
//! Collections are encoded in their canonical (sorted) order, which the
//! constructors of the protocol types establish. See `docs/wire-format.md`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Type tags prefixed to every top-level signed or hashed message.
pub mod tag {
    pub const TXN_META: u8 = 0x01;
    pub const READ_REPLY: u8 = 0x02;
    pub const P1_REPLY: u8 = 0x03;
    pub const P2_REPLY: u8 = 0x04;
    pub const ELECT_FB: u8 = 0x05;
    pub const DEC_FB: u8 = 0x06;
    pub const BATCH_ROOT: u8 = 0x0b;
}

/// An encoded message. Equal logical values always produce equal bytes.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalBytes(#[serde(with = "crate::crypto::hex_bytes")] pub Vec<u8>);

impl CanonicalBytes {
    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[u8]> for CanonicalBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for CanonicalBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalBytes({})", hex::encode(&self.0))
    }
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tag(tag: u8) -> Self {
        let mut enc = Self::new();
        enc.put_u8(tag);
        enc
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    /// Fixed-width raw bytes (digests). No length prefix.
    pub fn put_fixed(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// Length-prefixed variable bytes.
    pub fn put_bytes(&mut self, v: &[u8]) {
        self.put_len(v.len());
        self.buf.extend_from_slice(v);
    }

    pub fn put_len(&mut self, len: usize) {
        let len = u32::try_from(len).expect("field longer than u32::MAX bytes");
        self.put_u32(len);
    }

    pub fn put<T: Encode + ?Sized>(&mut self, v: &T) {
        v.encode_into(self);
    }

    pub fn put_option<T: Encode>(&mut self, v: Option<&T>) {
        match v {
            None => self.put_u8(0),
            Some(v) => {
                self.put_u8(1);
                v.encode_into(self);
            }
        }
    }

    pub fn put_seq<'a, T: Encode + 'a>(&mut self, items: impl ExactSizeIterator<Item = &'a T>) {
        self.put_len(items.len());
        for item in items {
            item.encode_into(self);
        }
    }

    pub fn finish(self) -> CanonicalBytes {
        CanonicalBytes(self.buf)
    }
}

pub trait Encode {
    fn encode_into(&self, enc: &mut Encoder);

    fn encode(&self) -> CanonicalBytes {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }
}

/// Encode any protocol message into its canonical byte string.
pub fn encode<T: Encode + ?Sized>(message: &T) -> CanonicalBytes {
    let mut enc = Encoder::new();
    message.encode_into(&mut enc);
    enc.finish()
}

impl Encode for u64 {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u64(*self);
    }
}

impl Encode for [u8] {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_bytes(self);
    }
}

impl Encode for Vec<u8> {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_bytes(self);
    }
}

impl<A: Encode, B: Encode> Encode for (A, B) {
    fn encode_into(&self, enc: &mut Encoder) {
        self.0.encode_into(enc);
        self.1.encode_into(enc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_big_endian() {
        let mut enc = Encoder::new();
        enc.put_u64(0x0102_0304_0506_0708);
        enc.put_u32(9);
        assert_eq!(enc.finish().0, vec![1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 9]);
    }

    #[test]
    fn variable_fields_are_length_prefixed() {
        // ("ab", "c") and ("a", "bc") must not collide.
        let x = encode(&(b"ab".to_vec(), b"c".to_vec()));
        let y = encode(&(b"a".to_vec(), b"bc".to_vec()));
        assert_ne!(x, y);
        assert_eq!(x.0, vec![0, 0, 0, 2, b'a', b'b', 0, 0, 0, 1, b'c']);
    }

    #[test]
    fn option_flag() {
        let mut a = Encoder::new();
        a.put_option::<u64>(None);
        let mut b = Encoder::new();
        b.put_option(Some(&0u64));
        assert_eq!(a.finish().0, vec![0]);
        assert_eq!(b.finish().0, vec![1, 0, 0, 0, 0, 0, 0, 0, 0]);
    }
}
