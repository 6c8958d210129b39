//! Hashing, identities' key material and the pluggable signature scheme.
//!
//! Two schemes are available. `Mock` signs with a keyed SHA-256 digest and is
//! what simulations use by default; `Ed25519` is a real asymmetric scheme for
//! end-to-end runs. Both derive every identity's key deterministically from
//! the run seed so a history can be re-verified offline.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use ed25519_dalek::{Signer as _, Verifier as _};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::codec::{tag, Encode, Encoder};
use crate::types::NodeId;

/// A 256-bit SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }

    /// The digest read as a big-endian unsigned integer, reduced modulo `m`.
    pub fn mod_u64(&self, m: u64) -> u64 {
        assert!(m > 0, "modulus must be positive");
        let m = u128::from(m);
        let mut acc: u128 = 0;
        for b in self.0 {
            acc = (acc * 256 + u128::from(b)) % m;
        }
        acc as u64
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid digest hex"))
    }
}

impl Encode for Digest {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_fixed(&self.0);
    }
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Serde helper: byte vectors as lowercase hex strings.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureScheme {
    /// Keyed digest: `sha256(0x4d || secret || message)`.
    #[default]
    Mock,
    Ed25519,
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "hex_bytes")] pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = hex::encode(&self.0);
        write!(f, "Sig({})", &h[..h.len().min(12)])
    }
}

struct KeyEntry {
    secret: [u8; 32],
    ed: Option<(ed25519_dalek::SigningKey, ed25519_dalek::VerifyingKey)>,
}

/// The run's identity table: key material for every registered identity.
pub struct Keyring {
    scheme: SignatureScheme,
    seed: u64,
    keys: HashMap<NodeId, KeyEntry>,
}

impl fmt::Debug for Keyring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keyring")
            .field("scheme", &self.scheme)
            .field("seed", &self.seed)
            .field("identities", &self.keys.len())
            .finish()
    }
}

impl Keyring {
    pub fn new(scheme: SignatureScheme, seed: u64, identities: impl IntoIterator<Item = NodeId>) -> Self {
        let keys = identities
            .into_iter()
            .map(|id| {
                let secret = derive_secret(seed, id);
                let ed = (scheme == SignatureScheme::Ed25519).then(|| {
                    let sk = ed25519_dalek::SigningKey::from_bytes(&secret);
                    let vk = sk.verifying_key();
                    (sk, vk)
                });
                (id, KeyEntry { secret, ed })
            })
            .collect();
        Keyring { scheme, seed, keys }
    }

    pub fn scheme(&self) -> SignatureScheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.keys.contains_key(&id)
    }

    /// Signing key for a registered identity.
    pub fn signer(&self, id: NodeId) -> Option<SigningKey> {
        let entry = self.keys.get(&id)?;
        Some(SigningKey {
            id,
            scheme: self.scheme,
            secret: entry.secret,
            ed: entry.ed.as_ref().map(|(sk, _)| sk.clone()),
            signed: Cell::new(0),
        })
    }

    /// Verification under the active scheme. Unknown identities never verify.
    pub fn verify(&self, id: NodeId, message: &[u8], sig: &Signature) -> bool {
        let Some(entry) = self.keys.get(&id) else {
            return false;
        };
        match self.scheme {
            SignatureScheme::Mock => mock_sign(&entry.secret, message).0 == sig.0,
            SignatureScheme::Ed25519 => {
                let Some((_, vk)) = &entry.ed else { return false };
                let Ok(sig) = ed25519_dalek::Signature::from_slice(&sig.0) else {
                    return false;
                };
                vk.verify(message, &sig).is_ok()
            }
        }
    }
}

fn derive_secret(seed: u64, id: NodeId) -> [u8; 32] {
    let mut enc = Encoder::new();
    enc.put_fixed(b"basil/identity-key");
    enc.put_u64(seed);
    id.encode_into(&mut enc);
    hash(enc.finish().as_slice()).0
}

fn mock_sign(secret: &[u8; 32], message: &[u8]) -> Signature {
    Signature(hash_parts(&[&[0x4d], secret, message]).0.to_vec())
}

/// Private key material of one identity. Counts how many signatures it made.
pub struct SigningKey {
    id: NodeId,
    scheme: SignatureScheme,
    secret: [u8; 32],
    ed: Option<ed25519_dalek::SigningKey>,
    signed: Cell<u64>,
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey").field("id", &self.id).finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn signatures_made(&self) -> u64 {
        self.signed.get()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.signed.set(self.signed.get() + 1);
        match self.scheme {
            SignatureScheme::Mock => mock_sign(&self.secret, message),
            SignatureScheme::Ed25519 => {
                let sk = self.ed.as_ref().expect("ed25519 key present under ed25519 scheme");
                Signature(sk.sign(message).to_bytes().to_vec())
            }
        }
    }
}

/// Bytes covered by the signature on a Merkle batch root.
pub fn batch_root_message(root: &Digest) -> Vec<u8> {
    let mut enc = Encoder::with_tag(tag::BATCH_ROOT);
    root.encode_into(&mut enc);
    enc.finish().0
}

/// Cache of batch roots whose signature already verified, owned by one node.
#[derive(Debug, Default)]
pub struct SignatureCache {
    verified_roots: HashSet<(NodeId, Digest, Signature)>,
    /// Number of signature verifications actually performed through this cache.
    pub signature_checks: u64,
}

impl SignatureCache {
    pub fn contains(&self, signer: NodeId, root: &Digest, sig: &Signature) -> bool {
        self.verified_roots.contains(&(signer, *root, sig.clone()))
    }

    pub fn insert(&mut self, signer: NodeId, root: Digest, sig: Signature) {
        self.verified_roots.insert((signer, root, sig));
    }

    pub fn len(&self) -> usize {
        self.verified_roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verified_roots.is_empty()
    }
}

/// Everything a node needs to check authenticated content.
#[derive(Debug)]
pub struct VerifyCtx {
    pub keyring: Arc<Keyring>,
    pub cache: SignatureCache,
}

impl VerifyCtx {
    pub fn new(keyring: Arc<Keyring>) -> Self {
        VerifyCtx { keyring, cache: SignatureCache::default() }
    }

    pub fn verify_direct(&mut self, signer: NodeId, message: &[u8], sig: &Signature) -> bool {
        self.cache.signature_checks += 1;
        self.keyring.verify(signer, message, sig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(scheme: SignatureScheme) -> Keyring {
        Keyring::new(scheme, 7, [NodeId::replica(0, 0), NodeId::replica(0, 1), NodeId::Client(1)])
    }

    #[test]
    fn sign_then_verify() {
        for scheme in [SignatureScheme::Mock, SignatureScheme::Ed25519] {
            let ring = ring(scheme);
            let key = ring.signer(NodeId::replica(0, 0)).unwrap();
            let sig = key.sign(b"hello");
            assert!(ring.verify(NodeId::replica(0, 0), b"hello", &sig));
            assert!(!ring.verify(NodeId::replica(0, 1), b"hello", &sig));
            assert!(!ring.verify(NodeId::replica(0, 0), b"hellp", &sig));
            assert_eq!(key.signatures_made(), 1);
        }
    }

    #[test]
    fn unknown_identity_fails_verification() {
        let ring = ring(SignatureScheme::Mock);
        let sig = ring.signer(NodeId::Client(1)).unwrap().sign(b"m");
        assert!(!ring.verify(NodeId::Client(99), b"m", &sig));
        assert!(ring.signer(NodeId::Client(99)).is_none());
    }

    #[test]
    fn digest_mod_is_big_endian() {
        let mut d = Digest::ZERO;
        d.0[31] = 5;
        d.0[30] = 1; // 256 + 5
        assert_eq!(d.mod_u64(1000), 261);
        assert_eq!(d.mod_u64(3), 261 % 3);
    }

    #[test]
    fn digest_hex_roundtrip() {
        let d = hash(b"abc");
        assert_eq!(
            d.to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
    }
}
