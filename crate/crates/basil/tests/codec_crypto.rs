use std::sync::Arc;

use basil::codec::{encode, CanonicalBytes};
use basil::crypto::{batch_root_message, hash, Digest, Keyring, SignatureScheme, VerifyCtx};
use basil::merkle::{build_batch, verify_batched_reply};
use basil::types::{NodeId, Timestamp, TxnMeta};
use ed25519_dalek::Signer as _;
use proptest::prelude::*;
use sha2::{Digest as _, Sha256};

// Hand-rolled encoder for transaction metadata, written from the layout
// description rather than from the library's Encoder.
fn oracle_meta_bytes(m: &TxnMeta) -> Vec<u8> {
    let mut b = vec![0x01];
    let ts = |b: &mut Vec<u8>, t: &Timestamp| {
        b.extend(t.time.to_be_bytes());
        b.extend(t.client.to_be_bytes());
    };
    ts(&mut b, &m.ts);
    b.extend((m.read_set.len() as u32).to_be_bytes());
    for (k, v) in &m.read_set {
        b.extend(k.to_be_bytes());
        ts(&mut b, v);
    }
    b.extend((m.write_set.len() as u32).to_be_bytes());
    for (k, v) in &m.write_set {
        b.extend(k.to_be_bytes());
        b.extend((v.len() as u32).to_be_bytes());
        b.extend(v);
    }
    b.extend((m.dep_set.len() as u32).to_be_bytes());
    for (v, id) in &m.dep_set {
        ts(&mut b, v);
        b.extend(id.0);
    }
    b
}

fn oracle_secret(seed: u64, id: NodeId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"basil/identity-key");
    h.update(seed.to_be_bytes());
    match id {
        NodeId::Replica { shard, index } => {
            h.update([0]);
            h.update(shard.to_be_bytes());
            h.update(index.to_be_bytes());
        }
        NodeId::Client(c) => {
            h.update([1]);
            h.update(c.to_be_bytes());
        }
    }
    h.finalize().into()
}

fn sample_meta() -> TxnMeta {
    TxnMeta::new(
        Timestamp::new(42, 7),
        [(3, Timestamp::new(10, 2)), (11, Timestamp::GENESIS)],
        [(3, b"three".to_vec()), (8, vec![])],
        [(Timestamp::new(10, 2), Digest([0xab; 32]))],
    )
}

#[test]
fn txn_meta_encoding_matches_oracle() {
    let m = sample_meta();
    assert_eq!(encode(&m).0, oracle_meta_bytes(&m));
    let id: [u8; 32] = Sha256::digest(oracle_meta_bytes(&m)).into();
    assert_eq!(m.id(), Digest(id));
}

#[test]
fn golden_txn_id() {
    // Frozen from an independent out-of-tree computation of the same layout.
    assert_eq!(
        sample_meta().id().to_hex(),
        "bceaa6f78de9e18b5c8d29570bdb54cd57d879731a0bb4d7362be8da0d82a4a8"
    );
    assert_eq!(
        TxnMeta::genesis().id().to_hex(),
        hex::encode(Sha256::digest(oracle_meta_bytes(&TxnMeta::genesis())))
    );
}

#[test]
fn mock_signature_matches_oracle() {
    let ids = [NodeId::replica(0, 3), NodeId::Client(9)];
    let ring = Keyring::new(SignatureScheme::Mock, 77, ids);
    for id in ids {
        let msg = b"payload";
        let sig = ring.signer(id).unwrap().sign(msg);
        let mut h = Sha256::new();
        h.update([0x4d]);
        h.update(oracle_secret(77, id));
        h.update(msg);
        assert_eq!(sig.0, h.finalize().to_vec());
        assert!(ring.verify(id, msg, &sig));
    }
}

#[test]
fn ed25519_signature_matches_dalek() {
    let id = NodeId::replica(1, 2);
    let ring = Keyring::new(SignatureScheme::Ed25519, 5, [id]);
    let sk = ed25519_dalek::SigningKey::from_bytes(&oracle_secret(5, id));
    let sig = ring.signer(id).unwrap().sign(b"m");
    assert_eq!(sig.0, sk.sign(b"m").to_bytes().to_vec());
    assert!(ring.verify(id, b"m", &sig));
    assert!(!ring.verify(id, b"n", &sig));
}

#[test]
fn schemes_reject_foreign_and_cross_scheme_signatures() {
    let (a, b) = (NodeId::replica(0, 0), NodeId::replica(0, 1));
    for scheme in [SignatureScheme::Mock, SignatureScheme::Ed25519] {
        let ring = Keyring::new(scheme, 1, [a, b]);
        let sig = ring.signer(a).unwrap().sign(b"x");
        assert!(!ring.verify(b, b"x", &sig));
        assert!(!ring.verify(NodeId::Client(0), b"x", &sig));
        let other_seed = Keyring::new(scheme, 2, [a]);
        assert!(!other_seed.verify(a, b"x", &sig));
    }
    let mock = Keyring::new(SignatureScheme::Mock, 1, [a]);
    let ed = Keyring::new(SignatureScheme::Ed25519, 1, [a]);
    assert!(!ed.verify(a, b"x", &mock.signer(a).unwrap().sign(b"x")));
    assert!(!mock.verify(a, b"x", &ed.signer(a).unwrap().sign(b"x")));
}

// Recursive root over the padded leaf list.
fn oracle_root(replies: &[Vec<u8>]) -> [u8; 32] {
    let leaf = |r: &[u8]| -> [u8; 32] { Sha256::new().chain_update([0]).chain_update(r).finalize().into() };
    let mut level: Vec<[u8; 32]> = replies.iter().map(|r| leaf(r)).collect();
    let last = *level.last().unwrap();
    level.resize(replies.len().next_power_of_two(), last);
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|p| Sha256::new().chain_update([1]).chain_update(p[0]).chain_update(p[1]).finalize().into())
            .collect();
    }
    level[0]
}

#[test]
fn batch_root_message_is_tagged_root() {
    let d = hash(b"r");
    let mut want = vec![0x0b];
    want.extend(d.0);
    assert_eq!(batch_root_message(&d), want);
}

proptest! {
    #[test]
    fn distinct_metadata_encodes_distinctly(
        a in (0u64..4, 0u64..3, prop::collection::vec((0u64..5, 0u64..3), 0..3), prop::collection::vec((0u64..5, prop::collection::vec(any::<u8>(), 0..3)), 0..3)),
        b in (0u64..4, 0u64..3, prop::collection::vec((0u64..5, 0u64..3), 0..3), prop::collection::vec((0u64..5, prop::collection::vec(any::<u8>(), 0..3)), 0..3)),
    ) {
        let mk = |(t, c, r, w): (u64, u64, Vec<(u64, u64)>, Vec<(u64, Vec<u8>)>)| {
            TxnMeta::new(Timestamp::new(t, c), r.into_iter().map(|(k, v)| (k, Timestamp::new(v, 0))), w, [])
        };
        let (ma, mb) = (mk(a), mk(b));
        prop_assert_eq!(ma == mb, encode(&ma) == encode(&mb));
        prop_assert_eq!(ma == mb, ma.id() == mb.id());
        prop_assert_eq!(encode(&ma).0, oracle_meta_bytes(&ma));
    }

    #[test]
    fn merkle_batches_agree_with_oracle(n in 1usize..40, salt in any::<u8>()) {
        let id = NodeId::replica(0, 0);
        let ring = Arc::new(Keyring::new(SignatureScheme::Mock, 3, [id]));
        let replies: Vec<Vec<u8>> = (0..n).map(|i| vec![salt, i as u8, (i >> 8) as u8]).collect();
        let canon: Vec<CanonicalBytes> = replies.iter().cloned().map(CanonicalBytes).collect();
        let (batch, proofs) = build_batch(&ring.signer(id).unwrap(), &canon).unwrap();
        prop_assert_eq!(batch.root.0, oracle_root(&replies));
        let depth = n.next_power_of_two().trailing_zeros() as usize;
        let mut ctx = VerifyCtx::new(ring.clone());
        for (r, p) in replies.iter().zip(&proofs) {
            prop_assert_eq!(p.siblings.len(), depth);
            prop_assert!(verify_batched_reply(r, p, &batch.root, &batch.root_signature, id, &mut ctx));
        }
        prop_assert_eq!(ctx.cache.signature_checks, 1);
        if n > 1 {
            // A reply presented under another leaf's proof must not verify.
            prop_assert!(!verify_batched_reply(&replies[0], &proofs[1], &batch.root, &batch.root_signature, id, &mut ctx));
        }
    }
}
