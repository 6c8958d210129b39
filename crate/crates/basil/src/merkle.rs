//! Reply batching: one signature over the root of a binary Merkle tree.
//!
//! Leaves are `H(0x00 || reply)`, interior nodes `H(0x01 || left || right)`.
//! The leaf list is padded to the next power of two by repeating the last leaf.

use serde::{Deserialize, Serialize};

use crate::codec::CanonicalBytes;
use crate::crypto::{batch_root_message, hash_parts, Digest, Signature, SigningKey, VerifyCtx};
use crate::types::NodeId;
use crate::Error;

const LEAF: u8 = 0x00;
const INTERIOR: u8 = 0x01;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleBatch {
    pub leaves: Vec<Digest>,
    pub root: Digest,
    pub root_signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub siblings: Vec<Digest>,
}

pub fn leaf_hash(reply: &[u8]) -> Digest {
    hash_parts(&[&[LEAF], reply])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    hash_parts(&[&[INTERIOR], &left.0, &right.0])
}

/// All tree levels, leaves first, root last. Requires a non-empty leaf list.
fn levels(leaves: &[Digest]) -> Vec<Vec<Digest>> {
    let width = leaves.len().next_power_of_two();
    let mut level = leaves.to_vec();
    level.resize(width, *leaves.last().expect("non-empty leaves"));
    let mut out = vec![level];
    while out.last().unwrap().len() > 1 {
        let next = out
            .last()
            .unwrap()
            .chunks(2)
            .map(|pair| node_hash(&pair[0], &pair[1]))
            .collect();
        out.push(next);
    }
    out
}

/// Root of the padded tree over `leaves`.
pub fn merkle_root(leaves: &[Digest]) -> Option<Digest> {
    if leaves.is_empty() {
        return None;
    }
    Some(levels(leaves).last().unwrap()[0])
}

/// Hash every reply, sign the root once, and produce one proof per reply.
pub fn build_batch(
    signer: &SigningKey,
    replies: &[CanonicalBytes],
) -> Result<(MerkleBatch, Vec<MerkleProof>), Error> {
    if replies.is_empty() {
        return Err(Error::InvalidArgument("empty reply batch".into()));
    }
    let leaves: Vec<Digest> = replies.iter().map(|r| leaf_hash(r.as_slice())).collect();
    let tree = levels(&leaves);
    let root = tree.last().unwrap()[0];
    let proofs = (0..leaves.len())
        .map(|i| {
            let mut idx = i;
            let siblings = tree[..tree.len() - 1]
                .iter()
                .map(|level| {
                    let s = level[idx ^ 1];
                    idx /= 2;
                    s
                })
                .collect();
            MerkleProof { leaf_index: i as u64, siblings }
        })
        .collect();
    let root_signature = signer.sign(&batch_root_message(&root));
    Ok((MerkleBatch { leaves, root, root_signature }, proofs))
}

/// Fold a leaf digest up through its proof.
pub fn fold_proof(leaf: Digest, proof: &MerkleProof) -> Digest {
    let mut acc = leaf;
    let mut idx = proof.leaf_index;
    for s in &proof.siblings {
        acc = if idx.is_multiple_of(2) { node_hash(&acc, s) } else { node_hash(s, &acc) };
        idx /= 2;
    }
    acc
}

/// Check a batched reply. A cached `(signer, root, sig)` skips the signature
/// check but the root is always recomputed from the reply and proof.
pub fn verify_batched_reply(
    reply: &[u8],
    proof: &MerkleProof,
    root: &Digest,
    sig: &Signature,
    signer: NodeId,
    ctx: &mut VerifyCtx,
) -> bool {
    if proof.siblings.len() >= 64 || proof.leaf_index >> proof.siblings.len() != 0 {
        return false;
    }
    if fold_proof(leaf_hash(reply), proof) != *root {
        return false;
    }
    if ctx.cache.contains(signer, root, sig) {
        return true;
    }
    if ctx.verify_direct(signer, &batch_root_message(root), sig) {
        ctx.cache.insert(signer, *root, sig.clone());
        true
    } else {
        false
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::crypto::{Keyring, SignatureScheme};

    fn setup() -> (Arc<Keyring>, SigningKey) {
        let ring = Arc::new(Keyring::new(SignatureScheme::Mock, 1, [NodeId::replica(0, 0)]));
        let key = ring.signer(NodeId::replica(0, 0)).unwrap();
        (ring, key)
    }

    fn replies(n: usize) -> Vec<CanonicalBytes> {
        (0..n).map(|i| CanonicalBytes(vec![i as u8; 3])).collect()
    }

    #[test]
    fn single_leaf_root_is_leaf() {
        let (_, key) = setup();
        let (batch, proofs) = build_batch(&key, &replies(1)).unwrap();
        assert_eq!(batch.root, leaf_hash(&[0, 0, 0]));
        assert!(proofs[0].siblings.is_empty());
    }

    #[test]
    fn empty_batch_rejected() {
        let (_, key) = setup();
        assert!(build_batch(&key, &[]).is_err());
    }

    #[test]
    fn tampered_sibling_fails() {
        let (ring, key) = setup();
        let rs = replies(4);
        let (batch, mut proofs) = build_batch(&key, &rs).unwrap();
        let mut ctx = VerifyCtx::new(ring);
        proofs[1].siblings[0].0[0] ^= 1;
        assert!(!verify_batched_reply(
            rs[1].as_slice(),
            &proofs[1],
            &batch.root,
            &batch.root_signature,
            key.id(),
            &mut ctx
        ));
    }

    #[test]
    fn out_of_range_index_rejected() {
        let (ring, key) = setup();
        let rs = replies(2);
        let (batch, mut proofs) = build_batch(&key, &rs).unwrap();
        proofs[0].leaf_index = 2;
        let mut ctx = VerifyCtx::new(ring);
        assert!(!verify_batched_reply(
            rs[0].as_slice(),
            &proofs[0],
            &batch.root,
            &batch.root_signature,
            key.id(),
            &mut ctx
        ));
    }
}
