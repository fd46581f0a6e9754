//! Node identities, quorum arithmetic, and the deterministic mock signature
//! scheme used by the simulator.
//!
//! Signatures are `(signer, 64-bit tag)` where the tag is a keyed digest of
//! the statement bytes. Anyone who knows the signer id can compute a tag, so
//! unforgeability is a property of the simulated adversary (which only ever
//! signs as itself), not of the scheme.

use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Index of a node in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("a system needs at least one node")]
    Empty,
}

/// Committee size and fault threshold. `f` is always derived from `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SystemParams {
    n: usize,
    f: usize,
}

impl SystemParams {
    pub fn new(n: usize) -> Result<Self, ParamsError> {
        if n == 0 {
            return Err(ParamsError::Empty);
        }
        Ok(Self { n, f: (n - 1) / 3 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    /// `n - f`, which is `2f + 1` whenever `n = 3f + 1`. For other `n` the
    /// plain `2f + 1` would let two quorums meet in a single (possibly
    /// faulty) node.
    pub fn quorum(&self) -> usize {
        self.n - self.f
    }

    /// `f + 1`: enough to contain at least one correct node.
    pub fn weak_quorum(&self) -> usize {
        self.f + 1
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n as u32).map(NodeId)
    }
}

/// Free-function form of [`SystemParams::quorum`].
pub fn quorum_size(params: &SystemParams) -> usize {
    params.quorum()
}

/// 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature {
    pub signer: NodeId,
    pub tag: u64,
}

impl Signature {
    pub fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.signer.0);
        enc.u64(self.tag);
    }
}

fn tag(signer: NodeId, statement: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"bbca-mock-sig");
    h.update(signer.0.to_be_bytes());
    h.update(statement);
    let out: [u8; 32] = h.finalize().into();
    u64::from_be_bytes(out[..8].try_into().expect("8 bytes"))
}

pub fn sign(node: NodeId, statement: &[u8]) -> Signature {
    Signature {
        signer: node,
        tag: tag(node, statement),
    }
}

pub fn verify(sig: &Signature, statement: &[u8], signer: NodeId) -> bool {
    sig.signer == signer && sig.tag == tag(signer, statement)
}

/// Canonical big-endian encoder shared by every statement and block encoding.
#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(&d.0);
        self
    }

    /// Length-prefixed (u32) bytes.
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_verify_round_trip() {
        let s = sign(NodeId(0), b"hello");
        assert!(verify(&s, b"hello", NodeId(0)));
    }

    #[test]
    fn wrong_signer_rejected() {
        let s = sign(NodeId(0), b"hello");
        assert!(!verify(&s, b"hello", NodeId(1)));
    }

    #[test]
    fn wrong_statement_rejected() {
        let s = sign(NodeId(0), b"hello");
        assert!(!verify(&s, b"hellp", NodeId(0)));
    }

    #[test]
    fn quorum_sizes() {
        for (n, f, q) in [(4, 1, 3), (7, 2, 5), (10, 3, 7), (5, 1, 4)] {
            let p = SystemParams::new(n).unwrap();
            assert_eq!(p.f(), f);
            assert_eq!(quorum_size(&p), q);
        }
        assert_eq!(SystemParams::new(0), Err(ParamsError::Empty));
    }

    proptest! {
        #[test]
        fn quorums_intersect_in_f_plus_one(n in 4usize..200) {
            let p = SystemParams::new(n).unwrap();
            prop_assert!(p.quorum() <= n);
            prop_assert!(2 * p.quorum() > n + p.f());
        }

        #[test]
        fn signatures_are_deterministic(node in 0u32..64, stmt in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(sign(NodeId(node), &stmt), sign(NodeId(node), &stmt));
        }
    }
}
