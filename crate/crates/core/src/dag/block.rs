//! DAG vertices and their canonical encoding.
//!
//! ```text
//! block   := kind:u8 author:u32 view:u64 nrefs:u32 ref:[u8;32]* body payload:bytes
//! kind    := 1 backbone | 2 new-view | 3 data
//! body    := (backbone) just:u8 nblocks:u32 block:bytes*   just: 0 genesis | 1 completed | 2 adopted | 3 noadopted
//!            (new-view) 0 cert | 1 cert | 2 sig cert-proof   0 complete | 1 adopt | 2 noadopt
//!            (data)     empty
//! cert    := sender:u32 view:u64 digest:[u8;32] nsigs:u32 (signer:u32 tag:u64)*
//! cert-proof := 0 cert (complete) | 1 cert (adopt)
//! bytes   := len:u32 raw
//! ```
//!
//! All integers are big-endian. The block digest is SHA-256 over this
//! encoding.

use std::fmt;
use std::sync::Arc;

use crate::bbca::{AdoptCert, BbcaPayload, CompleteCert, InstanceId, QuorumCert, View};
use crate::crypto::{Digest, Encoder, NodeId, Signature};

pub type BlockRef = Digest;

/// A complete or adopt certificate for some backbone block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CertProof {
    Complete(CompleteCert),
    Adopt(AdoptCert),
}

impl CertProof {
    pub fn qc(&self) -> &QuorumCert {
        match self {
            CertProof::Complete(c) => c,
            CertProof::Adopt(c) => c,
        }
    }

    /// View of the certified backbone block.
    pub fn view(&self) -> View {
        self.qc().instance.view
    }

    /// Digest of the certified backbone block.
    pub fn block(&self) -> BlockRef {
        self.qc().digest
    }

    fn encode(&self, enc: &mut Encoder) {
        match self {
            CertProof::Complete(c) => {
                enc.u8(0);
                c.encode(enc);
            }
            CertProof::Adopt(c) => {
                enc.u8(1);
                c.encode(enc);
            }
        }
    }
}

/// What a new-view block says about the view it concludes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NewViewProof {
    Complete(CompleteCert),
    Adopt(AdoptCert),
    /// Signed `<NOADOPT, view>` plus the author's highest certified block.
    NoAdopt {
        sig: Signature,
        highest: CertProof,
    },
}

impl NewViewProof {
    /// The certificate this proof carries for the concluded view, if any.
    pub fn cert(&self) -> Option<CertProof> {
        match self {
            NewViewProof::Complete(c) => Some(CertProof::Complete(c.clone())),
            NewViewProof::Adopt(c) => Some(CertProof::Adopt(c.clone())),
            NewViewProof::NoAdopt { .. } => None,
        }
    }

    /// The certificate of the block this new-view block points at.
    pub fn referenced(&self) -> CertProof {
        match self {
            NewViewProof::NoAdopt { highest, .. } => highest.clone(),
            other => other.cert().expect("complete or adopt"),
        }
    }

    pub fn is_noadopt(&self) -> bool {
        matches!(self, NewViewProof::NoAdopt { .. })
    }
}

/// How a backbone block justifies the outcome of the previous view.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Justification {
    Genesis,
    Completed(Arc<Block>),
    Adopted(Arc<Block>),
    NoAdopted(Vec<Arc<Block>>),
}

impl Justification {
    /// New-view blocks embedded in the justification.
    pub fn new_view_blocks(&self) -> &[Arc<Block>] {
        match self {
            Justification::Genesis => &[],
            Justification::Completed(b) | Justification::Adopted(b) => std::slice::from_ref(b),
            Justification::NoAdopted(bs) => bs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Backbone(Justification),
    NewView(NewViewProof),
    Data,
}

/// Flat block classification for logs and exports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockType {
    Backbone,
    NewView,
    Data,
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockType::Backbone => "backbone",
            BlockType::NewView => "new-view",
            BlockType::Data => "data",
        })
    }
}

/// An immutable DAG vertex. The digest is computed once at construction.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Block {
    author: NodeId,
    view: View,
    refs: Vec<BlockRef>,
    payload: Vec<u8>,
    kind: BlockKind,
    digest: BlockRef,
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({} v{} {:?})",
            self.block_type(),
            self.author,
            self.view,
            self.digest
        )
    }
}

impl Block {
    pub fn new(
        author: NodeId,
        view: View,
        refs: Vec<BlockRef>,
        payload: Vec<u8>,
        kind: BlockKind,
    ) -> Self {
        let mut b = Block {
            author,
            view,
            refs,
            payload,
            kind,
            digest: Digest::default(),
        };
        b.digest = Digest::of(&b.encode());
        b
    }

    pub fn digest(&self) -> BlockRef {
        self.digest
    }

    pub fn author(&self) -> NodeId {
        self.author
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn refs(&self) -> &[BlockRef] {
        &self.refs
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn kind(&self) -> &BlockKind {
        &self.kind
    }

    pub fn block_type(&self) -> BlockType {
        match self.kind {
            BlockKind::Backbone(_) => BlockType::Backbone,
            BlockKind::NewView(_) => BlockType::NewView,
            BlockKind::Data => BlockType::Data,
        }
    }

    pub fn justification(&self) -> Option<&Justification> {
        match &self.kind {
            BlockKind::Backbone(j) => Some(j),
            _ => None,
        }
    }

    pub fn new_view_proof(&self) -> Option<&NewViewProof> {
        match &self.kind {
            BlockKind::NewView(p) => Some(p),
            _ => None,
        }
    }

    /// Ordering key used to break ties between concurrent blocks.
    pub fn order_key(&self) -> (View, NodeId, BlockRef) {
        (self.view, self.author, self.digest)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(match self.kind {
            BlockKind::Backbone(_) => 1,
            BlockKind::NewView(_) => 2,
            BlockKind::Data => 3,
        })
        .u32(self.author.0)
        .u64(self.view)
        .u32(self.refs.len() as u32);
        for r in &self.refs {
            enc.digest(r);
        }
        match &self.kind {
            BlockKind::Backbone(j) => {
                let tag = match j {
                    Justification::Genesis => 0,
                    Justification::Completed(_) => 1,
                    Justification::Adopted(_) => 2,
                    Justification::NoAdopted(_) => 3,
                };
                enc.u8(tag).u32(j.new_view_blocks().len() as u32);
                for nv in j.new_view_blocks() {
                    enc.bytes(&nv.encode());
                }
            }
            BlockKind::NewView(p) => match p {
                NewViewProof::Complete(c) => {
                    enc.u8(0);
                    c.encode(&mut enc);
                }
                NewViewProof::Adopt(c) => {
                    enc.u8(1);
                    c.encode(&mut enc);
                }
                NewViewProof::NoAdopt { sig, highest } => {
                    enc.u8(2);
                    sig.encode(&mut enc);
                    highest.encode(&mut enc);
                }
            },
            BlockKind::Data => {}
        }
        enc.bytes(&self.payload);
        enc.finish()
    }
}

impl BbcaPayload for Arc<Block> {
    fn digest(&self) -> Digest {
        self.digest
    }
}

/// The well-known view-0 backbone block.
pub fn genesis_block() -> Block {
    Block::new(
        NodeId(0),
        0,
        Vec::new(),
        Vec::new(),
        BlockKind::Backbone(Justification::Genesis),
    )
}

/// Synthetic certificate for the genesis block. Accepted without signatures.
pub fn genesis_cert() -> CompleteCert {
    CompleteCert(QuorumCert {
        instance: InstanceId {
            sender: NodeId(0),
            view: 0,
        },
        digest: genesis_block().digest(),
        sigs: Vec::new(),
    })
}

pub fn is_genesis_cert(qc: &QuorumCert) -> bool {
    qc.instance.view == 0 && qc.sigs.is_empty() && qc.digest == genesis_block().digest()
}

/// The view-0 new-view block every node starts with.
pub fn genesis_new_view() -> Block {
    Block::new(
        NodeId(0),
        0,
        vec![genesis_block().digest()],
        Vec::new(),
        BlockKind::NewView(NewViewProof::Complete(genesis_cert())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(author: u32, refs: Vec<BlockRef>, payload: &[u8]) -> Block {
        Block::new(NodeId(author), 0, refs, payload.to_vec(), BlockKind::Data)
    }

    #[test]
    fn data_block_encoding_is_bit_exact() {
        let r = Digest([7; 32]);
        let b = data(2, vec![r], b"xy");
        let mut want = vec![3u8, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        want.extend_from_slice(&[7; 32]);
        want.extend_from_slice(&[0, 0, 0, 2, b'x', b'y']);
        assert_eq!(b.encode(), want);
        assert_eq!(b.digest(), Digest::of(&want));
    }

    #[test]
    fn digest_covers_every_field() {
        let base = data(1, vec![], b"a");
        assert_ne!(base.digest(), data(2, vec![], b"a").digest());
        assert_ne!(base.digest(), data(1, vec![], b"b").digest());
        assert_ne!(base.digest(), data(1, vec![Digest([1; 32])], b"a").digest());
        let nv = Block::new(
            NodeId(1),
            0,
            vec![],
            b"a".to_vec(),
            BlockKind::NewView(NewViewProof::Complete(genesis_cert())),
        );
        assert_ne!(base.digest(), nv.digest());
    }

    #[test]
    fn genesis_is_stable() {
        assert_eq!(genesis_block().digest(), genesis_block().digest());
        assert!(is_genesis_cert(&genesis_cert()));
        assert_eq!(genesis_new_view().refs(), &[genesis_block().digest()]);
    }
}
