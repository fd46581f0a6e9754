//! Byzantine behaviours.
//!
//! A Byzantine node runs the honest state machine; its strategy rewrites or
//! suppresses what it sends. It only ever signs as itself.

use std::collections::BTreeMap;
use std::sync::Arc;

use bbca_core::bbca::{echo_statement, ready_statement, BbcaKind, BbcaMessage, BbcaPayload};
use bbca_core::crypto::{sign, NodeId, SystemParams};
use bbca_core::dag::{Block, BlockKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Crashed from the start: sends nothing.
    Silent,
    /// As BBCA sender, gives the two halves of the other nodes different
    /// blocks for the same instance.
    EquivocateInit,
    /// Sends a twin with different payload alongside every data block.
    EquivocateData,
    /// Never sends READY.
    WithholdReady,
    /// Re-sends every message it receives, under its own name.
    Replay,
    /// Adds up to `max` extra ticks to everything it sends.
    DelayOwnMessages { max: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdversarySpec {
    pub nodes: BTreeMap<NodeId, Strategy>,
}

impl AdversarySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(node: NodeId, s: Strategy) -> Self {
        Self {
            nodes: BTreeMap::from([(node, s)]),
        }
    }

    pub fn strategy(&self, node: NodeId) -> Option<Strategy> {
        self.nodes.get(&node).copied()
    }

    pub fn is_byzantine(&self, node: NodeId) -> bool {
        self.nodes.contains_key(&node)
    }

    /// At most `f` Byzantine nodes, all within `[0, n)`.
    pub fn validate(&self, params: &SystemParams) -> Result<(), String> {
        if self.nodes.len() > params.f() {
            return Err(format!(
                "{} byzantine nodes exceed the fault budget f = {}",
                self.nodes.len(),
                params.f()
            ));
        }
        if let Some(bad) = self.nodes.keys().find(|id| id.index() >= params.n()) {
            return Err(format!("byzantine node {bad} is outside 0..{}", params.n()));
        }
        Ok(())
    }
}

/// The alternative block an equivocating sender shows the second half.
pub fn twin(b: &Block) -> Arc<Block> {
    let mut payload = b.payload().to_vec();
    payload.extend_from_slice(b"/twin");
    Arc::new(Block::new(
        b.author(),
        b.view(),
        b.refs().to_vec(),
        payload,
        b.kind().clone(),
    ))
}

/// Rewrite one of the sender's own BBCA messages to carry `block` instead,
/// re-signing echo and ready statements.
pub fn swap_payload(
    m: &BbcaMessage<Arc<Block>>,
    block: Arc<Block>,
    me: NodeId,
) -> BbcaMessage<Arc<Block>> {
    let d = block.digest();
    let sig = match m.kind {
        BbcaKind::Init => None,
        BbcaKind::Echo => Some(sign(me, &echo_statement(m.instance, &d))),
        BbcaKind::Ready => Some(sign(me, &ready_statement(m.instance, &d))),
    };
    BbcaMessage {
        kind: m.kind,
        instance: m.instance,
        message: block,
        sig,
    }
}

pub fn is_data(b: &Block) -> bool {
    matches!(b.kind(), BlockKind::Data)
}
