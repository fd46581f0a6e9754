//! Causal block store and deterministic ordering.
//!
//! A block is *delivered* once every block it references is delivered.
//! Blocks that arrive early wait in a pending set and are released in causal
//! order as their missing ancestors show up.

mod block;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

pub use block::{
    genesis_block, genesis_cert, genesis_new_view, is_genesis_cert, Block, BlockKind, BlockRef,
    BlockType, CertProof, Justification, NewViewProof,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DagError {
    #[error("block {0:?} references itself")]
    SelfReference(BlockRef),
    #[error("block {0:?} is not delivered")]
    NotDelivered(BlockRef),
}

#[derive(Clone)]
struct Pending {
    block: Arc<Block>,
    missing: BTreeSet<BlockRef>,
}

#[derive(Clone, Default)]
pub struct DagStore {
    delivered: HashMap<BlockRef, Arc<Block>>,
    pending: HashMap<BlockRef, Pending>,
    /// missing ancestor -> pending blocks waiting for it
    waiters: HashMap<BlockRef, BTreeSet<BlockRef>>,
}

impl DagStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_delivered(&self, d: &BlockRef) -> bool {
        self.delivered.contains_key(d)
    }

    pub fn get(&self, d: &BlockRef) -> Option<&Arc<Block>> {
        self.delivered.get(d)
    }

    pub fn len(&self) -> usize {
        self.delivered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delivered.is_empty()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_known(&self, d: &BlockRef) -> bool {
        self.delivered.contains_key(d) || self.pending.contains_key(d)
    }

    pub fn delivered(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.delivered.values()
    }

    /// Add a block. Returns every block that became delivered as a result,
    /// in an order where each block follows all of its references.
    pub fn insert(&mut self, block: Arc<Block>) -> Result<Vec<Arc<Block>>, DagError> {
        let d = block.digest();
        if block.refs().contains(&d) {
            return Err(DagError::SelfReference(d));
        }
        if self.is_known(&d) {
            return Ok(Vec::new());
        }
        let missing: BTreeSet<BlockRef> = block
            .refs()
            .iter()
            .filter(|r| !self.delivered.contains_key(*r))
            .copied()
            .collect();
        if !missing.is_empty() {
            for m in &missing {
                self.waiters.entry(*m).or_default().insert(d);
            }
            self.pending.insert(d, Pending { block, missing });
            return Ok(Vec::new());
        }

        let mut out = Vec::new();
        let mut queue = std::collections::VecDeque::from([block]);
        while let Some(b) = queue.pop_front() {
            let bd = b.digest();
            self.delivered.insert(bd, b.clone());
            out.push(b);
            let Some(ws) = self.waiters.remove(&bd) else {
                continue;
            };
            for w in ws {
                let p = self.pending.get_mut(&w).expect("waiter is pending");
                p.missing.remove(&bd);
                if p.missing.is_empty() {
                    let p = self.pending.remove(&w).expect("present");
                    queue.push_back(p.block);
                }
            }
        }
        Ok(out)
    }

    /// Every delivered block reachable from `root`, including `root`.
    pub fn ancestry(&self, root: &BlockRef) -> Result<BTreeSet<BlockRef>, DagError> {
        self.closure(root, |_| false)
    }

    fn closure(
        &self,
        root: &BlockRef,
        stop: impl Fn(&BlockRef) -> bool,
    ) -> Result<BTreeSet<BlockRef>, DagError> {
        if !self.delivered.contains_key(root) {
            return Err(DagError::NotDelivered(*root));
        }
        let mut seen = BTreeSet::from([*root]);
        let mut stack = vec![*root];
        while let Some(d) = stack.pop() {
            for r in self.delivered[&d].refs() {
                if !stop(r) && seen.insert(*r) {
                    stack.push(*r);
                }
            }
        }
        Ok(seen)
    }

    /// Topological order of the not-yet-committed causal history of
    /// `backbone`, ending with `backbone` itself. Concurrent blocks are
    /// ordered by `(view, author, digest)`. Traversal does not pass through
    /// committed blocks.
    pub fn order_under(
        &self,
        backbone: &BlockRef,
        committed: &HashSet<BlockRef>,
    ) -> Result<Vec<BlockRef>, DagError> {
        if committed.contains(backbone) {
            return Ok(Vec::new());
        }
        let set = self.closure(backbone, |r| committed.contains(r))?;
        let mut indegree: BTreeMap<BlockRef, usize> = BTreeMap::new();
        let mut children: HashMap<BlockRef, Vec<BlockRef>> = HashMap::new();
        for d in &set {
            // Duplicate refs count once.
            let parents: BTreeSet<&BlockRef> = self.delivered[d]
                .refs()
                .iter()
                .filter(|r| set.contains(*r))
                .collect();
            indegree.insert(*d, parents.len());
            for p in parents {
                children.entry(*p).or_default().push(*d);
            }
        }
        let key = |d: &BlockRef| self.delivered[d].order_key();
        let mut ready: BTreeSet<_> = indegree
            .iter()
            .filter(|(d, n)| **n == 0 && *d != backbone)
            .map(|(d, _)| key(d))
            .collect();
        let mut out = Vec::with_capacity(set.len());
        while let Some(k) = ready.pop_first() {
            let d = k.2;
            out.push(d);
            for c in children.get(&d).into_iter().flatten() {
                let n = indegree.get_mut(c).expect("in set");
                *n -= 1;
                if *n == 0 && c != backbone {
                    ready.insert(key(c));
                }
            }
        }
        // The backbone is a sink of its own ancestry, so it is always last.
        out.push(*backbone);
        debug_assert_eq!(out.len(), set.len());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::NodeId;

    fn data(author: u32, view: u64, refs: Vec<BlockRef>, tag: u8) -> Arc<Block> {
        Arc::new(Block::new(
            NodeId(author),
            view,
            refs,
            vec![tag],
            BlockKind::Data,
        ))
    }

    #[test]
    fn out_of_order_arrival_is_released_causally() {
        let mut dag = DagStore::new();
        let a = data(0, 0, vec![], 1);
        let b = data(1, 0, vec![a.digest()], 2);
        let c = data(2, 0, vec![b.digest(), a.digest()], 3);
        assert!(dag.insert(c.clone()).unwrap().is_empty());
        assert!(dag.insert(b.clone()).unwrap().is_empty());
        assert_eq!(dag.pending_len(), 2);
        let got: Vec<_> = dag
            .insert(a.clone())
            .unwrap()
            .iter()
            .map(|b| b.digest())
            .collect();
        assert_eq!(got, vec![a.digest(), b.digest(), c.digest()]);
        assert_eq!(dag.pending_len(), 0);
    }

    #[test]
    fn duplicates_are_ignored() {
        let mut dag = DagStore::new();
        let a = data(0, 0, vec![], 1);
        assert_eq!(dag.insert(a.clone()).unwrap().len(), 1);
        assert!(dag.insert(a).unwrap().is_empty());
    }

    #[test]
    fn order_under_stops_at_committed() {
        let mut dag = DagStore::new();
        let a = data(0, 0, vec![], 1);
        let b = data(1, 0, vec![a.digest()], 2);
        let c = data(0, 0, vec![], 3);
        let top = data(3, 1, vec![b.digest(), c.digest()], 4);
        for x in [&a, &b, &c, &top] {
            dag.insert(x.clone()).unwrap();
        }
        let committed = HashSet::from([a.digest()]);
        let order = dag.order_under(&top.digest(), &committed).unwrap();
        assert_eq!(order.len(), 3);
        assert_eq!(*order.last().unwrap(), top.digest());
        assert!(!order.contains(&a.digest()));
        // c (author 0) precedes b (author 1) at equal view.
        assert_eq!(order[0], c.digest());
    }

    #[test]
    fn order_under_unknown_root_errors() {
        let dag = DagStore::new();
        let d = Block::new(NodeId(0), 0, vec![], vec![], BlockKind::Data).digest();
        assert_eq!(
            dag.order_under(&d, &HashSet::new()),
            Err(DagError::NotDelivered(d))
        );
    }
}
