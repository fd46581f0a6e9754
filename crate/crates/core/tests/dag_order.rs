//! DagStore ordering and delivery checked against brute-force oracles.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use bbca_core::crypto::NodeId;
use bbca_core::dag::{Block, BlockKind, BlockRef, DagStore, Justification};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(author: u32, view: u64, refs: Vec<BlockRef>, tag: u32) -> Arc<Block> {
    Arc::new(Block::new(
        NodeId(author),
        view,
        refs,
        tag.to_be_bytes().to_vec(),
        BlockKind::Data,
    ))
}

fn backbone(author: u32, view: u64, refs: Vec<BlockRef>) -> Arc<Block> {
    Arc::new(Block::new(
        NodeId(author),
        view,
        refs,
        Vec::new(),
        BlockKind::Backbone(Justification::Genesis),
    ))
}

/// Closure by fixed-point iteration over the full block list.
fn closure_oracle(
    blocks: &[Arc<Block>],
    root: BlockRef,
    stop: &HashSet<BlockRef>,
) -> BTreeSet<BlockRef> {
    let mut set = BTreeSet::from([root]);
    loop {
        let before = set.len();
        for b in blocks {
            if set.contains(&b.digest()) {
                for r in b.refs() {
                    if !stop.contains(r) {
                        set.insert(*r);
                    }
                }
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

fn permutations(items: &[BlockRef]) -> Vec<Vec<BlockRef>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn is_linear_extension(order: &[BlockRef], by_ref: &BTreeMap<BlockRef, Arc<Block>>) -> bool {
    let pos: BTreeMap<BlockRef, usize> = order.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    order.iter().enumerate().all(|(i, d)| {
        by_ref[d]
            .refs()
            .iter()
            .all(|r| pos.get(r).is_none_or(|p| *p < i))
    })
}

/// Every permutation of the closure that respects references and ends with
/// the root; the one whose key sequence is lexicographically smallest.
fn topo_oracle(blocks: &[Arc<Block>], root: BlockRef, stop: &HashSet<BlockRef>) -> Vec<BlockRef> {
    let by_ref: BTreeMap<BlockRef, Arc<Block>> =
        blocks.iter().map(|b| (b.digest(), b.clone())).collect();
    let set: Vec<BlockRef> = closure_oracle(blocks, root, stop).into_iter().collect();
    permutations(&set)
        .into_iter()
        .filter(|p| p.last() == Some(&root) && is_linear_extension(p, &by_ref))
        .min_by_key(|p| p.iter().map(|d| by_ref[d].order_key()).collect::<Vec<_>>())
        .expect("a DAG has a linear extension")
}

fn store(blocks: &[Arc<Block>]) -> DagStore {
    let mut dag = DagStore::new();
    for b in blocks {
        dag.insert(b.clone()).unwrap();
    }
    dag
}

#[test]
fn diamond_matches_oracle() {
    //     a
    //    / \
    //   b   c
    //    \ /
    //     d (backbone)
    let a = data(2, 1, vec![], 0);
    let b = data(1, 1, vec![a.digest()], 1);
    let c = data(0, 1, vec![a.digest()], 2);
    let d = backbone(1, 2, vec![b.digest(), c.digest()]);
    let blocks = vec![a.clone(), b.clone(), c.clone(), d.clone()];
    let dag = store(&blocks);
    let got = dag.order_under(&d.digest(), &HashSet::new()).unwrap();
    assert_eq!(got, topo_oracle(&blocks, d.digest(), &HashSet::new()));
    // c's author sorts first among the concurrent pair.
    assert_eq!(got, vec![a.digest(), c.digest(), b.digest(), d.digest()]);
}

#[test]
fn diamond_with_committed_source() {
    let a = data(0, 1, vec![], 0);
    let b = data(1, 1, vec![a.digest()], 1);
    let c = data(2, 1, vec![a.digest()], 2);
    let d = backbone(1, 2, vec![b.digest(), c.digest()]);
    let blocks = vec![a.clone(), b.clone(), c.clone(), d.clone()];
    let dag = store(&blocks);
    let committed = HashSet::from([a.digest()]);
    let got = dag.order_under(&d.digest(), &committed).unwrap();
    assert_eq!(got, vec![b.digest(), c.digest(), d.digest()]);
    assert!(dag.order_under(&a.digest(), &committed).unwrap().is_empty());
}

/// `count` blocks; block i references a random subset of earlier blocks.
fn random_dag(rng: &mut ChaCha8Rng, count: usize, max_refs: usize) -> Vec<Arc<Block>> {
    let mut blocks: Vec<Arc<Block>> = Vec::new();
    for i in 0..count {
        let k = rng.gen_range(0..=max_refs.min(i));
        let refs: Vec<BlockRef> = blocks.choose_multiple(rng, k).map(|b| b.digest()).collect();
        let author = rng.gen_range(0..4);
        let view = rng.gen_range(0..3);
        let b = if i + 1 == count {
            backbone(author, view, blocks.iter().map(|b| b.digest()).collect())
        } else {
            data(author, view, refs, i as u32)
        };
        blocks.push(b);
    }
    blocks
}

#[test]
fn ancestry_matches_closure_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let blocks = random_dag(&mut rng, 20, 3);
        let dag = store(&blocks);
        for b in &blocks {
            assert_eq!(
                dag.ancestry(&b.digest()).unwrap(),
                closure_oracle(&blocks, b.digest(), &HashSet::new())
            );
        }
    }
}

#[test]
fn twenty_blocks_linear_and_prefix_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let blocks = random_dag(&mut rng, 20, 3);
        let by_ref: BTreeMap<BlockRef, Arc<Block>> =
            blocks.iter().map(|b| (b.digest(), b.clone())).collect();
        let dag = store(&blocks);

        // Commit a few intermediate roots, then the final one.
        let mut roots: Vec<BlockRef> = blocks
            .choose_multiple(&mut rng, 3)
            .map(|b| b.digest())
            .collect();
        roots.push(blocks.last().unwrap().digest());

        let mut committed = HashSet::new();
        let mut log: Vec<BlockRef> = Vec::new();
        for r in &roots {
            let before = log.clone();
            let part = dag.order_under(r, &committed).unwrap();
            log.extend(&part);
            committed.extend(part);
            assert_eq!(&log[..before.len()], &before[..]);
        }
        let distinct: HashSet<_> = log.iter().collect();
        assert_eq!(distinct.len(), log.len(), "no block ordered twice");
        assert_eq!(log.len(), blocks.len(), "final root covers everything");
        assert!(is_linear_extension(&log, &by_ref));
    }
}

proptest! {
    #[test]
    fn small_dags_match_topo_oracle(seed in any::<u64>(), count in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = random_dag(&mut rng, count, 2);
        let dag = store(&blocks);
        let root = blocks.last().unwrap().digest();
        let cut: HashSet<BlockRef> = blocks
            .iter()
            .take(count - 1)
            .filter(|_| rng.gen_bool(0.2))
            .map(|b| b.digest())
            .collect();
        // The oracle treats committed blocks as cut points, like a real log:
        // everything below them is committed too.
        let mut stop = HashSet::new();
        for c in &cut {
            stop.extend(closure_oracle(&blocks, *c, &HashSet::new()));
        }
        prop_assert_eq!(
            dag.order_under(&root, &stop).unwrap(),
            topo_oracle(&blocks, root, &stop)
        );
    }

    #[test]
    fn delivery_is_causal_and_order_independent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = random_dag(&mut rng, 15, 3);
        let root = blocks.last().unwrap().digest();
        let reference = store(&blocks).order_under(&root, &HashSet::new()).unwrap();

        let mut shuffled = blocks.clone();
        shuffled.shuffle(&mut rng);
        let mut dag = DagStore::new();
        let mut seen: HashSet<BlockRef> = HashSet::new();
        for b in &shuffled {
            for x in dag.insert(b.clone()).unwrap() {
                prop_assert!(x.refs().iter().all(|r| seen.contains(r)));
                prop_assert!(seen.insert(x.digest()));
            }
        }
        prop_assert_eq!(seen.len(), blocks.len());
        prop_assert_eq!(dag.pending_len(), 0);
        prop_assert_eq!(dag.order_under(&root, &HashSet::new()).unwrap(), reference);
    }
}
