//! Run records and online safety checks.
//!
//! Every processed event and every notification from a correct node is
//! folded into a running SHA-256 digest as a line `tick node kind digest`.
//! Two runs of the same scenario produce the same digest.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use bbca_core::bbca::View;
use bbca_core::chain::{EntryCause, Finalized, LogEntry, NodeEvent, ProbeTrigger};
use bbca_core::crypto::{Digest, NodeId};
use bbca_core::dag::{BlockRef, BlockType};
use sha2::{Digest as _, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationKind {
    /// Two correct nodes finalized different outcomes for one view.
    Agreement,
    /// Two correct committed logs stopped being prefix-related.
    Prefix,
    /// A node noticed a conflicting write to its own finalized map.
    Finalize,
    /// Correct nodes BBCA-completed different blocks for one view.
    Consistency,
    /// A completion without `f + 1` correct Adopt answers at the end-of-run probe.
    CompleteAdopt,
    /// A message from a correct node arrived later than the delay model allows.
    DelayBound,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Number of events processed when the violation was detected.
    pub event_index: u64,
    pub time: u64,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewEntry {
    pub time: u64,
    /// Events processed when the entry was recorded.
    pub event: u64,
    pub cause: EntryCause,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Completion {
    pub time: u64,
    pub node: NodeId,
    pub view: View,
    pub block: BlockRef,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeRecord {
    pub time: u64,
    pub node: NodeId,
    pub view: View,
    pub adopted: Option<BlockRef>,
    pub trigger: ProbeTrigger,
}

#[derive(Clone)]
pub struct Trace {
    hasher: Sha256,
    lines: Option<Vec<String>>,
    pub events: u64,
    /// view -> node -> first time the node's view was at least `view`.
    pub view_entries: BTreeMap<View, BTreeMap<NodeId, ViewEntry>>,
    node_views: BTreeMap<NodeId, View>,
    /// First time each block was sent by a correct node.
    pub sent: HashMap<BlockRef, (u64, NodeId, BlockType)>,
    pub proposals: BTreeMap<View, (u64, NodeId, BlockRef)>,
    pub commits: HashMap<BlockRef, BTreeMap<NodeId, u64>>,
    pub completions: Vec<Completion>,
    pub probes: Vec<ProbeRecord>,
    pub violations: Vec<Violation>,
    reference_log: Vec<BlockRef>,
    reference_final: BTreeMap<View, (Finalized, NodeId)>,
    completed: BTreeMap<View, (BlockRef, NodeId)>,
}

impl Trace {
    pub fn new(keep_lines: bool) -> Self {
        Trace {
            hasher: Sha256::new(),
            lines: keep_lines.then(Vec::new),
            events: 0,
            view_entries: BTreeMap::new(),
            node_views: BTreeMap::new(),
            sent: HashMap::new(),
            proposals: BTreeMap::new(),
            commits: HashMap::new(),
            completions: Vec::new(),
            probes: Vec::new(),
            violations: Vec::new(),
            reference_log: Vec::new(),
            reference_final: BTreeMap::new(),
            completed: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, tick: u64, node: NodeId, kind: &str, digest: &Digest) {
        let line = format!("{tick} {} {kind} {}", node.0, digest.to_hex());
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if let Some(lines) = &mut self.lines {
            lines.push(line);
        }
    }

    pub fn record_summary(&mut self, line: String) {
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if let Some(lines) = &mut self.lines {
            lines.push(line);
        }
    }

    /// Hex digest over everything recorded so far.
    pub fn digest(&self) -> String {
        let out: [u8; 32] = self.hasher.clone().finalize().into();
        Digest(out).to_hex()
    }

    pub fn lines(&self) -> Option<&[String]> {
        self.lines.as_deref()
    }

    pub fn violate(&mut self, kind: ViolationKind, time: u64, detail: String) {
        self.violations.push(Violation {
            kind,
            event_index: self.events,
            time,
            detail,
        });
    }

    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }

    /// Fold a notification from `node` into the trace. Only correct nodes'
    /// notifications are passed here.
    pub fn on_event(&mut self, tick: u64, node: NodeId, ev: &NodeEvent) {
        match ev {
            NodeEvent::ViewEntered { view, cause } => {
                self.record(tick, node, "enter", &Digest::of(&view.to_be_bytes()));
                let prev = self.node_views.insert(node, *view).unwrap_or(0);
                for v in prev + 1..=*view {
                    self.view_entries.entry(v).or_default().insert(
                        node,
                        ViewEntry {
                            time: tick,
                            event: self.events,
                            cause: *cause,
                        },
                    );
                }
            }
            NodeEvent::Proposed { view, block } => {
                self.record(tick, node, "propose", block);
                self.proposals.entry(*view).or_insert((tick, node, *block));
            }
            NodeEvent::BlockSent { block, kind } => {
                self.record(tick, node, "send", block);
                self.sent.entry(*block).or_insert((tick, node, *kind));
            }
            NodeEvent::BbcaCompleted { view, block } => {
                self.record(tick, node, "complete", block);
                self.completions.push(Completion {
                    time: tick,
                    node,
                    view: *view,
                    block: *block,
                });
                match self.completed.get(view) {
                    None => {
                        self.completed.insert(*view, (*block, node));
                    }
                    Some((b, other)) if b != block => {
                        let detail = format!(
                            "view {view}: {other} completed {b:?}, {node} completed {block:?}"
                        );
                        self.violate(ViolationKind::Consistency, tick, detail);
                    }
                    Some(_) => {}
                }
            }
            NodeEvent::Probed {
                view,
                adopted,
                trigger,
            } => {
                let d = adopted.unwrap_or_default();
                self.record(tick, node, "probe", &d);
                self.probes.push(ProbeRecord {
                    time: tick,
                    node,
                    view: *view,
                    adopted: *adopted,
                    trigger: *trigger,
                });
            }
            NodeEvent::Finalized { view, outcome } => {
                let d = match outcome {
                    Finalized::Block(b) => *b,
                    Finalized::NoOp => Digest::default(),
                };
                self.record(tick, node, "finalize", &d);
                match self.reference_final.get(view) {
                    None => {
                        self.reference_final.insert(*view, (*outcome, node));
                    }
                    Some((o, other)) if o != outcome => {
                        let detail = format!(
                            "view {view}: {other} finalized {o:?}, {node} finalized {outcome:?}"
                        );
                        self.violate(ViolationKind::Agreement, tick, detail);
                    }
                    Some(_) => {}
                }
            }
            NodeEvent::Committed(entry) => self.on_commit(tick, node, entry),
            NodeEvent::SafetyViolation(msg) => {
                self.record(tick, node, "violation", &Digest::of(msg.as_bytes()));
                self.violate(ViolationKind::Finalize, tick, msg.clone());
            }
        }
    }

    fn on_commit(&mut self, tick: u64, node: NodeId, entry: &LogEntry) {
        self.record(tick, node, "commit", &entry.block);
        self.commits
            .entry(entry.block)
            .or_default()
            .entry(node)
            .or_insert(tick);
        let pos = entry.position as usize;
        match self.reference_log.get(pos) {
            Some(b) if *b != entry.block => {
                let detail = format!(
                    "{node} committed {:?} at position {pos}, another node has {b:?}",
                    entry.block
                );
                self.violate(ViolationKind::Prefix, tick, detail);
            }
            Some(_) => {}
            None => self.reference_log.push(entry.block),
        }
    }

    /// Earliest time any of `nodes` committed `block`, if all of them did.
    pub fn commit_time_all(&self, block: &BlockRef, nodes: &[NodeId]) -> Option<(u64, u64)> {
        let per = self.commits.get(block)?;
        let times: Option<Vec<u64>> = nodes.iter().map(|n| per.get(n).copied()).collect();
        let times = times?;
        Some((*times.iter().min()?, *times.iter().max()?))
    }
}
