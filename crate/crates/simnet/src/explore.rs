//! Bounded exhaustive exploration of delivery orders.
//!
//! Two explorers share one idea: branch on every possible next step for the
//! first `depth` steps, then finish each branch deterministically and check
//! the result. The number of finished branches (leaves) is capped; hitting
//! the cap marks the result partial. Every violation carries the list of
//! choice indices that leads to it, so it can be replayed.
//!
//! * [`explore_bbca`] drives a single BBCA instance. A step is either
//!   delivering one in-flight message or probing one correct node.
//! * [`explore_chain`] drives a whole [`Simulation`]. A step is processing
//!   one of the `width` earliest queued events.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use bbca_core::bbca::{
    echo_statement, ready_statement, BbcaInstance, BbcaKind, BbcaMessage, BbcaPayload, InstanceId,
    ProbeResult,
};
use bbca_core::crypto::{sign, Digest, NodeId, SystemParams};

use crate::sim::{Scenario, Simulation, StopReason};
use crate::trace::Violation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BbcaCase {
    /// Correct sender, every node correct.
    CorrectSender,
    /// The sender shows `m1` to some correct nodes and `m2` to others, with
    /// its own ECHO and READY for whichever it showed. Every split is tried.
    EquivocatingSender,
    /// Correct sender, the last `f` nodes crashed.
    CrashedNodes,
    /// Correct sender; `f + 1` correct nodes probe before anything arrives,
    /// then a Byzantine node pushes its own ECHO and READY for the message.
    NoAdoptThenReady,
}

impl fmt::Display for BbcaCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BbcaCase::CorrectSender => "correct-sender",
            BbcaCase::EquivocatingSender => "equivocating-sender",
            BbcaCase::CrashedNodes => "crashed-nodes",
            BbcaCase::NoAdoptThenReady => "noadopt-then-ready",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BbcaProperty {
    Validity,
    Consistency,
    Integrity,
    CompleteAdopt,
}

impl fmt::Display for BbcaProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BbcaProperty::Validity => "validity",
            BbcaProperty::Consistency => "consistency",
            BbcaProperty::Integrity => "integrity",
            BbcaProperty::CompleteAdopt => "complete-adopt",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathViolation<K> {
    pub path: Vec<usize>,
    pub kind: K,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BbcaReport {
    pub leaves: u64,
    pub partial: bool,
    /// Leaves on which Validity applied (correct sender, no probe).
    pub validity_leaves: u64,
    /// Leaves where at least one correct node completed.
    pub completing_leaves: u64,
    /// Leaves where some run-time probe returned NoAdopt.
    pub noadopt_leaves: u64,
    pub violations: Vec<PathViolation<BbcaProperty>>,
}

impl BbcaReport {
    pub fn holds(&self, p: BbcaProperty) -> bool {
        self.violations.iter().all(|v| v.kind != p)
    }
}

type Msg = BbcaMessage<Vec<u8>>;

#[derive(Clone)]
struct World {
    params: SystemParams,
    /// `None` for Byzantine or crashed nodes.
    insts: Vec<Option<BbcaInstance<Vec<u8>>>>,
    inflight: Vec<(NodeId, NodeId, Msg)>,
    probes: BTreeMap<NodeId, Option<Digest>>,
    completions: BTreeMap<NodeId, Digest>,
    /// Messages the sender actually broadcast.
    sent_by_sender: BTreeSet<Digest>,
    probe_budget: usize,
}

impl World {
    fn correct(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.insts
            .iter()
            .enumerate()
            .filter(|(_, i)| i.is_some())
            .map(|(k, _)| NodeId(k as u32))
    }

    fn emit(&mut self, from: NodeId, msgs: Vec<Msg>) {
        let mut work: Vec<(NodeId, Msg)> = msgs.into_iter().map(|m| (from, m)).collect();
        while !work.is_empty() {
            let (src, m) = work.remove(0);
            for to in self.correct().collect::<Vec<_>>() {
                if to != src {
                    self.inflight.push((src, to, m.clone()));
                }
            }
            for out in self.process(src, src, &m) {
                work.push((src, out));
            }
        }
    }

    fn process(&mut self, from: NodeId, to: NodeId, m: &Msg) -> Vec<Msg> {
        let Some(inst) = self.insts[to.index()].as_mut() else {
            return Vec::new();
        };
        let yes = |_: &Vec<u8>| true;
        match (m.kind, m.sig) {
            (BbcaKind::Init, _) => inst.on_init(from, &m.message, yes),
            (BbcaKind::Echo, Some(sig)) => inst.on_echo(from, &m.message, &sig, yes),
            (BbcaKind::Ready, Some(sig)) => {
                if let Some(ev) = inst.on_ready(from, &m.message, &sig, yes) {
                    self.completions.insert(to, ev.message.digest());
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn deliver(&mut self, i: usize) {
        let (from, to, m) = self.inflight.remove(i);
        let out = self.process(from, to, &m);
        self.emit(to, out);
    }

    fn probe(&mut self, node: NodeId) {
        let inst = self.insts[node.index()].as_mut().expect("correct");
        let r = match inst.probe() {
            ProbeResult::Adopt(m, _) => Some(m.digest()),
            ProbeResult::NoAdopt => None,
        };
        self.probes.insert(node, r);
    }

    fn probe_choices(&self) -> Vec<NodeId> {
        if self.probes.len() >= self.probe_budget {
            return Vec::new();
        }
        self.correct()
            .filter(|n| !self.probes.contains_key(n))
            .collect()
    }

    fn choices(&self) -> usize {
        self.inflight.len() + self.probe_choices().len()
    }

    fn take(&mut self, choice: usize) {
        if choice < self.inflight.len() {
            self.deliver(choice);
        } else {
            let node = self.probe_choices()[choice - self.inflight.len()];
            self.probe(node);
        }
    }

    fn drain(&mut self) {
        while !self.inflight.is_empty() {
            self.deliver(0);
        }
    }
}

fn signed(kind: BbcaKind, id: InstanceId, signer: NodeId, m: &[u8]) -> Msg {
    let d = Digest::of(m);
    let sig = match kind {
        BbcaKind::Init => None,
        BbcaKind::Echo => Some(sign(signer, &echo_statement(id, &d))),
        BbcaKind::Ready => Some(sign(signer, &ready_statement(id, &d))),
    };
    BbcaMessage {
        kind,
        instance: id,
        message: m.to_vec(),
        sig,
    }
}

fn initial_worlds(case: BbcaCase, params: SystemParams) -> Vec<World> {
    let n = params.n();
    let f = params.f();
    let id = InstanceId {
        sender: NodeId(0),
        view: 1,
    };
    let m1 = b"m1".to_vec();
    let m2 = b"m2".to_vec();
    let fresh = |byz: &[usize]| World {
        params,
        insts: (0..n)
            .map(|k| (!byz.contains(&k)).then(|| BbcaInstance::new(id, NodeId(k as u32), params)))
            .collect(),
        inflight: Vec::new(),
        probes: BTreeMap::new(),
        completions: BTreeMap::new(),
        sent_by_sender: BTreeSet::new(),
        probe_budget: n,
    };
    let honest_start = |w: &mut World| {
        let out = w.insts[0]
            .as_mut()
            .expect("sender is correct")
            .broadcast(m1.clone())
            .expect("fresh sender");
        w.sent_by_sender.insert(Digest::of(&m1));
        w.emit(NodeId(0), out);
    };
    match case {
        BbcaCase::CorrectSender => {
            let mut w = fresh(&[]);
            honest_start(&mut w);
            vec![w]
        }
        BbcaCase::CrashedNodes => {
            let crashed: Vec<usize> = (n - f..n).collect();
            let mut w = fresh(&crashed);
            honest_start(&mut w);
            vec![w]
        }
        BbcaCase::EquivocatingSender => (0..1u32 << (n - 1))
            .map(|mask| {
                let mut w = fresh(&[0]);
                w.sent_by_sender = BTreeSet::from([Digest::of(&m1), Digest::of(&m2)]);
                for k in 1..n {
                    let m = if mask & (1 << (k - 1)) != 0 { &m2 } else { &m1 };
                    for kind in [BbcaKind::Init, BbcaKind::Echo, BbcaKind::Ready] {
                        w.inflight.push((
                            NodeId(0),
                            NodeId(k as u32),
                            signed(kind, id, NodeId(0), m),
                        ));
                    }
                }
                w
            })
            .collect(),
        BbcaCase::NoAdoptThenReady => {
            let byz = n - 1;
            let mut w = fresh(&[byz]);
            for k in 1..=f + 1 {
                w.probe(NodeId(k as u32));
            }
            w.probe_budget = 0;
            honest_start(&mut w);
            for k in 0..n {
                if k == byz {
                    continue;
                }
                for kind in [BbcaKind::Echo, BbcaKind::Ready] {
                    w.inflight.push((
                        NodeId(byz as u32),
                        NodeId(k as u32),
                        signed(kind, id, NodeId(byz as u32), &m1),
                    ));
                }
            }
            vec![w]
        }
    }
}

fn check_leaf(case: BbcaCase, mut w: World, path: &[usize], report: &mut BbcaReport) {
    w.drain();
    let f = w.params.f();
    let correct: Vec<NodeId> = w.correct().collect();
    // End-of-run probe of every correct node.
    let audit: BTreeMap<NodeId, Option<Digest>> = correct
        .iter()
        .map(|n| {
            let mut inst = w.insts[n.index()].clone().expect("correct");
            let r = match inst.probe() {
                ProbeResult::Adopt(m, _) => Some(m.digest()),
                ProbeResult::NoAdopt => None,
            };
            (*n, r)
        })
        .collect();

    let mut fail = |kind: BbcaProperty, detail: String| {
        report.violations.push(PathViolation {
            path: path.to_vec(),
            kind,
            detail,
        });
    };

    let mut outputs: BTreeSet<Digest> = w.completions.values().copied().collect();
    outputs.extend(w.probes.values().flatten().copied());
    outputs.extend(audit.values().flatten().copied());
    if outputs.len() > 1 {
        fail(
            BbcaProperty::Consistency,
            format!("correct nodes output {} different messages", outputs.len()),
        );
    }
    for d in &outputs {
        if !w.sent_by_sender.contains(d) {
            fail(
                BbcaProperty::Integrity,
                format!("{d:?} was never broadcast by the sender"),
            );
        }
    }

    let noadopts = w.probes.values().filter(|r| r.is_none()).count();
    if noadopts > 0 {
        report.noadopt_leaves += 1;
    }
    if !w.completions.is_empty() {
        report.completing_leaves += 1;
    }
    for m in w.completions.values().collect::<BTreeSet<_>>() {
        let adopters = audit.values().filter(|r| *r == &Some(*m)).count();
        if adopters < f + 1 {
            fail(
                BbcaProperty::CompleteAdopt,
                format!("{m:?} completed but only {adopters} correct nodes adopt it"),
            );
        }
    }
    if noadopts > f && !w.completions.is_empty() {
        fail(
            BbcaProperty::CompleteAdopt,
            format!("{noadopts} correct NoAdopt results yet a correct node completed"),
        );
    }

    let sender_correct = w.insts[0].is_some();
    if case != BbcaCase::NoAdoptThenReady && sender_correct && w.probes.is_empty() {
        report.validity_leaves += 1;
        let m = *w.sent_by_sender.iter().next().expect("one message");
        for n in &correct {
            if w.completions.get(n) != Some(&m) {
                fail(
                    BbcaProperty::Validity,
                    format!("{n} did not complete the correct sender's message"),
                );
            }
        }
    }
    report.leaves += 1;
}

/// Explore one BBCA instance. Branches on every choice for the first
/// `depth` steps, then delivers in FIFO order without further probes.
pub fn explore_bbca(case: BbcaCase, n: usize, depth: usize, max_leaves: u64) -> BbcaReport {
    let params = SystemParams::new(n).expect("n >= 1");
    let mut report = BbcaReport::default();
    for (i, w) in initial_worlds(case, params).into_iter().enumerate() {
        // The first path element selects the initial world.
        let mut path = vec![i];
        dfs_bbca(case, w, depth, max_leaves, &mut path, &mut report);
        if report.partial {
            break;
        }
    }
    report
}

fn dfs_bbca(
    case: BbcaCase,
    w: World,
    depth: usize,
    max_leaves: u64,
    path: &mut Vec<usize>,
    report: &mut BbcaReport,
) {
    if report.leaves >= max_leaves {
        report.partial = true;
        return;
    }
    let k = w.choices();
    if depth == 0 || k == 0 {
        check_leaf(case, w, path, report);
        return;
    }
    for c in 0..k {
        let mut next = w.clone();
        next.take(c);
        path.push(c);
        dfs_bbca(case, next, depth - 1, max_leaves, path, report);
        path.pop();
        if report.partial {
            return;
        }
    }
}

/// Replay a BBCA witness path and return the node outputs:
/// (completions, run-time probe results).
pub fn replay_bbca(
    case: BbcaCase,
    n: usize,
    path: &[usize],
) -> (BTreeMap<NodeId, Digest>, BTreeMap<NodeId, Option<Digest>>) {
    let params = SystemParams::new(n).expect("n >= 1");
    let (&world, choices) = path.split_first().expect("world index");
    let mut w = initial_worlds(case, params).swap_remove(world);
    for &c in choices {
        w.take(c);
    }
    w.drain();
    (w.completions, w.probes)
}

#[derive(Clone, Debug, Default)]
pub struct ChainReport {
    pub leaves: u64,
    pub partial: bool,
    /// Leaves that ended without reaching the scenario's target view.
    pub unfinished: u64,
    /// Distinct trace digests among leaves.
    pub distinct_traces: usize,
    pub violations: Vec<PathViolation<Violation>>,
}

/// Explore a whole-system scenario: for the first `depth` steps, try each
/// of the `width` earliest queued events; then run normally.
pub fn explore_chain(
    scenario: Scenario,
    depth: usize,
    width: usize,
    max_leaves: u64,
) -> Result<ChainReport, String> {
    let mut sim = Simulation::new(scenario)?;
    sim.start();
    let mut report = ChainReport::default();
    let mut digests = BTreeSet::new();
    let mut path = Vec::new();
    dfs_chain(
        sim,
        depth,
        width.max(1),
        max_leaves,
        &mut path,
        &mut report,
        &mut digests,
    );
    report.distinct_traces = digests.len();
    Ok(report)
}

fn dfs_chain(
    sim: Simulation,
    depth: usize,
    width: usize,
    max_leaves: u64,
    path: &mut Vec<usize>,
    report: &mut ChainReport,
    digests: &mut BTreeSet<String>,
) {
    if report.leaves >= max_leaves {
        report.partial = true;
        return;
    }
    let k = sim.queue_len().min(width);
    if depth == 0 || k == 0 {
        let out = sim.run();
        report.leaves += 1;
        if out.stop != StopReason::TargetReached {
            report.unfinished += 1;
        }
        digests.insert(out.trace.digest());
        for v in out.trace.violations {
            report.violations.push(PathViolation {
                path: path.clone(),
                kind: v.clone(),
                detail: v.detail,
            });
        }
        return;
    }
    for c in 0..k {
        let mut next = sim.clone();
        next.step_nth(c);
        path.push(c);
        dfs_chain(next, depth - 1, width, max_leaves, path, report, digests);
        path.pop();
        if report.partial {
            return;
        }
    }
}
