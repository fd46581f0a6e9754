//! Discrete-event engine.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use bbca_core::bbca::{BbcaKind, InstanceId, View};
use bbca_core::chain::{Action, Finalized, Input, LogEntry, Message, Node, NodeConfig};
use bbca_core::crypto::{Digest, NodeId, SystemParams};
use bbca_core::dag::Block;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{is_data, swap_payload, twin, AdversarySpec, Strategy};
use crate::delay::DelayModel;
use crate::trace::{Trace, ViolationKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Injection {
    pub node: NodeId,
    pub tick: u64,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub n: usize,
    pub seed: u64,
    pub delay: DelayModel,
    pub t_max: u64,
    pub adversary: AdversarySpec,
    pub injections: Vec<Injection>,
    /// No event later than this tick is processed.
    pub max_ticks: u64,
    /// Stop once every correct node has committed through this view.
    pub target_view: Option<View>,
    /// Probe every correct node on every completed view at the end of the run.
    pub audit: bool,
    /// Keep the trace lines in memory, not just their digest.
    pub keep_lines: bool,
}

impl Scenario {
    /// Failure-free, fixed delay `d` on every hop.
    pub fn uniform(n: usize, d: u64) -> Self {
        Scenario {
            n,
            seed: 0,
            delay: DelayModel::Uniform { d },
            t_max: 10 * d,
            adversary: AdversarySpec::none(),
            injections: Vec::new(),
            max_ticks: 1_000 * d,
            target_view: Some(3),
            audit: false,
            keep_lines: false,
        }
    }

    pub fn params(&self) -> Result<SystemParams, String> {
        let p = SystemParams::new(self.n).map_err(|e| e.to_string())?;
        self.adversary.validate(&p)?;
        Ok(p)
    }
}

#[derive(Clone, Debug)]
pub enum EventKind {
    Deliver {
        to: NodeId,
        from: NodeId,
        msg: Message,
    },
    Timer {
        node: NodeId,
        view: View,
    },
    Inject {
        node: NodeId,
        payload: Vec<u8>,
    },
    ForceProbe {
        node: NodeId,
        view: View,
    },
}

impl EventKind {
    pub fn target(&self) -> NodeId {
        match self {
            EventKind::Deliver { to, .. } => *to,
            EventKind::Timer { node, .. }
            | EventKind::Inject { node, .. }
            | EventKind::ForceProbe { node, .. } => *node,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimEvent {
    pub time: u64,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    TargetReached,
    Quiescent,
    TickLimit,
}

#[derive(Clone)]
pub struct Simulation {
    scenario: Scenario,
    params: SystemParams,
    nodes: Vec<Node>,
    queue: BTreeMap<(u64, u64), EventKind>,
    seq: u64,
    now: u64,
    rng: ChaCha8Rng,
    trace: Trace,
    twins: HashMap<InstanceId, Arc<Block>>,
    replayed: HashSet<Digest>,
    started: bool,
}

/// Final state of a run.
pub struct Outcome {
    pub trace: Trace,
    pub params: SystemParams,
    pub nodes: Vec<Node>,
    pub correct: Vec<NodeId>,
    pub end_time: u64,
    pub stop: StopReason,
}

impl Outcome {
    pub fn log(&self, node: NodeId) -> &[LogEntry] {
        self.nodes[node.index()].committed_log()
    }

    pub fn finalized(&self, node: NodeId) -> &BTreeMap<View, Finalized> {
        self.nodes[node.index()].finalized()
    }

    /// Highest view every correct node has committed through.
    pub fn common_view(&self) -> View {
        self.correct
            .iter()
            .map(|n| self.nodes[n.index()].last_committed())
            .min()
            .unwrap_or(0)
    }

    /// The part of `node`'s log that covers views up to `view`: everything
    /// up to the last backbone block finalized at or below it.
    pub fn log_through(&self, node: NodeId, view: View) -> &[LogEntry] {
        let log = self.log(node);
        let last = self
            .finalized(node)
            .range(..=view)
            .rev()
            .find_map(|(_, f)| match f {
                Finalized::Block(b) => Some(*b),
                Finalized::NoOp => None,
            });
        let end = last
            .and_then(|b| log.iter().position(|e| e.block == b))
            .map_or(0, |i| i + 1);
        &log[..end]
    }

    /// Whether every correct node has the same log through the highest
    /// view they have all committed. Runs stop as soon as the target is
    /// reached, so faster nodes may already hold a longer log.
    pub fn logs_identical(&self) -> bool {
        let v = self.common_view();
        let mut logs = self.correct.iter().map(|n| self.log_through(*n, v));
        let first = logs.next().unwrap_or(&[]);
        logs.all(|l| l == first)
    }
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, String> {
        let params = scenario.params()?;
        let cfg = NodeConfig {
            t_max: scenario.t_max,
        };
        let nodes = params
            .nodes()
            .map(|id| Node::new(id, params, cfg))
            .collect();
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            trace: Trace::new(scenario.keep_lines),
            scenario,
            params,
            nodes,
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            twins: HashMap::new(),
            replayed: HashSet::new(),
            started: false,
        };
        // Injections get the lowest sequence numbers, so at equal ticks they
        // run before any message delivery.
        for inj in sim.scenario.injections.clone() {
            sim.push(
                inj.tick,
                EventKind::Inject {
                    node: inj.node,
                    payload: inj.payload,
                },
            );
        }
        Ok(sim)
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn is_correct(&self, id: NodeId) -> bool {
        !self.scenario.adversary.is_byzantine(id)
    }

    pub fn correct_nodes(&self) -> Vec<NodeId> {
        self.params
            .nodes()
            .filter(|n| self.is_correct(*n))
            .collect()
    }

    fn is_silent(&self, id: NodeId) -> bool {
        self.scenario.adversary.strategy(id) == Some(Strategy::Silent)
    }

    fn push(&mut self, time: u64, kind: EventKind) {
        self.queue.insert((time, self.seq), kind);
        self.seq += 1;
    }

    /// Up to `width` of the earliest queued events.
    pub fn pending(&self, width: usize) -> Vec<SimEvent> {
        self.queue
            .iter()
            .take(width)
            .map(|(&(time, seq), kind)| SimEvent {
                time,
                seq,
                kind: kind.clone(),
            })
            .collect()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for id in self.params.nodes().collect::<Vec<_>>() {
            if self.is_silent(id) {
                continue;
            }
            let acts = self.nodes[id.index()].start();
            self.apply(id, acts);
        }
    }

    /// Process the earliest event. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        self.step_nth(0)
    }

    /// Process the `i`-th earliest event instead of the first. Time never
    /// moves backwards.
    pub fn step_nth(&mut self, i: usize) -> bool {
        self.start();
        let Some(key) = self.queue.keys().nth(i).copied() else {
            return false;
        };
        let kind = self.queue.remove(&key).expect("present");
        self.now = self.now.max(key.0);
        self.process(kind);
        true
    }

    fn process(&mut self, kind: EventKind) {
        self.trace.events += 1;
        let now = self.now;
        let target = kind.target();
        let input = match kind {
            EventKind::Deliver { to, from, msg } => {
                self.trace.record(now, to, "deliver", &msg.digest());
                if self.scenario.adversary.strategy(to) == Some(Strategy::Replay) {
                    self.replay(to, &msg);
                }
                Input::Deliver { from, msg }
            }
            EventKind::Timer { node, view } => {
                self.trace
                    .record(now, node, "timer", &Digest::of(&view.to_be_bytes()));
                Input::Timer { view }
            }
            EventKind::Inject { node, payload } => {
                self.trace
                    .record(now, node, "inject", &Digest::of(&payload));
                Input::Submit { payload }
            }
            EventKind::ForceProbe { node, view } => {
                self.trace
                    .record(now, node, "force-probe", &Digest::of(&view.to_be_bytes()));
                Input::ForceProbe { view }
            }
        };
        if self.is_silent(target) {
            return;
        }
        let acts = self.nodes[target.index()].handle(input);
        self.apply(target, acts);
    }

    fn apply(&mut self, id: NodeId, acts: Vec<Action>) {
        let correct = self.is_correct(id);
        for a in acts {
            match a {
                Action::Broadcast(msg) => self.broadcast(id, msg),
                Action::SetTimer { view, after } => {
                    self.push(self.now + after, EventKind::Timer { node: id, view })
                }
                Action::Notify(ev) => {
                    if correct {
                        self.trace.on_event(self.now, id, &ev);
                    }
                }
            }
        }
    }

    fn others(&self, id: NodeId) -> Vec<NodeId> {
        self.params.nodes().filter(|n| *n != id).collect()
    }

    fn broadcast(&mut self, from: NodeId, msg: Message) {
        let others = self.others(from);
        let mut extra_max = 0;
        match self.scenario.adversary.strategy(from) {
            Some(Strategy::Silent) => return,
            Some(Strategy::WithholdReady) => {
                if matches!(&msg, Message::Bbca(m) if m.kind == BbcaKind::Ready) {
                    return;
                }
            }
            Some(Strategy::EquivocateInit) => {
                if let Message::Bbca(m) = &msg {
                    if m.instance.sender == from {
                        let alt = self
                            .twins
                            .entry(m.instance)
                            .or_insert_with(|| twin(&m.message))
                            .clone();
                        let swapped = Message::Bbca(swap_payload(m, alt, from));
                        let half = others.len().div_ceil(2);
                        for (i, to) in others.into_iter().enumerate() {
                            let out = if i < half {
                                msg.clone()
                            } else {
                                swapped.clone()
                            };
                            self.send(from, to, out, 0);
                        }
                        return;
                    }
                }
            }
            Some(Strategy::EquivocateData) => {
                if let Message::Block(b) = &msg {
                    if is_data(b) {
                        let alt = Message::Block(twin(b));
                        for to in others.iter().copied() {
                            self.send(from, to, alt.clone(), 0);
                        }
                    }
                }
            }
            Some(Strategy::DelayOwnMessages { max }) => extra_max = max,
            Some(Strategy::Replay) | None => {}
        }
        for to in others {
            let extra = if extra_max > 0 {
                self.rng.gen_range(0..=extra_max)
            } else {
                0
            };
            self.send(from, to, msg.clone(), extra);
        }
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: Message, extra: u64) {
        let now = self.now;
        let at = self.scenario.delay.delivery_time(now, &mut self.rng) + extra;
        if self.is_correct(from) && at > self.scenario.delay.deadline(now) {
            let detail = format!("{from} -> {to} sent at {now} delivered at {at}");
            self.trace.violate(ViolationKind::DelayBound, now, detail);
        }
        self.push(at, EventKind::Deliver { to, from, msg });
    }

    /// A replaying node re-sends each distinct message it receives once,
    /// after a random pause, as if it were its own.
    fn replay(&mut self, me: NodeId, msg: &Message) {
        if !self.replayed.insert(msg.digest()) {
            return;
        }
        let pause = self
            .rng
            .gen_range(1..=2 * self.scenario.delay.delta().max(1));
        for to in self.others(me) {
            let at = self
                .scenario
                .delay
                .delivery_time(self.now + pause, &mut self.rng);
            self.push(
                at,
                EventKind::Deliver {
                    to,
                    from: me,
                    msg: msg.clone(),
                },
            );
        }
    }

    fn target_reached(&self) -> bool {
        let Some(target) = self.scenario.target_view else {
            return false;
        };
        self.params
            .nodes()
            .filter(|n| self.is_correct(*n))
            .all(|n| self.nodes[n.index()].last_committed() >= target)
    }

    /// Run to a stop condition, then audit and summarize.
    pub fn run(mut self) -> Outcome {
        self.start();
        let stop = loop {
            if self.target_reached() {
                break StopReason::TargetReached;
            }
            match self.queue.keys().next() {
                None => break StopReason::Quiescent,
                Some(&(t, _)) if t > self.scenario.max_ticks => break StopReason::TickLimit,
                Some(_) => {
                    self.step();
                }
            }
        };
        self.finish(stop)
    }

    /// End-of-run bookkeeping: optional Complete-Adopt audit and summaries.
    pub fn finish(mut self, stop: StopReason) -> Outcome {
        if self.scenario.audit {
            self.audit();
        }
        let correct = self.correct_nodes();
        for id in &correct {
            let node = &self.nodes[id.index()];
            let mut log = Vec::new();
            for e in node.committed_log() {
                log.extend_from_slice(&e.block.0);
            }
            let line = format!(
                "summary {} view={} committed={} log={}",
                id.0,
                node.view(),
                node.last_committed(),
                Digest::of(&log).to_hex()
            );
            self.trace.record_summary(line);
        }
        Outcome {
            trace: self.trace,
            params: self.params,
            nodes: self.nodes,
            correct,
            end_time: self.now,
            stop,
        }
    }

    fn audit(&mut self) {
        let completed: BTreeMap<View, BTreeSet<Digest>> =
            self.trace
                .completions
                .iter()
                .fold(BTreeMap::new(), |mut acc, c| {
                    acc.entry(c.view).or_default().insert(c.block);
                    acc
                });
        for (&view, blocks) in &completed {
            for node in self.correct_nodes() {
                self.process(EventKind::ForceProbe { node, view });
            }
            for block in blocks {
                let adopters: BTreeSet<NodeId> = self
                    .trace
                    .probes
                    .iter()
                    .filter(|p| {
                        p.view == view
                            && p.adopted == Some(*block)
                            && p.trigger == bbca_core::chain::ProbeTrigger::Forced
                    })
                    .map(|p| p.node)
                    .collect();
                if adopters.len() < self.params.weak_quorum() {
                    let detail = format!(
                        "view {view}: {block:?} completed but only {} correct nodes adopt it",
                        adopters.len()
                    );
                    self.trace
                        .violate(ViolationKind::CompleteAdopt, self.now, detail);
                }
            }
        }
    }
}
