//! Per-node consensus state machine.
//!
//! A [`Node`] consumes one [`Input`] at a time and returns [`Action`]s: messages
//! to broadcast to every other node, timers to arm, and [`NodeEvent`]s for
//! whoever is watching. Messages a node sends to itself are processed inside
//! the same call, so the runtime never has to loop them back.
//!
//! Views advance in one of these ways (numbering matches the cases of the
//! view synchronization argument):
//!
//! 1. the node BBCA-completes the backbone block of the current view;
//! 2. it receives a new-view block with a complete certificate;
//! 3. it receives a new-view block with an adopt certificate;
//! 4. its own probe returns Adopt;
//! 5. it holds `2f + 1` new-view blocks for the view.
//!
//! A probe that returns NoAdopt does not advance the view by itself; the node
//! waits for case 5 (or any of the others).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::bbca::{
    verify_adopt_cert, verify_complete_cert, BbcaInstance, BbcaKind, BbcaMessage, BbcaPayload,
    CompleteEvent, InstanceId, ProbeResult, View,
};
use crate::crypto::{sign, verify, Digest, Encoder, NodeId, SystemParams};
use crate::dag::{
    genesis_block, genesis_cert, genesis_new_view, is_genesis_cert, Block, BlockKind, BlockRef,
    BlockType, CertProof, DagStore, Justification, NewViewProof,
};

/// Round-robin leader of view `v`.
pub fn get_proposer(v: View, params: &SystemParams) -> NodeId {
    NodeId((v % params.n() as u64) as u32)
}

/// `("NOADOPT", view)`.
pub fn noadopt_statement(view: View) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(b"NOADOPT").u64(view);
    enc.finish()
}

fn cert_ok(cert: &CertProof, params: &SystemParams) -> bool {
    if is_genesis_cert(cert.qc()) {
        return matches!(cert, CertProof::Complete(_));
    }
    let qc = cert.qc();
    if qc.instance.view == 0 || qc.instance.sender != get_proposer(qc.instance.view, params) {
        return false;
    }
    match cert {
        CertProof::Complete(c) => verify_complete_cert(c, params),
        CertProof::Adopt(c) => verify_adopt_cert(c, params),
    }
}

/// Structural validity of a new-view block: the certificate or signature
/// verifies, matches the block's view, and the certified block is referenced.
pub fn verify_new_view(b: &Block, params: &SystemParams) -> bool {
    let Some(proof) = b.new_view_proof() else {
        return false;
    };
    if b.view() == 0 {
        return *b == genesis_new_view();
    }
    if b.author().index() >= params.n() {
        return false;
    }
    let cert = proof.referenced();
    match proof {
        NewViewProof::Complete(_) | NewViewProof::Adopt(_) => {
            if cert.view() != b.view() {
                return false;
            }
        }
        NewViewProof::NoAdopt { sig, highest } => {
            if !verify(sig, &noadopt_statement(b.view()), b.author()) || highest.view() > b.view() {
                return false;
            }
        }
    }
    cert_ok(&cert, params) && b.refs().contains(&cert.block())
}

/// The BBCA validity predicate for a proposed backbone block.
pub fn predicate_p(b: &Block, instance: InstanceId, params: &SystemParams) -> bool {
    let Some(just) = b.justification() else {
        return false;
    };
    let v = b.view();
    if v == 0
        || v != instance.view
        || b.author() != instance.sender
        || b.author() != get_proposer(v, params)
    {
        return false;
    }
    let nvs = just.new_view_blocks();
    let shape_ok = match just {
        Justification::Genesis => false,
        Justification::Completed(nv) => {
            matches!(nv.new_view_proof(), Some(NewViewProof::Complete(_)))
        }
        Justification::Adopted(nv) => matches!(nv.new_view_proof(), Some(NewViewProof::Adopt(_))),
        Justification::NoAdopted(nvs) => {
            let authors: BTreeSet<NodeId> = nvs.iter().map(|nv| nv.author()).collect();
            authors.len() == nvs.len()
                && nvs.len() >= params.quorum()
                && nvs
                    .iter()
                    .all(|nv| nv.new_view_proof().is_some_and(|p| p.is_noadopt()))
        }
    };
    shape_ok
        && nvs.iter().all(|nv| {
            nv.view() == v - 1 && b.refs().contains(&nv.digest()) && verify_new_view(nv, params)
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeConfig {
    /// View timer, in ticks.
    pub t_max: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Bbca(BbcaMessage<Arc<Block>>),
    Block(Arc<Block>),
}

impl Message {
    /// Digest over the message's identifying content, for traces.
    pub fn digest(&self) -> Digest {
        let mut enc = Encoder::new();
        match self {
            Message::Bbca(m) => {
                enc.u8(match m.kind {
                    BbcaKind::Init => 0,
                    BbcaKind::Echo => 1,
                    BbcaKind::Ready => 2,
                })
                .u32(m.instance.sender.0)
                .u64(m.instance.view)
                .digest(&m.message.digest());
                if let Some(s) = &m.sig {
                    s.encode(&mut enc);
                }
            }
            Message::Block(b) => {
                enc.u8(3).digest(&b.digest());
            }
        }
        Digest::of(&enc.finish())
    }
}

#[derive(Clone, Debug)]
pub enum Input {
    Deliver {
        from: NodeId,
        msg: Message,
    },
    Timer {
        view: View,
    },
    Submit {
        payload: Vec<u8>,
    },
    /// Probe the instance of `view` without any protocol follow-up.
    ForceProbe {
        view: View,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryCause {
    Start,
    Completed,
    ReceivedComplete,
    ReceivedAdopt,
    Adopted,
    NewViewQuorum,
}

impl EntryCause {
    /// Case number in the view synchronization argument; 0 for the initial view.
    pub fn case(self) -> u8 {
        match self {
            EntryCause::Start => 0,
            EntryCause::Completed => 1,
            EntryCause::ReceivedComplete => 2,
            EntryCause::ReceivedAdopt => 3,
            EntryCause::Adopted => 4,
            EntryCause::NewViewQuorum => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeTrigger {
    Timeout,
    WeakNoAdopt,
    Forced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LogEntry {
    pub position: u64,
    pub view: View,
    pub block: BlockRef,
    pub kind: BlockType,
    pub author: NodeId,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} v{} {} {} {}",
            self.position, self.view, self.block, self.kind, self.author
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Finalized {
    Block(BlockRef),
    NoOp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeEvent {
    ViewEntered {
        view: View,
        cause: EntryCause,
    },
    Proposed {
        view: View,
        block: BlockRef,
    },
    BlockSent {
        block: BlockRef,
        kind: BlockType,
    },
    BbcaCompleted {
        view: View,
        block: BlockRef,
    },
    Probed {
        view: View,
        adopted: Option<BlockRef>,
        trigger: ProbeTrigger,
    },
    Finalized {
        view: View,
        outcome: Finalized,
    },
    Committed(LogEntry),
    SafetyViolation(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// Send to every other node.
    Broadcast(Message),
    SetTimer {
        view: View,
        after: u64,
    },
    Notify(NodeEvent),
}

type Gated = (NodeId, BbcaMessage<Arc<Block>>);

#[derive(Clone)]
pub struct Node {
    me: NodeId,
    params: SystemParams,
    cfg: NodeConfig,
    view: View,
    dag: DagStore,
    instances: BTreeMap<View, BbcaInstance<Arc<Block>>>,
    /// BBCA messages waiting for their payload block to be DAG-delivered.
    gated: HashMap<BlockRef, Vec<Gated>>,
    p_cache: HashMap<(BlockRef, InstanceId), bool>,
    nv_cache: HashMap<BlockRef, bool>,
    new_view_blocks: BTreeMap<View, BTreeMap<NodeId, Arc<Block>>>,
    /// Views this node sent any new-view block for.
    sent_new_view: BTreeSet<View>,
    /// Views this node sent a certificate-carrying new-view block for.
    sent_cert_view: BTreeSet<View>,
    proposed: BTreeSet<View>,
    highest: CertProof,
    noadopt_floor: View,
    finalized: BTreeMap<View, Finalized>,
    last_committed: View,
    committed: HashSet<BlockRef>,
    log: Vec<LogEntry>,
    last_block: Option<BlockRef>,
    tips: BTreeSet<BlockRef>,
    local: VecDeque<(NodeId, Message)>,
    out: Vec<Action>,
}

impl Node {
    pub fn new(me: NodeId, params: SystemParams, cfg: NodeConfig) -> Self {
        let genesis = Arc::new(genesis_block());
        let gnv = Arc::new(genesis_new_view());
        let mut dag = DagStore::new();
        dag.insert(genesis.clone()).expect("genesis");
        dag.insert(gnv.clone()).expect("genesis new-view");
        Node {
            me,
            params,
            cfg,
            view: 0,
            dag,
            instances: BTreeMap::new(),
            gated: HashMap::new(),
            p_cache: HashMap::new(),
            nv_cache: HashMap::new(),
            new_view_blocks: BTreeMap::from([(0, BTreeMap::from([(gnv.author(), gnv.clone())]))]),
            sent_new_view: BTreeSet::from([0]),
            sent_cert_view: BTreeSet::from([0]),
            proposed: BTreeSet::new(),
            highest: CertProof::Complete(genesis_cert()),
            noadopt_floor: 0,
            finalized: BTreeMap::from([(0, Finalized::Block(genesis.digest()))]),
            last_committed: 0,
            committed: HashSet::from([genesis.digest()]),
            log: Vec::new(),
            last_block: None,
            tips: BTreeSet::from([gnv.digest()]),
            local: VecDeque::new(),
            out: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.me
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn dag(&self) -> &DagStore {
        &self.dag
    }

    pub fn committed_log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn finalized(&self) -> &BTreeMap<View, Finalized> {
        &self.finalized
    }

    pub fn last_committed(&self) -> View {
        self.last_committed
    }

    pub fn is_committed(&self, b: &BlockRef) -> bool {
        self.committed.contains(b)
    }

    pub fn highest_cert(&self) -> &CertProof {
        &self.highest
    }

    pub fn instance(&self, view: View) -> Option<&BbcaInstance<Arc<Block>>> {
        self.instances.get(&view)
    }

    pub fn new_view_blocks(&self, view: View) -> impl Iterator<Item = &Arc<Block>> {
        self.new_view_blocks
            .get(&view)
            .into_iter()
            .flat_map(|m| m.values())
    }

    /// Enter view 1.
    pub fn start(&mut self) -> Vec<Action> {
        self.enter_view(1, EntryCause::Start);
        self.finish()
    }

    pub fn handle(&mut self, input: Input) -> Vec<Action> {
        match input {
            Input::Deliver { from, msg } => self.on_message(from, msg),
            Input::Timer { view } => {
                if view == self.view {
                    self.probe_view(view, ProbeTrigger::Timeout);
                }
            }
            Input::Submit { payload } => self.submit(payload),
            Input::ForceProbe { view } => {
                let result = self.instance_mut(view).probe();
                let adopted = match &result {
                    ProbeResult::Adopt(b, _) => Some(b.digest()),
                    ProbeResult::NoAdopt => None,
                };
                self.notify(NodeEvent::Probed {
                    view,
                    adopted,
                    trigger: ProbeTrigger::Forced,
                });
            }
        }
        self.finish()
    }

    fn finish(&mut self) -> Vec<Action> {
        while let Some((from, msg)) = self.local.pop_front() {
            self.on_message(from, msg);
        }
        std::mem::take(&mut self.out)
    }

    fn notify(&mut self, ev: NodeEvent) {
        self.out.push(Action::Notify(ev));
    }

    fn instance_mut(&mut self, view: View) -> &mut BbcaInstance<Arc<Block>> {
        let (me, params, floor) = (self.me, self.params, self.noadopt_floor);
        self.instances.entry(view).or_insert_with(|| {
            let id = InstanceId {
                sender: get_proposer(view, &params),
                view,
            };
            let mut inst = BbcaInstance::new(id, me, params);
            if view <= floor {
                inst.abort();
            }
            inst
        })
    }

    // ---- transport ----

    fn on_message(&mut self, from: NodeId, msg: Message) {
        match msg {
            Message::Block(b) => self.ingest(b),
            Message::Bbca(m) => {
                let d = m.message.digest();
                self.ingest(m.message.clone());
                if self.dag.is_delivered(&d) {
                    self.on_bbca(from, m);
                } else {
                    self.gated.entry(d).or_default().push((from, m));
                }
            }
        }
    }

    fn ingest(&mut self, b: Arc<Block>) {
        if self.dag.is_known(&b.digest()) {
            return;
        }
        if let Some(j) = b.justification() {
            for nv in j.new_view_blocks().to_vec() {
                self.ingest(nv);
            }
        }
        if let Ok(delivered) = self.dag.insert(b) {
            for x in delivered {
                self.on_delivered(x);
            }
        }
    }

    fn on_delivered(&mut self, b: Arc<Block>) {
        let d = b.digest();
        if b.block_type() != BlockType::Backbone {
            for r in b.refs() {
                self.tips.remove(r);
            }
            if !self.committed.contains(&d) {
                self.tips.insert(d);
            }
        }
        if b.block_type() == BlockType::NewView && self.nv_valid(&b) {
            self.on_new_view_block(b);
        }
        if let Some(waiting) = self.gated.remove(&d) {
            for (from, m) in waiting {
                self.local.push_back((from, Message::Bbca(m)));
            }
        }
    }

    fn nv_valid(&mut self, b: &Block) -> bool {
        let params = self.params;
        *self
            .nv_cache
            .entry(b.digest())
            .or_insert_with(|| verify_new_view(b, &params))
    }

    fn p_valid(&mut self, b: &Block, instance: InstanceId) -> bool {
        let params = self.params;
        *self
            .p_cache
            .entry((b.digest(), instance))
            .or_insert_with(|| predicate_p(b, instance, &params))
    }

    fn send_bbca(&mut self, msgs: Vec<BbcaMessage<Arc<Block>>>) {
        for m in msgs {
            self.out.push(Action::Broadcast(Message::Bbca(m.clone())));
            self.local.push_back((self.me, Message::Bbca(m)));
        }
    }

    /// Insert a block this node authored; broadcast it unless it travels
    /// some other way (inside BBCA, or embedded in the next proposal).
    fn add_own_block(&mut self, b: Arc<Block>, broadcast: bool) {
        self.last_block = Some(b.digest());
        self.ingest(b.clone());
        if broadcast {
            self.notify(NodeEvent::BlockSent {
                block: b.digest(),
                kind: b.block_type(),
            });
            self.out.push(Action::Broadcast(Message::Block(b)));
        }
    }

    fn frontier_refs(&self, first: impl IntoIterator<Item = BlockRef>) -> Vec<BlockRef> {
        let mut refs: Vec<BlockRef> = first.into_iter().collect();
        let mut seen: BTreeSet<BlockRef> = refs.iter().copied().collect();
        for r in self.last_block.iter().chain(self.tips.iter()) {
            if seen.insert(*r) {
                refs.push(*r);
            }
        }
        refs
    }

    // ---- BBCA ----

    fn on_bbca(&mut self, from: NodeId, m: BbcaMessage<Arc<Block>>) {
        let id = m.instance;
        if id.view == 0 || id.sender != get_proposer(id.view, &self.params) {
            return;
        }
        let ok = self.p_valid(&m.message, id);
        let quorum = self.params.quorum();
        match (m.kind, m.sig) {
            (BbcaKind::Init, _) => {
                let out = self.instance_mut(id.view).on_init(from, &m.message, |_| ok);
                self.send_bbca(out);
            }
            (BbcaKind::Echo, Some(sig)) => {
                let inst = self.instance_mut(id.view);
                let out = inst.on_echo(from, &m.message, &sig, |_| ok);
                let adopt = if inst.echo_count(&m.message.digest()) >= quorum {
                    inst.peek_adopt()
                } else {
                    None
                };
                if let Some((_, cert)) = adopt {
                    self.raise_highest(CertProof::Adopt(cert));
                }
                self.send_bbca(out);
            }
            (BbcaKind::Ready, Some(sig)) => {
                let ev = self
                    .instance_mut(id.view)
                    .on_ready(from, &m.message, &sig, |_| ok);
                if let Some(ev) = ev {
                    self.on_bbca_complete(ev);
                }
            }
            _ => {}
        }
    }

    fn raise_highest(&mut self, cert: CertProof) {
        if !self.dag.is_delivered(&cert.block()) {
            return;
        }
        let better = cert.view() > self.highest.view()
            || (cert.view() == self.highest.view()
                && matches!(cert, CertProof::Complete(_))
                && matches!(self.highest, CertProof::Adopt(_)));
        if better {
            self.highest = cert;
        }
    }

    fn on_bbca_complete(&mut self, ev: CompleteEvent<Arc<Block>>) {
        let b = ev.message;
        let v = b.view();
        self.notify(NodeEvent::BbcaCompleted {
            view: v,
            block: b.digest(),
        });
        self.raise_highest(CertProof::Complete(ev.cert.clone()));
        self.try_commit(&b);
        if v < self.view {
            return;
        }
        // A noadopt block sent earlier for v does not stop this one.
        if self.sent_cert_view.insert(v) {
            self.sent_new_view.insert(v);
            let next_leader = get_proposer(v + 1, &self.params) == self.me;
            let nv = self.make_new_view(v, NewViewProof::Complete(ev.cert), b.digest());
            // The next leader embeds this block in its proposal instead.
            self.add_own_block(nv, !next_leader);
        }
        self.enter_view(v + 1, EntryCause::Completed);
    }

    fn make_new_view(&self, view: View, proof: NewViewProof, target: BlockRef) -> Arc<Block> {
        let refs = self.frontier_refs([target]);
        Arc::new(Block::new(
            self.me,
            view,
            refs,
            Vec::new(),
            BlockKind::NewView(proof),
        ))
    }

    // ---- views ----

    fn enter_view(&mut self, v: View, cause: EntryCause) {
        if v <= self.view {
            return;
        }
        self.view = v;
        self.notify(NodeEvent::ViewEntered { view: v, cause });
        self.out.push(Action::SetTimer {
            view: v,
            after: self.cfg.t_max,
        });
        self.instance_mut(v);
        self.try_propose(v);
        self.check_new_views(v);
    }

    /// Re-evaluate the view-advancing conditions for new-view blocks of `w`.
    fn check_new_views(&mut self, w: View) {
        if w != self.view {
            return;
        }
        let noadopts = self
            .new_view_blocks(w)
            .filter(|b| b.new_view_proof().is_some_and(|p| p.is_noadopt()))
            .count();
        if noadopts >= self.params.weak_quorum() && !self.sent_new_view.contains(&w) {
            self.probe_view(w, ProbeTrigger::WeakNoAdopt);
        }
        if self.view == w && self.new_view_blocks(w).count() >= self.params.quorum() {
            self.enter_view(w + 1, EntryCause::NewViewQuorum);
        }
    }

    fn probe_view(&mut self, v: View, trigger: ProbeTrigger) {
        if self.sent_new_view.contains(&v) {
            return;
        }
        let result = self.instance_mut(v).probe();
        match result {
            ProbeResult::Adopt(b, cert) => {
                self.notify(NodeEvent::Probed {
                    view: v,
                    adopted: Some(b.digest()),
                    trigger,
                });
                self.raise_highest(CertProof::Adopt(cert.clone()));
                self.sent_new_view.insert(v);
                self.sent_cert_view.insert(v);
                let nv = self.make_new_view(v, NewViewProof::Adopt(cert), b.digest());
                self.add_own_block(nv, true);
                self.enter_view(v + 1, EntryCause::Adopted);
            }
            ProbeResult::NoAdopt => {
                self.notify(NodeEvent::Probed {
                    view: v,
                    adopted: None,
                    trigger,
                });
                // Never send READY in any view up to v from now on: the
                // highest certificate reported below must stay an upper
                // bound on everything this node helped complete.
                self.noadopt_floor = self.noadopt_floor.max(v);
                for inst in self.instances.range_mut(..=v).map(|(_, i)| i) {
                    inst.abort();
                }
                self.sent_new_view.insert(v);
                let highest = self.highest.clone();
                let target = highest.block();
                let proof = NewViewProof::NoAdopt {
                    sig: sign(self.me, &noadopt_statement(v)),
                    highest,
                };
                let nv = self.make_new_view(v, proof, target);
                self.add_own_block(nv, true);
            }
        }
    }

    fn on_new_view_block(&mut self, nv: Arc<Block>) {
        let w = nv.view();
        let author = nv.author();
        let proof = nv.new_view_proof().expect("new-view block").clone();
        let slot = self.new_view_blocks.entry(w).or_default();
        // One block per author and view; a certificate supersedes a noadopt.
        match slot.get(&author) {
            None => {}
            Some(old)
                if old.new_view_proof().is_some_and(|p| p.is_noadopt()) && !proof.is_noadopt() => {}
            Some(_) => return,
        }
        slot.insert(author, nv.clone());
        let referenced = proof.referenced();
        if let CertProof::Complete(c) = &referenced {
            if !is_genesis_cert(c) {
                if let Some(b) = self.dag.get(&c.digest).cloned() {
                    self.try_commit(&b);
                }
            }
        }
        self.raise_highest(referenced);

        if author != self.me && w >= self.view {
            if let Some(cert) = proof.cert() {
                let cause = match cert {
                    CertProof::Complete(_) => EntryCause::ReceivedComplete,
                    CertProof::Adopt(_) => EntryCause::ReceivedAdopt,
                };
                if self.sent_cert_view.insert(w) {
                    self.sent_new_view.insert(w);
                    let target = cert.block();
                    let relay = match cert {
                        CertProof::Complete(c) => NewViewProof::Complete(c),
                        CertProof::Adopt(c) => NewViewProof::Adopt(c),
                    };
                    let own = self.make_new_view(w, relay, target);
                    self.add_own_block(own, true);
                }
                self.enter_view(w + 1, cause);
            }
        }
        if w > self.view && self.new_view_blocks(w).count() >= self.params.quorum() {
            self.enter_view(w + 1, EntryCause::NewViewQuorum);
        }
        self.check_new_views(w);
        if w + 1 == self.view {
            self.try_propose(self.view);
        }
    }

    fn try_propose(&mut self, v: View) {
        if v != self.view || get_proposer(v, &self.params) != self.me || self.proposed.contains(&v)
        {
            return;
        }
        let prev: Vec<Arc<Block>> = self.new_view_blocks(v - 1).cloned().collect();
        let pick = |want: fn(&NewViewProof) -> bool| -> Option<Arc<Block>> {
            let ok = |b: &&Arc<Block>| b.new_view_proof().is_some_and(want);
            prev.iter()
                .filter(ok)
                .find(|b| b.author() == self.me)
                .or_else(|| prev.iter().find(ok))
                .cloned()
        };
        let just = if let Some(nv) = pick(|p| matches!(p, NewViewProof::Complete(_))) {
            Justification::Completed(nv)
        } else if let Some(nv) = pick(|p| matches!(p, NewViewProof::Adopt(_))) {
            Justification::Adopted(nv)
        } else {
            let noadopts: Vec<Arc<Block>> = prev
                .iter()
                .filter(|b| b.new_view_proof().is_some_and(|p| p.is_noadopt()))
                .take(self.params.quorum())
                .cloned()
                .collect();
            if noadopts.len() < self.params.quorum() {
                return;
            }
            Justification::NoAdopted(noadopts)
        };
        let refs = self.frontier_refs(just.new_view_blocks().iter().map(|b| b.digest()));
        let b = Arc::new(Block::new(
            self.me,
            v,
            refs,
            Vec::new(),
            BlockKind::Backbone(just),
        ));
        self.proposed.insert(v);
        self.add_own_block(b.clone(), false);
        self.notify(NodeEvent::Proposed {
            view: v,
            block: b.digest(),
        });
        self.notify(NodeEvent::BlockSent {
            block: b.digest(),
            kind: BlockType::Backbone,
        });
        let msgs = self
            .instance_mut(v)
            .broadcast(b)
            .expect("fresh instance owned by the proposer");
        self.send_bbca(msgs);
    }

    // ---- data ----

    fn submit(&mut self, payload: Vec<u8>) {
        let refs = self.frontier_refs([]);
        let b = Arc::new(Block::new(
            self.me,
            self.view,
            refs,
            payload,
            BlockKind::Data,
        ));
        self.add_own_block(b, true);
    }

    // ---- commit ----

    /// The certified backbone block a justification points back to.
    fn b_max(&self, b: &Block) -> Option<CertProof> {
        match b.justification()? {
            Justification::Genesis => None,
            Justification::Completed(nv) | Justification::Adopted(nv) => {
                nv.new_view_proof().map(|p| p.referenced())
            }
            Justification::NoAdopted(nvs) => nvs
                .iter()
                .filter_map(|nv| nv.new_view_proof().map(|p| p.referenced()))
                .max_by_key(|c| (c.view(), c.block())),
        }
    }

    fn set_final(&mut self, view: View, outcome: Finalized) -> bool {
        match self.finalized.get(&view) {
            Some(existing) if *existing == outcome => false,
            Some(existing) => {
                let msg = format!(
                    "{} finalized view {view} as {existing:?} and then {outcome:?}",
                    self.me
                );
                self.notify(NodeEvent::SafetyViolation(msg));
                false
            }
            None => {
                self.finalized.insert(view, outcome);
                self.notify(NodeEvent::Finalized { view, outcome });
                true
            }
        }
    }

    fn finalize(&mut self, b: &Arc<Block>) {
        let mut cur = b.clone();
        loop {
            if !self.set_final(cur.view(), Finalized::Block(cur.digest())) {
                return;
            }
            let Some(max) = self.b_max(&cur) else {
                return;
            };
            for i in max.view() + 1..cur.view() {
                self.set_final(i, Finalized::NoOp);
            }
            match self.dag.get(&max.block()) {
                Some(next) => cur = next.clone(),
                None => {
                    let msg = format!("{} cannot find certified block {:?}", self.me, max.block());
                    self.notify(NodeEvent::SafetyViolation(msg));
                    return;
                }
            }
        }
    }

    fn try_commit(&mut self, b: &Arc<Block>) {
        if !self.dag.is_delivered(&b.digest()) || b.block_type() != BlockType::Backbone {
            return;
        }
        self.finalize(b);
        while let Some(outcome) = self.finalized.get(&(self.last_committed + 1)).copied() {
            self.last_committed += 1;
            let Finalized::Block(d) = outcome else {
                continue;
            };
            let order = self
                .dag
                .order_under(&d, &self.committed)
                .expect("finalized blocks are delivered");
            for x in order {
                let blk = self.dag.get(&x).expect("delivered").clone();
                self.committed.insert(x);
                self.tips.remove(&x);
                let entry = LogEntry {
                    position: self.log.len() as u64,
                    view: blk.view(),
                    block: x,
                    kind: blk.block_type(),
                    author: blk.author(),
                };
                self.log.push(entry);
                self.notify(NodeEvent::Committed(entry));
            }
        }
    }
}
