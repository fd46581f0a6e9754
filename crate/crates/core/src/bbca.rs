//! Byzantine broadcast with Complete-Adopt.
//!
//! One [`BbcaInstance`] is the local state of a single broadcast instance at
//! a single node. It is an all-to-all Bracha broadcast with two changes:
//!
//! * there is no `f + 1` READY amplification, and
//! * a local [`BbcaInstance::probe`] either returns the message this node has
//!   seen `2f + 1` echoes for (an adopt certificate), or sets the abort flag,
//!   after which this node never sends READY for the instance.
//!
//! Because READY requires an un-aborted node holding an adopt certificate, any
//! completion (which needs `2f + 1` READYs, `f + 1` of them correct) leaves at
//! least `f + 1` correct nodes that will answer a probe with `Adopt`.
//!
//! The instance is a pure state machine: every handler consumes one input and
//! returns the messages to broadcast. The caller owns transport and decides
//! which node a message came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Deref;

use thiserror::Error;

use crate::crypto::{sign, verify, Digest, Encoder, NodeId, Signature, SystemParams};

pub type View = u64;

/// Anything that can be broadcast through BBCA. Identity is by digest.
pub trait BbcaPayload: Clone {
    fn digest(&self) -> Digest;
}

impl BbcaPayload for Vec<u8> {
    fn digest(&self) -> Digest {
        Digest::of(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceId {
    pub sender: NodeId,
    pub view: View,
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, v{}>", self.sender, self.view)
    }
}

fn statement(tag: &[u8], instance: InstanceId, digest: &Digest) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(tag)
        .u32(instance.sender.0)
        .u64(instance.view)
        .digest(digest);
    enc.finish()
}

/// `("ECHO", sender, view, digest)`.
pub fn echo_statement(instance: InstanceId, digest: &Digest) -> Vec<u8> {
    statement(b"ECHO", instance, digest)
}

/// `("READY", sender, view, digest)`.
pub fn ready_statement(instance: InstanceId, digest: &Digest) -> Vec<u8> {
    statement(b"READY", instance, digest)
}

/// Signatures of distinct nodes over one statement about `(instance, digest)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuorumCert {
    pub instance: InstanceId,
    pub digest: Digest,
    pub sigs: Vec<Signature>,
}

impl QuorumCert {
    fn from_sigs(instance: InstanceId, digest: Digest, sigs: &[Signature], quorum: usize) -> Self {
        let mut sigs = sigs.to_vec();
        sigs.sort();
        sigs.truncate(quorum);
        Self {
            instance,
            digest,
            sigs,
        }
    }

    fn verify_with(&self, params: &SystemParams, stmt: &[u8]) -> bool {
        if self.sigs.len() < params.quorum() {
            return false;
        }
        let mut seen = BTreeSet::new();
        self.sigs.iter().all(|s| {
            s.signer.index() < params.n() && seen.insert(s.signer) && verify(s, stmt, s.signer)
        })
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.instance.sender.0)
            .u64(self.instance.view)
            .digest(&self.digest)
            .u32(self.sigs.len() as u32);
        for s in &self.sigs {
            s.encode(enc);
        }
    }
}

/// `2f + 1` echo signatures: some correct node may complete this message and
/// no correct node can complete another one.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AdoptCert(pub QuorumCert);

/// `2f + 1` ready signatures: the message was completed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CompleteCert(pub QuorumCert);

impl Deref for AdoptCert {
    type Target = QuorumCert;
    fn deref(&self) -> &QuorumCert {
        &self.0
    }
}

impl Deref for CompleteCert {
    type Target = QuorumCert;
    fn deref(&self) -> &QuorumCert {
        &self.0
    }
}

pub fn verify_adopt_cert(cert: &AdoptCert, params: &SystemParams) -> bool {
    cert.verify_with(params, &echo_statement(cert.instance, &cert.digest))
}

pub fn verify_complete_cert(cert: &CompleteCert, params: &SystemParams) -> bool {
    cert.verify_with(params, &ready_statement(cert.instance, &cert.digest))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BbcaKind {
    Init,
    Echo,
    Ready,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BbcaMessage<M> {
    pub kind: BbcaKind,
    pub instance: InstanceId,
    pub message: M,
    /// Present on ECHO and READY.
    pub sig: Option<Signature>,
}

#[derive(Clone, Debug)]
pub enum ProbeResult<M> {
    Adopt(M, AdoptCert),
    NoAdopt,
}

impl<M> ProbeResult<M> {
    pub fn is_adopt(&self) -> bool {
        matches!(self, ProbeResult::Adopt(..))
    }
}

#[derive(Clone, Debug)]
pub struct CompleteEvent<M> {
    pub instance: InstanceId,
    pub message: M,
    pub cert: CompleteCert,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BbcaError {
    #[error("{me} is not the sender of instance {instance}")]
    NotSender { me: NodeId, instance: InstanceId },
    #[error("instance {0} is already initialized")]
    AlreadyInitialized(InstanceId),
}

#[derive(Clone, Debug)]
struct PendingMsg<M> {
    message: M,
    echoes: Vec<Signature>,
    readies: Vec<Signature>,
}

/// Local state of one BBCA instance at one node.
#[derive(Clone, Debug)]
pub struct BbcaInstance<M> {
    id: InstanceId,
    me: NodeId,
    params: SystemParams,
    pending: BTreeMap<Digest, PendingMsg<M>>,
    received_echo: BTreeSet<NodeId>,
    received_ready: BTreeSet<NodeId>,
    echoed: Option<Digest>,
    readied: Option<Digest>,
    abort: bool,
    completed: Option<(M, CompleteCert)>,
}

impl<M: BbcaPayload> BbcaInstance<M> {
    pub fn new(id: InstanceId, me: NodeId, params: SystemParams) -> Self {
        Self {
            id,
            me,
            params,
            pending: BTreeMap::new(),
            received_echo: BTreeSet::new(),
            received_ready: BTreeSet::new(),
            echoed: None,
            readied: None,
            abort: false,
            completed: None,
        }
    }

    pub fn id(&self) -> InstanceId {
        self.id
    }

    /// The local node has echoed (is initialized).
    pub fn echoed(&self) -> Option<Digest> {
        self.echoed
    }

    /// The local node has sent READY.
    pub fn readied(&self) -> Option<Digest> {
        self.readied
    }

    pub fn is_aborted(&self) -> bool {
        self.abort
    }

    pub fn completed(&self) -> Option<&(M, CompleteCert)> {
        self.completed.as_ref()
    }

    pub fn echo_count(&self, digest: &Digest) -> usize {
        self.pending.get(digest).map_or(0, |p| p.echoes.len())
    }

    pub fn ready_count(&self, digest: &Digest) -> usize {
        self.pending.get(digest).map_or(0, |p| p.readies.len())
    }

    fn slot(&mut self, m: &M, d: Digest) -> &mut PendingMsg<M> {
        self.pending.entry(d).or_insert_with(|| PendingMsg {
            message: m.clone(),
            echoes: Vec::new(),
            readies: Vec::new(),
        })
    }

    fn become_initialized(&mut self, m: &M) -> BbcaMessage<M> {
        let d = m.digest();
        self.echoed = Some(d);
        BbcaMessage {
            kind: BbcaKind::Echo,
            instance: self.id,
            message: m.clone(),
            sig: Some(sign(self.me, &echo_statement(self.id, &d))),
        }
    }

    /// Sender entry point: INIT plus the sender's own ECHO.
    pub fn broadcast(&mut self, m: M) -> Result<Vec<BbcaMessage<M>>, BbcaError> {
        if self.me != self.id.sender {
            return Err(BbcaError::NotSender {
                me: self.me,
                instance: self.id,
            });
        }
        if self.echoed.is_some() {
            return Err(BbcaError::AlreadyInitialized(self.id));
        }
        let echo = self.become_initialized(&m);
        Ok(vec![
            BbcaMessage {
                kind: BbcaKind::Init,
                instance: self.id,
                message: m,
                sig: None,
            },
            echo,
        ])
    }

    pub fn on_init(
        &mut self,
        from: NodeId,
        m: &M,
        valid: impl FnOnce(&M) -> bool,
    ) -> Vec<BbcaMessage<M>> {
        if from != self.id.sender || self.echoed.is_some() || !valid(m) {
            return Vec::new();
        }
        vec![self.become_initialized(m)]
    }

    pub fn on_echo(
        &mut self,
        from: NodeId,
        m: &M,
        sig: &Signature,
        valid: impl FnOnce(&M) -> bool,
    ) -> Vec<BbcaMessage<M>> {
        if self.received_echo.contains(&from) {
            return Vec::new();
        }
        let d = m.digest();
        if !verify(sig, &echo_statement(self.id, &d), from) || !valid(m) {
            return Vec::new();
        }
        self.received_echo.insert(from);
        let quorum = self.params.quorum();
        let slot = self.slot(m, d);
        slot.echoes.push(*sig);
        let reached = slot.echoes.len() == quorum;
        // Echoes keep accumulating after abort so a later probe can still adopt.
        if reached && self.readied.is_none() && !self.abort {
            self.readied = Some(d);
            return vec![BbcaMessage {
                kind: BbcaKind::Ready,
                instance: self.id,
                message: m.clone(),
                sig: Some(sign(self.me, &ready_statement(self.id, &d))),
            }];
        }
        Vec::new()
    }

    pub fn on_ready(
        &mut self,
        from: NodeId,
        m: &M,
        sig: &Signature,
        valid: impl FnOnce(&M) -> bool,
    ) -> Option<CompleteEvent<M>> {
        if self.received_ready.contains(&from) {
            return None;
        }
        let d = m.digest();
        if !verify(sig, &ready_statement(self.id, &d), from) || !valid(m) {
            return None;
        }
        self.received_ready.insert(from);
        let (id, quorum, done) = (self.id, self.params.quorum(), self.completed.is_some());
        let slot = self.slot(m, d);
        slot.readies.push(*sig);
        if slot.readies.len() != quorum || done {
            return None;
        }
        let cert = CompleteCert(QuorumCert::from_sigs(id, d, &slot.readies, quorum));
        let message = slot.message.clone();
        self.completed = Some((message.clone(), cert.clone()));
        Some(CompleteEvent {
            instance: id,
            message,
            cert,
        })
    }

    /// The adopt certificate this node currently holds, without aborting.
    pub fn peek_adopt(&self) -> Option<(M, AdoptCert)> {
        let quorum = self.params.quorum();
        // A node that sent READY answers with that message.
        let preferred = self
            .readied
            .and_then(|d| self.pending.get(&d).map(|p| (d, p)));
        preferred
            .into_iter()
            .chain(self.pending.iter().map(|(d, p)| (*d, p)))
            .find(|(_, p)| p.echoes.len() >= quorum)
            .map(|(d, p)| {
                let cert = AdoptCert(QuorumCert::from_sigs(self.id, d, &p.echoes, quorum));
                (p.message.clone(), cert)
            })
    }

    /// Adopt if some message has `2f + 1` echoes locally, otherwise abort.
    pub fn probe(&mut self) -> ProbeResult<M> {
        match self.peek_adopt() {
            Some((m, cert)) => ProbeResult::Adopt(m, cert),
            None => {
                self.abort = true;
                ProbeResult::NoAdopt
            }
        }
    }

    /// Set the abort flag without probing. READY is never sent afterwards
    /// unless it already was.
    pub fn abort(&mut self) {
        self.abort = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SystemParams {
        SystemParams::new(4).unwrap()
    }

    fn id() -> InstanceId {
        InstanceId {
            sender: NodeId(0),
            view: 1,
        }
    }

    fn inst(me: u32) -> BbcaInstance<Vec<u8>> {
        BbcaInstance::new(id(), NodeId(me), params())
    }

    fn echo_sig(from: u32, m: &[u8]) -> Signature {
        sign(NodeId(from), &echo_statement(id(), &Digest::of(m)))
    }

    fn ready_sig(from: u32, m: &[u8]) -> Signature {
        sign(NodeId(from), &ready_statement(id(), &Digest::of(m)))
    }

    fn yes(_: &Vec<u8>) -> bool {
        true
    }

    #[test]
    fn broadcast_emits_init_and_echo_once() {
        let mut s = inst(0);
        let out = s.broadcast(b"m".to_vec()).unwrap();
        let kinds: Vec<_> = out.iter().map(|m| m.kind).collect();
        assert_eq!(kinds, vec![BbcaKind::Init, BbcaKind::Echo]);
        assert_eq!(
            s.broadcast(b"m".to_vec()),
            Err(BbcaError::AlreadyInitialized(id()))
        );
    }

    #[test]
    fn broadcast_by_non_sender_is_rejected() {
        let mut s = inst(2);
        assert!(matches!(
            s.broadcast(b"m".to_vec()),
            Err(BbcaError::NotSender { .. })
        ));
    }

    #[test]
    fn init_handling() {
        let mut s = inst(1);
        assert!(s.on_init(NodeId(2), &b"m".to_vec(), yes).is_empty());
        assert!(s.on_init(NodeId(0), &b"m".to_vec(), |_| false).is_empty());
        let out = s.on_init(NodeId(0), &b"m".to_vec(), yes);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, BbcaKind::Echo);
        // Equivocating second INIT.
        assert!(s.on_init(NodeId(0), &b"x".to_vec(), yes).is_empty());
    }

    #[test]
    fn ready_after_quorum_of_echoes() {
        let mut s = inst(1);
        let m = b"m".to_vec();
        assert!(s.on_echo(NodeId(0), &m, &echo_sig(0, &m), yes).is_empty());
        assert!(s.on_echo(NodeId(2), &m, &echo_sig(2, &m), yes).is_empty());
        // Duplicate from the same node changes nothing.
        assert!(s.on_echo(NodeId(2), &m, &echo_sig(2, &m), yes).is_empty());
        assert_eq!(s.echo_count(&Digest::of(&m)), 2);
        let out = s.on_echo(NodeId(3), &m, &echo_sig(3, &m), yes);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, BbcaKind::Ready);
        // Fourth echo does not re-send READY.
        assert!(s.on_echo(NodeId(1), &m, &echo_sig(1, &m), yes).is_empty());
    }

    #[test]
    fn invalid_echo_signature_ignored() {
        let mut s = inst(1);
        let m = b"m".to_vec();
        let forged = echo_sig(2, &m);
        assert!(s.on_echo(NodeId(3), &m, &forged, yes).is_empty());
        assert_eq!(s.echo_count(&Digest::of(&m)), 0);
        let other = echo_sig(3, b"other");
        assert!(s.on_echo(NodeId(3), &m, &other, yes).is_empty());
        assert_eq!(s.echo_count(&Digest::of(&m)), 0);
    }

    #[test]
    fn probe_on_fresh_instance_aborts() {
        let mut s = inst(1);
        assert!(!s.probe().is_adopt());
        assert!(s.is_aborted());
    }

    #[test]
    fn probe_after_quorum_adopts() {
        let mut s = inst(1);
        let m = b"m".to_vec();
        for q in [0, 2, 3] {
            s.on_echo(NodeId(q), &m, &echo_sig(q, &m), yes);
        }
        match s.probe() {
            ProbeResult::Adopt(got, cert) => {
                assert_eq!(got, m);
                assert_eq!(cert.sigs.len(), 3);
                assert!(verify_adopt_cert(&cert, &params()));
            }
            ProbeResult::NoAdopt => panic!("expected adopt"),
        }
        assert!(!s.is_aborted());
    }

    #[test]
    fn abort_suppresses_ready_but_not_recording() {
        let mut s = inst(1);
        let m = b"m".to_vec();
        assert!(!s.probe().is_adopt());
        for q in [0, 2, 3] {
            assert!(s.on_echo(NodeId(q), &m, &echo_sig(q, &m), yes).is_empty());
        }
        assert_eq!(s.readied(), None);
        // A later probe upgrades to adopt.
        assert!(s.probe().is_adopt());
    }

    #[test]
    fn completion_needs_quorum_of_readies() {
        let mut s = inst(1);
        let m = b"m".to_vec();
        assert!(s.on_ready(NodeId(0), &m, &ready_sig(0, &m), yes).is_none());
        assert!(s.on_ready(NodeId(2), &m, &ready_sig(2, &m), yes).is_none());
        // f + 1 readies do not make this node send READY (no amplification).
        assert_eq!(s.readied(), None);
        assert!(s.on_ready(NodeId(2), &m, &ready_sig(2, &m), yes).is_none());
        let ev = s.on_ready(NodeId(3), &m, &ready_sig(3, &m), yes).unwrap();
        assert_eq!(ev.message, m);
        assert!(verify_complete_cert(&ev.cert, &params()));
        assert!(s.on_ready(NodeId(1), &m, &ready_sig(1, &m), yes).is_none());
    }

    #[test]
    fn completion_not_blocked_by_abort() {
        let mut s = inst(1);
        let m = b"m".to_vec();
        s.probe();
        for q in [0, 2] {
            s.on_ready(NodeId(q), &m, &ready_sig(q, &m), yes);
        }
        assert!(s.on_ready(NodeId(3), &m, &ready_sig(3, &m), yes).is_some());
    }

    fn adopt_cert() -> AdoptCert {
        let m = b"m".to_vec();
        let mut s = inst(1);
        for q in [0, 2, 3] {
            s.on_echo(NodeId(q), &m, &echo_sig(q, &m), yes);
        }
        s.peek_adopt().unwrap().1
    }

    #[test]
    fn cert_verification() {
        let p = params();
        let cert = adopt_cert();
        assert!(verify_adopt_cert(&cert, &p));

        let mut swapped = cert.clone();
        swapped.0.sigs[0] = echo_sig(swapped.sigs[0].signer.0, b"other");
        assert!(!verify_adopt_cert(&swapped, &p));

        let mut short = cert.clone();
        short.0.sigs.pop();
        assert!(!verify_adopt_cert(&short, &p));

        let mut dup = cert.clone();
        dup.0.sigs[1] = dup.sigs[0];
        assert!(!verify_adopt_cert(&dup, &p));

        // An adopt cert is not a complete cert.
        assert!(!verify_complete_cert(&CompleteCert(cert.0.clone()), &p));
    }
}
