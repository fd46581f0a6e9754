//! Post-run property checks.
//!
//! Safety properties are checked online by the simulator trace; this module
//! turns its violations into verdicts and adds the properties that can only
//! be judged on a finished run (growth, censorship, view synchronization,
//! liveness deadline, latency).

use std::collections::BTreeSet;

use bbca_core::bbca::View;
use bbca_core::chain::{get_proposer, Finalized};
use bbca_core::dag::BlockType;
use bbca_simnet::{DelayModel, Outcome, Scenario, Trips, ViolationKind};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lemma {
    Agreement,
    Prefix,
    Finalize,
    Consistency,
    CompleteAdopt,
    DelayBound,
    Growth,
    Censorship,
    ViewSync,
    Liveness,
    Latency,
    LogsIdentical,
    ExpectNoop,
}

impl Lemma {
    pub const ALL: [Lemma; 13] = [
        Lemma::Agreement,
        Lemma::Prefix,
        Lemma::Finalize,
        Lemma::Consistency,
        Lemma::CompleteAdopt,
        Lemma::DelayBound,
        Lemma::Growth,
        Lemma::Censorship,
        Lemma::ViewSync,
        Lemma::Liveness,
        Lemma::Latency,
        Lemma::LogsIdentical,
        Lemma::ExpectNoop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Lemma::Agreement => "agreement",
            Lemma::Prefix => "prefix",
            Lemma::Finalize => "finalize",
            Lemma::Consistency => "consistency",
            Lemma::CompleteAdopt => "complete-adopt",
            Lemma::DelayBound => "delay-bound",
            Lemma::Growth => "growth",
            Lemma::Censorship => "censorship",
            Lemma::ViewSync => "view-sync",
            Lemma::Liveness => "liveness",
            Lemma::Latency => "latency",
            Lemma::LogsIdentical => "logs-identical",
            Lemma::ExpectNoop => "expect-noop",
        }
    }

    fn violation_kind(self) -> Option<ViolationKind> {
        Some(match self {
            Lemma::Agreement => ViolationKind::Agreement,
            Lemma::Prefix => ViolationKind::Prefix,
            Lemma::Finalize => ViolationKind::Finalize,
            Lemma::Consistency => ViolationKind::Consistency,
            Lemma::CompleteAdopt => ViolationKind::CompleteAdopt,
            Lemma::DelayBound => ViolationKind::DelayBound,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// Where to look: rerun `seed` and stop after `event_index` events.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub seed: u64,
    pub event_index: u64,
    pub time: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub lemma: Lemma,
    pub status: Status,
    pub detail: String,
    /// Lemma-specific measurement: the worst view-entry spread for
    /// view-sync, the latest commit tick for liveness.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl Verdict {
    fn pass(lemma: Lemma, detail: impl Into<String>) -> Self {
        Verdict {
            lemma,
            status: Status::Pass,
            detail: detail.into(),
            metric: None,
            witness: None,
        }
    }

    fn skip(lemma: Lemma, why: impl Into<String>) -> Self {
        Verdict {
            status: Status::Skipped,
            ..Self::pass(lemma, why)
        }
    }

    fn fail(lemma: Lemma, detail: impl Into<String>, witness: Witness) -> Self {
        Verdict {
            status: Status::Fail,
            witness: Some(witness),
            ..Self::pass(lemma, detail)
        }
    }

    fn with_metric(mut self, m: u64) -> Self {
        self.metric = Some(m);
        self
    }
}

/// Extra expectations that come from the scenario file, not the run.
#[derive(Clone, Debug, Default)]
pub struct Expectations {
    pub inject_cutoff: Option<u64>,
    pub expect_noop: Vec<View>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub kind: String,
    pub view: View,
    pub block: String,
    pub author: u32,
    pub sent: u64,
    /// First tick at which a correct node committed it, if all did.
    pub committed: Option<u64>,
    /// Commit latency in units of the per-hop delay.
    pub trips: Option<String>,
    /// The failure-free figure, where one applies.
    pub expected: Option<u64>,
}

/// Commit latency of every backbone and data block sent by a correct node.
///
/// Expected figures apply only to failure-free uniform-delay runs: 3 trips
/// for a backbone block, and 4 for a data block that reached the leader
/// exactly one hop before the proposal that first commits it.
pub fn latency_table(out: &Outcome, scenario: &Scenario) -> Vec<LatencyRow> {
    let d = scenario.delay.delta();
    let failure_free =
        matches!(scenario.delay, DelayModel::Uniform { .. }) && scenario.adversary.nodes.is_empty();
    let reference = out.correct.first().map(|n| out.log(*n)).unwrap_or(&[]);
    // Blocks proposed after the run's commit horizon are not judged.
    let horizon = out.common_view();
    let mut rows = Vec::new();
    for (b, &(sent, author, kind)) in &out.trace.sent {
        if kind == BlockType::NewView {
            continue;
        }
        let committed = out
            .trace
            .commit_time_all(b, &out.correct)
            .map(|(min, _)| min);
        let view = out.nodes[author.index()]
            .dag()
            .get(b)
            .map_or(0, |blk| blk.view());
        let expected = match kind {
            _ if !failure_free || view > horizon => None,
            BlockType::Backbone => Some(3),
            BlockType::Data => {
                // The backbone block whose order first includes this one.
                let pos = reference.iter().position(|e| e.block == *b);
                let carrier = pos.and_then(|p| {
                    reference[p..]
                        .iter()
                        .find(|e| e.kind == BlockType::Backbone)
                });
                let carrier_sent = carrier.and_then(|e| out.trace.sent.get(&e.block));
                match carrier_sent {
                    Some((t, _, _)) if *t == sent + d => Some(4),
                    _ => None,
                }
            }
            BlockType::NewView => None,
        };
        rows.push(LatencyRow {
            kind: kind.to_string(),
            view,
            block: b.to_hex(),
            author: author.0,
            sent,
            committed,
            trips: committed.map(|c| Trips::new(c - sent, d).to_string()),
            expected,
        });
    }
    rows.sort_by(|a, b| (a.sent, &a.kind, &a.block).cmp(&(b.sent, &b.kind, &b.block)));
    rows
}

pub fn evaluate(
    lemmas: &[Lemma],
    out: &Outcome,
    scenario: &Scenario,
    exp: &Expectations,
) -> Vec<Verdict> {
    let end = Witness {
        seed: scenario.seed,
        event_index: out.trace.events,
        time: out.end_time,
    };
    lemmas
        .iter()
        .map(|&l| match l.violation_kind() {
            Some(kind) => trace_verdict(l, kind, out, scenario),
            None => match l {
                Lemma::Growth => growth(out, scenario, &end),
                Lemma::Censorship => censorship(out, exp, &end),
                Lemma::ViewSync => view_sync(out, scenario),
                Lemma::Liveness => liveness(out, scenario, &end),
                Lemma::Latency => latency(out, scenario, &end),
                Lemma::LogsIdentical => logs_identical(out, &end),
                Lemma::ExpectNoop => expect_noop(out, exp, &end),
                _ => unreachable!("online lemma {l:?}"),
            },
        })
        .collect()
}

fn trace_verdict(l: Lemma, kind: ViolationKind, out: &Outcome, scenario: &Scenario) -> Verdict {
    if l == Lemma::CompleteAdopt && !scenario.audit {
        return Verdict::skip(l, "audit disabled");
    }
    let mut hits = out.trace.violations.iter().filter(|v| v.kind == kind);
    match hits.next() {
        None => Verdict::pass(l, ""),
        Some(v) => Verdict::fail(
            l,
            format!("{} (+{} more)", v.detail, hits.count()),
            Witness {
                seed: scenario.seed,
                event_index: v.event_index,
                time: v.time,
            },
        ),
    }
}

fn growth(out: &Outcome, scenario: &Scenario, end: &Witness) -> Verdict {
    let g = scenario.delay.gst();
    if out.end_time < g {
        return Verdict::skip(Lemma::Growth, "run ended before GST");
    }
    // Each correct node must commit some finalized backbone block after GST.
    for n in &out.correct {
        let grew = out.finalized(*n).values().any(|f| match f {
            Finalized::Block(b) => out
                .trace
                .commits
                .get(b)
                .and_then(|m| m.get(n))
                .is_some_and(|t| *t >= g),
            Finalized::NoOp => false,
        });
        if !grew {
            return Verdict::fail(
                Lemma::Growth,
                format!("{n} committed no backbone block after GST {g}"),
                end.clone(),
            );
        }
    }
    Verdict::pass(Lemma::Growth, "")
}

fn censorship(out: &Outcome, exp: &Expectations, end: &Witness) -> Verdict {
    let cutoff = exp.inject_cutoff.unwrap_or(u64::MAX);
    let mut checked = 0;
    for (b, &(sent, author, kind)) in &out.trace.sent {
        if kind != BlockType::Data || sent > cutoff {
            continue;
        }
        checked += 1;
        if out.trace.commit_time_all(b, &out.correct).is_none() {
            return Verdict::fail(
                Lemma::Censorship,
                format!("data block {b:?} from {author}, sent at {sent}, not committed by every correct node"),
                end.clone(),
            );
        }
    }
    Verdict::pass(Lemma::Censorship, format!("{checked} data blocks"))
}

/// Views entered first at or after GST. Entries driven by a certificate
/// (cases 1-4) must all land within `delta` of the first; entries on the
/// noadopt path within `2 * delta`.
fn view_sync(out: &Outcome, scenario: &Scenario) -> Verdict {
    let g = scenario.delay.gst();
    let delta = scenario.delay.delta();
    let mut worst = 0;
    let mut views = 0;
    for (&v, entries) in out.trace.view_entries.range(2..) {
        let Some((first_node, first)) = entries
            .iter()
            .filter(|(n, _)| out.correct.contains(n))
            .min_by_key(|(n, e)| (e.time, **n))
        else {
            continue;
        };
        if first.time < g {
            continue;
        }
        let bound = if (1..=4).contains(&first.cause.case()) {
            delta
        } else {
            2 * delta
        };
        let mut last = first.time;
        let mut last_event = first.event;
        let mut complete = true;
        for n in &out.correct {
            match entries.get(n) {
                Some(e) => {
                    if e.time > last {
                        last = e.time;
                        last_event = e.event;
                    }
                }
                None => complete = false,
            }
        }
        if !complete {
            // Someone has not entered yet: fine unless the bound has passed.
            if out.end_time > first.time + bound {
                return Verdict::fail(
                    Lemma::ViewSync,
                    format!("view {v}: first entered by {first_node} at {}, not every correct node followed by {}", first.time, out.end_time),
                    Witness { seed: scenario.seed, event_index: out.trace.events, time: out.end_time },
                )
                .with_metric(out.end_time - first.time);
            }
            continue;
        }
        let spread = last - first.time;
        worst = worst.max(spread);
        views += 1;
        if spread > bound {
            return Verdict::fail(
                Lemma::ViewSync,
                format!(
                    "view {v}: spread {spread} > {bound} (first {first_node} at {}, case {})",
                    first.time,
                    first.cause.case()
                ),
                Witness {
                    seed: scenario.seed,
                    event_index: last_event,
                    time: last,
                },
            )
            .with_metric(spread);
        }
    }
    Verdict::pass(
        Lemma::ViewSync,
        format!("{views} post-GST views, max spread {worst}"),
    )
    .with_metric(worst)
}

/// The first view entered at or after GST must have a correct leader; every
/// correct node then commits that leader's block by `gst + t_max + 4 delta`.
fn liveness(out: &Outcome, scenario: &Scenario, end: &Witness) -> Verdict {
    let g = scenario.delay.gst();
    let delta = scenario.delay.delta();
    let first_post_gst = out.trace.view_entries.iter().find_map(|(v, entries)| {
        let t = entries
            .iter()
            .filter(|(n, _)| out.correct.contains(n))
            .map(|(_, e)| e.time)
            .min()?;
        (t >= g).then_some(*v)
    });
    let Some(v) = first_post_gst else {
        return Verdict::skip(Lemma::Liveness, "no view entered after GST");
    };
    let leader = get_proposer(v, &out.params);
    if !out.correct.contains(&leader) {
        return Verdict::skip(
            Lemma::Liveness,
            format!("leader {leader} of the first post-GST view {v} is byzantine"),
        );
    }
    let deadline = g + scenario.t_max + 4 * delta;
    let Some((_, _, block)) = out.trace.proposals.get(&v).copied() else {
        return Verdict::fail(
            Lemma::Liveness,
            format!("{leader} never proposed for view {v}"),
            end.clone(),
        );
    };
    match out.trace.commit_time_all(&block, &out.correct) {
        Some((_, last)) if last <= deadline => Verdict::pass(
            Lemma::Liveness,
            format!("view {v} committed by all at {last}, deadline {deadline}"),
        )
        .with_metric(last),
        Some((_, last)) => Verdict::fail(
            Lemma::Liveness,
            format!("view {v} committed by all only at {last}, deadline {deadline}"),
            Witness {
                seed: scenario.seed,
                event_index: out.trace.events,
                time: last,
            },
        )
        .with_metric(last),
        None => Verdict::fail(
            Lemma::Liveness,
            format!("view {v} block of {leader} not committed by every correct node"),
            end.clone(),
        ),
    }
}

fn latency(out: &Outcome, scenario: &Scenario, end: &Witness) -> Verdict {
    let rows = latency_table(out, scenario);
    let judged: Vec<&LatencyRow> = rows.iter().filter(|r| r.expected.is_some()).collect();
    if judged.is_empty() {
        return Verdict::skip(Lemma::Latency, "no failure-free figures apply");
    }
    let d = scenario.delay.delta();
    for r in &judged {
        let exact = match (r.committed, r.expected) {
            (Some(c), Some(e)) => Trips::new(c - r.sent, d).is_exactly(e),
            _ => false,
        };
        if !exact {
            return Verdict::fail(
                Lemma::Latency,
                format!(
                    "{} block {} of view {}: {} trips, expected {}",
                    r.kind,
                    &r.block[..16],
                    r.view,
                    r.trips.as_deref().unwrap_or("never"),
                    r.expected.unwrap_or(0)
                ),
                end.clone(),
            );
        }
    }
    Verdict::pass(
        Lemma::Latency,
        format!("{} blocks at the expected trip count", judged.len()),
    )
}

fn logs_identical(out: &Outcome, end: &Witness) -> Verdict {
    let v = out.common_view();
    if out.logs_identical() {
        Verdict::pass(Lemma::LogsIdentical, format!("through view {v}"))
    } else {
        Verdict::fail(
            Lemma::LogsIdentical,
            format!("correct logs differ through view {v}"),
            end.clone(),
        )
    }
}

fn expect_noop(out: &Outcome, exp: &Expectations, end: &Witness) -> Verdict {
    if exp.expect_noop.is_empty() {
        return Verdict::skip(Lemma::ExpectNoop, "no views listed");
    }
    let views: BTreeSet<View> = exp.expect_noop.iter().copied().collect();
    for v in &views {
        for n in &out.correct {
            if out.finalized(*n).get(v) != Some(&Finalized::NoOp) {
                return Verdict::fail(
                    Lemma::ExpectNoop,
                    format!("{n} has view {v} as {:?}", out.finalized(*n).get(v)),
                    end.clone(),
                );
            }
        }
    }
    Verdict::pass(Lemma::ExpectNoop, format!("views {views:?}"))
}
