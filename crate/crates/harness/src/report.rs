//! JSON report shapes. Digests are lowercase hex; node ids render as `n<i>`.

use std::collections::BTreeMap;

use bbca_core::bbca::View;
use bbca_core::chain::Finalized;
use bbca_simnet::{Outcome, StopReason};
use serde::{Deserialize, Serialize};

use crate::lemmas::{LatencyRow, Lemma, Status, Verdict, Witness};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRow {
    pub position: u64,
    pub view: View,
    pub block: String,
    pub kind: String,
    pub author: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    /// Highest view any correct node reached.
    pub max_view: View,
    /// Highest view every correct node committed through.
    pub common_view: View,
    pub noop_views: usize,
    pub adopt_probes: usize,
    pub noadopt_probes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub n: usize,
    pub f: usize,
    pub stop: String,
    pub end_time: u64,
    pub trace_digest: String,
    pub passed: bool,
    pub prefix_consistent: bool,
    pub lemmas: Vec<Verdict>,
    pub latency: Vec<LatencyRow>,
    pub logs: BTreeMap<String, Vec<LogRow>>,
    pub finalized: BTreeMap<String, BTreeMap<View, String>>,
    pub stats: RunStats,
    /// Wall-clock time; the only field that differs between reruns.
    pub runtime_ms: u64,
}

pub fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::TargetReached => "target-reached",
        StopReason::Quiescent => "quiescent",
        StopReason::TickLimit => "tick-limit",
    }
}

fn finalized_name(f: &Finalized) -> String {
    match f {
        Finalized::Block(b) => b.to_hex(),
        Finalized::NoOp => "noop".to_string(),
    }
}

/// Whether every pair of correct logs is prefix-related.
pub fn prefix_consistent(out: &Outcome) -> bool {
    let logs: Vec<_> = out.correct.iter().map(|n| out.log(*n)).collect();
    logs.iter().all(|a| {
        logs.iter().all(|b| {
            let k = a.len().min(b.len());
            a[..k] == b[..k]
        })
    })
}

pub fn logs(out: &Outcome) -> BTreeMap<String, Vec<LogRow>> {
    out.correct
        .iter()
        .map(|n| {
            let rows = out
                .log(*n)
                .iter()
                .map(|e| LogRow {
                    position: e.position,
                    view: e.view,
                    block: e.block.to_hex(),
                    kind: e.kind.to_string(),
                    author: e.author.0,
                })
                .collect();
            (n.to_string(), rows)
        })
        .collect()
}

pub fn finalized(out: &Outcome) -> BTreeMap<String, BTreeMap<View, String>> {
    out.correct
        .iter()
        .map(|n| {
            let m = out
                .finalized(*n)
                .iter()
                .map(|(v, f)| (*v, finalized_name(f)))
                .collect();
            (n.to_string(), m)
        })
        .collect()
}

pub fn stats(out: &Outcome) -> RunStats {
    let max_view = out
        .correct
        .iter()
        .map(|n| out.nodes[n.index()].view())
        .max()
        .unwrap_or(0);
    let noop_views = out.correct.first().map_or(0, |n| {
        out.finalized(*n)
            .values()
            .filter(|f| **f == Finalized::NoOp)
            .count()
    });
    let runtime_probes = out
        .trace
        .probes
        .iter()
        .filter(|p| p.trigger != bbca_core::chain::ProbeTrigger::Forced);
    let (adopt, noadopt): (Vec<&_>, Vec<&_>) = runtime_probes.partition(|p| p.adopted.is_some());
    RunStats {
        events: out.trace.events,
        max_view,
        common_view: out.common_view(),
        noop_views,
        adopt_probes: adopt.len(),
        noadopt_probes: noadopt.len(),
    }
}

/// One run inside a campaign, without logs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stop: String,
    pub end_time: u64,
    pub trace_digest: String,
    pub lemmas: Vec<Verdict>,
    pub stats: RunStats,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.lemmas.iter().all(|v| v.status != Status::Fail)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaTally {
    pub lemma: Lemma,
    pub pass: u64,
    pub fail: u64,
    pub skipped: u64,
    /// Largest metric seen across runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_metric: Option<u64>,
    /// First failing run, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub first_seed: u64,
    pub count: u64,
    pub jobs: usize,
    pub passed: bool,
    pub failed_seeds: Vec<u64>,
    pub unfinished_seeds: Vec<u64>,
    pub lemmas: Vec<LemmaTally>,
    pub total_events: u64,
    pub noop_views: u64,
    pub adopt_probes: u64,
    pub noadopt_probes: u64,
    /// Digest over every run's trace digest in seed order.
    pub campaign_digest: String,
    pub runtime_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyVerdict {
    pub property: String,
    pub status: Status,
    /// Choice indices from the root to the offending leaf.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub mode: String,
    pub n: usize,
    pub seed: u64,
    pub depth: usize,
    pub max_leaves: u64,
    pub leaves: u64,
    pub partial: bool,
    pub passed: bool,
    pub properties: Vec<PropertyVerdict>,
    /// Mode-specific counters.
    pub counters: BTreeMap<String, u64>,
    pub runtime_ms: u64,
}
