//! Single runs, seed campaigns and exhaustive exploration.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use bbca_core::crypto::Digest;
use bbca_simnet::explore::{explore_bbca, explore_chain, BbcaProperty};
use bbca_simnet::{Outcome, Simulation, StopReason, ViolationKind};

use crate::config::{Config, ConfigError, ExploreMode};
use crate::lemmas::{evaluate, latency_table, Expectations, Lemma, Status, Verdict};
use crate::report::{
    self, CampaignReport, ExploreReport, LemmaTally, PropertyVerdict, RunReport, RunSummary,
};

fn expectations(cfg: &Config) -> Expectations {
    Expectations {
        inject_cutoff: cfg.checks.inject_cutoff,
        expect_noop: cfg.checks.expect_noop.clone(),
    }
}

fn millis(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

/// Run one seed and evaluate the configured lemmas.
pub fn simulate(cfg: &Config, seed: u64) -> Result<(Outcome, Vec<Verdict>), ConfigError> {
    let scenario = cfg.scenario(seed);
    let sim = Simulation::new(scenario.clone()).map_err(|msg| ConfigError::Invalid {
        field: "scenario".into(),
        msg,
    })?;
    let out = sim.run();
    let verdicts = evaluate(&cfg.lemmas(), &out, &scenario, &expectations(cfg));
    Ok((out, verdicts))
}

pub fn run(cfg: &Config, seed: u64) -> Result<RunReport, ConfigError> {
    let t0 = Instant::now();
    let (out, lemmas) = simulate(cfg, seed)?;
    let scenario = cfg.scenario(seed);
    Ok(RunReport {
        seed,
        n: out.params.n(),
        f: out.params.f(),
        stop: report::stop_name(out.stop).into(),
        end_time: out.end_time,
        trace_digest: out.trace.digest(),
        passed: lemmas.iter().all(|v| v.status != Status::Fail),
        prefix_consistent: report::prefix_consistent(&out),
        latency: latency_table(&out, &scenario),
        logs: report::logs(&out),
        finalized: report::finalized(&out),
        stats: report::stats(&out),
        lemmas,
        runtime_ms: millis(t0),
    })
}

fn summarize(cfg: &Config, seed: u64) -> Result<RunSummary, ConfigError> {
    let (out, lemmas) = simulate(cfg, seed)?;
    Ok(RunSummary {
        seed,
        stop: report::stop_name(out.stop).into(),
        end_time: out.end_time,
        trace_digest: out.trace.digest(),
        lemmas,
        stats: report::stats(&out),
    })
}

/// Seeds `cfg.seed + i` for `i < count`, spread over `jobs` threads.
/// Runs are independent; the report is assembled in seed order.
pub fn campaign(cfg: &Config, count: u64, jobs: usize) -> Result<CampaignReport, ConfigError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let jobs = jobs.max(1);
    let next = AtomicU64::new(0);
    let results: Mutex<Vec<(u64, Result<RunSummary, ConfigError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = summarize(cfg, cfg.seed.wrapping_add(i));
                results.lock().expect("no panics while held").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("threads joined");
    results.sort_by_key(|(i, _)| *i);
    let runs: Vec<RunSummary> = results
        .into_iter()
        .map(|(_, r)| r)
        .collect::<Result<_, _>>()?;
    Ok(assemble(cfg, count, jobs, &runs, millis(t0)))
}

fn assemble(
    cfg: &Config,
    count: u64,
    jobs: usize,
    runs: &[RunSummary],
    runtime_ms: u64,
) -> CampaignReport {
    let mut tallies: BTreeMap<Lemma, LemmaTally> = BTreeMap::new();
    let mut digest = Vec::new();
    let mut report = CampaignReport {
        first_seed: cfg.seed,
        count,
        jobs,
        passed: true,
        failed_seeds: Vec::new(),
        unfinished_seeds: Vec::new(),
        lemmas: Vec::new(),
        total_events: 0,
        noop_views: 0,
        adopt_probes: 0,
        noadopt_probes: 0,
        campaign_digest: String::new(),
        runtime_ms,
    };
    for r in runs {
        digest.extend_from_slice(r.trace_digest.as_bytes());
        report.total_events += r.stats.events;
        report.noop_views += r.stats.noop_views as u64;
        report.adopt_probes += r.stats.adopt_probes as u64;
        report.noadopt_probes += r.stats.noadopt_probes as u64;
        if !r.passed() {
            report.passed = false;
            report.failed_seeds.push(r.seed);
        }
        if r.stop != report::stop_name(StopReason::TargetReached) {
            report.unfinished_seeds.push(r.seed);
        }
        for v in &r.lemmas {
            let t = tallies.entry(v.lemma).or_insert(LemmaTally {
                lemma: v.lemma,
                pass: 0,
                fail: 0,
                skipped: 0,
                max_metric: None,
                witness: None,
                detail: None,
            });
            match v.status {
                Status::Pass => t.pass += 1,
                Status::Skipped => t.skipped += 1,
                Status::Fail => {
                    t.fail += 1;
                    if t.witness.is_none() {
                        t.witness = v.witness.clone();
                        t.detail = Some(v.detail.clone());
                    }
                }
            }
            if let Some(m) = v.metric {
                t.max_metric = Some(t.max_metric.map_or(m, |x| x.max(m)));
            }
        }
    }
    report.lemmas = tallies.into_values().collect();
    report.campaign_digest = Digest::of(&digest).to_hex();
    report
}

fn chain_property(kind: ViolationKind) -> &'static str {
    match kind {
        ViolationKind::Agreement => "agreement",
        ViolationKind::Prefix => "prefix",
        ViolationKind::Finalize => "finalize",
        ViolationKind::Consistency => "consistency",
        ViolationKind::CompleteAdopt => "complete-adopt",
        ViolationKind::DelayBound => "delay-bound",
    }
}

/// Enumerate interleavings up to `depth`. Chain mode branches over the
/// configured scenario; BBCA mode explores a single instance.
pub fn explore(
    cfg: &Config,
    depth: usize,
    max_leaves: Option<u64>,
) -> Result<ExploreReport, ConfigError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let max_leaves = max_leaves.unwrap_or(cfg.explore.max_leaves);
    let mut counters = BTreeMap::new();
    let (mode, leaves, partial, properties) = match cfg.explore.mode {
        ExploreMode::Chain => {
            let r = explore_chain(cfg.scenario(cfg.seed), depth, cfg.explore.width, max_leaves)
                .map_err(|msg| ConfigError::Invalid {
                    field: "scenario".into(),
                    msg,
                })?;
            counters.insert("unfinished".into(), r.unfinished);
            counters.insert("distinct_traces".into(), r.distinct_traces as u64);
            counters.insert("width".into(), cfg.explore.width as u64);
            let kinds = [
                ViolationKind::Agreement,
                ViolationKind::Prefix,
                ViolationKind::Finalize,
                ViolationKind::Consistency,
                ViolationKind::CompleteAdopt,
                ViolationKind::DelayBound,
            ];
            let props: Vec<PropertyVerdict> = kinds
                .iter()
                .map(|k| {
                    let hit = r.violations.iter().find(|v| v.kind.kind == *k);
                    PropertyVerdict {
                        property: chain_property(*k).into(),
                        status: if hit.is_some() {
                            Status::Fail
                        } else {
                            Status::Pass
                        },
                        path: hit.map(|v| v.path.clone()),
                        detail: hit.map(|v| v.detail.clone()),
                    }
                })
                .collect();
            ("chain".to_string(), r.leaves, r.partial, props)
        }
        ExploreMode::Bbca => {
            let case = cfg.explore.case.expect("validated").into();
            let r = explore_bbca(case, cfg.n, depth, max_leaves);
            counters.insert("validity_leaves".into(), r.validity_leaves);
            counters.insert("completing_leaves".into(), r.completing_leaves);
            counters.insert("noadopt_leaves".into(), r.noadopt_leaves);
            let props: Vec<PropertyVerdict> = [
                BbcaProperty::Validity,
                BbcaProperty::Consistency,
                BbcaProperty::Integrity,
                BbcaProperty::CompleteAdopt,
            ]
            .iter()
            .map(|p| {
                let hit = r.violations.iter().find(|v| v.kind == *p);
                let status = match hit {
                    Some(_) => Status::Fail,
                    None if *p == BbcaProperty::Validity && r.validity_leaves == 0 => {
                        Status::Skipped
                    }
                    None => Status::Pass,
                };
                PropertyVerdict {
                    property: p.to_string(),
                    status,
                    path: hit.map(|v| v.path.clone()),
                    detail: hit.map(|v| v.detail.clone()),
                }
            })
            .collect();
            (format!("bbca/{case}"), r.leaves, r.partial, props)
        }
    };
    let passed = properties.iter().all(|p| p.status != Status::Fail);
    Ok(ExploreReport {
        mode,
        n: cfg.n,
        seed: cfg.seed,
        depth,
        max_leaves,
        leaves,
        partial,
        passed,
        properties,
        counters,
        runtime_ms: millis(t0),
    })
}
