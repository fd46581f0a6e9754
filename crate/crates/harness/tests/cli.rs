use std::path::PathBuf;
use std::process::{Command, Output};

use bbca_harness::report::{CampaignReport, ExploreReport, RunReport};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbca-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn scratch(name: &str, text: &str) -> String {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn failure_free_run_passes_with_exact_trips() {
    let o = sim(&["run", "--config", &config("failure-free.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: RunReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r.passed && r.prefix_consistent);
    assert_eq!(r.stop, "target-reached");
    let judged: Vec<_> = r.latency.iter().filter(|x| x.expected.is_some()).collect();
    assert!(judged.iter().any(|x| x.kind == "data"));
    for x in judged {
        assert_eq!(x.trips, x.expected.map(|e| e.to_string()), "{x:?}");
    }
    assert!(stderr(&o).contains("PASS  latency"));
}

#[test]
fn silent_leader_view_reported_as_noop() {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("silent.json");
    let o = sim(&[
        "run",
        "--config",
        &config("silent-leader.toml"),
        "--out",
        &out.display().to_string(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let r: RunReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r.logs.len(), 3);
    for f in r.finalized.values() {
        assert_eq!(f[&1], "noop");
    }
}

#[test]
fn every_shipped_config_is_valid_and_passes() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&p).unwrap();
        let o = if text.contains("[explore]") {
            sim(&["explore", "--config", &config(&name), "--depth", "2"])
        } else {
            sim(&["run", "--config", &config(&name)])
        };
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn too_many_byzantine_nodes_is_a_config_error() {
    let p = scratch(
        "two-byz.toml",
        "n = 4\n[network]\nmodel = \"uniform\"\nd = 5\n\
         [[adversary]]\nnode = 1\nstrategy = \"silent\"\n\
         [[adversary]]\nnode = 2\nstrategy = \"replay\"\n",
    );
    let o = sim(&["run", "--config", &p]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("exceed the fault budget f = 1"),
        "{}",
        stderr(&o)
    );
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_and_io_errors_exit_two() {
    assert_eq!(sim(&["run"]).status.code(), Some(2));
    assert_eq!(
        sim(&["campaign", "--config", "x", "--count", "0"])
            .status
            .code(),
        Some(2)
    );
    let o = sim(&["run", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read"));
    let p = scratch(
        "typo.toml",
        "n = 4\nsed = 3\n[network]\nmodel = \"uniform\"\nd = 5\n",
    );
    assert_eq!(sim(&["run", "--config", &p]).status.code(), Some(2));
}

#[test]
fn failed_check_exits_one() {
    // View 2's leader is correct, so it can never be a NO-OP here.
    let p = scratch(
        "wrong-noop.toml",
        "n = 4\nt_max = 100\n[network]\nmodel = \"uniform\"\nd = 10\n\
         [stop]\ntarget_view = 4\n[checks]\nexpect_noop = [2]\n",
    );
    let o = sim(&["run", "--config", &p]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let r: RunReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!r.passed);
    assert!(stderr(&o).contains("FAIL  expect-noop"));
}

#[test]
fn campaign_witness_replays_identically() {
    let cfg = config("equivocating-leader.toml");
    let o = sim(&["campaign", "--config", &cfg, "--count", "6", "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let c: CampaignReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(c.count, 6);
    assert_eq!(c.first_seed, 11);

    let replay = |seed: u64| {
        let o = sim(&["run", "--config", &cfg, "--seed", &seed.to_string()]);
        let mut r: RunReport = serde_json::from_slice(&o.stdout).unwrap();
        r.runtime_ms = 0;
        r
    };
    let a = replay(13);
    assert_eq!(a.seed, 13);
    assert_eq!(a, replay(13));

    let again = sim(&["campaign", "--config", &cfg, "--count", "6"]);
    let d: CampaignReport = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(c.campaign_digest, d.campaign_digest);
}

#[test]
fn explore_depth_zero_is_one_leaf() {
    let o = sim(&[
        "explore",
        "--config",
        &config("chain-explore.toml"),
        "--depth",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: ExploreReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.leaves, 1);
    assert!(!r.partial);

    // An equivocating sender starts from one world per way of splitting
    // its two proposals, so depth 0 already has several leaves.
    let leaves = |depth: &str| {
        let o = sim(&[
            "explore",
            "--config",
            &config("bbca-explore.toml"),
            "--depth",
            depth,
        ]);
        serde_json::from_slice::<ExploreReport>(&o.stdout)
            .unwrap()
            .leaves
    };
    assert!(leaves("0") > 1);
    assert!(leaves("1") > leaves("0"));

    let o = sim(&[
        "explore",
        "--config",
        &config("chain-explore.toml"),
        "--depth",
        "3",
        "--max-leaves",
        "5",
    ]);
    let r: ExploreReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r.partial);
    assert_eq!(r.leaves, 5);
}
