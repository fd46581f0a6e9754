//! Scenario files.
//!
//! A scenario is a TOML document. `f` is never written down; it follows
//! from `n`. Unknown keys are rejected so a typo cannot silently fall back
//! to a default. See `configs/` at the repository root for examples.

use std::collections::BTreeSet;
use std::path::Path;

use bbca_core::bbca::View;
use bbca_core::crypto::{NodeId, SystemParams};
use bbca_simnet::explore::BbcaCase;
use bbca_simnet::{AdversarySpec, DelayModel, Injection, PreGst, Scenario, Strategy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lemmas::Lemma;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub network: Network,
    /// View timer; defaults to 10 times the post-GST delay bound.
    pub t_max: Option<u64>,
    #[serde(default)]
    pub stop: Stop,
    #[serde(default)]
    pub adversary: Vec<AdversaryEntry>,
    #[serde(default)]
    pub inject: Vec<InjectEntry>,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub explore: ExploreOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Network {
    Uniform {
        d: u64,
    },
    PartialSync {
        gst: u64,
        delta: u64,
        pre_gst: PreGstPolicy,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PreGstPolicy {
    Adversarial { max: u64 },
    DropUntilGst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stop {
    /// Stop once every correct node has committed through this view.
    #[serde(default = "default_target")]
    pub target_view: View,
    /// Hard cap on simulated time.
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
}

fn default_target() -> View {
    10
}

fn default_max_ticks() -> u64 {
    1_000_000
}

impl Default for Stop {
    fn default() -> Self {
        Stop {
            target_view: default_target(),
            max_ticks: default_max_ticks(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Silent,
    EquivocateInit,
    EquivocateData,
    WithholdReady,
    Replay,
    DelayOwnMessages,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryEntry {
    pub node: u32,
    pub strategy: StrategyName,
    /// Extra delay bound, for `delay-own-messages` only.
    pub max: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectEntry {
    pub node: u32,
    pub tick: u64,
    pub payload: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    /// Lemmas to evaluate; all of them when absent.
    pub lemmas: Option<Vec<Lemma>>,
    /// End-of-run probe of every correct node for Complete-Adopt.
    #[serde(default = "yes")]
    pub audit: bool,
    /// Data blocks sent after this tick are exempt from the censorship check.
    pub inject_cutoff: Option<u64>,
    /// Views every correct node must finalize as NO-OP.
    #[serde(default)]
    pub expect_noop: Vec<View>,
}

fn yes() -> bool {
    true
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            lemmas: None,
            audit: true,
            inject_cutoff: None,
            expect_noop: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExploreMode {
    /// Whole-system interleavings of the configured scenario.
    #[default]
    Chain,
    /// A single BBCA instance.
    Bbca,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseName {
    CorrectSender,
    EquivocatingSender,
    CrashedNodes,
    NoadoptThenReady,
}

impl From<CaseName> for BbcaCase {
    fn from(c: CaseName) -> Self {
        match c {
            CaseName::CorrectSender => BbcaCase::CorrectSender,
            CaseName::EquivocatingSender => BbcaCase::EquivocatingSender,
            CaseName::CrashedNodes => BbcaCase::CrashedNodes,
            CaseName::NoadoptThenReady => BbcaCase::NoAdoptThenReady,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreOptions {
    #[serde(default)]
    pub mode: ExploreMode,
    /// Required in `bbca` mode.
    pub case: Option<CaseName>,
    /// Chain mode: how many of the earliest pending events to branch on.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_leaves")]
    pub max_leaves: u64,
}

fn default_width() -> usize {
    3
}

fn default_leaves() -> u64 {
    100_000
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            mode: ExploreMode::Chain,
            case: None,
            width: default_width(),
            max_leaves: default_leaves(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parse and validate.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> Result<SystemParams, ConfigError> {
        SystemParams::new(self.n).map_err(|e| invalid("n", e.to_string()))
    }

    pub fn delta(&self) -> u64 {
        match self.network {
            Network::Uniform { d } => d,
            Network::PartialSync { delta, .. } => delta,
        }
    }

    pub fn t_max(&self) -> u64 {
        self.t_max.unwrap_or(10 * self.delta())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let params = self.params()?;
        match self.network {
            Network::Uniform { d: 0 } => return Err(invalid("network.d", "must be positive")),
            Network::PartialSync { delta: 0, .. } => {
                return Err(invalid("network.delta", "must be positive"))
            }
            Network::PartialSync {
                pre_gst: PreGstPolicy::Adversarial { max: 0 },
                ..
            } => return Err(invalid("network.pre_gst.max", "must be positive")),
            _ => {}
        }
        if self.t_max() == 0 {
            return Err(invalid("t_max", "must be positive"));
        }
        if self.stop.target_view == 0 {
            return Err(invalid("stop.target_view", "must be at least 1"));
        }

        let mut seen = BTreeSet::new();
        for (i, a) in self.adversary.iter().enumerate() {
            if a.node as usize >= self.n {
                return Err(invalid(
                    format!("adversary[{i}].node"),
                    format!("{} is outside 0..{}", a.node, self.n),
                ));
            }
            if !seen.insert(a.node) {
                return Err(invalid(
                    format!("adversary[{i}].node"),
                    format!("node {} listed twice", a.node),
                ));
            }
            match (a.strategy, a.max) {
                (StrategyName::DelayOwnMessages, None) => {
                    return Err(invalid(
                        format!("adversary[{i}].max"),
                        "required for delay-own-messages",
                    ))
                }
                (StrategyName::DelayOwnMessages, Some(_)) | (_, None) => {}
                (_, Some(_)) => {
                    return Err(invalid(
                        format!("adversary[{i}].max"),
                        "only meaningful for delay-own-messages",
                    ))
                }
            }
        }
        if self.adversary.len() > params.f() {
            return Err(invalid(
                "adversary",
                format!(
                    "{} byzantine nodes exceed the fault budget f = {} for n = {}",
                    self.adversary.len(),
                    params.f(),
                    self.n
                ),
            ));
        }
        for (i, inj) in self.inject.iter().enumerate() {
            if inj.node as usize >= self.n {
                return Err(invalid(
                    format!("inject[{i}].node"),
                    format!("{} is outside 0..{}", inj.node, self.n),
                ));
            }
        }
        if let Some(v) = self.checks.expect_noop.iter().find(|v| **v == 0) {
            return Err(invalid(
                "checks.expect_noop",
                format!("view {v} is genesis"),
            ));
        }
        if self.explore.width == 0 {
            return Err(invalid("explore.width", "must be at least 1"));
        }
        if self.explore.mode == ExploreMode::Bbca && self.explore.case.is_none() {
            return Err(invalid("explore.case", "required in bbca mode"));
        }
        Ok(())
    }

    pub fn lemmas(&self) -> Vec<Lemma> {
        self.checks
            .lemmas
            .clone()
            .unwrap_or_else(|| Lemma::ALL.to_vec())
    }

    /// The simulator scenario for one seed.
    pub fn scenario(&self, seed: u64) -> Scenario {
        let delay = match self.network {
            Network::Uniform { d } => DelayModel::Uniform { d },
            Network::PartialSync {
                gst,
                delta,
                pre_gst,
            } => DelayModel::PartialSync {
                gst,
                delta,
                pre_gst: match pre_gst {
                    PreGstPolicy::Adversarial { max } => PreGst::Adversarial { max },
                    PreGstPolicy::DropUntilGst => PreGst::DropUntilGst,
                },
            },
        };
        let mut adversary = AdversarySpec::none();
        for a in &self.adversary {
            let s = match a.strategy {
                StrategyName::Silent => Strategy::Silent,
                StrategyName::EquivocateInit => Strategy::EquivocateInit,
                StrategyName::EquivocateData => Strategy::EquivocateData,
                StrategyName::WithholdReady => Strategy::WithholdReady,
                StrategyName::Replay => Strategy::Replay,
                StrategyName::DelayOwnMessages => Strategy::DelayOwnMessages {
                    max: a.max.unwrap_or(0),
                },
            };
            adversary.nodes.insert(NodeId(a.node), s);
        }
        Scenario {
            n: self.n,
            seed,
            delay,
            t_max: self.t_max(),
            adversary,
            injections: self
                .inject
                .iter()
                .map(|i| Injection {
                    node: NodeId(i.node),
                    tick: i.tick,
                    payload: i.payload.as_bytes().to_vec(),
                })
                .collect(),
            max_ticks: self.stop.max_ticks,
            target_view: Some(self.stop.target_view),
            audit: self.checks.audit,
            keep_lines: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
n = 4
seed = 7

[network]
model = "partial-sync"
gst = 300
delta = 10
pre_gst = { policy = "adversarial", max = 120 }

[[adversary]]
node = 1
strategy = "equivocate-init"

[[inject]]
node = 0
tick = 5
payload = "hello"
"#;

    #[test]
    fn parses_a_full_config() {
        let cfg = Config::parse(BASE).unwrap();
        assert_eq!(cfg.t_max(), 100);
        assert_eq!(cfg.stop, Stop::default());
        let s = cfg.scenario(9);
        assert_eq!(s.seed, 9);
        assert_eq!(
            s.adversary.strategy(NodeId(1)),
            Some(Strategy::EquivocateInit)
        );
        assert_eq!(s.injections[0].payload, b"hello");
        assert_eq!(cfg.lemmas(), Lemma::ALL.to_vec());
    }

    fn err(text: &str) -> String {
        Config::parse(text).unwrap_err().to_string()
    }

    #[test]
    fn unknown_and_derived_keys_are_rejected() {
        assert!(err(&format!("f = 1\n{BASE}")).contains("unknown field `f`"));
        let typo = BASE.replace("delta = 10", "delta = 10\ndelt = 3");
        assert!(err(&typo).contains("delt"));
    }

    #[test]
    fn errors_name_the_field() {
        let two = format!("{BASE}\n[[adversary]]\nnode = 2\nstrategy = \"silent\"\n");
        assert!(err(&two).starts_with("adversary: 2 byzantine nodes exceed"));
        let far = BASE.replace("node = 1", "node = 4");
        assert_eq!(err(&far), "adversary[0].node: 4 is outside 0..4");
        let bad = BASE
            .replace("tick = 5", "tick = 5\n")
            .replace("node = 0", "node = 9");
        assert_eq!(err(&bad), "inject[0].node: 9 is outside 0..4");
        let zero = BASE.replace("delta = 10", "delta = 0");
        assert_eq!(err(&zero), "network.delta: must be positive");
        let delay = BASE.replace("equivocate-init", "delay-own-messages");
        assert_eq!(
            err(&delay),
            "adversary[0].max: required for delay-own-messages"
        );
        let wrong = BASE.replace("strategy = \"equivocate-init\"", "strategy = \"nope\"");
        assert!(err(&wrong).contains("nope"));
    }

    #[test]
    fn uniform_network_and_lemma_selection() {
        let text = r#"
n = 7
[network]
model = "uniform"
d = 5
[checks]
lemmas = ["agreement", "view-sync"]
expect_noop = [1]
[stop]
target_view = 4
"#;
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.lemmas(), vec![Lemma::Agreement, Lemma::ViewSync]);
        assert_eq!(cfg.scenario(0).delay, DelayModel::Uniform { d: 5 });
        assert_eq!(cfg.t_max(), 50);
    }
}
