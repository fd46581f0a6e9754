//! Scenario files, lemma checks, campaigns and reports for the simulator.

pub mod config;
pub mod lemmas;
pub mod report;
pub mod run;

pub use config::{Config, ConfigError};
pub use lemmas::{Lemma, Status, Verdict};
