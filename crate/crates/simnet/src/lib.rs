//! Deterministic discrete-event simulation of a BBCA-Chain committee under
//! partial synchrony, with Byzantine strategies and bounded schedule
//! exploration.

pub mod adversary;
pub mod delay;
pub mod explore;
pub mod metrics;
pub mod sim;
pub mod trace;

pub use adversary::{AdversarySpec, Strategy};
pub use delay::{DelayModel, PreGst};
pub use metrics::{trips_to_commit, Trips};
pub use sim::{Injection, Outcome, Scenario, Simulation, StopReason};
pub use trace::{Trace, Violation, ViolationKind};
