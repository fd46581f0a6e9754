//! Latency measured in network trips.

use std::fmt;

use bbca_core::dag::BlockRef;

use crate::sim::Outcome;

/// A reduced fraction of ticks over the per-hop delay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trips {
    pub num: u64,
    pub den: u64,
}

impl Trips {
    pub fn new(ticks: u64, d: u64) -> Self {
        let g = gcd(ticks, d).max(1);
        Trips {
            num: ticks / g,
            den: d / g,
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_exactly(&self, k: u64) -> bool {
        self.den == 1 && self.num == k
    }
}

impl fmt::Display for Trips {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TripsError {
    NeverSent(BlockRef),
    NotCommittedByAll(BlockRef),
    ZeroDelay,
}

impl fmt::Display for TripsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TripsError::NeverSent(b) => write!(f, "block {b:?} was never sent by a correct node"),
            TripsError::NotCommittedByAll(b) => {
                write!(f, "block {b:?} was not committed by every correct node")
            }
            TripsError::ZeroDelay => f.write_str("per-hop delay is zero"),
        }
    }
}

impl std::error::Error for TripsError {}

/// `(first commit time - send time) / d` for a block every correct node committed.
pub fn trips_to_commit(outcome: &Outcome, block: &BlockRef, d: u64) -> Result<Trips, TripsError> {
    if d == 0 {
        return Err(TripsError::ZeroDelay);
    }
    let (sent, _, _) = outcome
        .trace
        .sent
        .get(block)
        .copied()
        .ok_or(TripsError::NeverSent(*block))?;
    let (first, _) = outcome
        .trace
        .commit_time_all(block, &outcome.correct)
        .ok_or(TripsError::NotCommittedByAll(*block))?;
    Ok(Trips::new(first - sent, d))
}
