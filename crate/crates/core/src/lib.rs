//! Protocol core: mock crypto, the BBCA broadcast primitive, the block DAG,
//! and the per-node consensus state machine.

pub mod bbca;
pub mod chain;
pub mod crypto;
pub mod dag;
