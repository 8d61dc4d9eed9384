//! A heterogeneous-scheduling compiler: a small imperative language lowered
//! to a sea-of-nodes IR with fork-joins, transformed by user schedules, and
//! executed on a simulated host/GPU runtime.

pub mod backend;
pub mod error;
pub mod frontend;
pub mod gcm;
pub mod ir;
pub mod passes;
pub mod pipeline;
pub mod runtime;
pub mod sched;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
