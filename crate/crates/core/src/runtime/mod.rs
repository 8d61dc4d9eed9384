//! Executors: the value-semantics oracle and the post-GCM parallel executor.

pub mod exec;
pub mod ops;
pub mod oracle;
pub mod runner;
pub mod value;

pub use oracle::oracle_execute;
pub use runner::{RunMetrics, RunOptions, Runner};
pub use value::Value;
