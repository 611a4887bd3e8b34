//! Execution side of the planner: data loading, the executor with its
//! function cache, semantic oracles, synthetic workloads and benchmarks.
//! The `semplan` binary wires these together with `semplan-core`.

pub mod bench;
pub mod cache;
pub mod cli;
pub mod compare;
pub mod config;
pub mod corpus;
pub mod data;
pub mod exec;
pub mod oracle;
pub mod pipeline;
pub mod stats;
pub mod workload;

pub use data::{Dataset, Relation, Table};
pub use exec::{ExecOptions, Execution, ExecutionMetrics, Executor};
pub use oracle::{MockOracle, SemanticOracle};
