//! Planning core for hybrid relational/semantic queries.
//!
//! The crate is `no_std` (it only needs `alloc`): it holds the plan IR, the
//! SQL dialect front end, the equivalence-preserving rewrites, the greedy
//! pull-up pass, the cost model and the dynamic-programming placer. Data
//! access, the executor and the command-line tool live in `semplan-engine`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod brute;
pub mod cost;
pub mod dp;
pub mod explain;
pub mod ir;
pub mod optimize;
pub mod oracle;
pub mod placement;
pub mod pullup;
pub mod rewrite;
pub mod sql;
pub mod synth;
pub mod value;

use alloc::string::String;

pub use ir::{
    is_block_operator, isomorphic, tables_under, validate, ColumnRef, NodeId, NodeKind, OperatorKind, PlanNode,
    PlanTree, SemanticPredicate, Violation,
};
pub use value::{ColumnType, Value};

/// Errors raised by tree accessors and mutations.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum IrError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a detachable unary node")]
    NotUnary(NodeId),
    #[error("node {0} has no parent")]
    NoParent(NodeId),
    #[error("node {0} is missing a child")]
    Arity(NodeId),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("malformed placeholder `{0}`")]
    BadPlaceholder(String),
}
