//! Indented text rendering of plans, optionally annotated with estimates.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::cost::Estimator;
use crate::ir::{ColumnRef, NodeId, NodeKind, PlanTree, RelPredicate};
use crate::value::Value;

fn columns(cols: &[ColumnRef]) -> String {
    cols.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn literal(v: &Value) -> String {
    match v {
        Value::Text(s) => format!("'{s}'"),
        other => other.canonical_text(),
    }
}

pub fn predicate(p: &RelPredicate) -> String {
    match p {
        RelPredicate::Compare { column, op, value } => {
            format!("{column} {} {}", op.symbol(), literal(value))
        }
        RelPredicate::CompareColumns { left, op, right } => {
            format!("{left} {} {right}", op.symbol())
        }
        RelPredicate::Between { column, low, high } => {
            format!("{column} BETWEEN {} AND {}", literal(low), literal(high))
        }
        RelPredicate::InList { column, values } => format!(
            "{column} IN ({})",
            values.iter().map(literal).collect::<Vec<_>>().join(", ")
        ),
        RelPredicate::IsNull { column, negated } => {
            format!("{column} IS {}NULL", if *negated { "NOT " } else { "" })
        }
        RelPredicate::And { terms } => terms.iter().map(predicate).collect::<Vec<_>>().join(" AND "),
    }
}

/// One-line description of an operator.
pub fn describe(kind: &NodeKind) -> String {
    match kind {
        NodeKind::TableScan { table } => format!("TableScan {table}"),
        NodeKind::RelFilter { predicate: p } => format!("Filter {}", predicate(p)),
        NodeKind::Project { columns } => format!(
            "Project [{}]",
            columns
                .iter()
                .map(|c| match &c.alias {
                    Some(a) => format!("{} AS {a}", c.column),
                    None => c.column.to_string(),
                })
                .collect::<Vec<_>>()
                .join(", ")
        ),
        NodeKind::InnerJoin { keys } => format!(
            "InnerJoin {}",
            keys.iter()
                .map(|k| format!("{} = {}", k.left, k.right))
                .collect::<Vec<_>>()
                .join(" AND ")
        ),
        NodeKind::CrossJoin { from_semantic_join } => {
            if *from_semantic_join {
                "CrossJoin (semantic join)".to_string()
            } else {
                "CrossJoin".to_string()
            }
        }
        NodeKind::Aggregate { group_by, aggregates } => format!(
            "Aggregate by [{}] computing [{}]",
            columns(group_by),
            aggregates
                .iter()
                .map(|a| format!(
                    "{:?}({}) AS {}",
                    a.func,
                    a.column.as_ref().map_or("*".to_string(), ToString::to_string),
                    a.output
                ))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        NodeKind::Limit { count } => format!("Limit {count}"),
        NodeKind::Union => "Union".to_string(),
        NodeKind::Sort { keys } => format!(
            "Sort {}",
            keys.iter()
                .map(|k| format!("{}{}", k.column, if k.descending { " DESC" } else { "" }))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        NodeKind::SemFilter {
            predicate,
            join_condition,
        } => format!(
            "SemFilter{} '{}'",
            if *join_condition { " (join condition)" } else { "" },
            predicate.template
        ),
        NodeKind::SemProject { predicate, output } => {
            format!("SemProject {output} := {:?} '{}'", predicate.output, predicate.template)
        }
    }
}

/// Renders the tree top-down, two spaces per level, with node ids and, when
/// an estimator is given, estimated rows.
pub fn explain(tree: &PlanTree, est: Option<&Estimator<'_>>) -> String {
    let mut out = String::new();
    let mut stack: Vec<(NodeId, usize)> = alloc::vec![(tree.root, 0)];
    while let Some((id, depth)) = stack.pop() {
        let Ok(node) = tree.node(id) else { continue };
        let _ = write!(out, "{:indent$}{id} {}", "", describe(&node.kind), indent = depth * 2);
        if let Some(rows) = est.and_then(|e| e.cardinality(id).ok()) {
            let _ = write!(out, "  rows={}", format_rows(rows));
        }
        out.push('\n');
        for &c in node.children.iter().rev() {
            stack.push((c, depth + 1));
        }
    }
    out
}

fn format_rows(x: f64) -> String {
    if x > -1e15 && x < 1e15 && x == (x as i64) as f64 {
        format!("{}", x as i64)
    } else {
        format!("{x:.2}")
    }
}
