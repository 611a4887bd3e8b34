//! Equivalence-preserving rewrites applied before filter placement.
//!
//! * Semantic-join decomposition turns a semantic join condition into an
//!   ordinary semantic filter over the join (a cross join when no equi keys
//!   exist), then lifts it above the relational filters sitting on it so
//!   they run first.
//! * Semantic-projection pull-up moves a `SemProject` up past operators that
//!   do not read its output, so the model sees fewer rows. It stops below
//!   another semantic projection. Filters reading the
//!   output travel with it, restacked directly above it in their original
//!   order. Crossed projections are widened with the columns the moved nodes
//!   read.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ir::{
    is_block_operator, validate, ColumnRef, NodeId, NodeKind, OperatorKind, OutputColumn, PlanTree, Violation,
};
use crate::IrError;

pub const SEMANTIC_JOIN_DECOMPOSITION: &str = "semantic_join_decomposition";
pub const SEMANTIC_PROJECTION_PULLUP: &str = "semantic_projection_pullup";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub rewrite: String,
    pub nodes: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RewriteError {
    #[error("semantic join {node} is not directly above a join")]
    NotAboveJoin { node: NodeId },
    #[error("node {0} is not a semantic join condition")]
    NotSemanticJoin(NodeId),
    #[error("node {0} is not a semantic projection")]
    NotSemanticProjection(NodeId),
    #[error("rewrites did not settle within {0} steps")]
    NoFixedPoint(usize),
    #[error("rewrite produced an invalid plan: {0:?}")]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Splits a semantic join condition off its join.
pub fn decompose_semantic_join(tree: &PlanTree, sf: NodeId) -> Result<(PlanTree, TraceEvent), RewriteError> {
    let mut out = tree.clone();
    let join = match &out.node(sf)?.kind {
        NodeKind::SemFilter {
            join_condition: true, ..
        } => out.children(sf)[0],
        _ => return Err(RewriteError::NotSemanticJoin(sf)),
    };
    match &mut out.node_mut(join)?.kind {
        NodeKind::CrossJoin { from_semantic_join } => *from_semantic_join = true,
        NodeKind::InnerJoin { .. } => {}
        _ => return Err(RewriteError::NotAboveJoin { node: sf }),
    }
    if let NodeKind::SemFilter { join_condition, .. } = &mut out.node_mut(sf)?.kind {
        *join_condition = false;
    }
    while let Some(p) = out.parent_of(sf) {
        if out.kind(p).op() != OperatorKind::RelFilter {
            break;
        }
        out.swap_with_parent(sf)?;
    }
    Ok((
        out,
        TraceEvent {
            rewrite: SEMANTIC_JOIN_DECOMPOSITION.to_string(),
            nodes: alloc::vec![sf, join],
        },
    ))
}

fn reads(tree: &PlanTree, node: NodeId, col: &ColumnRef) -> bool {
    tree.kind(node).referenced_columns().contains(col)
}

/// Semantic filters attached as join conditions directly above `join`.
fn attached_filters(tree: &PlanTree, join: NodeId) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut cur = join;
    while let Some(p) = tree.parent_of(cur) {
        match tree.kind(p) {
            NodeKind::SemFilter {
                join_condition: true, ..
            } => {
                out.push(p);
                cur = p;
            }
            _ => break,
        }
    }
    out
}

/// Moves a semantic projection as high as it can go. Returns `None` when it
/// cannot cross any operator that does not read its output.
pub fn pull_up_projection(tree: &PlanTree, sp: NodeId) -> Result<Option<(PlanTree, TraceEvent)>, RewriteError> {
    let NodeKind::SemProject { predicate, output } = &tree.node(sp)?.kind else {
        return Err(RewriteError::NotSemanticProjection(sp));
    };
    let produced = ColumnRef::derived(output.clone());

    // Walk upwards recording crossed nodes; `dependents` read the output.
    let mut crossed: Vec<NodeId> = Vec::new();
    let mut dependents: Vec<(usize, NodeId)> = Vec::new();
    let mut cur = sp;
    while let Some(p) = tree.parent_of(cur) {
        if p == tree.root {
            break;
        }
        let op = tree.kind(p).op();
        if is_block_operator(op) {
            break;
        }
        match op {
            OperatorKind::InnerJoin | OperatorKind::CrossJoin => {
                let attached = attached_filters(tree, p);
                if reads(tree, p, &produced) || attached.iter().any(|&a| reads(tree, a, &produced)) {
                    break;
                }
                if attached.last() == Some(&tree.root) {
                    break;
                }
                crossed.push(p);
                crossed.extend(attached.iter().copied());
                cur = *attached.last().unwrap_or(&p);
            }
            OperatorKind::Project => {
                if reads(tree, p, &produced) {
                    break;
                }
                crossed.push(p);
                cur = p;
            }
            // Two independent projections could otherwise swap forever.
            OperatorKind::SemProject => break,
            OperatorKind::RelFilter | OperatorKind::SemFilter => {
                if reads(tree, p, &produced) {
                    dependents.push((crossed.len(), p));
                } else {
                    crossed.push(p);
                }
                cur = p;
            }
            _ => break,
        }
    }
    let Some(&target) = crossed.last() else {
        return Ok(None);
    };
    let movers: Vec<NodeId> = dependents
        .iter()
        .filter(|(before, _)| *before < crossed.len())
        .map(|&(_, d)| d)
        .collect();

    let mut needed: Vec<ColumnRef> = predicate.columns.clone();
    for &d in &movers {
        for c in tree.kind(d).referenced_columns() {
            if c != produced && !needed.contains(&c) {
                needed.push(c);
            }
        }
    }

    let mut out = tree.clone();
    for &p in &crossed {
        if let NodeKind::Project { columns } = &mut out.node_mut(p)?.kind {
            for c in &needed {
                if !columns.iter().any(|o| o.column == *c) {
                    columns.push(OutputColumn::plain(c.clone()));
                }
            }
        }
    }
    out.detach(sp)?;
    for &d in &movers {
        out.detach(d)?;
    }
    out.insert_above(sp, target)?;
    let mut top = sp;
    for &d in &movers {
        out.insert_above(d, top)?;
        top = d;
    }
    Ok(Some((
        out,
        TraceEvent {
            rewrite: SEMANTIC_PROJECTION_PULLUP.to_string(),
            nodes: alloc::vec![sp, target],
        },
    )))
}

/// Applies both rewrites until neither changes the plan.
pub fn simplify_to_fixed_point(tree: &PlanTree) -> Result<(PlanTree, Vec<TraceEvent>), RewriteError> {
    let mut out = tree.clone();
    let mut trace = Vec::new();
    let projections = out.nodes_of(OperatorKind::SemProject);
    let joins = out
        .semantic_filters()
        .into_iter()
        .filter(|&f| {
            matches!(
                out.kind(f),
                NodeKind::SemFilter {
                    join_condition: true,
                    ..
                }
            )
        })
        .count();
    let budget = out.nodes.len() * (projections.len() + joins) + 1;
    loop {
        let mut changed = false;
        for f in out.semantic_filters() {
            if matches!(
                out.kind(f),
                NodeKind::SemFilter {
                    join_condition: true,
                    ..
                }
            ) {
                let (next, event) = decompose_semantic_join(&out, f)?;
                out = next;
                trace.push(event);
                changed = true;
            }
        }
        for &sp in &projections {
            if let Some((next, event)) = pull_up_projection(&out, sp)? {
                out = next;
                trace.push(event);
                changed = true;
            }
        }
        if !changed {
            break;
        }
        if trace.len() > budget {
            return Err(RewriteError::NoFixedPoint(budget));
        }
    }
    let violations = validate(&out);
    if !violations.is_empty() {
        return Err(RewriteError::Invalid(violations));
    }
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::isomorphic;
    use crate::sql::parse;
    use crate::sql::tests::bookstore;

    #[test]
    fn projection_rises_above_join_with_its_filter() {
        let sql = "SELECT b.title, SEMANTIC_INT('Rate {r.text} sentiment 1-5') AS score \
                   FROM books b JOIN reviews r ON b.id = r.book_id WHERE score >= 4";
        let tree = parse(sql, &bookstore()).unwrap();
        let sp = tree.nodes_of(OperatorKind::SemProject)[0];
        let join = tree.nodes_of(OperatorKind::InnerJoin)[0];
        let (out, trace) = simplify_to_fixed_point(&tree).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].rewrite, SEMANTIC_PROJECTION_PULLUP);
        assert_eq!(out.children(sp), &[join]);
        let above = out.parent_of(sp).unwrap();
        assert_eq!(out.kind(above).op(), OperatorKind::RelFilter);
        assert_eq!(out.parent_of(above), Some(out.root));
        // A second run is a no-op.
        let (again, trace) = simplify_to_fixed_point(&out).unwrap();
        assert!(trace.is_empty());
        assert!(isomorphic(&out, &again));
    }

    #[test]
    fn semantic_join_becomes_filter_over_cross_join() {
        let sql = "SELECT m.plot FROM movies m JOIN critiques c \
                   ON SEMANTIC('{m.plot} matches {c.body}') WHERE m.yr >= c.yr";
        let tree = parse(sql, &bookstore()).unwrap();
        let sf = tree.semantic_filters()[0];
        let (out, trace) = simplify_to_fixed_point(&tree).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].rewrite, SEMANTIC_JOIN_DECOMPOSITION);
        let NodeKind::SemFilter { join_condition, .. } = out.kind(sf) else {
            panic!()
        };
        assert!(!join_condition);
        // The relational filter now runs first.
        let below = out.children(sf)[0];
        assert_eq!(out.kind(below).op(), OperatorKind::RelFilter);
        let join = out.children(below)[0];
        assert!(matches!(
            out.kind(join),
            NodeKind::CrossJoin {
                from_semantic_join: true
            }
        ));
    }

    #[test]
    fn semantic_join_over_non_join_is_rejected() {
        let mut tree = parse("SELECT * FROM books b WHERE SEMANTIC('{b.title}')", &bookstore()).unwrap();
        let sf = tree.semantic_filters()[0];
        if let NodeKind::SemFilter { join_condition, .. } = &mut tree.node_mut(sf).unwrap().kind {
            *join_condition = true;
        }
        assert_eq!(
            decompose_semantic_join(&tree, sf).unwrap_err(),
            RewriteError::NotAboveJoin { node: sf }
        );
        assert!(simplify_to_fixed_point(&tree).is_err());
    }

    #[test]
    fn projection_read_by_join_key_stays() {
        let sql = "SELECT b.title FROM books b JOIN reviews r ON b.id = r.book_id";
        let mut tree = parse(sql, &bookstore()).unwrap();
        let scan = tree
            .nodes
            .iter()
            .find(|(_, n)| matches!(&n.kind, NodeKind::TableScan { table } if table == "reviews"))
            .map(|(&id, _)| id)
            .unwrap();
        let sp = tree.add_node(
            NodeKind::SemProject {
                predicate: crate::ir::SemanticPredicate::from_template(
                    "{reviews.text}",
                    crate::ir::OutputType::Integer,
                )
                .unwrap(),
                output: "k".into(),
            },
            Vec::new(),
        );
        tree.insert_above(sp, scan).unwrap();
        let join = tree.nodes_of(OperatorKind::InnerJoin)[0];
        if let NodeKind::InnerJoin { keys } = &mut tree.node_mut(join).unwrap().kind {
            keys[0].right = ColumnRef::derived("k");
        }
        assert!(validate(&tree).is_empty(), "{:?}", validate(&tree));
        assert!(pull_up_projection(&tree, sp).unwrap().is_none());
    }
}
