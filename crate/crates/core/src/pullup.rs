//! Greedy pull-up of semantic filters.
//!
//! Each pass visits the semantic filters in id order and moves every one of
//! them at most one step up, over its parent, unless the parent is the root,
//! a block operator or another semantic filter. Crossing a projection widens
//! it with the filter's columns. Passes repeat until one changes nothing.
//!
//! A filter's swaps only reduce the number of non-filter nodes above it, and
//! other filters' swaps leave that number alone, so a filter moves at most
//! `max(d - 2, 0)` times for an input of depth `d`. Every pass but the last
//! moves at least one filter, giving at most `n * max(d - 2, 0) + 1` passes.

use alloc::vec::Vec;

use crate::ir::{is_block_operator, NodeId, NodeKind, OperatorKind, OutputColumn, PlanTree};
use crate::IrError;

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PullupStats {
    /// Passes over the filter list, including the final one that moved nothing.
    pub passes: usize,
    pub swaps: usize,
}

/// Runs the pass to a fixed point and returns the rewritten tree.
pub fn pull_up(tree: &PlanTree) -> Result<(PlanTree, PullupStats), IrError> {
    let mut out = tree.clone();
    let filters = out.semantic_filters();
    let mut stats = PullupStats::default();
    if filters.is_empty() {
        return Ok((out, stats));
    }
    let mut changed = true;
    while changed {
        changed = false;
        stats.passes += 1;
        for &f in &filters {
            if try_swap(&mut out, f)? {
                stats.swaps += 1;
                changed = true;
            }
        }
    }
    Ok((out, stats))
}

fn try_swap(tree: &mut PlanTree, f: NodeId) -> Result<bool, IrError> {
    let Some(parent) = tree.parent_of(f) else {
        return Ok(false);
    };
    let op = tree.kind(parent).op();
    if parent == tree.root || is_block_operator(op) || op == OperatorKind::SemFilter {
        return Ok(false);
    }
    // A projection under a union cannot grow without breaking the union.
    if op == OperatorKind::Project
        && tree
            .parent_of(parent)
            .is_some_and(|g| tree.kind(g).op() == OperatorKind::Union)
    {
        return Ok(false);
    }
    let columns: Vec<_> = tree
        .kind(f)
        .semantic_predicate()
        .map(|p| p.columns.clone())
        .unwrap_or_default();
    if let NodeKind::Project { columns: out } = &mut tree.node_mut(parent)?.kind {
        for c in columns {
            if !out.iter().any(|o| o.column == c) {
                out.push(OutputColumn::plain(c));
            }
        }
    }
    tree.swap_with_parent(f)?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{validate, TreeBuilder};
    use crate::placement::tests::{catalog, two_sided};

    #[test]
    fn stacks_filters_below_the_root() {
        let (tree, [_, phi1, _, _, phi2, join]) = two_sided();
        let (out, stats) = pull_up(&tree).unwrap();
        assert!(validate(&out).is_empty());
        // phi1 moves first and lands directly on the join; phi2 then stops under it.
        assert_eq!(out.children(phi1), &[phi2]);
        assert_eq!(out.children(phi2), &[join]);
        assert_eq!(out.parent_of(phi1), Some(out.root));
        assert_eq!(stats.swaps, 2);
        assert_eq!(stats.passes, 2);
    }

    #[test]
    fn zero_filters_zero_passes() {
        let mut b = TreeBuilder::new(catalog(&["t"]));
        let t = b.scan("t");
        b.project(t, &["t.v"]);
        let tree = b.build();
        let (out, stats) = pull_up(&tree).unwrap();
        assert_eq!(stats.passes, 0);
        assert_eq!(out, tree);
    }

    #[test]
    fn stops_at_blocks_and_widens_projections() {
        let mut b = TreeBuilder::new(catalog(&["t"]));
        let t = b.scan("t");
        let f = b.sem_filter(t, "{t.v}?");
        let p = b.project(f, &["t.k"]);
        let l = b.limit(p, 10);
        b.project(l, &["t.k"]);
        let tree = b.build();
        let (out, stats) = pull_up(&tree).unwrap();
        assert!(validate(&out).is_empty());
        assert_eq!(out.parent_of(f), Some(l));
        assert_eq!(stats.swaps, 1);
        let NodeKind::Project { columns } = out.kind(p) else {
            panic!()
        };
        assert_eq!(columns.len(), 2);
    }
}
