//! Exhaustive placement search for small plans.
//!
//! Enumerates every assignment of filters to legal nodes and every order of
//! the filters sharing a node, and evaluates each complete placement with
//! [`PlacementContext::evaluate`]. It shares only the per-node cost terms
//! with the dynamic-programming placer.

use alloc::vec;
use alloc::vec::Vec;

use crate::placement::{Placement, PlacementContext, PlacementError};

pub const MAX_FILTERS: usize = 6;
pub const MAX_NODES: usize = 12;

#[derive(Clone, Debug)]
pub struct BruteResult {
    pub placement: Placement,
    pub evaluated: u64,
}

pub fn place(ctx: &PlacementContext) -> Result<BruteResult, PlacementError> {
    let (n, v) = (ctx.filter_count(), ctx.skeleton.len());
    if n > MAX_FILTERS || v > MAX_NODES {
        return Err(PlacementError::BudgetExceeded {
            filters: n,
            nodes: v,
            max_filters: MAX_FILTERS,
            max_nodes: MAX_NODES,
        });
    }
    let legal: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..v).filter(|&u| ctx.costs[u].legal_mask & (1 << i) != 0).collect())
        .collect();
    let mut search = Search {
        ctx,
        legal,
        assignment: vec![0; n],
        best: None,
        evaluated: 0,
    };
    search.assign(0);
    let (stacks, _) = search.best.expect("every filter has at least its anchor");
    let placement = ctx.placement(&stacks)?;
    Ok(BruteResult {
        placement,
        evaluated: search.evaluated,
    })
}

struct Search<'a> {
    ctx: &'a PlacementContext,
    legal: Vec<Vec<usize>>,
    assignment: Vec<usize>,
    best: Option<(Vec<Vec<usize>>, f64)>,
    evaluated: u64,
}

impl Search<'_> {
    fn assign(&mut self, i: usize) {
        if i == self.assignment.len() {
            let mut groups = vec![Vec::new(); self.ctx.skeleton.len()];
            for (f, &u) in self.assignment.iter().enumerate() {
                groups[u].push(f);
            }
            self.orders(&mut groups, 0);
            return;
        }
        for k in 0..self.legal[i].len() {
            self.assignment[i] = self.legal[i][k];
            self.assign(i + 1);
        }
    }

    /// Tries every permutation of each node's group, node by node.
    fn orders(&mut self, groups: &mut Vec<Vec<usize>>, u: usize) {
        if u == groups.len() {
            self.evaluated += 1;
            let cost = self.ctx.evaluate(groups).total;
            if self.best.as_ref().is_none_or(|(_, b)| cost < *b) {
                self.best = Some((groups.clone(), cost));
            }
            return;
        }
        let len = groups[u].len();
        self.permute(groups, u, len);
    }

    /// Heap's algorithm over `groups[u][..k]`.
    fn permute(&mut self, groups: &mut Vec<Vec<usize>>, u: usize, k: usize) {
        if k <= 1 {
            self.orders(groups, u + 1);
            return;
        }
        for j in 0..k - 1 {
            self.permute(groups, u, k - 1);
            if k.is_multiple_of(2) {
                groups[u].swap(j, k - 1);
            } else {
                groups[u].swap(0, k - 1);
            }
        }
        self.permute(groups, u, k - 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{OptimizerConfig, SelectivityModel};
    use crate::ir::TreeBuilder;
    use crate::placement::tests::{catalog, uniform_stats};

    #[test]
    fn enumerates_assignments_and_orders() {
        // Two filters on one scan below a projection: each may sit on the scan
        // or on the projection below the root, 4 assignments; the two shared
        // nodes give 2 orders each.
        let mut b = TreeBuilder::new(catalog(&["t"]));
        let t = b.scan("t");
        let f1 = b.sem_filter(t, "{t.v} a");
        let f2 = b.sem_filter(f1, "{t.v} b");
        let p = b.project(f2, &["t.v", "t.k"]);
        b.project(p, &["t.v"]);
        let tree = b.build();
        let ctx = PlacementContext::new(
            &tree,
            &SelectivityModel::default(),
            &uniform_stats(&["t"], 100.0),
            &OptimizerConfig::default(),
        )
        .unwrap();
        let r = place(&ctx).unwrap();
        assert_eq!(r.evaluated, 2 + 1 + 1 + 2);
        // Filtering at the scan is never worse.
        assert_eq!(r.placement.stacks.get(&t).map(Vec::len), Some(2));
    }

    #[test]
    fn refuses_large_inputs() {
        let mut b = TreeBuilder::new(catalog(&["t"]));
        let mut top = b.scan("t");
        for i in 0..7 {
            top = b.sem_filter(top, &alloc::format!("{{t.v}} {i}"));
        }
        b.project(top, &["t.v"]);
        let tree = b.build();
        let ctx = PlacementContext::new(
            &tree,
            &SelectivityModel::default(),
            &uniform_stats(&["t"], 100.0),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(matches!(place(&ctx), Err(PlacementError::BudgetExceeded { .. })));
    }
}
