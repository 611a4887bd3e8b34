//! Optimal semantic-filter placement by dynamic programming over the skeleton.
//!
//! `dp[u][S]` is the cheapest cost of the subtree rooted at `u` with exactly
//! the filters in `S` placed at or below `u`. Nodes are processed
//! children-first and subsets by increasing size, so every state a recurrence
//! reads is final. Ties keep the earlier candidate: combining children wins
//! over placing a filter at `u`, and among filters placed at `u` the lowest
//! index wins.

use alloc::vec;
use alloc::vec::Vec;

use crate::cost::CostEstimate;
use crate::placement::{Placement, PlacementContext, PlacementError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    Unreachable,
    Leaf,
    Unary,
    /// Filters under the left child; the rest are under the right child.
    Binary(u32),
    /// Filter placed directly above the node, on top of `S \ {i}`.
    Place(u8),
}

/// Work counters used to check the running-time bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DpStats {
    pub states: u64,
    pub expansions: u64,
}

#[derive(Clone, Debug)]
pub struct DpResult {
    pub placement: Placement,
    pub stats: DpStats,
}

/// Subset of `mask` as a dense index into a table of `2^popcount(mask)` entries.
pub fn compress(subset: u32, mask: u32) -> usize {
    let mut out = 0usize;
    let mut bit = 0;
    let mut m = mask;
    while m != 0 {
        let low = m & m.wrapping_neg();
        if subset & low != 0 {
            out |= 1 << bit;
        }
        bit += 1;
        m &= m - 1;
    }
    out
}

/// Submasks of `mask` ordered by size, ties in numeric order.
pub fn submasks_by_size(mask: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(1 << mask.count_ones());
    let mut s = mask;
    loop {
        out.push(s);
        if s == 0 {
            break;
        }
        s = (s - 1) & mask;
    }
    out.sort_by_key(|s| (s.count_ones(), *s));
    out
}

/// `dp[u][·]` for one node, over the subsets of the filters anchored under it.
#[derive(Clone, Debug)]
pub struct Table {
    pub mask: u32,
    cost: Vec<f64>,
    choice: Vec<Choice>,
}

impl Table {
    /// Cost and choice of state `S`; infinite outside the node's filters.
    pub fn get(&self, s: u32) -> (f64, Choice) {
        if s & !self.mask != 0 {
            return (f64::INFINITY, Choice::Unreachable);
        }
        let k = compress(s, self.mask);
        (self.cost[k], self.choice[k])
    }
}

/// Fills every node's table, children first.
pub fn solve(ctx: &PlacementContext) -> (Vec<Table>, DpStats) {
    let mut stats = DpStats::default();
    let mut tables: Vec<Table> = Vec::with_capacity(ctx.skeleton.len());
    for (u, node) in ctx.skeleton.nodes.iter().enumerate() {
        let c = &ctx.costs[u];
        let mask = c.under_mask;
        let size = 1usize << mask.count_ones();
        let mut cost = vec![f64::INFINITY; size];
        let mut choice = vec![Choice::Unreachable; size];
        #[cfg(debug_assertions)]
        let mut done = vec![false; size];
        for s in submasks_by_size(mask) {
            stats.states += 1;
            // Step 1: combine the children's tables.
            let (mut best, mut how) = match node.children.as_slice() {
                [] => {
                    if s == 0 {
                        (0.0, Choice::Leaf)
                    } else {
                        (f64::INFINITY, Choice::Unreachable)
                    }
                }
                [v] => {
                    let (x, _) = tables[*v].get(s);
                    (
                        x,
                        if x.is_finite() {
                            Choice::Unary
                        } else {
                            Choice::Unreachable
                        },
                    )
                }
                [v1, v2] => {
                    let (left, right) = (&tables[*v1], &tables[*v2]);
                    let (x, s1) = combine(left.mask, right.mask, s, &mut stats, |a, b| {
                        left.get(a).0 + right.get(b).0
                    });
                    (
                        x,
                        if x.is_finite() {
                            Choice::Binary(s1)
                        } else {
                            Choice::Unreachable
                        },
                    )
                }
                _ => unreachable!("operators have at most two children"),
            };
            // Step 2: the node's own relational work.
            if best.is_finite() {
                best += ctx.rel_term(u, s).0;
            }
            // Step 3: put one filter of S directly above u.
            let mut rest = s & c.legal_mask;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                stats.expansions += 1;
                let below = s & !(1 << i);
                #[cfg(debug_assertions)]
                debug_assert!(done[compress(below, mask)], "smaller subset not final");
                let prev = cost[compress(below, mask)];
                if prev.is_finite() {
                    let cand = prev + ctx.llm_term(u, i, below);
                    if cand < best {
                        best = cand;
                        how = Choice::Place(i as u8);
                    }
                }
            }
            let k = compress(s, mask);
            cost[k] = best;
            choice[k] = how;
            #[cfg(debug_assertions)]
            {
                done[k] = true;
            }
        }
        tables.push(Table { mask, cost, choice });
    }
    (tables, stats)
}

/// Runs the placer and returns the optimal placement with its estimate.
pub fn place(ctx: &PlacementContext) -> Result<DpResult, PlacementError> {
    let (tables, stats) = solve(ctx);

    let root = ctx.skeleton.root;
    let full = ctx.full_mask();
    let (total, _) = tables[root].get(full);
    if !total.is_finite() {
        let i = (0..ctx.filter_count())
            .find(|&i| ctx.costs.iter().all(|c| c.legal_mask & (1 << i) == 0))
            .unwrap_or(0);
        return Err(PlacementError::Unplaceable(ctx.filters[i].filter_node));
    }
    let mut stacks = vec![Vec::new(); ctx.skeleton.len()];
    trace(ctx, &tables, root, full, &mut stacks);
    ctx.check_stacks(&stacks)?;
    let mut placement = ctx.placement(&stacks)?;
    let components = placement.estimate;
    placement.estimate = CostEstimate { total, ..components };
    Ok(DpResult { placement, stats })
}

fn trace(ctx: &PlacementContext, tables: &[Table], u: usize, s: u32, stacks: &mut [Vec<usize>]) {
    match tables[u].get(s).1 {
        Choice::Unreachable => unreachable!("traceback reached an infinite state"),
        Choice::Leaf => {}
        Choice::Unary => trace(ctx, tables, ctx.skeleton.nodes[u].children[0], s, stacks),
        Choice::Binary(s1) => {
            let kids = &ctx.skeleton.nodes[u].children;
            trace(ctx, tables, kids[0], s1, stacks);
            trace(ctx, tables, kids[1], s & !s1, stacks);
        }
        Choice::Place(i) => {
            trace(ctx, tables, u, s & !(1 << i), stacks);
            stacks[u].push(i as usize);
        }
    }
}

/// Naive Step 1 at a binary node over dense tables indexed by full subsets:
/// every `S1 ⊆ S` is tried. Used to check the submask enumeration.
pub fn binary_combine_naive(left: &[f64], right: &[f64], s: u32) -> f64 {
    let mut best = f64::INFINITY;
    for s1 in 0..=s {
        if s1 & !s == 0 {
            let cand = left[s1 as usize] + right[(s & !s1) as usize];
            if cand < best {
                best = cand;
            }
        }
    }
    best
}

/// Step 1 at a binary node: minimum of `value(S1, S \ S1)` over the splits
/// of `S` where `S1` holds only left filters and the rest only right filters.
/// Returns the minimum and its `S1`; the first minimum found is kept.
pub fn combine(
    left_mask: u32,
    right_mask: u32,
    s: u32,
    stats: &mut DpStats,
    value: impl Fn(u32, u32) -> f64,
) -> (f64, u32) {
    let mut best = (f64::INFINITY, 0);
    let side = s & left_mask;
    let mut s1 = side;
    loop {
        stats.expansions += 1;
        let s2 = s & !s1;
        if s2 & !right_mask == 0 {
            let cand = value(s1, s2);
            if cand < best.0 {
                best = (cand, s1);
            }
        }
        if s1 == 0 {
            break;
        }
        s1 = (s1 - 1) & side;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{OptimizerConfig, SelectivityModel};
    use crate::placement::tests::{two_sided, uniform_stats};
    use proptest::prelude::*;

    #[test]
    fn compress_is_dense() {
        let mask = 0b1011_0100;
        let subs = submasks_by_size(mask);
        assert_eq!(subs.len(), 16);
        let mut seen: Vec<usize> = subs.iter().map(|&s| compress(s, mask)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..16).collect::<Vec<_>>());
        assert!(subs.windows(2).all(|w| w[0].count_ones() <= w[1].count_ones()));
    }

    #[test]
    fn fig_like_plan_places_both_filters_above_join_at_small_alpha() {
        let (tree, [_, phi1, _, sigma, phi2, join]) = two_sided();
        let mut stats = uniform_stats(&["books", "reviews"], 1000.0);
        stats.tables.get_mut("reviews").unwrap().rows = 5000.0;
        stats.node_cardinality.insert(sigma, 3000.0);
        stats.node_cardinality.insert(join, 2500.0);
        stats
            .node_distinct
            .insert(join, [("books".into(), 800.0), ("reviews".into(), 2500.0)].into());
        let model = SelectivityModel::default();
        let cfg = OptimizerConfig::default();
        let ctx = PlacementContext::new(&tree, &model, &stats, &cfg).unwrap();
        let r = place(&ctx).unwrap();
        // Equal-cost orders keep the first candidate, putting the lower id on top.
        assert_eq!(r.placement.stacks.get(&join), Some(&vec![phi2, phi1]));
        assert_eq!(r.placement.estimate.llm_rows, 3300.0);

        let cfg = OptimizerConfig {
            alpha: 0.1,
            ..Default::default()
        };
        let ctx = PlacementContext::new(&tree, &model, &stats, &cfg).unwrap();
        let r = place(&ctx).unwrap();
        let pos = r.placement.positions();
        assert_eq!(pos[&phi1], tree.children(phi1)[0]);
        assert_eq!(pos[&phi2], join);
        let _ = sigma;
    }

    #[test]
    fn no_filters_costs_relational_work_only() {
        let mut b = crate::ir::TreeBuilder::new(crate::placement::tests::catalog(&["t"]));
        let t = b.scan("t");
        b.project(t, &["t.v"]);
        let tree = b.build();
        let ctx = PlacementContext::new(
            &tree,
            &SelectivityModel::default(),
            &uniform_stats(&["t"], 50.0),
            &OptimizerConfig::default(),
        )
        .unwrap();
        let r = place(&ctx).unwrap();
        assert!(r.placement.stacks.is_empty());
        assert_eq!(r.placement.estimate.llm_rows, 0.0);
        assert_eq!(r.placement.estimate.rel_rows, 100.0);
    }

    proptest! {
        #[test]
        fn submask_combine_equals_double_loop(
            n in 1usize..7,
            split in any::<u32>(),
            seed in proptest::collection::vec(0.0f64..100.0, 128),
            s in any::<u32>(),
        ) {
            let full = (1u32 << n) - 1;
            let left_mask = split & full;
            let right_mask = full & !left_mask;
            let s = s & full;
            let table = |mask: u32, offset: usize| -> Vec<f64> {
                (0..1u32 << n)
                    .map(|x| if x & !mask == 0 { seed[(x as usize + offset) % seed.len()] } else { f64::INFINITY })
                    .collect()
            };
            let left = table(left_mask, 0);
            let right = table(right_mask, 64);
            let mut stats = DpStats::default();
            let (a, _) = combine(left_mask, right_mask, s, &mut stats, |x, y| left[x as usize] + right[y as usize]);
            let b = binary_combine_naive(&left, &right, s);
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
