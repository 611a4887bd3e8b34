//! Where semantic filters may go, and what a given placement costs.
//!
//! The skeleton is the plan with every semantic filter removed. A filter's
//! anchor is the skeleton node directly below it in the input plan; it may be
//! placed above the anchor or above any ancestor reachable without crossing a
//! block operator or reaching the root. A placement assigns each filter to one
//! of those positions plus a bottom-to-top order for filters sharing a node.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cost::{
    probe_rows, quantize, selectivity_product, CostError, CostEstimate, Estimator, OptimizerConfig, SelectivityModel,
    Statistics,
};
use crate::ir::{
    is_block_operator, validate, NodeId, NodeKind, OperatorKind, OutputColumn, PlanTree, SemanticPredicate, Violation,
};
use crate::IrError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticFilterDescriptor {
    pub filter_node: NodeId,
    pub predicate: SemanticPredicate,
    pub referenced_tables: BTreeSet<String>,
    /// Skeleton node the filter sits on in the input plan.
    pub original_position: NodeId,
    pub selectivity: f64,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PlacementError {
    #[error("{count} semantic filters exceed the limit of {max}")]
    TooManyFilters { count: usize, max: usize },
    #[error("filter {0} has no legal position")]
    Unplaceable(NodeId),
    #[error("filter {filter} cannot be placed at {node}")]
    IllegalPosition { filter: NodeId, node: NodeId },
    #[error("filter {0} is not placed")]
    Unassigned(NodeId),
    #[error("exhaustive search limited to {max_filters} filters and {max_nodes} nodes, got {filters} and {nodes}")]
    BudgetExceeded {
        filters: usize,
        nodes: usize,
        max_filters: usize,
        max_nodes: usize,
    },
    #[error("placement produced an invalid plan: {0:?}")]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

fn skip_filters(tree: &PlanTree, mut id: NodeId) -> NodeId {
    while let NodeKind::SemFilter { .. } = tree.kind(id) {
        id = tree.children(id)[0];
    }
    id
}

/// Semantic filters of a tree in id order, with their anchors and tables.
pub fn describe_filters(
    tree: &PlanTree,
    model: &SelectivityModel,
) -> Result<Vec<SemanticFilterDescriptor>, PlacementError> {
    let mut out = Vec::new();
    for id in tree.semantic_filters() {
        let node = tree.node(id)?;
        let NodeKind::SemFilter { predicate, .. } = &node.kind else {
            unreachable!()
        };
        let child = *node.children.first().ok_or(IrError::Arity(id))?;
        let mut tables = BTreeSet::new();
        for c in &predicate.columns {
            tables.extend(tree.lineage_tables(c));
        }
        out.push(SemanticFilterDescriptor {
            filter_node: id,
            predicate: predicate.clone(),
            referenced_tables: tables,
            original_position: skip_filters(tree, child),
            selectivity: model.filter_selectivity(id),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonNode {
    pub id: NodeId,
    pub op: OperatorKind,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
}

/// The plan without its semantic filters, stored children-first.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub nodes: Vec<SkeletonNode>,
    pub index: BTreeMap<NodeId, usize>,
    pub root: usize,
}

impl Skeleton {
    pub fn new(tree: &PlanTree) -> Self {
        let mut nodes: Vec<SkeletonNode> = Vec::new();
        let mut index = BTreeMap::new();
        let top = skip_filters(tree, tree.root);
        for id in tree.postorder(top) {
            if tree.kind(id).op() == OperatorKind::SemFilter {
                continue;
            }
            let children: Vec<usize> = tree
                .children(id)
                .iter()
                .map(|&c| index[&skip_filters(tree, c)])
                .collect();
            let me = nodes.len();
            for &c in &children {
                nodes[c].parent = Some(me);
            }
            index.insert(id, me);
            nodes.push(SkeletonNode {
                id,
                op: tree.kind(id).op(),
                children,
                parent: None,
            });
        }
        let root = nodes.len() - 1;
        Skeleton { nodes, index, root }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Legal positions for a filter anchored at `anchor`, bottom-up.
    pub fn legal_positions(&self, anchor: usize) -> Vec<usize> {
        let mut out = vec![anchor];
        let mut cur = anchor;
        while let Some(p) = self.nodes[cur].parent {
            let node = &self.nodes[p];
            if p == self.root || is_block_operator(node.op) {
                break;
            }
            // Widening a projection that feeds a union would change its arity.
            if node.op == OperatorKind::Project && node.parent.is_some_and(|g| self.nodes[g].op == OperatorKind::Union)
            {
                break;
            }
            out.push(p);
            cur = p;
        }
        out
    }
}

/// A filter assignment: per skeleton node, the filters above it bottom-first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub stacks: BTreeMap<NodeId, Vec<NodeId>>,
    pub estimate: CostEstimate,
}

impl Placement {
    /// Skeleton node each filter is placed on.
    pub fn positions(&self) -> BTreeMap<NodeId, NodeId> {
        let mut out = BTreeMap::new();
        for (&node, stack) in &self.stacks {
            for &f in stack {
                out.insert(f, node);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeCosts {
    /// `c(u)`.
    pub rows: f64,
    pub is_join: bool,
    /// Filters whose tables meet the tables below this node.
    pub table_mask: u32,
    /// Filters anchored at or below this node.
    pub under_mask: u32,
    /// Filters anchored exactly here.
    pub anchored_mask: u32,
    /// Filters allowed to sit directly above this node.
    pub legal_mask: u32,
    /// Distinct inputs per filter before any semantic filter; 0 where illegal.
    pub base_distinct: Vec<f64>,
}

/// Everything the placer needs about one plan, precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementContext {
    pub skeleton: Skeleton,
    pub filters: Vec<SemanticFilterDescriptor>,
    pub costs: Vec<NodeCosts>,
    pub anchors: Vec<usize>,
    pub selectivities: Vec<f64>,
    /// For each filter, the filters whose tables overlap its own.
    pub ref_masks: Vec<u32>,
    pub alpha: f64,
    pub probe_cost: f64,
}

impl PlacementContext {
    pub fn new(
        tree: &PlanTree,
        model: &SelectivityModel,
        stats: &Statistics,
        config: &OptimizerConfig,
    ) -> Result<Self, PlacementError> {
        model.validate()?;
        config.validate()?;
        let filters = describe_filters(tree, model)?;
        if filters.len() > config.max_dp_filters {
            return Err(PlacementError::TooManyFilters {
                count: filters.len(),
                max: config.max_dp_filters,
            });
        }
        let est = Estimator::new(tree, model, stats)?;
        let skeleton = Skeleton::new(tree);
        let anchors: Vec<usize> = filters.iter().map(|f| skeleton.index[&f.original_position]).collect();

        let mut costs: Vec<NodeCosts> = Vec::with_capacity(skeleton.len());
        for (u, node) in skeleton.nodes.iter().enumerate() {
            let tables = est.tables(node.id)?;
            let mut table_mask = 0;
            let mut anchored_mask = 0;
            for (i, f) in filters.iter().enumerate() {
                if !f.referenced_tables.is_disjoint(tables) {
                    table_mask |= 1 << i;
                }
                if anchors[i] == u {
                    anchored_mask |= 1 << i;
                }
            }
            let under_mask = node
                .children
                .iter()
                .fold(anchored_mask, |m, &c| m | costs[c].under_mask);
            costs.push(NodeCosts {
                rows: est.cardinality(node.id)?,
                is_join: matches!(node.op, OperatorKind::InnerJoin | OperatorKind::CrossJoin),
                table_mask,
                under_mask,
                anchored_mask,
                legal_mask: 0,
                base_distinct: vec![0.0; filters.len()],
            });
        }
        for (i, f) in filters.iter().enumerate() {
            let legal = skeleton.legal_positions(anchors[i]);
            if legal.is_empty() {
                return Err(PlacementError::Unplaceable(f.filter_node));
            }
            for u in legal {
                costs[u].legal_mask |= 1 << i;
                costs[u].base_distinct[i] = est.base_distinct(skeleton.nodes[u].id, &f.referenced_tables)?;
            }
        }
        let ref_masks = filters
            .iter()
            .map(|f| {
                filters.iter().enumerate().fold(0u32, |m, (j, g)| {
                    if f.referenced_tables.is_disjoint(&g.referenced_tables) {
                        m
                    } else {
                        m | 1 << j
                    }
                })
            })
            .collect();
        Ok(PlacementContext {
            selectivities: filters.iter().map(|f| f.selectivity).collect(),
            skeleton,
            filters,
            costs,
            anchors,
            ref_masks,
            alpha: config.alpha,
            probe_cost: config.cache_probe_cost,
        })
    }

    pub fn filter_count(&self) -> usize {
        self.filters.len()
    }

    pub fn full_mask(&self) -> u32 {
        if self.filters.is_empty() {
            0
        } else {
            u32::MAX >> (32 - self.filters.len())
        }
    }

    /// Relational term of node `u` given the filters placed below it:
    /// returns `(alpha * rows, rows)` where rows include cache probes at joins.
    pub fn rel_term(&self, u: usize, placed_below: u32) -> (f64, f64) {
        let c = &self.costs[u];
        let pending = if c.is_join {
            (c.under_mask & !placed_below).count_ones() as usize
        } else {
            0
        };
        let rows = (c.rows + probe_rows(c.rows, pending, self.probe_cost))
            * selectivity_product(&self.selectivities, c.table_mask & placed_below);
        (quantize(self.alpha * rows), rows)
    }

    /// LLM calls of filter `i` placed above `u` with `below` already applied.
    pub fn llm_term(&self, u: usize, i: usize, below: u32) -> f64 {
        quantize(self.costs[u].base_distinct[i] * selectivity_product(&self.selectivities, self.ref_masks[i] & below))
    }

    /// Cost of a placement given as per-node stacks of filter indices.
    pub fn evaluate(&self, stacks: &[Vec<usize>]) -> CostEstimate {
        self.evaluate_at(self.skeleton.root, stacks).0
    }

    fn evaluate_at(&self, u: usize, stacks: &[Vec<usize>]) -> (CostEstimate, u32) {
        let children = &self.skeleton.nodes[u].children;
        let (mut acc, mut placed) = match children.as_slice() {
            [] => (CostEstimate::default(), 0),
            [c] => self.evaluate_at(*c, stacks),
            [a, b] => {
                let (x, mx) = self.evaluate_at(*a, stacks);
                let (y, my) = self.evaluate_at(*b, stacks);
                (
                    CostEstimate {
                        llm_rows: x.llm_rows + y.llm_rows,
                        rel_rows: x.rel_rows + y.rel_rows,
                        total: x.total + y.total,
                    },
                    mx | my,
                )
            }
            _ => unreachable!("operators have at most two children"),
        };
        let (weighted, rows) = self.rel_term(u, placed);
        acc.total += weighted;
        acc.rel_rows += rows;
        for &i in &stacks[u] {
            let l = self.llm_term(u, i, placed);
            acc.total += l;
            acc.llm_rows += l;
            placed |= 1 << i;
        }
        (acc, placed)
    }

    /// Checks that stacks place every filter exactly once at a legal node.
    pub fn check_stacks(&self, stacks: &[Vec<usize>]) -> Result<(), PlacementError> {
        let mut seen = 0u32;
        for (u, stack) in stacks.iter().enumerate() {
            for &i in stack {
                let f = self.filters[i].filter_node;
                if self.costs[u].legal_mask & (1 << i) == 0 || seen & (1 << i) != 0 {
                    return Err(PlacementError::IllegalPosition {
                        filter: f,
                        node: self.skeleton.nodes[u].id,
                    });
                }
                seen |= 1 << i;
            }
        }
        if let Some(i) = (0..self.filters.len()).find(|i| seen & (1 << i) == 0) {
            return Err(PlacementError::Unassigned(self.filters[i].filter_node));
        }
        Ok(())
    }

    /// Converts index stacks into a [`Placement`] with its estimate.
    pub fn placement(&self, stacks: &[Vec<usize>]) -> Result<Placement, PlacementError> {
        self.check_stacks(stacks)?;
        let mut out = BTreeMap::new();
        for (u, stack) in stacks.iter().enumerate() {
            if !stack.is_empty() {
                out.insert(
                    self.skeleton.nodes[u].id,
                    stack.iter().map(|&i| self.filters[i].filter_node).collect(),
                );
            }
        }
        Ok(Placement {
            stacks: out,
            estimate: self.evaluate(stacks),
        })
    }

    /// Index stacks of a [`Placement`].
    pub fn stacks_of(&self, placement: &Placement) -> Result<Vec<Vec<usize>>, PlacementError> {
        let mut stacks = vec![Vec::new(); self.skeleton.len()];
        for (node, fs) in &placement.stacks {
            let u = *self.skeleton.index.get(node).ok_or(IrError::UnknownNode(*node))?;
            for f in fs {
                let i = self
                    .filters
                    .iter()
                    .position(|d| d.filter_node == *f)
                    .ok_or(IrError::UnknownNode(*f))?;
                stacks[u].push(i);
            }
        }
        self.check_stacks(&stacks)?;
        Ok(stacks)
    }

    /// Placement realized by a tree that shares this context's skeleton,
    /// such as the output of the pull-up pass.
    pub fn placement_of(&self, tree: &PlanTree) -> Result<Placement, PlacementError> {
        let mut stacks = vec![Vec::new(); self.skeleton.len()];
        for (u, node) in self.skeleton.nodes.iter().enumerate() {
            let mut cur = node.id;
            while let Some(p) = tree.parent_of(cur) {
                if tree.kind(p).op() != OperatorKind::SemFilter {
                    break;
                }
                let i = self
                    .filters
                    .iter()
                    .position(|d| d.filter_node == p)
                    .ok_or(IrError::UnknownNode(p))?;
                stacks[u].push(i);
                cur = p;
            }
        }
        self.placement(&stacks)
    }
}

/// Rebuilds `tree` with its semantic filters moved to `placement`, widening
/// projections that a filter crosses so its columns stay visible.
pub fn apply_placement(
    tree: &PlanTree,
    ctx: &PlacementContext,
    placement: &Placement,
) -> Result<PlanTree, PlacementError> {
    let stacks = ctx.stacks_of(placement)?;
    let mut out = tree.clone();
    for f in &ctx.filters {
        out.detach(f.filter_node)?;
    }
    for (u, stack) in stacks.iter().enumerate() {
        let mut top = ctx.skeleton.nodes[u].id;
        for &i in stack {
            let f = ctx.filters[i].filter_node;
            out.insert_above(f, top)?;
            top = f;
            let mut cur = ctx.anchors[i];
            while cur != u {
                cur = ctx.skeleton.nodes[cur].parent.expect("legal positions are ancestors");
                let id = ctx.skeleton.nodes[cur].id;
                if let NodeKind::Project { columns } = &mut out.node_mut(id)?.kind {
                    for c in &ctx.filters[i].predicate.columns {
                        if !columns.iter().any(|o| o.column == *c) {
                            columns.push(OutputColumn::plain(c.clone()));
                        }
                    }
                }
            }
        }
    }
    let violations = validate(&out);
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(PlacementError::Invalid(violations))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ir::{Catalog, TableSchema, TreeBuilder};
    use crate::value::ColumnType;

    pub(crate) fn catalog(tables: &[&str]) -> Catalog {
        let mut c = Catalog::new();
        for t in tables {
            c.insert(
                (*t).into(),
                TableSchema::new([("k", ColumnType::Integer), ("v", ColumnType::Text)]),
            );
        }
        c
    }

    pub(crate) fn uniform_stats(tables: &[&str], rows: f64) -> Statistics {
        tables.iter().fold(Statistics::default(), |s, t| s.with_table(t, rows))
    }

    /// books/reviews plan with a relational filter on reviews and one
    /// semantic filter on each side of the join.
    pub(crate) fn two_sided() -> (PlanTree, [NodeId; 6]) {
        let mut b = TreeBuilder::new(catalog(&["books", "reviews"]));
        let books = b.scan("books");
        let phi1 = b.sem_filter(books, "{books.v} is about AI?");
        let reviews = b.scan("reviews");
        let sigma = b.filter(
            reviews,
            crate::ir::RelPredicate::Compare {
                column: crate::ir::ColumnRef::new("reviews", "k"),
                op: crate::ir::CompareOp::Ge,
                value: crate::Value::Integer(3),
            },
        );
        let phi2 = b.sem_filter(sigma, "{reviews.v} is positive?");
        let join = b.join(phi1, phi2, &[("books.k", "reviews.k")]);
        b.project(join, &["books.v", "reviews.v"]);
        (b.build(), [books, phi1, reviews, sigma, phi2, join])
    }

    #[test]
    fn skeleton_drops_filters() {
        let (tree, [books, _, _, sigma, _, join]) = two_sided();
        let sk = Skeleton::new(&tree);
        assert_eq!(sk.len(), 5);
        let j = sk.index[&join];
        let kids: Vec<NodeId> = sk.nodes[j].children.iter().map(|&c| sk.nodes[c].id).collect();
        assert_eq!(kids, vec![books, sigma]);
        assert_eq!(sk.nodes[sk.root].op, OperatorKind::Project);
    }

    #[test]
    fn legal_positions_stop_below_root_and_blocks() {
        let (tree, [books, _, _, _, _, join]) = two_sided();
        let sk = Skeleton::new(&tree);
        let legal: Vec<NodeId> = sk
            .legal_positions(sk.index[&books])
            .into_iter()
            .map(|u| sk.nodes[u].id)
            .collect();
        assert_eq!(legal, vec![books, join]);

        let mut b = TreeBuilder::new(catalog(&["t"]));
        let t = b.scan("t");
        let f = b.sem_filter(t, "{t.v}?");
        let l = b.limit(f, 3);
        let p = b.project(l, &["t.v"]);
        let tree = b.build();
        let sk = Skeleton::new(&tree);
        assert_eq!(sk.legal_positions(sk.index[&t]), vec![sk.index[&t]]);
        let _ = p;
    }

    #[test]
    fn descriptors_follow_lineage() {
        let mut b = TreeBuilder::new(catalog(&["t"]));
        let t = b.scan("t");
        let sp = b.sem_project(t, "score {t.v}", "score", crate::ir::OutputType::Integer);
        let f = b.sem_filter(sp, "{score} high?");
        b.project(f, &["t.v"]);
        let tree = b.build();
        let d = describe_filters(&tree, &SelectivityModel::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].original_position, sp);
        assert!(d[0].referenced_tables.contains("t"));
    }

    #[test]
    fn evaluate_matches_hand_computation() {
        let (tree, [_, phi1, _, sigma, phi2, join]) = two_sided();
        let mut stats = uniform_stats(&["books", "reviews"], 1000.0);
        stats.tables.get_mut("reviews").unwrap().rows = 5000.0;
        stats.node_cardinality.insert(sigma, 3000.0);
        stats.node_cardinality.insert(join, 2500.0);
        stats
            .node_distinct
            .insert(join, [("books".into(), 800.0), ("reviews".into(), 2500.0)].into());
        let cfg = OptimizerConfig {
            alpha: 0.1,
            ..Default::default()
        };
        let ctx = PlacementContext::new(&tree, &SelectivityModel::default(), &stats, &cfg).unwrap();
        let orig = ctx.placement_of(&tree).unwrap();
        // Both filters at their anchors: 1000 + 3000 calls; relational rows
        // 1000 + 5000 + 3000 + 2500 * 0.04 + 2500 * 0.04 at the projection.
        assert_eq!(orig.estimate.llm_rows, 4000.0);
        let rel = 1000.0 + 5000.0 + 3000.0 + 2500.0 * (0.2 * 0.2) + 2500.0 * (0.2 * 0.2);
        assert!((orig.estimate.rel_rows - rel).abs() < 1e-9);
        assert!((orig.estimate.total - (4000.0 + 0.1 * rel)).abs() < 1e-9);

        let mut up = Placement::default();
        up.stacks.insert(join, vec![phi1, phi2]);
        let stacks = ctx.stacks_of(&up).unwrap();
        let e = ctx.evaluate(&stacks);
        assert_eq!(e.llm_rows, 800.0 + 2500.0);
        let rel = 1000.0 + 5000.0 + 3000.0 + (2500.0 + 2.0 * 2500.0) + 2500.0 * 0.04;
        assert!((e.rel_rows - rel).abs() < 1e-9);
    }

    #[test]
    fn apply_moves_filters_and_widens_projections() {
        let mut b = TreeBuilder::new(catalog(&["a", "b"]));
        let a = b.scan("a");
        let f = b.sem_filter(a, "{a.v}?");
        let p = b.project(f, &["a.k"]);
        let bb = b.scan("b");
        let j = b.join(p, bb, &[("a.k", "b.k")]);
        b.project(j, &["b.v"]);
        let tree = b.build();
        let ctx = PlacementContext::new(
            &tree,
            &SelectivityModel::default(),
            &uniform_stats(&["a", "b"], 10.0),
            &OptimizerConfig::default(),
        )
        .unwrap();
        let mut up = Placement::default();
        up.stacks.insert(j, vec![f]);
        let moved = apply_placement(&tree, &ctx, &up).unwrap();
        assert_eq!(moved.parent_of(f), Some(moved.root));
        assert_eq!(moved.children(f), &[j]);
        let NodeKind::Project { columns } = moved.kind(p) else {
            panic!()
        };
        assert_eq!(columns.len(), 2);

        let mut bad = Placement::default();
        bad.stacks.insert(moved.root, vec![f]);
        assert!(apply_placement(&tree, &ctx, &bad).is_err());
        assert!(matches!(
            apply_placement(&tree, &ctx, &Placement::default()),
            Err(PlacementError::Unassigned(_))
        ));
    }
}
