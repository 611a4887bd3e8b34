//! Selectivities, cardinalities and distinct-count estimates.
//!
//! All estimates ignore semantic filters: `c(u)` is the number of rows an
//! operator produces on its original input, honoring only relational filters
//! and joins. Semantic filters enter through [`combined_selectivity`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ir::{tables_under, ColumnRef, NodeId, NodeKind, OperatorKind, PlanTree};
use crate::placement::SemanticFilterDescriptor;

/// Selectivity of a cross join on distinct counts.
pub const CROSS_JOIN_SELECTIVITY: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectivityModel {
    pub default_sf_selectivity: f64,
    /// Fraction of one side's distinct rows that survive an inner join.
    pub join_distinct_selectivity: f64,
    /// Per-conjunct selectivity of relational filters without statistics.
    pub relational_selectivity: f64,
    /// Overrides keyed by semantic-filter node id.
    pub per_filter_overrides: BTreeMap<NodeId, f64>,
}

impl Default for SelectivityModel {
    fn default() -> Self {
        SelectivityModel {
            default_sf_selectivity: 0.2,
            join_distinct_selectivity: 0.1,
            relational_selectivity: 0.3,
            per_filter_overrides: BTreeMap::new(),
        }
    }
}

fn check_fraction(name: &str, x: f64) -> Result<(), CostError> {
    if x > 0.0 && x <= 1.0 {
        Ok(())
    } else {
        Err(CostError::InvalidModel(format!("{name} must be in (0, 1], got {x}")))
    }
}

impl SelectivityModel {
    pub fn validate(&self) -> Result<(), CostError> {
        check_fraction("semantic filter selectivity", self.default_sf_selectivity)?;
        check_fraction("join selectivity", self.join_distinct_selectivity)?;
        check_fraction("relational filter selectivity", self.relational_selectivity)?;
        for (id, s) in &self.per_filter_overrides {
            check_fraction(&format!("selectivity of {id}"), *s)?;
        }
        Ok(())
    }

    pub fn filter_selectivity(&self, filter: NodeId) -> f64 {
        self.per_filter_overrides
            .get(&filter)
            .copied()
            .unwrap_or(self.default_sf_selectivity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Weight converting relational rows into LLM-call units.
    pub alpha: f64,
    /// Row-equivalents charged per cache probe.
    pub cache_probe_cost: f64,
    /// Largest filter count the placer accepts.
    pub max_dp_filters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            alpha: 1e-7,
            cache_probe_cost: 1.0,
            max_dp_filters: 20,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CostError::InvalidModel(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.cache_probe_cost >= 0.0 && self.cache_probe_cost.is_finite()) {
            return Err(CostError::InvalidModel("cache probe cost must be non-negative".into()));
        }
        if self.max_dp_filters > 20 {
            return Err(CostError::InvalidModel("the placer supports at most 20 filters".into()));
        }
        Ok(())
    }
}

/// Estimated cost split into its two components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub llm_rows: f64,
    pub rel_rows: f64,
    /// `llm_rows + alpha * rel_rows`, accumulated in plan order.
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableStats {
    pub rows: f64,
    /// Distinct values per column; missing columns count as all distinct.
    pub ndv: BTreeMap<String, f64>,
}

/// Statistics used by the estimator. Node-keyed entries override estimates
/// for one specific tree.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Statistics {
    pub tables: BTreeMap<String, TableStats>,
    pub node_cardinality: BTreeMap<NodeId, f64>,
    /// Distinct rows of each base table present at a node.
    pub node_distinct: BTreeMap<NodeId, BTreeMap<String, f64>>,
    pub relational_selectivity: BTreeMap<NodeId, f64>,
}

impl Statistics {
    pub fn with_table(mut self, table: &str, rows: f64) -> Self {
        self.tables.insert(
            table.to_string(),
            TableStats {
                rows,
                ndv: BTreeMap::new(),
            },
        );
        self
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("no statistics for table {0}")]
    MissingStatistics(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} is not above the tables of filter {filter}")]
    NotAbove { node: NodeId, filter: NodeId },
    #[error("invalid cost model: {0}")]
    InvalidModel(String),
}

/// Cardinality and distinct-count estimates over one tree.
#[derive(Clone, Debug)]
pub struct Estimator<'a> {
    tree: &'a PlanTree,
    model: &'a SelectivityModel,
    stats: &'a Statistics,
    card: BTreeMap<NodeId, f64>,
    tabs: BTreeMap<NodeId, BTreeSet<String>>,
}

impl<'a> Estimator<'a> {
    pub fn new(tree: &'a PlanTree, model: &'a SelectivityModel, stats: &'a Statistics) -> Result<Self, CostError> {
        let mut est = Estimator {
            tree,
            model,
            stats,
            card: BTreeMap::new(),
            tabs: BTreeMap::new(),
        };
        for id in tree.postorder(tree.root) {
            let tabs = tables_under(tree, id).map_err(|_| CostError::UnknownNode(id))?;
            est.tabs.insert(id, tabs);
            let c = est.compute_cardinality(id)?;
            est.card.insert(id, c);
        }
        Ok(est)
    }

    pub fn tree(&self) -> &PlanTree {
        self.tree
    }

    pub fn model(&self) -> &SelectivityModel {
        self.model
    }

    /// `c(u)`: estimated output rows of `u`, ignoring semantic filters.
    pub fn cardinality(&self, node: NodeId) -> Result<f64, CostError> {
        self.card.get(&node).copied().ok_or(CostError::UnknownNode(node))
    }

    pub fn tables(&self, node: NodeId) -> Result<&BTreeSet<String>, CostError> {
        self.tabs.get(&node).ok_or(CostError::UnknownNode(node))
    }

    fn table_rows(&self, table: &str) -> Result<f64, CostError> {
        self.stats
            .tables
            .get(table)
            .map(|t| t.rows)
            .ok_or_else(|| CostError::MissingStatistics(table.to_string()))
    }

    /// Distinct values of a column at `node`, capped by the node's rows.
    fn column_ndv(&self, node: NodeId, col: &ColumnRef) -> f64 {
        let rows = self.card.get(&node).copied().unwrap_or(f64::INFINITY);
        let base = if col.is_derived() {
            rows
        } else {
            self.stats
                .tables
                .get(&col.table)
                .map(|t| t.ndv.get(&col.column).copied().unwrap_or(t.rows))
                .unwrap_or(rows)
        };
        base.min(rows).max(1.0)
    }

    fn compute_cardinality(&self, id: NodeId) -> Result<f64, CostError> {
        if let Some(c) = self.stats.node_cardinality.get(&id) {
            return Ok(*c);
        }
        let node = self.tree.node(id).map_err(|_| CostError::UnknownNode(id))?;
        let input = |i: usize| -> f64 { self.card[&node.children[i]] };
        Ok(match &node.kind {
            NodeKind::TableScan { table } => self.table_rows(table)?,
            NodeKind::RelFilter { predicate } => {
                let sel = match self.stats.relational_selectivity.get(&id) {
                    Some(s) => *s,
                    None => {
                        let mut s = 1.0;
                        for _ in 0..predicate.conjuncts() {
                            s *= self.model.relational_selectivity;
                        }
                        s
                    }
                };
                input(0) * sel
            }
            NodeKind::Project { .. }
            | NodeKind::Sort { .. }
            | NodeKind::SemFilter { .. }
            | NodeKind::SemProject { .. } => input(0),
            NodeKind::InnerJoin { keys } => {
                let (l, r) = (input(0), input(1));
                let mut denom = 1.0;
                for k in keys {
                    let dl = self.column_ndv(node.children[0], &k.left);
                    let dr = self.column_ndv(node.children[1], &k.right);
                    denom *= dl.max(dr);
                }
                l * r / denom
            }
            NodeKind::CrossJoin { .. } => input(0) * input(1),
            NodeKind::Aggregate { group_by, .. } => {
                if group_by.is_empty() {
                    1.0
                } else {
                    let mut groups = 1.0;
                    for g in group_by {
                        groups *= self.column_ndv(node.children[0], g);
                    }
                    groups.min(input(0))
                }
            }
            NodeKind::Limit { count } => (*count as f64).min(input(0)),
            NodeKind::Union => input(0) + input(1),
        })
    }

    /// Distinct rows of `table` present at `node`: the base size discounted by
    /// the join selectivity once per inner join on the path from the scan,
    /// and never more than the rows of any node on that path.
    pub fn table_distinct(&self, node: NodeId, table: &str) -> Result<f64, CostError> {
        if let Some(d) = self.stats.node_distinct.get(&node).and_then(|m| m.get(table)) {
            return Ok(*d);
        }
        let n = self.tree.node(node).map_err(|_| CostError::UnknownNode(node))?;
        if let NodeKind::TableScan { table: t } = &n.kind {
            if t == table {
                return self.table_rows(table);
            }
        }
        let child = n
            .children
            .iter()
            .copied()
            .find(|c| self.tabs.get(c).is_some_and(|t| t.contains(table)));
        let Some(child) = child else {
            return Err(CostError::MissingStatistics(format!("{table} under {node}")));
        };
        let below = self.table_distinct(child, table)?;
        let here = match n.op() {
            OperatorKind::InnerJoin => below * self.model.join_distinct_selectivity,
            OperatorKind::CrossJoin => below * CROSS_JOIN_SELECTIVITY,
            _ => below,
        };
        Ok(here.min(self.cardinality(node)?))
    }

    /// Distinct rows at `node` projected onto `tables`, before any semantic
    /// filter. Capped by `c(node)` and by the same count at the child holding
    /// all of `tables`, since no operator on the path creates new
    /// combinations. An empty table set yields one row.
    pub fn base_distinct(&self, node: NodeId, tables: &BTreeSet<String>) -> Result<f64, CostError> {
        if tables.is_empty() {
            return Ok(1.0);
        }
        let mut n = 1.0;
        for t in tables {
            if !self.tables(node)?.contains(t) {
                return Err(CostError::MissingStatistics(format!("{t} under {node}")));
            }
            n *= self.table_distinct(node, t)?;
        }
        n = n.min(self.cardinality(node)?);
        let holder = self
            .tree
            .children(node)
            .iter()
            .copied()
            .find(|c| self.tabs.get(c).is_some_and(|t| tables.is_subset(t)));
        if let Some(c) = holder {
            if !self.stats.node_distinct.contains_key(&node) {
                n = n.min(self.base_distinct(c, tables)?);
            }
        }
        Ok(n)
    }

    /// `N(u, SF)` in the current tree: [`Self::base_distinct`] times the
    /// selectivities of the semantic filters below `node` that touch the
    /// filter's tables.
    pub fn distinct_count(
        &self,
        node: NodeId,
        filter: &SemanticFilterDescriptor,
        filters: &[SemanticFilterDescriptor],
    ) -> Result<f64, CostError> {
        if !filter.referenced_tables.is_subset(self.tables(node)?) {
            return Err(CostError::NotAbove {
                node,
                filter: filter.filter_node,
            });
        }
        let below: BTreeSet<NodeId> = self.tree.postorder(node).into_iter().filter(|&id| id != node).collect();
        let mut mask = 0u32;
        for (i, f) in filters.iter().enumerate() {
            if f.filter_node != filter.filter_node
                && below.contains(&f.filter_node)
                && !f.referenced_tables.is_disjoint(&filter.referenced_tables)
            {
                mask |= 1 << i;
            }
        }
        let sels: Vec<f64> = filters.iter().map(|f| f.selectivity).collect();
        Ok(self.base_distinct(node, &filter.referenced_tables)? * selectivity_product(&sels, mask))
    }

    /// Probe rows charged at a join: its output times the number of semantic
    /// filters above it whose original position is inside its subtree.
    pub fn cache_probe_cost(
        &self,
        join: NodeId,
        filters: &[SemanticFilterDescriptor],
        config: &OptimizerConfig,
    ) -> Result<f64, CostError> {
        let node = self.tree.node(join).map_err(|_| CostError::UnknownNode(join))?;
        if !matches!(node.op(), OperatorKind::InnerJoin | OperatorKind::CrossJoin) {
            return Ok(0.0);
        }
        let ancestors = self.tree.ancestors(join);
        let k = filters
            .iter()
            .filter(|f| ancestors.contains(&f.filter_node) && self.tree.is_in_subtree(f.original_position, join))
            .count();
        Ok(probe_rows(self.cardinality(join)?, k, config.cache_probe_cost))
    }
}

/// Product of `sels[i]` over the bits of `mask`, in ascending bit order.
pub fn selectivity_product(sels: &[f64], mask: u32) -> f64 {
    let mut p = 1.0;
    let mut m = mask;
    while m != 0 {
        let i = m.trailing_zeros() as usize;
        p *= sels[i];
        m &= m - 1;
    }
    p
}

/// Spacing of the grid that placement cost terms are rounded to.
///
/// Terms on a common dyadic grid add exactly (below `2^29`), so the cost of a
/// placement does not depend on the order its terms are summed in, and
/// placements that tie mathematically tie exactly.
pub const COST_QUANTUM: f64 = 1.0 / (1u64 << 24) as f64;

/// Rounds a non-negative cost term to the nearest multiple of [`COST_QUANTUM`].
pub fn quantize(x: f64) -> f64 {
    if !(0.0..(1u64 << 29) as f64).contains(&x) {
        return x;
    }
    ((x / COST_QUANTUM + 0.5) as u64) as f64 * COST_QUANTUM
}

/// Rows processed by probes: `rows * filters * cost_per_probe`.
pub fn probe_rows(rows: f64, filters: usize, cost_per_probe: f64) -> f64 {
    rows * filters as f64 * cost_per_probe
}

/// `sel(A, S)`: product of `s_i` over filters in `subset` whose tables meet `tables`.
pub fn combined_selectivity(
    tables: &BTreeSet<String>,
    subset: &BTreeSet<NodeId>,
    filters: &[SemanticFilterDescriptor],
) -> Result<f64, CostError> {
    let mut mask = 0u32;
    for id in subset {
        let i = filters
            .iter()
            .position(|f| f.filter_node == *id)
            .ok_or(CostError::UnknownNode(*id))?;
        if !filters[i].referenced_tables.is_disjoint(tables) {
            mask |= 1 << i;
        }
    }
    let sels: Vec<f64> = filters.iter().map(|f| f.selectivity).collect();
    Ok(selectivity_product(&sels, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Catalog, ColumnRef, CompareOp, RelPredicate, TableSchema, TreeBuilder};
    use crate::placement::describe_filters;
    use crate::value::{ColumnType, Value};

    fn catalog(tables: &[&'static str]) -> Catalog {
        let mut c = Catalog::new();
        for t in tables {
            c.insert(
                t.to_string(),
                TableSchema::new([("k", ColumnType::Integer), ("v", ColumnType::Text)]),
            );
        }
        c
    }

    fn two_filters() -> (PlanTree, Vec<SemanticFilterDescriptor>) {
        let mut b = TreeBuilder::new(catalog(&["a", "b"]));
        let a = b.scan("a");
        let bb = b.scan("b");
        let f1 = b.sem_filter(a, "{a.v} one");
        let f2 = b.sem_filter(f1, "{a.v} two");
        let j = b.join(f2, bb, &[("a.k", "b.k")]);
        b.project(j, &["a.v"]);
        let tree = b.build();
        let filters = describe_filters(&tree, &SelectivityModel::default()).unwrap();
        (tree, filters)
    }

    #[test]
    fn combined_selectivity_examples() {
        let (_, filters) = two_filters();
        let a: BTreeSet<String> = ["a".to_string()].into();
        let b: BTreeSet<String> = ["b".to_string()].into();
        assert_eq!(combined_selectivity(&a, &BTreeSet::new(), &filters).unwrap(), 1.0);
        let both: BTreeSet<NodeId> = filters.iter().map(|f| f.filter_node).collect();
        let s = combined_selectivity(&a, &both, &filters).unwrap();
        assert!((s - 0.04).abs() < 1e-15, "{s}");
        let one: BTreeSet<NodeId> = [filters[0].filter_node].into();
        assert_eq!(combined_selectivity(&b, &one, &filters).unwrap(), 1.0);
        assert!(combined_selectivity(&a, &[NodeId(99)].into(), &filters).is_err());
    }

    #[test]
    fn relational_cost_examples() {
        let mut b = TreeBuilder::new(catalog(&["t", "u"]));
        let t = b.scan("t");
        let u = b.scan("u");
        let f = b.filter(
            u,
            RelPredicate::Compare {
                column: ColumnRef::new("u", "k"),
                op: CompareOp::Ge,
                value: Value::Integer(3),
            },
        );
        let x = b.cross(t, f);
        let tree = b.build();
        let mut stats = Statistics::default().with_table("t", 100.0).with_table("u", 5000.0);
        stats.node_cardinality.insert(f, 3000.0);
        let model = SelectivityModel::default();
        let est = Estimator::new(&tree, &model, &stats).unwrap();
        assert_eq!(est.cardinality(t).unwrap(), 100.0);
        assert_eq!(est.cardinality(f).unwrap(), 3000.0);
        assert_eq!(est.cardinality(x).unwrap(), 300_000.0);

        let stats = Statistics::default().with_table("t", 100.0).with_table("u", 200.0);
        let est = Estimator::new(&tree, &model, &stats).unwrap();
        // 200 rows through one default conjunct, crossed with 100.
        assert!((est.cardinality(x).unwrap() - 100.0 * 200.0 * 0.3).abs() < 1e-9);
        let missing = Statistics::default().with_table("t", 1.0);
        assert!(matches!(
            Estimator::new(&tree, &model, &missing),
            Err(CostError::MissingStatistics(_))
        ));
    }

    #[test]
    fn cross_join_of_100_and_200() {
        let mut b = TreeBuilder::new(catalog(&["t", "u"]));
        let t = b.scan("t");
        let u = b.scan("u");
        let x = b.cross(t, u);
        let tree = b.build();
        let stats = Statistics::default().with_table("t", 100.0).with_table("u", 200.0);
        let model = SelectivityModel::default();
        let est = Estimator::new(&tree, &model, &stats).unwrap();
        assert_eq!(est.cardinality(x).unwrap(), 20_000.0);
    }

    fn chain3() -> (PlanTree, NodeId, NodeId, NodeId) {
        let mut b = TreeBuilder::new(catalog(&["a", "b", "c"]));
        let a = b.scan("a");
        let bb = b.scan("b");
        let c = b.scan("c");
        let j1 = b.join(a, bb, &[("a.k", "b.k")]);
        let j2 = b.join(j1, c, &[("a.k", "c.k")]);
        (b.build(), a, j1, j2)
    }

    #[test]
    fn distinct_count_examples() {
        let (tree, a, j1, _) = chain3();
        let stats = Statistics::default()
            .with_table("a", 1000.0)
            .with_table("b", 1000.0)
            .with_table("c", 1000.0);
        let model = SelectivityModel::default();
        let est = Estimator::new(&tree, &model, &stats).unwrap();
        let at: BTreeSet<String> = ["a".to_string()].into();
        assert!((est.base_distinct(j1, &at).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(est.base_distinct(a, &at).unwrap(), 1000.0);
    }

    #[test]
    fn distinct_count_two_joins_one_filter() {
        let mut b = TreeBuilder::new(catalog(&["a", "b", "c"]));
        let a = b.scan("a");
        let sf = b.sem_filter(a, "{a.v}?");
        let bb = b.scan("b");
        let c = b.scan("c");
        let j1 = b.join(sf, bb, &[("a.k", "b.k")]);
        let j2 = b.join(j1, c, &[("a.k", "c.k")]);
        let probe = b.sem_filter(j2, "{a.v} again?");
        b.project(probe, &["a.v"]);
        let tree = b.build();
        let stats = Statistics::default()
            .with_table("a", 1000.0)
            .with_table("b", 1000.0)
            .with_table("c", 1000.0);
        let model = SelectivityModel::default();
        let est = Estimator::new(&tree, &model, &stats).unwrap();
        let filters = describe_filters(&tree, &model).unwrap();
        let upper = filters.iter().find(|f| f.filter_node == probe).unwrap();
        // Hand walk: 1000 rows of a, x0.2 at the filter, x0.1 at each join.
        let expected = 1000.0 * 0.2 * 0.1 * 0.1;
        let got = est.distinct_count(j2, upper, &filters).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got}");
        assert!((got - 2.0).abs() < 1e-9);
    }

    #[test]
    fn cache_probe_cost_examples() {
        let (tree, filters) = two_filters();
        let j = tree.nodes_of(OperatorKind::InnerJoin)[0];
        let mut stats = Statistics::default().with_table("a", 10.0).with_table("b", 10.0);
        stats.node_cardinality.insert(j, 5000.0);
        let model = SelectivityModel::default();
        let cfg = OptimizerConfig::default();
        let est = Estimator::new(&tree, &model, &stats).unwrap();
        // Both filters are below the join.
        assert_eq!(est.cache_probe_cost(j, &filters, &cfg).unwrap(), 0.0);

        // Pulled in id order: the first filter crosses the join, the second its sibling.
        let mut pulled = tree.clone();
        let f2 = filters[1].filter_node;
        pulled.swap_with_parent(f2).unwrap();
        let f1 = filters[0].filter_node;
        pulled.detach(f1).unwrap();
        pulled.insert_above(f1, f2).unwrap();
        assert!(crate::ir::validate(&pulled).is_empty());
        let est = Estimator::new(&pulled, &model, &stats).unwrap();
        assert_eq!(est.cache_probe_cost(j, &filters, &cfg).unwrap(), 10_000.0);
        stats.node_cardinality.insert(j, 3000.0);
        let one = &filters[1..];
        let est = Estimator::new(&pulled, &model, &stats).unwrap();
        assert_eq!(est.cache_probe_cost(j, one, &cfg).unwrap(), 3000.0);
    }

    #[test]
    fn model_validation() {
        let mut m = SelectivityModel::default();
        assert!(m.validate().is_ok());
        m.join_distinct_selectivity = 0.0;
        assert!(m.validate().is_err());
        let c = OptimizerConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
