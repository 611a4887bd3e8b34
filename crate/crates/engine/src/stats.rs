//! Exact statistics and distinct-input counts measured on real data.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use semplan_core::cost::{Statistics, TableStats};
use semplan_core::ir::{is_block_operator, NodeKind, PlanTree};
use semplan_core::oracle::render_prompt;
use semplan_core::{IrError, NodeId, Value};

use crate::data::Dataset;
use crate::exec::{is_row_number, ExecError, Executor};
use crate::oracle::SemanticOracle;

#[derive(Debug, thiserror::Error)]
pub enum MeasureError {
    #[error("node {0} is not a semantic filter")]
    NotAFilter(NodeId),
    #[error("node {at} is not on the path from {anchor} to the root")]
    NotOnPath { at: NodeId, anchor: NodeId },
    #[error("block operator {0} lies between the filter and the measured node")]
    AcrossBlock(NodeId),
    #[error("column {column} is not visible at node {at}")]
    NotVisible { at: NodeId, column: String },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Statistics that make the estimator exact for `tree` on `data`: base-table
/// sizes and per-column distinct counts, the output rows of every operator
/// with semantic filters removed, and the number of distinct rows of each
/// base table present at every operator.
///
/// Semantic projections are evaluated with `oracle` because later operators
/// may read their output.
pub fn collect_exact_statistics(
    tree: &PlanTree,
    data: &Dataset,
    oracle: &dyn SemanticOracle,
) -> Result<Statistics, ExecError> {
    let mut bare = tree.clone();
    for f in tree.semantic_filters() {
        if f != bare.root {
            bare.detach(f)?;
        }
    }
    let mut stats = Statistics::default();
    for name in tree.catalog.keys() {
        let table = data
            .tables
            .get(name)
            .ok_or_else(|| ExecError::MissingTable(name.clone()))?;
        let mut ndv = BTreeMap::new();
        for (i, col) in table.schema.columns.iter().enumerate() {
            let distinct: HashSet<&Value> = table.rows.iter().map(|r| &r[i]).filter(|v| !v.is_null()).collect();
            ndv.insert(col.name.clone(), distinct.len().max(1) as f64);
        }
        stats.tables.insert(
            name.clone(),
            TableStats {
                rows: table.rows.len() as f64,
                ndv,
            },
        );
    }
    let mut distinct: BTreeMap<NodeId, BTreeMap<String, f64>> = BTreeMap::new();
    let metrics = Executor::new(oracle).trace_rows(&bare, data, |id, rel| {
        let mut per_table = BTreeMap::new();
        for (i, col) in rel.columns.iter().enumerate() {
            if is_row_number(col) {
                let rows: HashSet<&Value> = rel.rows.iter().map(|r| &r[i]).collect();
                per_table.insert(col.table.clone(), rows.len() as f64);
            }
        }
        if !per_table.is_empty() {
            distinct.insert(id, per_table);
        }
    })?;
    for (id, rows) in metrics.rows_per_node {
        stats.node_cardinality.insert(id, rows as f64);
    }
    stats.node_distinct = distinct;
    Ok(stats)
}

/// Number of distinct non-NULL projections onto the filter's columns in the
/// input the filter would see if it were placed directly above `at`.
///
/// `at` must be the filter's input or one of its ancestors with no block
/// operator in between. Other semantic filters stay where they are.
pub fn count_distinct_inputs(
    tree: &PlanTree,
    filter: NodeId,
    at: NodeId,
    data: &Dataset,
    oracle: &dyn SemanticOracle,
) -> Result<usize, MeasureError> {
    let node = tree.node(filter)?;
    let NodeKind::SemFilter { predicate, .. } = &node.kind else {
        return Err(MeasureError::NotAFilter(filter));
    };
    let anchor = node.children[0];
    let mut bare = tree.clone();
    bare.detach(filter)?;
    let target = if at == filter { anchor } else { at };
    if !bare.is_in_subtree(anchor, target) {
        return Err(MeasureError::NotOnPath { at, anchor });
    }
    let mut cur = anchor;
    while cur != target {
        cur = bare.parent_of(cur).ok_or(MeasureError::NotOnPath { at, anchor })?;
        if is_block_operator(bare.kind(cur).op()) {
            return Err(MeasureError::AcrossBlock(cur));
        }
    }
    let rel = Executor::new(oracle).materialize(&bare, target, data)?.relation;
    let mut idx = Vec::with_capacity(predicate.columns.len());
    for c in &predicate.columns {
        idx.push(rel.index_of(c).ok_or_else(|| MeasureError::NotVisible {
            at: target,
            column: c.to_string(),
        })?);
    }
    let distinct: HashSet<Vec<&Value>> = rel
        .rows
        .iter()
        .map(|r| idx.iter().map(|&i| &r[i]).collect::<Vec<_>>())
        .filter(|t: &Vec<&Value>| t.is_empty() || t.iter().any(|v| !v.is_null()))
        .collect();
    Ok(distinct.len())
}

/// Distinct non-NULL rendered prompts reaching the semantic operator `node`
/// in `tree` as it stands.
pub fn distinct_prompts(
    tree: &PlanTree,
    node: NodeId,
    data: &Dataset,
    oracle: &dyn SemanticOracle,
) -> Result<BTreeSet<String>, MeasureError> {
    let n = tree.node(node)?;
    let predicate = n.kind.semantic_predicate().ok_or(MeasureError::NotAFilter(node))?;
    let rel = Executor::new(oracle).materialize(tree, n.children[0], data)?.relation;
    let mut idx = Vec::with_capacity(predicate.columns.len());
    for c in &predicate.columns {
        idx.push((
            c.clone(),
            rel.index_of(c).ok_or_else(|| MeasureError::NotVisible {
                at: n.children[0],
                column: c.to_string(),
            })?,
        ));
    }
    Ok(rel
        .rows
        .iter()
        .filter_map(|row| render_prompt(predicate, |c| idx.iter().find(|(k, _)| k == c).map(|(_, i)| &row[*i])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Table;
    use crate::oracle::MockOracle;
    use semplan_core::ir::{TableSchema, TreeBuilder};
    use semplan_core::ColumnType;

    fn data() -> Dataset {
        let mut a = Table::new(TableSchema::new([("k", ColumnType::Integer), ("v", ColumnType::Text)]));
        for (k, v) in [(1, "x"), (1, "y"), (2, "y"), (3, "z")] {
            a.rows.push(vec![Value::Integer(k), v.into()]);
        }
        let mut b = Table::new(TableSchema::new([("k", ColumnType::Integer)]));
        for k in [1, 1, 2] {
            b.rows.push(vec![Value::Integer(k)]);
        }
        let mut d = Dataset::default();
        d.insert("a", a);
        d.insert("b", b);
        d
    }

    #[test]
    fn exact_statistics_count_rows_and_distinct_base_rows() {
        let d = data();
        let mut t = TreeBuilder::new(d.catalog());
        let sa = t.scan("a");
        let f = t.sem_filter(sa, "{a.v}?");
        let sb = t.scan("b");
        let j = t.join(f, sb, &[("a.k", "b.k")]);
        t.project(j, &["a.v"]);
        let tree = t.build();
        let oracle = MockOracle::new(0, 0.0);
        let stats = collect_exact_statistics(&tree, &d, &oracle).unwrap();
        // Filters are ignored: 2 + 2 + 1 join rows.
        assert_eq!(stats.node_cardinality[&j], 5.0);
        assert_eq!(stats.node_distinct[&j]["a"], 3.0);
        assert_eq!(stats.node_distinct[&j]["b"], 3.0);
        assert_eq!(stats.tables["a"].ndv["v"], 3.0);
        assert!(!stats.node_cardinality.contains_key(&f));
    }

    #[test]
    fn distinct_inputs_shrink_upwards_and_ignore_nulls() {
        let mut d = data();
        d.tables
            .get_mut("a")
            .unwrap()
            .rows
            .push(vec![Value::Integer(2), Value::Null]);
        let mut t = TreeBuilder::new(d.catalog());
        let sa = t.scan("a");
        let f = t.sem_filter(sa, "{a.v}?");
        let sb = t.scan("b");
        let j = t.join(f, sb, &[("a.k", "b.k")]);
        let root = t.project(j, &["a.v"]);
        let tree = t.build();
        let oracle = MockOracle::new(0, 0.5);
        assert_eq!(count_distinct_inputs(&tree, f, sa, &d, &oracle).unwrap(), 3);
        assert_eq!(count_distinct_inputs(&tree, f, j, &d, &oracle).unwrap(), 2);
        assert!(matches!(
            count_distinct_inputs(&tree, f, sb, &d, &oracle),
            Err(MeasureError::NotOnPath { .. })
        ));
        assert!(matches!(
            count_distinct_inputs(&tree, sa, j, &d, &oracle),
            Err(MeasureError::NotAFilter(_))
        ));
        let _ = root;
    }

    #[test]
    fn all_null_column_has_no_distinct_inputs() {
        let mut d = Dataset::default();
        let mut a = Table::new(TableSchema::new([("v", ColumnType::Text)]));
        a.rows = vec![vec![Value::Null]; 4];
        d.insert("a", a);
        let mut t = TreeBuilder::new(d.catalog());
        let sa = t.scan("a");
        let f = t.sem_filter(sa, "{a.v}?");
        t.project(f, &["a.v"]);
        let tree = t.build();
        let oracle = MockOracle::new(0, 0.5);
        assert_eq!(count_distinct_inputs(&tree, f, sa, &d, &oracle).unwrap(), 0);
        assert!(distinct_prompts(&tree, f, &d, &oracle).unwrap().is_empty());
    }
}
