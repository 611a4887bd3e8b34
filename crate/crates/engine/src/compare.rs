//! Result comparison between plans: multiset equality and F1.

use std::collections::HashMap;

use semplan_core::ir::{ColumnRef, PlanTree};
use semplan_core::Value;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Relation, Row};
use crate::exec::{ExecError, ExecutionMetrics, Executor};
use crate::oracle::SemanticOracle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Rows with columns reordered by name, so plans that emit the same columns
/// in a different order compare equal.
fn normalized(rel: &Relation) -> Vec<Row> {
    let mut order: Vec<(usize, &ColumnRef)> = rel.columns.iter().enumerate().collect();
    order.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)));
    rel.rows
        .iter()
        .map(|r| order.iter().map(|&(i, _)| r[i].clone()).collect())
        .collect()
}

fn counts(rows: Vec<Row>) -> HashMap<Row, usize> {
    let mut out = HashMap::new();
    for r in rows {
        *out.entry(r).or_insert(0) += 1;
    }
    out
}

/// True when both relations hold the same multiset of rows.
pub fn same_multiset(a: &Relation, b: &Relation) -> bool {
    a.rows.len() == b.rows.len() && counts(normalized(a)) == counts(normalized(b))
}

/// Accuracy of `candidate` against `reference` under multiset semantics.
/// Two empty results agree perfectly.
pub fn accuracy(reference: &Relation, candidate: &Relation) -> Accuracy {
    let r = counts(normalized(reference));
    let c = counts(normalized(candidate));
    let common: usize = c
        .iter()
        .map(|(row, n)| (*n).min(r.get(row).copied().unwrap_or(0)))
        .sum();
    let (nr, nc) = (reference.rows.len(), candidate.rows.len());
    let precision = if nc == 0 {
        if nr == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        common as f64 / nc as f64
    };
    let recall = if nr == 0 {
        if nc == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        common as f64 / nr as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Accuracy { precision, recall, f1 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub equal: bool,
    pub accuracy: Accuracy,
    pub metrics_a: ExecutionMetrics,
    pub metrics_b: ExecutionMetrics,
}

/// Executes both plans on the same data and oracle and compares results,
/// scoring `b` against `a`.
pub fn run_and_compare(
    a: &PlanTree,
    b: &PlanTree,
    data: &Dataset,
    oracle: &dyn SemanticOracle,
) -> Result<ComparisonReport, ExecError> {
    let exec = Executor::new(oracle);
    let ra = exec.execute(a, data)?;
    let rb = exec.execute(b, data)?;
    Ok(ComparisonReport {
        equal: same_multiset(&ra.relation, &rb.relation),
        accuracy: accuracy(&ra.relation, &rb.relation),
        metrics_a: ra.metrics,
        metrics_b: rb.metrics,
    })
}

/// Convenience for tests: a relation of integer rows.
pub fn int_relation(columns: &[&str], rows: &[&[i64]]) -> Relation {
    Relation {
        columns: columns.iter().map(|c| ColumnRef::new("t", *c)).collect(),
        rows: rows
            .iter()
            .map(|r| r.iter().map(|&v| Value::Integer(v)).collect())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Table;
    use crate::oracle::MockOracle;
    use semplan_core::ir::{TableSchema, TreeBuilder};
    use semplan_core::ColumnType;

    #[test]
    fn column_order_does_not_matter() {
        let a = int_relation(&["x", "y"], &[&[1, 2], &[3, 4]]);
        let b = Relation {
            columns: vec![ColumnRef::new("t", "y"), ColumnRef::new("t", "x")],
            rows: vec![
                vec![Value::Integer(4), Value::Integer(3)],
                vec![Value::Integer(2), Value::Integer(1)],
            ],
        };
        assert!(same_multiset(&a, &b));
        assert_eq!(accuracy(&a, &b).f1, 1.0);
    }

    #[test]
    fn multiplicity_counts() {
        let a = int_relation(&["x"], &[&[1], &[1], &[2]]);
        let b = int_relation(&["x"], &[&[1], &[2], &[2]]);
        assert!(!same_multiset(&a, &b));
        let acc = accuracy(&a, &b);
        assert_eq!((acc.precision, acc.recall), (2.0 / 3.0, 2.0 / 3.0));
    }

    #[test]
    fn dropping_a_filter_lowers_precision_only() {
        // Ten rows, keys 0..10; the filter keeps exactly the rows whose
        // mock answer is true.
        let mut t = Table::new(TableSchema::new([("k", ColumnType::Integer), ("v", ColumnType::Text)]));
        for i in 0..10 {
            t.rows.push(vec![Value::Integer(i), format!("item {i}").into()]);
        }
        let mut d = Dataset::default();
        d.insert("t", t);
        let oracle = MockOracle::new(9, 0.5);

        let mut b = TreeBuilder::new(d.catalog());
        let s = b.scan("t");
        let f = b.sem_filter(s, "{t.v} keep?");
        b.project(f, &["t.k"]);
        let filtered = b.build();

        let mut b = TreeBuilder::new(d.catalog());
        let s = b.scan("t");
        b.project(s, &["t.k"]);
        let unfiltered = b.build();

        let kept = (0..10)
            .filter(|i| semplan_core::oracle::mock_boolean(9, &format!("item {i} keep?"), 0.5))
            .count();
        assert!(kept > 0 && kept < 10, "fixture needs a mix, got {kept}");

        let report = run_and_compare(&filtered, &unfiltered, &d, &oracle).unwrap();
        assert!(!report.equal);
        assert_eq!(report.accuracy.recall, 1.0);
        assert_eq!(report.accuracy.precision, kept as f64 / 10.0);
        let p = kept as f64 / 10.0;
        assert_eq!(report.accuracy.f1, 2.0 * p / (p + 1.0));

        let same = run_and_compare(&filtered, &filtered, &d, &oracle).unwrap();
        assert!(same.equal);
        assert_eq!(same.accuracy.f1, 1.0);
    }
}
