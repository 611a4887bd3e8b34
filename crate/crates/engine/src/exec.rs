//! Bottom-up plan execution over in-memory tables.
//!
//! Relational operators have multiset semantics and preserve input order
//! (hash joins emit matches in left-then-right order), so a plan's output is
//! deterministic. Semantic operators render one prompt per row, probe the
//! function cache, and ask the oracle only on a miss. Rows whose referenced
//! values are all NULL make no call: a filter drops them and a projection
//! yields NULL.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use semplan_core::ir::{
    validate, AggregateExpr, AggregateFunc, ColumnRef, CompareOp, NodeKind, OutputColumn, PlanTree, RelPredicate,
    SemanticPredicate, Violation,
};
use semplan_core::oracle::{cache_key, parse_answer, render_prompt};
use semplan_core::{IrError, NodeId, Value};
use serde::{Deserialize, Serialize};

use crate::cache::{Answer, FunctionCache};
use crate::data::{Dataset, Relation, Row};
use crate::oracle::{OracleError, SemanticOracle};

/// Rows per semantic-evaluation batch. Has no effect on results or counts.
pub const BATCH_SIZE: usize = 1024;

/// Column name of the hidden per-table row number used to trace which base
/// rows reach a node. `#` cannot appear in a catalog column name.
pub const ROW_NUMBER: &str = "#row";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecOptions {
    pub batch_size: usize,
    /// Evaluate each batch's prompts on the rayon pool.
    pub parallel: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            batch_size: BATCH_SIZE,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionMetrics {
    /// Oracle calls, equal to cache misses.
    pub llm_calls: u64,
    pub cache_hits: u64,
    pub cache_probes: u64,
    /// Output rows of every node.
    pub rows_per_node: BTreeMap<NodeId, u64>,
    /// Oracle calls made by each semantic operator.
    pub calls_per_node: BTreeMap<NodeId, u64>,
    /// Answers that did not parse as the expected type (treated as NULL).
    pub malformed_answers: u64,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Execution {
    pub relation: Relation,
    pub metrics: ExecutionMetrics,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("invalid plan: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("table `{0}` is missing from the dataset")]
    MissingTable(String),
    #[error("table `{table}` has no column `{column}`")]
    MissingColumn { table: String, column: String },
    #[error("node {node} reads {column}, which its input does not produce")]
    UnboundColumn { node: NodeId, column: String },
    #[error("union {0} has inputs of different widths")]
    UnionWidth(NodeId),
    #[error("oracle failed at node {node}: {source}")]
    Oracle {
        node: NodeId,
        source: OracleError,
        /// Metrics up to the failure.
        metrics: Box<ExecutionMetrics>,
    },
    #[error(transparent)]
    Ir(#[from] IrError),
}

pub struct Executor<'a> {
    oracle: &'a dyn SemanticOracle,
    options: ExecOptions,
}

impl<'a> Executor<'a> {
    pub fn new(oracle: &'a dyn SemanticOracle) -> Self {
        Executor {
            oracle,
            options: ExecOptions::default(),
        }
    }

    pub fn with_options(mut self, options: ExecOptions) -> Self {
        self.options = options;
        self
    }

    /// Runs the plan with a fresh function cache.
    pub fn execute(&self, tree: &PlanTree, data: &Dataset) -> Result<Execution, ExecError> {
        self.execute_with_cache(tree, data, &FunctionCache::new())
    }

    pub fn execute_with_cache(
        &self,
        tree: &PlanTree,
        data: &Dataset,
        cache: &FunctionCache,
    ) -> Result<Execution, ExecError> {
        let violations = validate(tree);
        if !violations.is_empty() {
            return Err(ExecError::Invalid(violations));
        }
        let start = Instant::now();
        let mut run = Run::new(self, tree, data, cache, false);
        let relation = run.eval(tree.root)?;
        run.metrics.timing.wall_ms = start.elapsed().as_secs_f64() * 1000.0;
        Ok(Execution {
            relation,
            metrics: run.metrics,
        })
    }

    /// Result of the subtree rooted at `node`.
    pub fn materialize(&self, tree: &PlanTree, node: NodeId, data: &Dataset) -> Result<Execution, ExecError> {
        let cache = FunctionCache::new();
        let mut run = Run::new(self, tree, data, &cache, false);
        let relation = run.eval(node)?;
        Ok(Execution {
            relation,
            metrics: run.metrics,
        })
    }

    /// Like [`Self::materialize`] for the whole tree, but every relation
    /// carries a hidden row-number column per base table. Union and
    /// aggregate outputs drop them.
    pub(crate) fn trace_rows(
        &self,
        tree: &PlanTree,
        data: &Dataset,
        mut visit: impl FnMut(NodeId, &Relation),
    ) -> Result<ExecutionMetrics, ExecError> {
        let cache = FunctionCache::new();
        let mut run = Run::new(self, tree, data, &cache, true);
        run.visit = Some(&mut visit);
        run.eval(tree.root)?;
        Ok(run.metrics)
    }
}

/// Header names for a plan's result.
pub fn output_names(tree: &PlanTree) -> Vec<String> {
    match tree.kind(tree.root) {
        NodeKind::Project { columns } => columns.iter().map(|c| c.name().to_string()).collect(),
        _ => tree
            .output_columns(tree.root)
            .map(|cols| cols.iter().map(|c| c.to_string()).collect())
            .unwrap_or_default(),
    }
}

pub fn is_row_number(col: &ColumnRef) -> bool {
    col.column == ROW_NUMBER
}

type Visitor<'v> = &'v mut dyn FnMut(NodeId, &Relation);

struct Run<'r, 'v> {
    tree: &'r PlanTree,
    data: &'r Dataset,
    oracle: &'r dyn SemanticOracle,
    cache: &'r FunctionCache,
    options: ExecOptions,
    trace: bool,
    visit: Option<Visitor<'v>>,
    metrics: ExecutionMetrics,
}

/// How one row's semantic evaluation went.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Probe {
    Skipped,
    Hit,
    Miss { malformed: bool },
}

impl<'r, 'v> Run<'r, 'v> {
    fn new(
        exec: &'r Executor<'_>,
        tree: &'r PlanTree,
        data: &'r Dataset,
        cache: &'r FunctionCache,
        trace: bool,
    ) -> Self {
        Run {
            tree,
            data,
            oracle: exec.oracle,
            cache,
            options: exec.options,
            trace,
            visit: None,
            metrics: ExecutionMetrics::default(),
        }
    }

    fn eval(&mut self, id: NodeId) -> Result<Relation, ExecError> {
        let tree = self.tree;
        let node = tree.node(id)?;
        let children = node.children.clone();
        let out = match &node.kind {
            NodeKind::TableScan { table } => self.scan(table)?,
            NodeKind::RelFilter { predicate } => {
                let mut input = self.eval(children[0])?;
                let bound = bind_predicate(id, predicate, &input)?;
                input.rows.retain(|row| bound.eval(row) == Some(true));
                input
            }
            NodeKind::Project { columns } => {
                let input = self.eval(children[0])?;
                self.project(id, columns, input)?
            }
            NodeKind::InnerJoin { keys } => {
                let left = self.eval(children[0])?;
                let right = self.eval(children[1])?;
                let mut pairs = Vec::with_capacity(keys.len());
                for k in keys {
                    let pair = match (left.index_of(&k.left), right.index_of(&k.right)) {
                        (Some(l), Some(r)) => (l, r),
                        _ => match (left.index_of(&k.right), right.index_of(&k.left)) {
                            (Some(l), Some(r)) => (l, r),
                            _ => {
                                return Err(ExecError::UnboundColumn {
                                    node: id,
                                    column: format!("{} = {}", k.left, k.right),
                                })
                            }
                        },
                    };
                    pairs.push(pair);
                }
                hash_join(left, right, &pairs)
            }
            NodeKind::CrossJoin { .. } => {
                let left = self.eval(children[0])?;
                let right = self.eval(children[1])?;
                hash_join(left, right, &[])
            }
            NodeKind::Aggregate { group_by, aggregates } => {
                let input = strip_row_numbers(self.eval(children[0])?);
                aggregate(id, group_by, aggregates, input)?
            }
            NodeKind::Limit { count } => {
                let mut input = self.eval(children[0])?;
                input.rows.truncate(usize::try_from(*count).unwrap_or(usize::MAX));
                input
            }
            NodeKind::Union => {
                let mut left = strip_row_numbers(self.eval(children[0])?);
                let right = strip_row_numbers(self.eval(children[1])?);
                if left.columns.len() != right.columns.len() {
                    return Err(ExecError::UnionWidth(id));
                }
                left.rows.extend(right.rows);
                left
            }
            NodeKind::Sort { keys } => {
                let mut input = self.eval(children[0])?;
                let mut bound = Vec::with_capacity(keys.len());
                for k in keys {
                    let i = input.index_of(&k.column).ok_or_else(|| unbound(id, &k.column))?;
                    bound.push((i, k.descending));
                }
                input.rows.sort_by(|a, b| {
                    for &(i, desc) in &bound {
                        let ord = a[i].cmp(&b[i]);
                        let ord = if desc { ord.reverse() } else { ord };
                        if ord.is_ne() {
                            return ord;
                        }
                    }
                    std::cmp::Ordering::Equal
                });
                input
            }
            NodeKind::SemFilter { predicate, .. } => {
                let mut input = self.eval(children[0])?;
                let answers = self.semantic(id, predicate, &input)?;
                let mut keep = answers.into_iter();
                input.rows.retain(|_| matches!(keep.next(), Some(Value::Boolean(true))));
                input
            }
            NodeKind::SemProject { predicate, output } => {
                let mut input = self.eval(children[0])?;
                let answers = self.semantic(id, predicate, &input)?;
                for (row, v) in input.rows.iter_mut().zip(answers) {
                    row.push(v);
                }
                input.columns.push(ColumnRef::derived(output.clone()));
                input
            }
        };
        self.metrics.rows_per_node.insert(id, out.rows.len() as u64);
        if let Some(visit) = self.visit.as_mut() {
            visit(id, &out);
        }
        Ok(out)
    }

    fn scan(&self, table: &str) -> Result<Relation, ExecError> {
        let schema = self
            .tree
            .catalog
            .get(table)
            .ok_or_else(|| ExecError::MissingTable(table.to_string()))?;
        let data = self
            .data
            .tables
            .get(table)
            .ok_or_else(|| ExecError::MissingTable(table.to_string()))?;
        let mut idx = Vec::with_capacity(schema.columns.len());
        for c in &schema.columns {
            idx.push(data.column_index(&c.name).ok_or_else(|| ExecError::MissingColumn {
                table: table.to_string(),
                column: c.name.clone(),
            })?);
        }
        let mut columns: Vec<ColumnRef> = schema
            .columns
            .iter()
            .map(|c| ColumnRef::new(table, c.name.clone()))
            .collect();
        if self.trace {
            columns.push(ColumnRef::new(table, ROW_NUMBER));
        }
        let identity = idx.iter().enumerate().all(|(i, &j)| i == j) && idx.len() == data.schema.columns.len();
        let rows = data
            .rows
            .iter()
            .enumerate()
            .map(|(n, row)| {
                let mut out: Row = if identity {
                    row.clone()
                } else {
                    idx.iter().map(|&j| row[j].clone()).collect()
                };
                if self.trace {
                    out.push(Value::Integer(n as i64));
                }
                out
            })
            .collect();
        Ok(Relation { columns, rows })
    }

    fn project(&self, id: NodeId, columns: &[OutputColumn], input: Relation) -> Result<Relation, ExecError> {
        let mut idx = Vec::with_capacity(columns.len());
        for c in columns {
            idx.push(input.index_of(&c.column).ok_or_else(|| unbound(id, &c.column))?);
        }
        let mut out_cols: Vec<ColumnRef> = columns.iter().map(|c| c.column.clone()).collect();
        if self.trace {
            for (i, c) in input.columns.iter().enumerate() {
                if is_row_number(c) && !out_cols.contains(c) {
                    idx.push(i);
                    out_cols.push(c.clone());
                }
            }
        }
        let rows = input
            .rows
            .into_iter()
            .map(|row| idx.iter().map(|&i| row[i].clone()).collect())
            .collect();
        Ok(Relation {
            columns: out_cols,
            rows,
        })
    }

    fn semantic(
        &mut self,
        id: NodeId,
        predicate: &SemanticPredicate,
        input: &Relation,
    ) -> Result<Vec<Value>, ExecError> {
        let mut positions = Vec::with_capacity(predicate.columns.len());
        for c in &predicate.columns {
            positions.push((c.clone(), input.index_of(c).ok_or_else(|| unbound(id, c))?));
        }
        let (oracle, cache) = (self.oracle, self.cache);
        let eval_row = |row: &Row| -> (Result<Value, OracleError>, Probe) {
            let lookup = |c: &ColumnRef| positions.iter().find(|(k, _)| k == c).map(|(_, i)| &row[*i]);
            let Some(prompt) = render_prompt(predicate, lookup) else {
                return (Ok(Value::Null), Probe::Skipped);
            };
            let key = cache_key(predicate.output, &prompt);
            let (answer, computed) = cache.get_or_compute(&key, || {
                let text = oracle.ask(predicate, &prompt)?;
                Ok(match parse_answer(predicate.output, &text) {
                    Some(value) => Answer {
                        value,
                        malformed: false,
                    },
                    None => Answer {
                        value: Value::Null,
                        malformed: true,
                    },
                })
            });
            match answer {
                Ok(a) => {
                    let probe = if computed {
                        Probe::Miss { malformed: a.malformed }
                    } else {
                        Probe::Hit
                    };
                    (Ok(a.value), probe)
                }
                Err(e) => (
                    Err(e),
                    if computed {
                        Probe::Miss { malformed: false }
                    } else {
                        Probe::Hit
                    },
                ),
            }
        };

        let mut values = Vec::with_capacity(input.rows.len());
        let mut calls = 0u64;
        let mut failure = None;
        for batch in input.rows.chunks(self.options.batch_size.max(1)) {
            let results: Vec<_> = if self.options.parallel {
                batch.par_iter().map(eval_row).collect()
            } else {
                batch.iter().map(eval_row).collect()
            };
            for (value, probe) in results {
                match probe {
                    Probe::Skipped => {}
                    Probe::Hit => {
                        self.metrics.cache_hits += 1;
                        self.metrics.cache_probes += 1;
                    }
                    Probe::Miss { malformed } => {
                        calls += 1;
                        self.metrics.cache_probes += 1;
                        if malformed {
                            self.metrics.malformed_answers += 1;
                        }
                    }
                }
                match value {
                    Ok(v) => values.push(v),
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            if failure.is_some() {
                break;
            }
        }
        self.metrics.llm_calls += calls;
        *self.metrics.calls_per_node.entry(id).or_insert(0) += calls;
        if let Some(source) = failure {
            return Err(ExecError::Oracle {
                node: id,
                source,
                metrics: Box::new(self.metrics.clone()),
            });
        }
        if calls > 0 {
            log::debug!("node {id}: {calls} oracle calls over {} rows", input.rows.len());
        }
        Ok(values)
    }
}

fn unbound(node: NodeId, col: &ColumnRef) -> ExecError {
    ExecError::UnboundColumn {
        node,
        column: col.to_string(),
    }
}

fn strip_row_numbers(mut rel: Relation) -> Relation {
    if !rel.columns.iter().any(is_row_number) {
        return rel;
    }
    let keep: Vec<usize> = (0..rel.columns.len())
        .filter(|&i| !is_row_number(&rel.columns[i]))
        .collect();
    rel.columns = keep.iter().map(|&i| rel.columns[i].clone()).collect();
    for row in &mut rel.rows {
        *row = keep
            .iter()
            .map(|&i| std::mem::replace(&mut row[i], Value::Null))
            .collect();
    }
    rel
}

/// Equi-join on `pairs` of (left, right) column positions; a cross product
/// when `pairs` is empty. NULL keys never match.
fn hash_join(left: Relation, right: Relation, pairs: &[(usize, usize)]) -> Relation {
    let mut columns = left.columns;
    columns.extend(right.columns);
    let mut rows = Vec::new();
    let concat = |l: &Row, r: &Row| {
        let mut out = Vec::with_capacity(l.len() + r.len());
        out.extend_from_slice(l);
        out.extend_from_slice(r);
        out
    };
    if pairs.is_empty() {
        rows.reserve(left.rows.len() * right.rows.len());
        for l in &left.rows {
            for r in &right.rows {
                rows.push(concat(l, r));
            }
        }
        return Relation { columns, rows };
    }
    let mut index: HashMap<Vec<&Value>, Vec<usize>> = HashMap::new();
    for (i, r) in right.rows.iter().enumerate() {
        let key: Vec<&Value> = pairs.iter().map(|&(_, j)| &r[j]).collect();
        if key.iter().any(|v| v.is_null()) {
            continue;
        }
        index.entry(key).or_default().push(i);
    }
    for l in &left.rows {
        let key: Vec<&Value> = pairs.iter().map(|&(i, _)| &l[i]).collect();
        if key.iter().any(|v| v.is_null()) {
            continue;
        }
        if let Some(matches) = index.get(&key) {
            for &j in matches {
                rows.push(concat(l, &right.rows[j]));
            }
        }
    }
    Relation { columns, rows }
}

#[derive(Clone, Debug)]
enum Acc {
    Count(i64),
    Sum {
        int: i128,
        float: f64,
        is_float: bool,
        any: bool,
    },
    Min(Option<Value>),
    Max(Option<Value>),
}

impl Acc {
    fn new(func: AggregateFunc) -> Self {
        match func {
            AggregateFunc::Count => Acc::Count(0),
            AggregateFunc::Sum => Acc::Sum {
                int: 0,
                float: 0.0,
                is_float: false,
                any: false,
            },
            AggregateFunc::Min => Acc::Min(None),
            AggregateFunc::Max => Acc::Max(None),
        }
    }

    fn add(&mut self, v: Option<&Value>) {
        match self {
            Acc::Count(n) => {
                if v.is_none_or(|v| !v.is_null()) {
                    *n += 1;
                }
            }
            Acc::Sum {
                int,
                float,
                is_float,
                any,
            } => match v {
                Some(Value::Integer(i)) => {
                    *int += *i as i128;
                    *float += *i as f64;
                    *any = true;
                }
                Some(Value::Float(x)) => {
                    *float += x;
                    *is_float = true;
                    *any = true;
                }
                _ => {}
            },
            Acc::Min(cur) => keep_extreme(cur, v, std::cmp::Ordering::Less),
            Acc::Max(cur) => keep_extreme(cur, v, std::cmp::Ordering::Greater),
        }
    }

    fn finish(self) -> Value {
        match self {
            Acc::Count(n) => Value::Integer(n),
            Acc::Sum { any: false, .. } => Value::Null,
            Acc::Sum {
                float, is_float: true, ..
            } => Value::Float(float),
            Acc::Sum { int, .. } => Value::Integer(int.clamp(i64::MIN as i128, i64::MAX as i128) as i64),
            Acc::Min(v) | Acc::Max(v) => v.unwrap_or(Value::Null),
        }
    }
}

fn keep_extreme(cur: &mut Option<Value>, v: Option<&Value>, want: std::cmp::Ordering) {
    let Some(v) = v.filter(|v| !v.is_null()) else { return };
    let replace = match cur {
        None => true,
        Some(c) => v.sql_cmp(c) == Some(want),
    };
    if replace {
        *cur = Some(v.clone());
    }
}

fn aggregate(
    id: NodeId,
    group_by: &[ColumnRef],
    aggregates: &[AggregateExpr],
    input: Relation,
) -> Result<Relation, ExecError> {
    let mut gidx = Vec::with_capacity(group_by.len());
    for g in group_by {
        gidx.push(input.index_of(g).ok_or_else(|| unbound(id, g))?);
    }
    let mut aidx = Vec::with_capacity(aggregates.len());
    for a in aggregates {
        aidx.push(match &a.column {
            Some(c) => Some(input.index_of(c).ok_or_else(|| unbound(id, c))?),
            None => None,
        });
    }
    let mut order: Vec<(Row, Vec<Acc>)> = Vec::new();
    let mut groups: HashMap<Row, usize> = HashMap::new();
    let fresh = || aggregates.iter().map(|a| Acc::new(a.func)).collect::<Vec<_>>();
    if group_by.is_empty() {
        order.push((Vec::new(), fresh()));
        groups.insert(Vec::new(), 0);
    }
    for row in &input.rows {
        let key: Row = gidx.iter().map(|&i| row[i].clone()).collect();
        let slot = match groups.get(&key) {
            Some(&s) => s,
            None => {
                order.push((key.clone(), fresh()));
                groups.insert(key, order.len() - 1);
                order.len() - 1
            }
        };
        for (acc, idx) in order[slot].1.iter_mut().zip(&aidx) {
            acc.add(idx.map(|i| &row[i]));
        }
    }
    let mut columns = group_by.to_vec();
    columns.extend(aggregates.iter().map(|a| ColumnRef::derived(a.output.clone())));
    let rows = order
        .into_iter()
        .map(|(mut key, accs)| {
            key.extend(accs.into_iter().map(Acc::finish));
            key
        })
        .collect();
    Ok(Relation { columns, rows })
}

/// A relational predicate with columns resolved to positions.
enum Bound {
    Compare(usize, CompareOp, Value),
    Columns(usize, CompareOp, usize),
    Between(usize, Value, Value),
    In(usize, Vec<Value>),
    IsNull(usize, bool),
    And(Vec<Bound>),
}

fn bind_predicate(node: NodeId, p: &RelPredicate, rel: &Relation) -> Result<Bound, ExecError> {
    let at = |c: &ColumnRef| rel.index_of(c).ok_or_else(|| unbound(node, c));
    Ok(match p {
        RelPredicate::Compare { column, op, value } => Bound::Compare(at(column)?, *op, value.clone()),
        RelPredicate::CompareColumns { left, op, right } => Bound::Columns(at(left)?, *op, at(right)?),
        RelPredicate::Between { column, low, high } => Bound::Between(at(column)?, low.clone(), high.clone()),
        RelPredicate::InList { column, values } => Bound::In(at(column)?, values.clone()),
        RelPredicate::IsNull { column, negated } => Bound::IsNull(at(column)?, *negated),
        RelPredicate::And { terms } => Bound::And(
            terms
                .iter()
                .map(|t| bind_predicate(node, t, rel))
                .collect::<Result<_, _>>()?,
        ),
    })
}

impl Bound {
    /// Three-valued evaluation: `None` is unknown.
    fn eval(&self, row: &Row) -> Option<bool> {
        match self {
            Bound::Compare(i, op, v) => row[*i].sql_cmp(v).map(|o| op.holds(o)),
            Bound::Columns(i, op, j) => row[*i].sql_cmp(&row[*j]).map(|o| op.holds(o)),
            Bound::Between(i, lo, hi) => {
                let a = row[*i].sql_cmp(lo).map(|o| o.is_ge());
                let b = row[*i].sql_cmp(hi).map(|o| o.is_le());
                and3(a, b)
            }
            Bound::In(i, values) => {
                if row[*i].is_null() {
                    return None;
                }
                let mut unknown = false;
                for v in values {
                    match row[*i].sql_cmp(v) {
                        Some(o) if o.is_eq() => return Some(true),
                        Some(_) => {}
                        None => unknown = true,
                    }
                }
                if unknown {
                    None
                } else {
                    Some(false)
                }
            }
            Bound::IsNull(i, negated) => Some(row[*i].is_null() != *negated),
            // Three-valued AND: a NULL term must not stop a later FALSE.
            #[allow(clippy::manual_try_fold)]
            Bound::And(terms) => terms.iter().fold(Some(true), |acc, t| and3(acc, t.eval(row))),
        }
    }
}

fn and3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(false), _) | (_, Some(false)) => Some(false),
        (Some(true), Some(true)) => Some(true),
        _ => None,
    }
}
