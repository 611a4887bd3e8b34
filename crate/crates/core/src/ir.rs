//! Logical plan trees mixing relational and semantic operators.
//!
//! A [`PlanTree`] is an arena of [`PlanNode`]s keyed by stable [`NodeId`]s.
//! Rewrites move nodes around but never renumber them, so traces, statistics
//! and placements can refer to positions before and after a rewrite.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::value::{ColumnType, Value};
use crate::IrError;

/// Qualifier used for columns computed inside the plan (semantic projections,
/// aggregate outputs). It can never collide with an SQL identifier.
pub const DERIVED: &str = "$";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A column of a base table, or a derived column when `table == DERIVED`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: table.into(),
            column: column.into(),
        }
    }

    pub fn derived(column: impl Into<String>) -> Self {
        ColumnRef::new(DERIVED, column)
    }

    pub fn is_derived(&self) -> bool {
        self.table == DERIVED
    }

    /// Parses `table.column` or a bare derived `column`.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        match text.split_once('.') {
            Some((t, c)) if !t.is_empty() && !c.is_empty() && !c.contains('.') => Some(ColumnRef::new(t, c)),
            None if !text.is_empty() => Some(ColumnRef::derived(text)),
            _ => None,
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_derived() {
            f.write_str(&self.column)
        } else {
            write!(f, "{}.{}", self.table, self.column)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputType {
    Boolean,
    Text,
    Integer,
}

impl OutputType {
    pub fn column_type(self) -> ColumnType {
        match self {
            OutputType::Boolean => ColumnType::Boolean,
            OutputType::Text => ColumnType::Text,
            OutputType::Integer => ColumnType::Integer,
        }
    }
}

/// A natural-language predicate or transform with `{table.column}` placeholders.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticPredicate {
    pub template: String,
    pub columns: Vec<ColumnRef>,
    pub output: OutputType,
}

impl SemanticPredicate {
    /// Builds a predicate whose column list is read off the template.
    pub fn from_template(template: impl Into<String>, output: OutputType) -> Result<Self, IrError> {
        let template = template.into();
        let columns = template_placeholders(&template)?;
        Ok(SemanticPredicate {
            template,
            columns,
            output,
        })
    }

    /// Checks that placeholders and the column list name the same columns.
    pub fn check(&self) -> Result<(), String> {
        let placeholders: BTreeSet<ColumnRef> = template_placeholders(&self.template)
            .map_err(|e| e.to_string())?
            .into_iter()
            .collect();
        let listed: BTreeSet<ColumnRef> = self.columns.iter().cloned().collect();
        if listed.len() != self.columns.len() {
            return Err("semantic predicate lists a column twice".to_string());
        }
        if placeholders != listed {
            return Err(format!(
                "template placeholders {:?} do not match referenced columns {:?}",
                placeholders.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
                listed.iter().map(|c| c.to_string()).collect::<Vec<_>>()
            ));
        }
        Ok(())
    }
}

/// Distinct placeholders of a template in order of first appearance.
pub fn template_placeholders(template: &str) -> Result<Vec<ColumnRef>, IrError> {
    let mut out: Vec<ColumnRef> = Vec::new();
    for span in placeholder_spans(template)? {
        let inner = &template[span.start + 1..span.end - 1];
        let col = ColumnRef::parse(inner).ok_or_else(|| IrError::BadPlaceholder(inner.to_string()))?;
        if !out.contains(&col) {
            out.push(col);
        }
    }
    Ok(out)
}

/// Byte ranges (including braces) of every `{...}` placeholder.
pub fn placeholder_spans(template: &str) -> Result<Vec<core::ops::Range<usize>>, IrError> {
    let mut spans = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => {
                let close = template[i + 1..]
                    .find(['{', '}'])
                    .map(|off| i + 1 + off)
                    .filter(|&j| bytes[j] == b'}')
                    .ok_or_else(|| IrError::BadPlaceholder(template[i..].to_string()))?;
                spans.push(i..close + 1);
                i = close + 1;
            }
            b'}' => return Err(IrError::BadPlaceholder(template[i..].to_string())),
            _ => i += 1,
        }
    }
    Ok(spans)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<>")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "<>",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: core::cmp::Ordering) -> bool {
        use core::cmp::Ordering::*;
        match self {
            CompareOp::Eq => ord == Equal,
            CompareOp::Ne => ord != Equal,
            CompareOp::Lt => ord == Less,
            CompareOp::Le => ord != Greater,
            CompareOp::Gt => ord == Greater,
            CompareOp::Ge => ord != Less,
        }
    }
}

/// Relational filter predicates: single-column comparisons against constants,
/// column-to-column comparisons, and AND-conjunctions of those.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RelPredicate {
    Compare {
        column: ColumnRef,
        op: CompareOp,
        value: Value,
    },
    CompareColumns {
        left: ColumnRef,
        op: CompareOp,
        right: ColumnRef,
    },
    Between {
        column: ColumnRef,
        low: Value,
        high: Value,
    },
    InList {
        column: ColumnRef,
        values: Vec<Value>,
    },
    IsNull {
        column: ColumnRef,
        #[serde(default)]
        negated: bool,
    },
    And {
        terms: Vec<RelPredicate>,
    },
}

impl RelPredicate {
    pub fn columns(&self) -> Vec<ColumnRef> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut Vec<ColumnRef>) {
        let mut push = |c: &ColumnRef| {
            if !out.contains(c) {
                out.push(c.clone());
            }
        };
        match self {
            RelPredicate::Compare { column, .. }
            | RelPredicate::Between { column, .. }
            | RelPredicate::InList { column, .. }
            | RelPredicate::IsNull { column, .. } => push(column),
            RelPredicate::CompareColumns { left, right, .. } => {
                push(left);
                push(right);
            }
            RelPredicate::And { terms } => {
                for t in terms {
                    t.collect_columns(out);
                }
            }
        }
    }

    /// Number of top-level conjuncts.
    pub fn conjuncts(&self) -> usize {
        match self {
            RelPredicate::And { terms } => terms.iter().map(|t| t.conjuncts()).sum(),
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateFunc {
    Count,
    Sum,
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateExpr {
    pub func: AggregateFunc,
    /// `None` means `COUNT(*)`.
    #[serde(default)]
    pub column: Option<ColumnRef>,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortKey {
    pub column: ColumnRef,
    #[serde(default)]
    pub descending: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinKey {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputColumn {
    pub column: ColumnRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
}

impl OutputColumn {
    pub fn plain(column: ColumnRef) -> Self {
        OutputColumn { column, alias: None }
    }

    pub fn name(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.column.column)
    }
}

/// Operator kinds without payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OperatorKind {
    TableScan,
    RelFilter,
    Project,
    InnerJoin,
    CrossJoin,
    Aggregate,
    Limit,
    Union,
    Sort,
    SemFilter,
    SemProject,
}

impl OperatorKind {
    pub fn arity(self) -> usize {
        match self {
            OperatorKind::TableScan => 0,
            OperatorKind::InnerJoin | OperatorKind::CrossJoin | OperatorKind::Union => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::TableScan => "TableScan",
            OperatorKind::RelFilter => "RelFilter",
            OperatorKind::Project => "Project",
            OperatorKind::InnerJoin => "InnerJoin",
            OperatorKind::CrossJoin => "CrossJoin",
            OperatorKind::Aggregate => "Aggregate",
            OperatorKind::Limit => "Limit",
            OperatorKind::Union => "Union",
            OperatorKind::Sort => "Sort",
            OperatorKind::SemFilter => "SemFilter",
            OperatorKind::SemProject => "SemProject",
        }
    }
}

/// Operators a semantic filter may not be moved across.
///
/// Limit and Union change which rows exist depending on what is filtered
/// before them. Aggregate changes multiplicity and Sort interacts with Limit,
/// so both are treated as barriers as well.
pub fn is_block_operator(kind: OperatorKind) -> bool {
    matches!(
        kind,
        OperatorKind::Limit | OperatorKind::Union | OperatorKind::Aggregate | OperatorKind::Sort
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum NodeKind {
    TableScan {
        table: String,
    },
    RelFilter {
        predicate: RelPredicate,
    },
    Project {
        columns: Vec<OutputColumn>,
    },
    InnerJoin {
        keys: Vec<JoinKey>,
    },
    CrossJoin {
        /// Set on cross joins produced by decomposing a semantic join.
        #[serde(default)]
        from_semantic_join: bool,
    },
    Aggregate {
        group_by: Vec<ColumnRef>,
        aggregates: Vec<AggregateExpr>,
    },
    Limit {
        count: u64,
    },
    /// Multiset union (UNION ALL).
    Union,
    Sort {
        keys: Vec<SortKey>,
    },
    SemFilter {
        predicate: SemanticPredicate,
        /// True while the filter is the condition of the join directly below
        /// it (a semantic join that has not been decomposed yet).
        #[serde(default)]
        join_condition: bool,
    },
    SemProject {
        predicate: SemanticPredicate,
        output: String,
    },
}

impl NodeKind {
    pub fn op(&self) -> OperatorKind {
        match self {
            NodeKind::TableScan { .. } => OperatorKind::TableScan,
            NodeKind::RelFilter { .. } => OperatorKind::RelFilter,
            NodeKind::Project { .. } => OperatorKind::Project,
            NodeKind::InnerJoin { .. } => OperatorKind::InnerJoin,
            NodeKind::CrossJoin { .. } => OperatorKind::CrossJoin,
            NodeKind::Aggregate { .. } => OperatorKind::Aggregate,
            NodeKind::Limit { .. } => OperatorKind::Limit,
            NodeKind::Union => OperatorKind::Union,
            NodeKind::Sort { .. } => OperatorKind::Sort,
            NodeKind::SemFilter { .. } => OperatorKind::SemFilter,
            NodeKind::SemProject { .. } => OperatorKind::SemProject,
        }
    }

    /// Columns this operator reads from its input(s).
    pub fn referenced_columns(&self) -> Vec<ColumnRef> {
        let mut out: Vec<ColumnRef> = Vec::new();
        let mut push = |c: &ColumnRef| {
            if !out.contains(c) {
                out.push(c.clone());
            }
        };
        match self {
            NodeKind::TableScan { .. } | NodeKind::CrossJoin { .. } | NodeKind::Limit { .. } | NodeKind::Union => {}
            NodeKind::RelFilter { predicate } => predicate.columns().iter().for_each(&mut push),
            NodeKind::Project { columns } => columns.iter().for_each(|c| push(&c.column)),
            NodeKind::InnerJoin { keys } => keys.iter().for_each(|k| {
                push(&k.left);
                push(&k.right);
            }),
            NodeKind::Aggregate { group_by, aggregates } => {
                group_by.iter().for_each(&mut push);
                aggregates.iter().filter_map(|a| a.column.as_ref()).for_each(&mut push);
            }
            NodeKind::Sort { keys } => keys.iter().for_each(|k| push(&k.column)),
            NodeKind::SemFilter { predicate, .. } | NodeKind::SemProject { predicate, .. } => {
                predicate.columns.iter().for_each(&mut push)
            }
        }
        out
    }

    /// Derived columns introduced by this operator.
    pub fn produced_columns(&self) -> Vec<ColumnRef> {
        match self {
            NodeKind::SemProject { output, .. } => vec![ColumnRef::derived(output.clone())],
            NodeKind::Aggregate { aggregates, .. } => aggregates
                .iter()
                .map(|a| ColumnRef::derived(a.output.clone()))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn semantic_predicate(&self) -> Option<&SemanticPredicate> {
        match self {
            NodeKind::SemFilter { predicate, .. } | NodeKind::SemProject { predicate, .. } => Some(predicate),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    #[serde(flatten)]
    pub kind: NodeKind,
    #[serde(default)]
    pub children: Vec<NodeId>,
}

impl PlanNode {
    pub fn new(kind: NodeKind, children: Vec<NodeId>) -> Self {
        PlanNode { kind, children }
    }

    pub fn op(&self) -> OperatorKind {
        self.kind.op()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn new(columns: impl IntoIterator<Item = (&'static str, ColumnType)>) -> Self {
        TableSchema {
            columns: columns
                .into_iter()
                .map(|(n, t)| ColumnDef {
                    name: n.to_string(),
                    ty: t,
                })
                .collect(),
        }
    }

    pub fn column_type(&self, name: &str) -> Option<ColumnType> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.ty)
    }
}

pub type Catalog = BTreeMap<String, TableSchema>;

/// A structural problem found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: Option<NodeId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(id) => write!(f, "{id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanTree {
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, PlanNode>,
    pub catalog: Catalog,
}

impl PlanTree {
    pub fn node(&self, id: NodeId) -> Result<&PlanNode, IrError> {
        self.nodes.get(&id).ok_or(IrError::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut PlanNode, IrError> {
        self.nodes.get_mut(&id).ok_or(IrError::UnknownNode(id))
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[&id].kind
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[&id].children
    }

    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.keys().next_back().map_or(1, |id| id.0 + 1))
    }

    pub fn add_node(&mut self, kind: NodeKind, children: Vec<NodeId>) -> NodeId {
        let id = self.next_id();
        self.nodes.insert(id, PlanNode::new(kind, children));
        id
    }

    /// Parent of every node reachable from the root.
    pub fn parents(&self) -> BTreeMap<NodeId, NodeId> {
        let mut out = BTreeMap::new();
        for (&id, node) in &self.nodes {
            for &c in &node.children {
                out.insert(c, id);
            }
        }
        out
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|(_, n)| n.children.contains(&id))
            .map(|(&p, _)| p)
    }

    /// Ancestors from the parent up to the root.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let parents = self.parents();
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(&p) = parents.get(&cur) {
            if out.contains(&p) {
                break;
            }
            out.push(p);
            cur = p;
        }
        out
    }

    /// Nodes of the subtree in post-order (children before parents, left first).
    pub fn postorder(&self, from: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![(from, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                out.push(id);
                continue;
            }
            if !seen.insert(id) {
                continue;
            }
            stack.push((id, true));
            if let Some(n) = self.nodes.get(&id) {
                for &c in n.children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth: BTreeMap<NodeId, usize> = BTreeMap::new();
        for id in self.postorder(self.root) {
            let d = self.nodes[&id]
                .children
                .iter()
                .map(|c| depth.get(c).copied().unwrap_or(0) + 1)
                .max()
                .unwrap_or(0);
            depth.insert(id, d);
        }
        depth.get(&self.root).copied().unwrap_or(0)
    }

    pub fn is_in_subtree(&self, node: NodeId, root: NodeId) -> bool {
        node == root || self.ancestors(node).contains(&root)
    }

    pub fn semantic_filters(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.op() == OperatorKind::SemFilter)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn nodes_of(&self, op: OperatorKind) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.op() == op)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Replaces `old` by `new` among the children of `old`'s parent, or makes
    /// `new` the root.
    fn replace_in_parent(&mut self, old: NodeId, new: NodeId) {
        match self.parent_of(old) {
            Some(p) => {
                let node = self.nodes.get_mut(&p).expect("parent exists");
                for c in node.children.iter_mut() {
                    if *c == old {
                        *c = new;
                    }
                }
            }
            None => {
                if self.root == old {
                    self.root = new;
                }
            }
        }
    }

    /// Unlinks a unary node, connecting its child to its former parent.
    pub fn detach(&mut self, id: NodeId) -> Result<(), IrError> {
        let child = match self.node(id)?.children.as_slice() {
            [c] => *c,
            _ => return Err(IrError::NotUnary(id)),
        };
        self.replace_in_parent(id, child);
        self.node_mut(id)?.children.clear();
        Ok(())
    }

    /// Links a detached unary node directly above `target`.
    pub fn insert_above(&mut self, id: NodeId, target: NodeId) -> Result<(), IrError> {
        self.node(target)?;
        if self.node(id)?.op().arity() != 1 || !self.node(id)?.children.is_empty() {
            return Err(IrError::NotUnary(id));
        }
        self.replace_in_parent(target, id);
        self.node_mut(id)?.children = vec![target];
        Ok(())
    }

    /// Moves a unary node above its parent. Returns the parent it crossed.
    pub fn swap_with_parent(&mut self, id: NodeId) -> Result<NodeId, IrError> {
        let parent = self.parent_of(id).ok_or(IrError::NoParent(id))?;
        self.detach(id)?;
        self.insert_above(id, parent)?;
        Ok(parent)
    }

    /// Output columns of a node, in order.
    pub fn output_columns(&self, id: NodeId) -> Result<Vec<ColumnRef>, IrError> {
        let mut memo = BTreeMap::new();
        self.output_columns_memo(id, &mut memo)
    }

    fn output_columns_memo(
        &self,
        id: NodeId,
        memo: &mut BTreeMap<NodeId, Vec<ColumnRef>>,
    ) -> Result<Vec<ColumnRef>, IrError> {
        if let Some(v) = memo.get(&id) {
            return Ok(v.clone());
        }
        let node = self.node(id)?;
        let child = |i: usize, memo: &mut BTreeMap<NodeId, Vec<ColumnRef>>| {
            let c = *node.children.get(i).ok_or(IrError::Arity(id))?;
            self.output_columns_memo(c, memo)
        };
        let out = match &node.kind {
            NodeKind::TableScan { table } => {
                let schema = self
                    .catalog
                    .get(table)
                    .ok_or_else(|| IrError::UnknownTable(table.clone()))?;
                schema
                    .columns
                    .iter()
                    .map(|c| ColumnRef::new(table.clone(), c.name.clone()))
                    .collect()
            }
            NodeKind::RelFilter { .. }
            | NodeKind::Limit { .. }
            | NodeKind::Sort { .. }
            | NodeKind::SemFilter { .. } => child(0, memo)?,
            NodeKind::Project { columns } => columns.iter().map(|c| c.column.clone()).collect(),
            NodeKind::InnerJoin { .. } | NodeKind::CrossJoin { .. } => {
                let mut l = child(0, memo)?;
                l.extend(child(1, memo)?);
                l
            }
            NodeKind::Union => child(0, memo)?,
            NodeKind::Aggregate { group_by, aggregates } => {
                let mut out = group_by.clone();
                out.extend(aggregates.iter().map(|a| ColumnRef::derived(a.output.clone())));
                out
            }
            NodeKind::SemProject { output, .. } => {
                let mut out = child(0, memo)?;
                out.push(ColumnRef::derived(output.clone()));
                out
            }
        };
        memo.insert(id, out.clone());
        Ok(out)
    }

    /// Type of a column as produced somewhere in the tree.
    pub fn column_type(&self, col: &ColumnRef) -> Option<ColumnType> {
        if !col.is_derived() {
            return self.catalog.get(&col.table)?.column_type(&col.column);
        }
        for node in self.nodes.values() {
            match &node.kind {
                NodeKind::SemProject { predicate, output } if *output == col.column => {
                    return Some(predicate.output.column_type());
                }
                NodeKind::Aggregate { aggregates, .. } => {
                    if let Some(a) = aggregates.iter().find(|a| a.output == col.column) {
                        return Some(match (a.func, &a.column) {
                            (AggregateFunc::Count, _) | (_, None) => ColumnType::Integer,
                            (_, Some(c)) => self.column_type(c).unwrap_or(ColumnType::Float),
                        });
                    }
                }
                _ => {}
            }
        }
        None
    }

    /// Node producing a derived column.
    pub fn producer_of(&self, col: &ColumnRef) -> Option<NodeId> {
        if !col.is_derived() {
            return None;
        }
        self.nodes
            .iter()
            .find(|(_, n)| n.kind.produced_columns().contains(col))
            .map(|(&id, _)| id)
    }

    /// Base tables a column's values derive from.
    pub fn lineage_tables(&self, col: &ColumnRef) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut visiting = BTreeSet::new();
        self.lineage_into(col, &mut out, &mut visiting);
        out
    }

    fn lineage_into(&self, col: &ColumnRef, out: &mut BTreeSet<String>, visiting: &mut BTreeSet<ColumnRef>) {
        if !col.is_derived() {
            out.insert(col.table.clone());
            return;
        }
        if !visiting.insert(col.clone()) {
            return;
        }
        if let Some(p) = self.producer_of(col) {
            for c in self.nodes[&p].kind.referenced_columns() {
                self.lineage_into(&c, out, visiting);
            }
        }
    }
}

/// Base tables scanned in a node's subtree.
pub fn tables_under(tree: &PlanTree, node: NodeId) -> Result<BTreeSet<String>, IrError> {
    tree.node(node)?;
    let mut out = BTreeSet::new();
    for id in tree.postorder(node) {
        if let NodeKind::TableScan { table } = &tree.nodes[&id].kind {
            out.insert(table.clone());
        }
    }
    Ok(out)
}

/// Every structural-invariant violation of a tree; empty when valid.
pub fn validate(tree: &PlanTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut report = |node: Option<NodeId>, message: String| out.push(Violation { node, message });

    if !tree.nodes.contains_key(&tree.root) {
        report(None, format!("root {} does not exist", tree.root));
        return out;
    }

    let mut parent_count: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (&id, node) in &tree.nodes {
        let op = node.op();
        if node.children.len() != op.arity() {
            report(
                Some(id),
                format!(
                    "{} expects {} children, found {}",
                    op.name(),
                    op.arity(),
                    node.children.len()
                ),
            );
        }
        for c in &node.children {
            if !tree.nodes.contains_key(c) {
                report(Some(id), format!("child {c} does not exist"));
            }
            *parent_count.entry(*c).or_default() += 1;
        }
    }
    if parent_count.contains_key(&tree.root) {
        report(Some(tree.root), "root has a parent".to_string());
    }
    for (id, n) in &parent_count {
        if *n > 1 {
            report(Some(*id), format!("node has {n} parents"));
        }
    }

    // Reachability and cycles.
    let mut seen = BTreeSet::new();
    let mut stack = vec![tree.root];
    let mut cyclic = false;
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            cyclic = true;
            continue;
        }
        if let Some(n) = tree.nodes.get(&id) {
            stack.extend(n.children.iter().copied());
        }
    }
    if cyclic {
        report(None, "plan contains a cycle or shared subtree".to_string());
    }
    for id in tree.nodes.keys() {
        if !seen.contains(id) {
            report(Some(*id), "node is not reachable from the root".to_string());
        }
    }
    if cyclic || !out.is_empty() {
        return out;
    }

    let mut derived_names: BTreeMap<String, NodeId> = BTreeMap::new();
    let mut scanned: BTreeMap<String, NodeId> = BTreeMap::new();
    for id in tree.postorder(tree.root) {
        let node = &tree.nodes[&id];
        match &node.kind {
            NodeKind::TableScan { table } => {
                if !tree.catalog.contains_key(table) {
                    out.push(Violation {
                        node: Some(id),
                        message: format!("table {table} is not in the catalog"),
                    });
                }
                if let Some(prev) = scanned.insert(table.clone(), id) {
                    out.push(Violation {
                        node: Some(id),
                        message: format!("table {table} is scanned twice (also at {prev})"),
                    });
                }
            }
            NodeKind::SemFilter { predicate, .. } => {
                if predicate.output != OutputType::Boolean {
                    out.push(Violation {
                        node: Some(id),
                        message: "semantic filter must have boolean output".to_string(),
                    });
                }
                if let Err(e) = predicate.check() {
                    out.push(Violation {
                        node: Some(id),
                        message: e,
                    });
                }
            }
            NodeKind::SemProject { predicate, .. } => {
                if predicate.output == OutputType::Boolean {
                    out.push(Violation {
                        node: Some(id),
                        message: "semantic projection must produce text or integer".to_string(),
                    });
                }
                if let Err(e) = predicate.check() {
                    out.push(Violation {
                        node: Some(id),
                        message: e,
                    });
                }
            }
            NodeKind::Union => {
                let l = tree.output_columns(node.children[0]).map(|c| c.len());
                let r = tree.output_columns(node.children[1]).map(|c| c.len());
                if let (Ok(l), Ok(r)) = (l, r) {
                    if l != r {
                        out.push(Violation {
                            node: Some(id),
                            message: format!("union inputs have {l} and {r} columns"),
                        });
                    }
                }
            }
            _ => {}
        }
        for col in node.kind.produced_columns() {
            if let Some(prev) = derived_names.insert(col.column.clone(), id) {
                out.push(Violation {
                    node: Some(id),
                    message: format!("derived column {} also produced by {prev}", col.column),
                });
            }
        }

        // Every referenced column must be produced by the subtree.
        let mut available: Vec<ColumnRef> = Vec::new();
        let mut ok = true;
        for &c in &node.children {
            match tree.output_columns(c) {
                Ok(cols) => available.extend(cols),
                Err(e) => {
                    ok = false;
                    out.push(Violation {
                        node: Some(c),
                        message: e.to_string(),
                    });
                }
            }
        }
        if ok {
            for col in node.kind.referenced_columns() {
                if !available.contains(&col) {
                    out.push(Violation {
                        node: Some(id),
                        message: format!("column {col} is not produced by the subtree"),
                    });
                }
            }
            if let NodeKind::InnerJoin { keys } = &node.kind {
                let left = tree.output_columns(node.children[0]).unwrap_or_default();
                for k in keys {
                    if !left.contains(&k.left) {
                        out.push(Violation {
                            node: Some(id),
                            message: format!("join key {} is not on the left input", k.left),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Structural equality up to node ids. Cross-join provenance markers are
/// annotations and are ignored.
pub fn isomorphic(a: &PlanTree, b: &PlanTree) -> bool {
    fn go(a: &PlanTree, x: NodeId, b: &PlanTree, y: NodeId) -> bool {
        let (Some(nx), Some(ny)) = (a.nodes.get(&x), b.nodes.get(&y)) else {
            return false;
        };
        let same_kind = match (&nx.kind, &ny.kind) {
            (NodeKind::CrossJoin { .. }, NodeKind::CrossJoin { .. }) => true,
            (k1, k2) => k1 == k2,
        };
        same_kind
            && nx.children.len() == ny.children.len()
            && nx.children.iter().zip(&ny.children).all(|(&cx, &cy)| go(a, cx, b, cy))
    }
    a.catalog == b.catalog && go(a, a.root, b, b.root)
}

/// Small builder used by tests and synthetic workloads.
#[derive(Clone, Debug)]
pub struct TreeBuilder {
    tree: PlanTree,
}

impl TreeBuilder {
    pub fn new(catalog: Catalog) -> Self {
        TreeBuilder {
            tree: PlanTree {
                root: NodeId(0),
                nodes: BTreeMap::new(),
                catalog,
            },
        }
    }

    pub fn add(&mut self, kind: NodeKind, children: &[NodeId]) -> NodeId {
        let id = self.tree.add_node(kind, children.to_vec());
        self.tree.root = id;
        id
    }

    pub fn scan(&mut self, table: &str) -> NodeId {
        self.add(
            NodeKind::TableScan {
                table: table.to_string(),
            },
            &[],
        )
    }

    pub fn filter(&mut self, input: NodeId, predicate: RelPredicate) -> NodeId {
        self.add(NodeKind::RelFilter { predicate }, &[input])
    }

    pub fn join(&mut self, left: NodeId, right: NodeId, keys: &[(&str, &str)]) -> NodeId {
        let keys = keys
            .iter()
            .map(|(l, r)| JoinKey {
                left: ColumnRef::parse(l).expect("column"),
                right: ColumnRef::parse(r).expect("column"),
            })
            .collect();
        self.add(NodeKind::InnerJoin { keys }, &[left, right])
    }

    pub fn cross(&mut self, left: NodeId, right: NodeId) -> NodeId {
        self.add(
            NodeKind::CrossJoin {
                from_semantic_join: false,
            },
            &[left, right],
        )
    }

    pub fn sem_filter(&mut self, input: NodeId, template: &str) -> NodeId {
        let predicate = SemanticPredicate::from_template(template, OutputType::Boolean).expect("template");
        self.add(
            NodeKind::SemFilter {
                predicate,
                join_condition: false,
            },
            &[input],
        )
    }

    pub fn sem_project(&mut self, input: NodeId, template: &str, output: &str, ty: OutputType) -> NodeId {
        let predicate = SemanticPredicate::from_template(template, ty).expect("template");
        self.add(
            NodeKind::SemProject {
                predicate,
                output: output.to_string(),
            },
            &[input],
        )
    }

    pub fn project(&mut self, input: NodeId, columns: &[&str]) -> NodeId {
        let columns = columns
            .iter()
            .map(|c| OutputColumn::plain(ColumnRef::parse(c).expect("column")))
            .collect();
        self.add(NodeKind::Project { columns }, &[input])
    }

    pub fn limit(&mut self, input: NodeId, count: u64) -> NodeId {
        self.add(NodeKind::Limit { count }, &[input])
    }

    pub fn set_root(&mut self, id: NodeId) {
        self.tree.root = id;
    }

    pub fn build(self) -> PlanTree {
        self.tree
    }
}
