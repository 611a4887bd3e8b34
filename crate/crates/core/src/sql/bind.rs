//! Name resolution and plan construction.
//!
//! Each SELECT block becomes a left-deep join skeleton over its FROM items.
//! Every filter conjunct and every semantic projection is then stacked above
//! the lowest skeleton node that covers the FROM items it reads. Within one
//! stack the order is: semantic join conditions, relational filters, semantic
//! filters, semantic projections, and finally filters that read a projection
//! of the same block. Ties keep source order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::{ParseError, Span};
use crate::ir::{
    placeholder_spans, Catalog, ColumnRef, CompareOp, JoinKey, NodeId, NodeKind, OutputColumn, OutputType, PlanTree,
    RelPredicate, SemanticPredicate, SortKey,
};
use crate::value::{ColumnType, Value};

/// Binds a parsed query against a catalog.
pub fn bind(query: &Query, src: &str, catalog: &Catalog) -> Result<PlanTree, ParseError> {
    let mut b = Binder {
        src,
        catalog,
        tree: PlanTree {
            root: NodeId(0),
            nodes: BTreeMap::new(),
            catalog: catalog.clone(),
        },
        ctes: BTreeMap::new(),
        scanned: BTreeSet::new(),
        derived: BTreeMap::new(),
    };
    for (i, cte) in query.ctes.iter().enumerate() {
        if b.ctes.contains_key(&cte.name.name) {
            return Err(b.err(cte.name.span, format!("duplicate WITH name `{}`", cte.name.name)));
        }
        b.ctes.insert(cte.name.name.clone(), (i, &cte.select, false));
    }
    let block = b.block(&query.body, query.ctes.len())?;
    b.tree.root = block.root;
    let violations = crate::ir::validate(&b.tree);
    if let Some(v) = violations.first() {
        return Err(b.err(query.body.span, format!("internal binder error: {v}")));
    }
    Ok(b.tree)
}

struct Binder<'a> {
    src: &'a str,
    catalog: &'a Catalog,
    tree: PlanTree,
    /// name -> (definition index, statement, already inlined)
    ctes: BTreeMap<String, (usize, &'a SelectStmt, bool)>,
    scanned: BTreeSet<String>,
    derived: BTreeMap<String, ColumnType>,
}

struct BoundBlock {
    root: NodeId,
    outputs: Vec<(String, ColumnRef)>,
}

struct ScopeItem {
    alias: String,
    columns: Vec<(String, ColumnRef)>,
    root: NodeId,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Category {
    JoinCondition,
    Relational,
    Semantic,
    Projection,
    ReadsProjection,
}

struct Unit {
    kind: NodeKind,
    /// FROM item indexes this unit reads.
    items: BTreeSet<usize>,
    category: Category,
}

struct Scope<'s> {
    items: &'s [ScopeItem],
    /// Select-list aliases usable by unqualified names.
    aliases: &'s BTreeMap<String, ColumnRef>,
}

impl<'a> Binder<'a> {
    fn err(&self, span: Span, message: impl Into<String>) -> ParseError {
        ParseError::bind(self.src, span, message)
    }

    fn column_type(&self, col: &ColumnRef) -> Option<ColumnType> {
        if col.is_derived() {
            self.derived.get(&col.column).copied()
        } else {
            self.catalog.get(&col.table)?.column_type(&col.column)
        }
    }

    fn add(&mut self, kind: NodeKind, children: Vec<NodeId>) -> NodeId {
        self.tree.add_node(kind, children)
    }

    /// Resolves a column to (ColumnRef, FROM item index or None for select aliases).
    fn resolve(
        &self,
        scope: &Scope<'_>,
        qualifier: Option<&str>,
        name: &str,
        span: Span,
    ) -> Result<(ColumnRef, Option<usize>), ParseError> {
        if let Some(q) = qualifier {
            let Some(idx) = scope.items.iter().position(|it| it.alias == q) else {
                return Err(self.err(span, format!("unknown table or alias `{q}`")));
            };
            let hits: Vec<&ColumnRef> = scope.items[idx]
                .columns
                .iter()
                .filter(|(n, _)| n == name)
                .map(|(_, c)| c)
                .collect();
            return match hits.as_slice() {
                [c] => Ok(((*c).clone(), Some(idx))),
                [] => Err(self.err(span, format!("unknown column `{q}.{name}`"))),
                _ => Err(self.err(span, format!("column `{q}.{name}` is ambiguous"))),
            };
        }
        let mut hits: Vec<(ColumnRef, usize)> = Vec::new();
        for (idx, it) in scope.items.iter().enumerate() {
            for (n, c) in &it.columns {
                if n == name {
                    hits.push((c.clone(), idx));
                }
            }
        }
        match hits.len() {
            1 => Ok((hits[0].0.clone(), Some(hits[0].1))),
            0 => match scope.aliases.get(name) {
                Some(c) => Ok((c.clone(), None)),
                None => Err(self.err(span, format!("unknown column `{name}`"))),
            },
            _ => Err(self.err(span, format!("column `{name}` is ambiguous"))),
        }
    }

    /// FROM items a column depends on, following select aliases to the
    /// semantic projections that define them.
    fn items_of(
        &self,
        col: &ColumnRef,
        direct: Option<usize>,
        projections: &BTreeMap<String, BTreeSet<usize>>,
    ) -> BTreeSet<usize> {
        match direct {
            Some(i) => BTreeSet::from([i]),
            None => {
                if col.is_derived() {
                    projections.get(&col.column).cloned().unwrap_or_default()
                } else {
                    BTreeSet::new()
                }
            }
        }
    }

    fn bind_template(
        &self,
        scope: &Scope<'_>,
        template: &str,
        span: Span,
        output: OutputType,
        projections: &BTreeMap<String, BTreeSet<usize>>,
    ) -> Result<(SemanticPredicate, BTreeSet<usize>, bool), ParseError> {
        let spans = placeholder_spans(template).map_err(|e| self.err(span, format!("bad SEMANTIC template: {e}")))?;
        let mut bound = String::with_capacity(template.len());
        let mut columns: Vec<ColumnRef> = Vec::new();
        let mut items = BTreeSet::new();
        let mut uses_projection = false;
        let mut last = 0;
        for ph in spans {
            bound.push_str(&template[last..ph.start]);
            let inner = template[ph.start + 1..ph.end - 1].trim();
            let at = Span::new(span.start + 1 + ph.start, span.start + 1 + ph.end);
            let (qualifier, name) = match inner.split_once('.') {
                Some((q, n)) => (Some(q.trim()), n.trim()),
                None => (None, inner),
            };
            if name.is_empty() || qualifier.is_some_and(str::is_empty) {
                return Err(self.err(at, format!("malformed placeholder `{{{inner}}}`")));
            }
            let (col, direct) = self
                .resolve(scope, qualifier, name, at)
                .map_err(|e| self.err(at, format!("SEMANTIC placeholder: {}", e.message)))?;
            if direct.is_none() && projections.contains_key(&col.column) && col.is_derived() {
                uses_projection = true;
            }
            items.extend(self.items_of(&col, direct, projections));
            bound.push('{');
            bound.push_str(&col.to_string());
            bound.push('}');
            if !columns.contains(&col) {
                columns.push(col);
            }
            last = ph.end;
        }
        bound.push_str(&template[last..]);
        Ok((
            SemanticPredicate {
                template: bound,
                columns,
                output,
            },
            items,
            uses_projection,
        ))
    }

    fn check_comparable(&self, col: &ColumnRef, v: &Value, span: Span) -> Result<(), ParseError> {
        let Some(ct) = self.column_type(col) else {
            return Ok(());
        };
        let ok = matches!(
            (ct, v),
            (
                ColumnType::Integer | ColumnType::Float,
                Value::Integer(_) | Value::Float(_)
            ) | (ColumnType::Text, Value::Text(_))
                | (ColumnType::Boolean, Value::Boolean(_))
        );
        if ok {
            Ok(())
        } else {
            Err(self.err(span, format!("cannot compare {ct} column `{col}` with literal {v:?}")))
        }
    }

    /// Binds one conjunct. Returns the node kind, the FROM items read, whether
    /// it reads a projection of this block, and for equality between two
    /// columns the resolved pair (a join-key candidate).
    #[allow(clippy::type_complexity)]
    fn bind_predicate(
        &self,
        scope: &Scope<'_>,
        pred: &Predicate,
        projections: &BTreeMap<String, BTreeSet<usize>>,
    ) -> Result<
        (
            NodeKind,
            BTreeSet<usize>,
            bool,
            Option<(ColumnRef, usize, ColumnRef, usize)>,
        ),
        ParseError,
    > {
        let mut items = BTreeSet::new();
        let mut uses_projection = false;
        let mut col = |c: &ColumnName, items: &mut BTreeSet<usize>| -> Result<(ColumnRef, Option<usize>), ParseError> {
            let (r, direct) = self.resolve(scope, c.qualifier.as_deref(), &c.name, c.span)?;
            if direct.is_none() && r.is_derived() && projections.contains_key(&r.column) {
                uses_projection = true;
            }
            items.extend(self.items_of(&r, direct, projections));
            Ok((r, direct))
        };
        let kind = match pred {
            Predicate::Semantic { template, span } => {
                let (p, its, up) = self.bind_template(scope, template, *span, OutputType::Boolean, projections)?;
                return Ok((
                    NodeKind::SemFilter {
                        predicate: p,
                        join_condition: false,
                    },
                    its,
                    up,
                    None,
                ));
            }
            Predicate::Compare { left, op, right, span } => match (left, right) {
                (Operand::Column(l), Operand::Column(r)) => {
                    let (lc, li) = col(l, &mut items)?;
                    let (rc, ri) = col(r, &mut items)?;
                    let lt = self.column_type(&lc);
                    let rt = self.column_type(&rc);
                    let numeric = |t: Option<ColumnType>| matches!(t, Some(ColumnType::Integer | ColumnType::Float));
                    if lt.is_some() && rt.is_some() && lt != rt && !(numeric(lt) && numeric(rt)) {
                        return Err(self.err(*span, format!("cannot compare `{lc}` with `{rc}`")));
                    }
                    let key = match (li, ri, op) {
                        (Some(a), Some(b), CompareOp::Eq) if a != b => Some((lc.clone(), a, rc.clone(), b)),
                        _ => None,
                    };
                    let kind = NodeKind::RelFilter {
                        predicate: RelPredicate::CompareColumns {
                            left: lc,
                            op: *op,
                            right: rc,
                        },
                    };
                    return Ok((kind, items, uses_projection, key));
                }
                (Operand::Column(c), Operand::Literal(v, _)) => {
                    let (cr, _) = col(c, &mut items)?;
                    self.check_comparable(&cr, v, *span)?;
                    RelPredicate::Compare {
                        column: cr,
                        op: *op,
                        value: v.clone(),
                    }
                }
                (Operand::Literal(v, _), Operand::Column(c)) => {
                    let (cr, _) = col(c, &mut items)?;
                    self.check_comparable(&cr, v, *span)?;
                    RelPredicate::Compare {
                        column: cr,
                        op: flip(*op),
                        value: v.clone(),
                    }
                }
                (Operand::Literal(..), Operand::Literal(..)) => {
                    return Err(self.err(*span, "comparison must reference a column"));
                }
            },
            Predicate::Between {
                column,
                low,
                high,
                span,
            } => {
                let (cr, _) = col(column, &mut items)?;
                self.check_comparable(&cr, low, *span)?;
                self.check_comparable(&cr, high, *span)?;
                RelPredicate::Between {
                    column: cr,
                    low: low.clone(),
                    high: high.clone(),
                }
            }
            Predicate::InList { column, values, span } => {
                let (cr, _) = col(column, &mut items)?;
                for v in values {
                    self.check_comparable(&cr, v, *span)?;
                }
                RelPredicate::InList {
                    column: cr,
                    values: values.clone(),
                }
            }
            Predicate::IsNull { column, negated, .. } => {
                let (cr, _) = col(column, &mut items)?;
                RelPredicate::IsNull {
                    column: cr,
                    negated: *negated,
                }
            }
        };
        Ok((NodeKind::RelFilter { predicate: kind }, items, uses_projection, None))
    }

    fn bind_from_item(&mut self, item: &FromItem, visible_ctes: usize) -> Result<ScopeItem, ParseError> {
        let alias = item.alias_name().to_string();
        if let Some(&(idx, stmt, used)) = self.ctes.get(&item.table.name) {
            if idx < visible_ctes {
                if used {
                    return Err(self.err(
                        item.table.span,
                        format!(
                            "`{}` is referenced twice; each base table may appear at most once per query",
                            item.table.name
                        ),
                    ));
                }
                self.ctes.get_mut(&item.table.name).expect("cte").2 = true;
                let block = self.block(stmt, idx)?;
                return Ok(ScopeItem {
                    alias,
                    columns: block.outputs,
                    root: block.root,
                });
            }
        }
        let Some(schema) = self.catalog.get(&item.table.name) else {
            return Err(self.err(item.table.span, format!("unknown table `{}`", item.table.name)));
        };
        if !self.scanned.insert(item.table.name.clone()) {
            return Err(self.err(
                item.table.span,
                format!(
                    "table `{}` appears twice; each base table may appear at most once per query",
                    item.table.name
                ),
            ));
        }
        let columns = schema
            .columns
            .iter()
            .map(|c| (c.name.clone(), ColumnRef::new(item.table.name.clone(), c.name.clone())))
            .collect();
        let root = self.add(
            NodeKind::TableScan {
                table: item.table.name.clone(),
            },
            Vec::new(),
        );
        Ok(ScopeItem { alias, columns, root })
    }

    fn block(&mut self, stmt: &SelectStmt, visible_ctes: usize) -> Result<BoundBlock, ParseError> {
        // FROM items.
        let mut items: Vec<ScopeItem> = Vec::new();
        for fi in &stmt.from {
            let si = self.bind_from_item(fi, visible_ctes)?;
            if items.iter().any(|o| o.alias == si.alias) {
                let span = fi.alias.as_ref().map_or(fi.table.span, |a| a.span);
                return Err(self.err(span, format!("duplicate table alias `{}`", si.alias)));
            }
            items.push(si);
        }

        // Semantic projections of the select list, bound in order so a later
        // one may read an earlier one.
        let empty_aliases = BTreeMap::new();
        let mut aliases: BTreeMap<String, ColumnRef> = BTreeMap::new();
        let mut projections: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        let mut units: Vec<Unit> = Vec::new();
        let mut projection_units: Vec<Unit> = Vec::new();
        for item in &stmt.items {
            if let SelectItem::Semantic {
                output,
                template,
                template_span,
                alias,
            } = item
            {
                let scope = Scope {
                    items: &items,
                    aliases: &aliases,
                };
                let (predicate, its, _) =
                    self.bind_template(&scope, template, *template_span, *output, &projections)?;
                if self.derived.contains_key(&alias.name) || aliases.contains_key(&alias.name) {
                    return Err(self.err(alias.span, format!("output name `{}` is already defined", alias.name)));
                }
                self.derived.insert(alias.name.clone(), output.column_type());
                aliases.insert(alias.name.clone(), ColumnRef::derived(alias.name.clone()));
                projections.insert(alias.name.clone(), its.clone());
                projection_units.push(Unit {
                    kind: NodeKind::SemProject {
                        predicate,
                        output: alias.name.clone(),
                    },
                    items: its,
                    category: Category::Projection,
                });
            }
        }

        // Joins.
        let mut join_keys: Vec<Vec<JoinKey>> = alloc::vec![Vec::new(); items.len()];
        let mut pending: Vec<(usize, &Predicate)> = Vec::new();
        for (k, fi) in stmt.from.iter().enumerate() {
            for p in &fi.on {
                pending.push((k, p));
            }
        }
        for (k, pred) in pending {
            let scope = Scope {
                items: &items[..=k],
                aliases: &empty_aliases,
            };
            let (kind, its, _, key) = self.bind_predicate(&scope, pred, &BTreeMap::new())?;
            if let Some((lc, li, rc, ri)) = key {
                if li == k && ri < k {
                    join_keys[k].push(JoinKey { left: rc, right: lc });
                    continue;
                }
                if ri == k && li < k {
                    join_keys[k].push(JoinKey { left: lc, right: rc });
                    continue;
                }
            }
            let category = match kind {
                NodeKind::SemFilter { .. } if its.len() >= 2 && its.contains(&k) => Category::JoinCondition,
                NodeKind::SemFilter { .. } => Category::Semantic,
                _ => Category::Relational,
            };
            let kind = match kind {
                NodeKind::SemFilter { predicate, .. } => NodeKind::SemFilter {
                    predicate,
                    join_condition: category == Category::JoinCondition,
                },
                other => other,
            };
            units.push(Unit {
                kind,
                items: its,
                category,
            });
        }

        // WHERE.
        for pred in &stmt.where_ {
            let scope = Scope {
                items: &items,
                aliases: &aliases,
            };
            let (kind, its, uses_projection, _) = self.bind_predicate(&scope, pred, &projections)?;
            let category = if uses_projection {
                Category::ReadsProjection
            } else if matches!(kind, NodeKind::SemFilter { .. }) {
                Category::Semantic
            } else {
                Category::Relational
            };
            units.push(Unit {
                kind,
                items: its,
                category,
            });
        }

        // Skeleton: anchors[0] = leaf of item 0, anchors[k] = join of items ..=k.
        let mut anchors: Vec<NodeId> = Vec::with_capacity(items.len());
        let mut leaf_anchor: Vec<NodeId> = Vec::with_capacity(items.len());
        for it in &items {
            leaf_anchor.push(it.root);
        }
        anchors.push(items[0].root);
        for k in 1..items.len() {
            let kind = if join_keys[k].is_empty() {
                NodeKind::CrossJoin {
                    from_semantic_join: false,
                }
            } else {
                NodeKind::InnerJoin {
                    keys: core::mem::take(&mut join_keys[k]),
                }
            };
            let id = self.add(kind, alloc::vec![anchors[k - 1], items[k].root]);
            anchors.push(id);
        }

        // Place units. Projections come last in source order so that their
        // node ids follow the filters, matching source order of the query
        // (select-list projections are numbered after WHERE conjuncts).
        let mut all: Vec<Unit> = units;
        all.extend(projection_units);
        let mut stacks: BTreeMap<NodeId, Vec<(Category, usize, NodeId)>> = BTreeMap::new();
        for (seq, unit) in all.into_iter().enumerate() {
            let anchor = match unit.items.len() {
                0 => *anchors.last().expect("non-empty FROM"),
                1 => {
                    let i = *unit.items.first().expect("one item");
                    leaf_anchor[i]
                }
                _ => anchors[*unit.items.last().expect("items")],
            };
            let id = self.add(unit.kind, Vec::new());
            stacks.entry(anchor).or_default().push((unit.category, seq, id));
        }
        let top_anchor = *anchors.last().expect("non-empty FROM");
        let mut region_top = top_anchor;
        for (anchor, mut stack) in stacks {
            stack.sort();
            let mut top = anchor;
            for (_, _, id) in stack {
                self.tree.insert_above(id, top).expect("fresh unary node");
                top = id;
            }
            if anchor == top_anchor {
                region_top = top;
            }
        }

        // ORDER BY, LIMIT, select list.
        for item in &stmt.items {
            if let SelectItem::Column { alias: Some(a), column } = item {
                let scope = Scope {
                    items: &items,
                    aliases: &empty_aliases,
                };
                let (c, _) = self.resolve(&scope, column.qualifier.as_deref(), &column.name, column.span)?;
                aliases.entry(a.name.clone()).or_insert(c);
            }
        }
        let scope = Scope {
            items: &items,
            aliases: &aliases,
        };
        let mut top = region_top;
        if !stmt.order_by.is_empty() {
            let mut keys = Vec::new();
            for k in &stmt.order_by {
                let (c, _) = self.resolve(&scope, k.column.qualifier.as_deref(), &k.column.name, k.column.span)?;
                keys.push(SortKey {
                    column: c,
                    descending: k.descending,
                });
            }
            top = self.add(NodeKind::Sort { keys }, alloc::vec![top]);
        }
        if let Some(count) = stmt.limit {
            top = self.add(NodeKind::Limit { count }, alloc::vec![top]);
        }
        let mut columns: Vec<OutputColumn> = Vec::new();
        for item in &stmt.items {
            match item {
                SelectItem::Star(_) => {
                    for it in &items {
                        for (name, c) in &it.columns {
                            columns.push(output_column(c.clone(), name));
                        }
                    }
                }
                SelectItem::Column { column, alias } => {
                    let (c, _) = self.resolve(&scope, column.qualifier.as_deref(), &column.name, column.span)?;
                    let visible = match alias {
                        Some(a) => a.name.clone(),
                        None => column.name.clone(),
                    };
                    let mut oc = output_column(c, &visible);
                    if alias.is_some() {
                        oc.alias = Some(visible);
                    }
                    columns.push(oc);
                }
                SelectItem::Semantic { alias, .. } => {
                    columns.push(OutputColumn::plain(ColumnRef::derived(alias.name.clone())));
                }
            }
        }
        let outputs = columns
            .iter()
            .map(|c| (c.name().to_string(), c.column.clone()))
            .collect();
        let root = self.add(NodeKind::Project { columns }, alloc::vec![top]);
        Ok(BoundBlock { root, outputs })
    }
}

fn output_column(column: ColumnRef, visible: &str) -> OutputColumn {
    let alias = (column.column != visible).then(|| visible.to_string());
    OutputColumn { column, alias }
}

fn flip(op: CompareOp) -> CompareOp {
    match op {
        CompareOp::Lt => CompareOp::Gt,
        CompareOp::Le => CompareOp::Ge,
        CompareOp::Gt => CompareOp::Lt,
        CompareOp::Ge => CompareOp::Le,
        other => other,
    }
}
