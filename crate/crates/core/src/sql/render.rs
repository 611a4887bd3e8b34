//! Plan to SQL. Only trees with a surface form render: every SELECT block is
//! a projection over an optional LIMIT and ORDER BY over a left-deep join
//! region; projections nested inside a region become WITH entries.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::ir::{
    placeholder_spans, ColumnRef, JoinKey, NodeId, NodeKind, OutputColumn, OutputType, PlanTree, RelPredicate,
    SemanticPredicate,
};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderError {
    pub node: Option<NodeId>,
    pub message: String,
}

impl fmt::Display for RenderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "cannot render {n}: {}", self.message),
            None => write!(f, "cannot render plan: {}", self.message),
        }
    }
}

impl core::error::Error for RenderError {}

fn fail<T>(node: NodeId, message: impl Into<String>) -> Result<T, RenderError> {
    Err(RenderError {
        node: Some(node),
        message: message.into(),
    })
}

/// Renders a tree as dialect SQL that parses back to an equivalent tree.
pub fn render_sql(tree: &PlanTree) -> Result<String, RenderError> {
    let mut r = Renderer { tree, ctes: Vec::new() };
    let (body, _) = r.block(tree.root)?;
    let mut out = String::new();
    if !r.ctes.is_empty() {
        out.push_str("WITH ");
        out.push_str(&r.ctes.join(", "));
        out.push(' ');
    }
    out.push_str(&body);
    Ok(out)
}

struct Renderer<'t> {
    tree: &'t PlanTree,
    ctes: Vec<String>,
}

enum Leaf {
    Table(String),
    Cte {
        name: String,
        outputs: Vec<(String, ColumnRef)>,
    },
}

struct FromEntry {
    leaf: Leaf,
    keys: Vec<JoinKey>,
    on_semantic: Vec<SemanticPredicate>,
    cross: bool,
}

enum Conjunct {
    Rel(RelPredicate),
    Sem(SemanticPredicate),
}

#[derive(Default)]
struct Region {
    from: Vec<FromEntry>,
    conjuncts: Vec<Conjunct>,
    projections: BTreeMap<String, SemanticPredicate>,
}

impl Renderer<'_> {
    fn block(&mut self, project: NodeId) -> Result<(String, Vec<(String, ColumnRef)>), RenderError> {
        let node = self.tree.node(project).map_err(|e| RenderError {
            node: Some(project),
            message: e.to_string(),
        })?;
        let NodeKind::Project { columns } = &node.kind else {
            return fail(project, "a SELECT block must be rooted at a projection");
        };
        let renamed;
        let columns = if project == self.tree.root {
            columns
        } else {
            renamed = distinct_names(columns);
            &renamed
        };
        let mut cur = node.children[0];
        let mut limit = None;
        let mut sort = None;
        if let NodeKind::Limit { count } = self.tree.kind(cur) {
            limit = Some(*count);
            cur = self.tree.children(cur)[0];
        }
        if let NodeKind::Sort { keys } = self.tree.kind(cur) {
            sort = Some(keys.clone());
            cur = self.tree.children(cur)[0];
        }
        let mut region = Region::default();
        self.region(cur, &mut region, &mut Vec::new())?;

        let names = Names::new(&region);
        let mut sql = String::from("SELECT ");
        let star: Vec<OutputColumn> = region
            .from
            .iter()
            .flat_map(|f| leaf_columns(self.tree, &f.leaf))
            .map(|(name, c)| {
                let alias = (c.column != name).then_some(name);
                OutputColumn { column: c, alias }
            })
            .collect();
        let mut used_projections = 0;
        if *columns == star && !columns.is_empty() {
            sql.push('*');
        } else {
            let mut items = Vec::new();
            for oc in columns {
                if oc.column.is_derived() {
                    if let Some(p) = region.projections.get(&oc.column.column) {
                        if oc.alias.as_ref().is_some_and(|a| *a != oc.column.column) {
                            return fail(project, "a semantic projection cannot be renamed");
                        }
                        let func = match p.output {
                            OutputType::Text => "SEMANTIC_STRING",
                            OutputType::Integer => "SEMANTIC_INT",
                            OutputType::Boolean => return fail(project, "boolean semantic projection"),
                        };
                        items.push(format!(
                            "{func}({}) AS {}",
                            quote(&names.template(p)),
                            ident(&oc.column.column)
                        ));
                        used_projections += 1;
                        continue;
                    }
                }
                let mut item = names.column(&oc.column, project)?;
                if let Some(a) = &oc.alias {
                    item.push_str(" AS ");
                    item.push_str(&ident(a));
                }
                items.push(item);
            }
            sql.push_str(&items.join(", "));
        }
        if used_projections != region.projections.len() {
            return fail(project, "a semantic projection is not part of the select list");
        }
        sql.push_str(" FROM ");
        for (i, f) in region.from.iter().enumerate() {
            let leaf = match &f.leaf {
                Leaf::Table(t) => ident(t),
                Leaf::Cte { name, .. } => ident(name),
            };
            if i == 0 {
                sql.push_str(&leaf);
                continue;
            }
            let mut on: Vec<String> = Vec::new();
            for k in &f.keys {
                on.push(format!(
                    "{} = {}",
                    names.column(&k.left, project)?,
                    names.column(&k.right, project)?
                ));
            }
            for p in &f.on_semantic {
                on.push(format!("SEMANTIC({})", quote(&names.template(p))));
            }
            if on.is_empty() {
                sql.push_str(if f.cross { " CROSS JOIN " } else { ", " });
                sql.push_str(&leaf);
            } else {
                sql.push_str(" JOIN ");
                sql.push_str(&leaf);
                sql.push_str(" ON ");
                sql.push_str(&on.join(" AND "));
            }
        }
        if !region.conjuncts.is_empty() {
            let mut parts = Vec::new();
            for c in &region.conjuncts {
                match c {
                    Conjunct::Sem(p) => parts.push(format!("SEMANTIC({})", quote(&names.template(p)))),
                    Conjunct::Rel(p) => render_rel(p, &names, project, &mut parts)?,
                }
            }
            sql.push_str(" WHERE ");
            sql.push_str(&parts.join(" AND "));
        }
        if let Some(keys) = sort {
            let mut parts = Vec::new();
            for k in keys {
                let mut s = names.column(&k.column, project)?;
                if k.descending {
                    s.push_str(" DESC");
                }
                parts.push(s);
            }
            sql.push_str(" ORDER BY ");
            sql.push_str(&parts.join(", "));
        }
        if let Some(n) = limit {
            sql.push_str(&format!(" LIMIT {n}"));
        }
        let outputs = columns
            .iter()
            .map(|c| (c.name().to_string(), c.column.clone()))
            .collect();
        Ok((sql, outputs))
    }

    /// Walks a region top-down. Attached join conditions seen on the way are
    /// handed to the join below them.
    fn region(
        &mut self,
        id: NodeId,
        region: &mut Region,
        attached: &mut Vec<SemanticPredicate>,
    ) -> Result<(), RenderError> {
        let node = self.tree.node(id).map_err(|e| RenderError {
            node: Some(id),
            message: e.to_string(),
        })?;
        match &node.kind {
            NodeKind::RelFilter { predicate } => {
                if !attached.is_empty() {
                    return fail(id, "relational filter between a join and its semantic condition");
                }
                self.region(node.children[0], region, attached)?;
                region.conjuncts.push(Conjunct::Rel(predicate.clone()));
            }
            NodeKind::SemFilter {
                predicate,
                join_condition: true,
            } => {
                attached.insert(0, predicate.clone());
                self.region(node.children[0], region, attached)?;
            }
            NodeKind::SemFilter { predicate, .. } => {
                if !attached.is_empty() {
                    return fail(id, "semantic filter between a join and its semantic condition");
                }
                self.region(node.children[0], region, attached)?;
                region.conjuncts.push(Conjunct::Sem(predicate.clone()));
            }
            NodeKind::SemProject { predicate, output } => {
                if !attached.is_empty() {
                    return fail(id, "semantic projection between a join and its semantic condition");
                }
                self.region(node.children[0], region, attached)?;
                region.projections.insert(output.clone(), predicate.clone());
            }
            NodeKind::InnerJoin { .. } | NodeKind::CrossJoin { .. } => {
                let on_semantic = core::mem::take(attached);
                let (keys, cross) = match &node.kind {
                    NodeKind::InnerJoin { keys } => (keys.clone(), keys.is_empty()),
                    _ => (Vec::new(), true),
                };
                self.region(node.children[0], region, &mut Vec::new())?;
                if region.from.is_empty() {
                    return fail(id, "join without a left input");
                }
                let before = region.from.len();
                self.region(node.children[1], region, &mut Vec::new())?;
                if region.from.len() != before + 1 {
                    return fail(id, "bushy joins have no surface syntax");
                }
                let entry = &mut region.from[before];
                entry.keys = keys;
                entry.on_semantic = on_semantic;
                entry.cross = cross;
            }
            NodeKind::TableScan { table } => {
                if !attached.is_empty() {
                    return fail(id, "semantic join condition above a table scan");
                }
                region.from.push(FromEntry {
                    leaf: Leaf::Table(table.clone()),
                    keys: Vec::new(),
                    on_semantic: Vec::new(),
                    cross: true,
                });
            }
            NodeKind::Project { .. } => {
                if !attached.is_empty() {
                    return fail(id, "semantic join condition above a projection");
                }
                let (sql, outputs) = self.block(id)?;
                let name = format!("cte{}", self.ctes.len());
                self.ctes.push(format!("{} AS ({sql})", ident(&name)));
                region.from.push(FromEntry {
                    leaf: Leaf::Cte { name, outputs },
                    keys: Vec::new(),
                    on_semantic: Vec::new(),
                    cross: true,
                });
            }
            NodeKind::Aggregate { .. } => return fail(id, "aggregation has no surface syntax"),
            NodeKind::Union => return fail(id, "union has no surface syntax"),
            NodeKind::Limit { .. } | NodeKind::Sort { .. } => {
                return fail(id, "LIMIT or ORDER BY below other operators has no surface syntax")
            }
        }
        Ok(())
    }
}

/// Aliases repeated output names so a CTE's columns can be referenced.
fn distinct_names(columns: &[OutputColumn]) -> Vec<OutputColumn> {
    let mut used: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(columns.len());
    for c in columns {
        let mut c = c.clone();
        if used.iter().any(|u| u == c.name()) {
            let base = if c.column.is_derived() {
                c.name().to_string()
            } else {
                format!("{}_{}", c.column.table, c.column.column)
            };
            let mut candidate = base.clone();
            let mut k = 2;
            while used.contains(&candidate) || columns.iter().any(|o| o.name() == candidate) {
                candidate = format!("{base}_{k}");
                k += 1;
            }
            c.alias = Some(candidate);
        }
        used.push(c.name().to_string());
        out.push(c);
    }
    out
}

fn leaf_columns(tree: &PlanTree, leaf: &Leaf) -> Vec<(String, ColumnRef)> {
    match leaf {
        Leaf::Table(t) => tree
            .catalog
            .get(t)
            .map(|s| {
                s.columns
                    .iter()
                    .map(|c| (c.name.clone(), ColumnRef::new(t.clone(), c.name.clone())))
                    .collect()
            })
            .unwrap_or_default(),
        Leaf::Cte { outputs, .. } => outputs.clone(),
    }
}

/// How each visible column is spelled inside one SELECT block.
struct Names {
    map: BTreeMap<ColumnRef, String>,
}

impl Names {
    fn new(region: &Region) -> Self {
        let mut map = BTreeMap::new();
        for f in &region.from {
            match &f.leaf {
                Leaf::Table(t) => {
                    // Filled lazily: every column of the table is `t.col`.
                    map.insert(ColumnRef::new(t.clone(), String::new()), ident(t));
                }
                Leaf::Cte { name, outputs } => {
                    for (n, c) in outputs {
                        map.entry(c.clone())
                            .or_insert_with(|| format!("{}.{}", ident(name), ident(n)));
                    }
                }
            }
        }
        for name in region.projections.keys() {
            map.insert(ColumnRef::derived(name.clone()), ident(name));
        }
        Names { map }
    }

    fn column(&self, c: &ColumnRef, at: NodeId) -> Result<String, RenderError> {
        if let Some(s) = self.map.get(c) {
            return Ok(s.clone());
        }
        if !c.is_derived() {
            if let Some(t) = self.map.get(&ColumnRef::new(c.table.clone(), String::new())) {
                return Ok(format!("{t}.{}", ident(&c.column)));
            }
        }
        fail(at, format!("column {c} is not visible in its SELECT block"))
    }

    fn template(&self, p: &SemanticPredicate) -> String {
        let Ok(spans) = placeholder_spans(&p.template) else {
            return p.template.clone();
        };
        let mut out = String::new();
        let mut last = 0;
        for s in spans {
            out.push_str(&p.template[last..s.start]);
            let inner = &p.template[s.start + 1..s.end - 1];
            let rendered = ColumnRef::parse(inner)
                .and_then(|c| self.column(&c, NodeId(0)).ok())
                .unwrap_or_else(|| inner.to_string());
            out.push('{');
            out.push_str(&rendered);
            out.push('}');
            last = s.end;
        }
        out.push_str(&p.template[last..]);
        out
    }
}

fn render_rel(p: &RelPredicate, names: &Names, at: NodeId, out: &mut Vec<String>) -> Result<(), RenderError> {
    let s = match p {
        RelPredicate::Compare { column, op, value } => {
            format!("{} {} {}", names.column(column, at)?, op.symbol(), literal(value, at)?)
        }
        RelPredicate::CompareColumns { left, op, right } => format!(
            "{} {} {}",
            names.column(left, at)?,
            op.symbol(),
            names.column(right, at)?
        ),
        RelPredicate::Between { column, low, high } => format!(
            "{} BETWEEN {} AND {}",
            names.column(column, at)?,
            literal(low, at)?,
            literal(high, at)?
        ),
        RelPredicate::InList { column, values } => {
            let vals: Result<Vec<String>, RenderError> = values.iter().map(|v| literal(v, at)).collect();
            format!("{} IN ({})", names.column(column, at)?, vals?.join(", "))
        }
        RelPredicate::IsNull { column, negated } => format!(
            "{} IS {}NULL",
            names.column(column, at)?,
            if *negated { "NOT " } else { "" }
        ),
        RelPredicate::And { terms } => {
            for t in terms {
                render_rel(t, names, at, out)?;
            }
            return Ok(());
        }
    };
    out.push(s);
    Ok(())
}

fn literal(v: &Value, at: NodeId) -> Result<String, RenderError> {
    match v {
        Value::Null => fail(at, "NULL literal has no surface syntax"),
        Value::Boolean(b) => Ok(if *b { "TRUE" } else { "FALSE" }.to_string()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(x) if x.is_finite() => Ok(format!("{x:?}")),
        Value::Float(_) => fail(at, "non-finite float literal"),
        Value::Text(s) => Ok(quote(s)),
    }
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn ident(name: &str) -> String {
    let simple = name
        .bytes()
        .next()
        .is_some_and(|b| b == b'_' || b.is_ascii_alphabetic())
        && name.bytes().all(|b| b == b'_' || b.is_ascii_alphanumeric());
    let reserved = [
        "SELECT",
        "FROM",
        "WHERE",
        "AND",
        "OR",
        "NOT",
        "JOIN",
        "INNER",
        "CROSS",
        "LEFT",
        "RIGHT",
        "FULL",
        "OUTER",
        "ON",
        "AS",
        "ORDER",
        "BY",
        "LIMIT",
        "WITH",
        "BETWEEN",
        "IN",
        "IS",
        "NULL",
        "ASC",
        "DESC",
        "TRUE",
        "FALSE",
        "GROUP",
        "HAVING",
        "UNION",
        "DATE",
        "TIMESTAMP",
    ]
    .iter()
    .any(|k| k.eq_ignore_ascii_case(name));
    if simple && !reserved {
        name.to_string()
    } else {
        format!("\"{name}\"")
    }
}
