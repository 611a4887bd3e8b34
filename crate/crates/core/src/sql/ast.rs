use alloc::string::String;
use alloc::vec::Vec;

use super::Span;
use crate::ir::{CompareOp, OutputType};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub ctes: Vec<Cte>,
    pub body: SelectStmt,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cte {
    pub name: Ident,
    pub select: SelectStmt,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectStmt {
    pub items: Vec<SelectItem>,
    pub from: Vec<FromItem>,
    pub where_: Vec<Predicate>,
    pub order_by: Vec<OrderKey>,
    pub limit: Option<u64>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ident {
    pub name: String,
    pub span: Span,
}

/// `qualifier.name` or a bare `name`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnName {
    pub qualifier: Option<String>,
    pub name: String,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SelectItem {
    Star(Span),
    Column {
        column: ColumnName,
        alias: Option<Ident>,
    },
    Semantic {
        output: OutputType,
        template: String,
        template_span: Span,
        alias: Ident,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JoinKind {
    /// First item of the FROM list.
    First,
    Inner,
    Cross,
    /// Comma-separated FROM item.
    Comma,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FromItem {
    pub join: JoinKind,
    pub table: Ident,
    pub alias: Option<Ident>,
    pub on: Vec<Predicate>,
}

impl FromItem {
    pub fn alias_name(&self) -> &str {
        self.alias.as_ref().map_or(&self.table.name, |a| &a.name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Operand {
    Column(ColumnName),
    Literal(Value, Span),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    Semantic {
        template: String,
        span: Span,
    },
    Compare {
        left: Operand,
        op: CompareOp,
        right: Operand,
        span: Span,
    },
    Between {
        column: ColumnName,
        low: Value,
        high: Value,
        span: Span,
    },
    InList {
        column: ColumnName,
        values: Vec<Value>,
        span: Span,
    },
    IsNull {
        column: ColumnName,
        negated: bool,
        span: Span,
    },
}

impl Predicate {
    pub fn span(&self) -> Span {
        match self {
            Predicate::Semantic { span, .. }
            | Predicate::Compare { span, .. }
            | Predicate::Between { span, .. }
            | Predicate::InList { span, .. }
            | Predicate::IsNull { span, .. } => *span,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderKey {
    pub column: ColumnName,
    pub descending: bool,
}
