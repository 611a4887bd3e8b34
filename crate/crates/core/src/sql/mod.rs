//! SQL dialect with `SEMANTIC(...)` predicates and `SEMANTIC_STRING` /
//! `SEMANTIC_INT` projections.
//!
//! [`parse`] turns a query into a [`PlanTree`](crate::ir::PlanTree) with every
//! WHERE conjunct as its own filter node at the lowest position that covers its
//! columns. [`render_sql`] goes the other way for trees that have a surface
//! form.

mod ast;
mod bind;
mod lexer;
mod parser;
mod render;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use ast::{Query, SelectStmt};
pub use bind::bind;
pub use render::{render_sql, RenderError};

use crate::ir::{Catalog, PlanTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// The text is not in the grammar.
    Syntax,
    /// The text parses but names something that does not exist or is misused.
    Bind,
}

/// A positioned front-end error.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ErrorKind,
    pub message: String,
    /// Byte offset into the source.
    pub offset: usize,
    /// 1-based line and column (column counted in characters).
    pub line: usize,
    pub column: usize,
    pub expected: Vec<String>,
}

impl ParseError {
    fn at(kind: ErrorKind, src: &str, span: Span, message: impl Into<String>, expected: Vec<String>) -> Self {
        let offset = span.start.min(src.len());
        let offset = (0..=offset).rev().find(|&o| src.is_char_boundary(o)).unwrap_or(0);
        let before = &src[..offset];
        let line = before.matches('\n').count() + 1;
        let line_start = before.rfind('\n').map_or(0, |p| p + 1);
        let column = before[line_start..].chars().count() + 1;
        ParseError {
            kind,
            message: message.into(),
            offset,
            line,
            column,
            expected,
        }
    }

    pub(crate) fn syntax(src: &str, span: Span, message: impl Into<String>, expected: Vec<String>) -> Self {
        Self::at(ErrorKind::Syntax, src, span, message, expected)
    }

    pub(crate) fn bind(src: &str, span: Span, message: impl Into<String>) -> Self {
        Self::at(ErrorKind::Bind, src, span, message, Vec::new())
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Syntax => "syntax error",
            ErrorKind::Bind => "bind error",
        };
        write!(
            f,
            "{kind} at line {}, column {}: {}",
            self.line, self.column, self.message
        )?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

impl core::error::Error for ParseError {}

/// Parses and binds a query against a catalog.
pub fn parse(sql: &str, catalog: &Catalog) -> Result<PlanTree, ParseError> {
    let query = parse_query(sql)?;
    bind(&query, sql, catalog)
}

/// Parses without binding.
pub fn parse_query(sql: &str) -> Result<Query, ParseError> {
    let tokens = lexer::tokenize(sql)?;
    parser::Parser::new(sql, tokens).query()
}
