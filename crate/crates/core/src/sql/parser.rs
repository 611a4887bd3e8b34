use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::ast::*;
use super::lexer::{Tok, Token};
use super::{ParseError, Span};
use crate::ir::{CompareOp, OutputType};
use crate::value::Value;

const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "JOIN", "INNER", "CROSS", "LEFT", "RIGHT", "FULL", "OUTER", "ON",
    "AS", "ORDER", "BY", "LIMIT", "WITH", "BETWEEN", "IN", "IS", "NULL", "ASC", "DESC", "TRUE", "FALSE", "GROUP",
    "HAVING", "UNION",
];

pub struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

impl<'a> Parser<'a> {
    pub fn new(src: &'a str, tokens: Vec<Token>) -> Self {
        Parser { src, tokens, pos: 0 }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let found = self.peek().describe();
        ParseError::syntax(
            self.src,
            self.span(),
            format!("unexpected {found}"),
            expected.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn is_kw_at(&self, n: usize, kw: &str) -> bool {
        matches!(self.peek_at(n), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<Span, ParseError> {
        if self.is_kw(kw) {
            Ok(self.bump().span)
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump().span)
        } else {
            Err(self.error(&[&tok.describe()]))
        }
    }

    fn ident(&mut self, what: &str) -> Result<Ident, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) if !is_reserved(&name) => {
                let span = self.bump().span;
                Ok(Ident { name, span })
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn string(&mut self) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => Ok((s, self.bump().span)),
            _ => Err(self.error(&["string literal"])),
        }
    }

    pub fn query(mut self) -> Result<Query, ParseError> {
        let mut ctes = Vec::new();
        if self.eat_kw("WITH") {
            if self.is_kw("RECURSIVE") {
                return Err(ParseError::syntax(
                    self.src,
                    self.span(),
                    "recursive common table expressions are not supported",
                    Vec::new(),
                ));
            }
            loop {
                let name = self.ident("common table expression name")?;
                self.expect_kw("AS")?;
                self.expect(Tok::LParen)?;
                let select = self.select()?;
                self.expect(Tok::RParen)?;
                ctes.push(Cte { name, select });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let body = self.select()?;
        self.eat(&Tok::Semicolon);
        if *self.peek() != Tok::Eof {
            let expected: &[&str] = if body.limit.is_none() {
                &["WHERE", "ORDER BY", "LIMIT", "end of input"]
            } else {
                &["end of input"]
            };
            return Err(self.error(expected));
        }
        Ok(Query { ctes, body })
    }

    fn select(&mut self) -> Result<SelectStmt, ParseError> {
        let start = self.expect_kw("SELECT")?.start;
        let mut items = vec![self.select_item()?];
        while self.eat(&Tok::Comma) {
            items.push(self.select_item()?);
        }
        self.expect_kw("FROM")?;
        let from = self.parse_from_list()?;
        let mut where_ = Vec::new();
        if self.eat_kw("WHERE") {
            where_ = self.conjunction()?;
        }
        let mut order_by = Vec::new();
        if self.is_kw("ORDER") {
            self.bump();
            self.expect_kw("BY")?;
            loop {
                let column = self.column_name()?;
                let descending = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                order_by.push(OrderKey { column, descending });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let mut limit = None;
        if self.eat_kw("LIMIT") {
            match self.peek().clone() {
                Tok::Number(n) if n.bytes().all(|b| b.is_ascii_digit()) => {
                    let span = self.bump().span;
                    limit = Some(
                        n.parse::<u64>()
                            .map_err(|_| ParseError::syntax(self.src, span, "LIMIT value out of range", Vec::new()))?,
                    );
                }
                _ => return Err(self.error(&["non-negative integer"])),
            }
        }
        if self.is_kw("GROUP") || self.is_kw("HAVING") || self.is_kw("UNION") {
            return Err(ParseError::syntax(
                self.src,
                self.span(),
                "GROUP BY, HAVING and UNION are not supported",
                Vec::new(),
            ));
        }
        Ok(SelectStmt {
            items,
            from,
            where_,
            order_by,
            limit,
            span: Span::new(start, self.prev_end()),
        })
    }

    fn semantic_call(&self) -> Option<OutputType> {
        let Tok::Ident(name) = self.peek() else {
            return None;
        };
        if *self.peek_at(1) != Tok::LParen {
            return None;
        }
        if name.eq_ignore_ascii_case("SEMANTIC_STRING") {
            Some(OutputType::Text)
        } else if name.eq_ignore_ascii_case("SEMANTIC_INT") {
            Some(OutputType::Integer)
        } else if name.eq_ignore_ascii_case("SEMANTIC") {
            Some(OutputType::Boolean)
        } else {
            None
        }
    }

    fn semantic_args(&mut self) -> Result<(String, Span), ParseError> {
        self.bump();
        self.expect(Tok::LParen)?;
        let (template, span) = self.string()?;
        self.expect(Tok::RParen)?;
        Ok((template, span))
    }

    fn select_item(&mut self) -> Result<SelectItem, ParseError> {
        if *self.peek() == Tok::Star {
            return Ok(SelectItem::Star(self.bump().span));
        }
        if let Some(output) = self.semantic_call() {
            let call_span = self.span();
            if output == OutputType::Boolean {
                return Err(ParseError::syntax(
                    self.src,
                    call_span,
                    "SEMANTIC(...) is a predicate; use SEMANTIC_STRING or SEMANTIC_INT in the select list",
                    vec!["SEMANTIC_STRING".into(), "SEMANTIC_INT".into()],
                ));
            }
            let (template, template_span) = self.semantic_args()?;
            self.expect_kw("AS")?;
            let alias = self.ident("output column name")?;
            return Ok(SelectItem::Semantic {
                output,
                template,
                template_span,
                alias,
            });
        }
        let column = self.column_name()?;
        let alias = if self.eat_kw("AS") || matches!(self.peek(), Tok::Ident(s) if !is_reserved(s)) {
            Some(self.ident("alias")?)
        } else {
            None
        };
        Ok(SelectItem::Column { column, alias })
    }

    fn column_name(&mut self) -> Result<ColumnName, ParseError> {
        let first = self.ident("column name")?;
        if self.eat(&Tok::Dot) {
            let second = self.ident("column name")?;
            Ok(ColumnName {
                qualifier: Some(first.name),
                name: second.name,
                span: Span::new(first.span.start, second.span.end),
            })
        } else {
            Ok(ColumnName {
                qualifier: None,
                name: first.name,
                span: first.span,
            })
        }
    }

    fn table_ref(&mut self, join: JoinKind) -> Result<FromItem, ParseError> {
        if *self.peek() == Tok::LParen {
            return Err(ParseError::syntax(
                self.src,
                self.span(),
                "subqueries in FROM are not supported; use WITH",
                vec!["table name".into()],
            ));
        }
        let table = self.ident("table name")?;
        let alias = if self.eat_kw("AS") || matches!(self.peek(), Tok::Ident(s) if !is_reserved(s)) {
            Some(self.ident("table alias")?)
        } else {
            None
        };
        Ok(FromItem {
            join,
            table,
            alias,
            on: Vec::new(),
        })
    }

    fn parse_from_list(&mut self) -> Result<Vec<FromItem>, ParseError> {
        let mut items = vec![self.table_ref(JoinKind::First)?];
        loop {
            if self.eat(&Tok::Comma) {
                items.push(self.table_ref(JoinKind::Comma)?);
            } else if self.is_kw("CROSS") {
                self.bump();
                self.expect_kw("JOIN")?;
                items.push(self.table_ref(JoinKind::Cross)?);
            } else if self.is_kw("JOIN") || (self.is_kw("INNER") && self.is_kw_at(1, "JOIN")) {
                self.eat_kw("INNER");
                self.bump();
                let mut item = self.table_ref(JoinKind::Inner)?;
                self.expect_kw("ON")?;
                item.on = self.conjunction()?;
                items.push(item);
            } else if ["LEFT", "RIGHT", "FULL", "OUTER"].iter().any(|k| self.is_kw(k)) {
                return Err(ParseError::syntax(
                    self.src,
                    self.span(),
                    "outer joins are not supported",
                    vec!["JOIN".into(), "CROSS JOIN".into()],
                ));
            } else {
                return Ok(items);
            }
        }
    }

    fn conjunction(&mut self) -> Result<Vec<Predicate>, ParseError> {
        let mut out = Vec::new();
        self.conjunct_into(&mut out)?;
        while self.eat_kw("AND") {
            self.conjunct_into(&mut out)?;
        }
        if self.is_kw("OR") {
            return Err(ParseError::syntax(
                self.src,
                self.span(),
                "OR is not supported; filters must be AND-conjunctions",
                vec!["AND".into()],
            ));
        }
        Ok(out)
    }

    fn conjunct_into(&mut self, out: &mut Vec<Predicate>) -> Result<(), ParseError> {
        if self.eat(&Tok::LParen) {
            let inner = self.conjunction()?;
            self.expect(Tok::RParen)?;
            out.extend(inner);
            return Ok(());
        }
        if self.is_kw("NOT") {
            return Err(ParseError::syntax(
                self.src,
                self.span(),
                "NOT is only supported as IS NOT NULL or NOT IN",
                Vec::new(),
            ));
        }
        out.push(self.predicate()?);
        Ok(())
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let start = self.span().start;
        if let Some(output) = self.semantic_call() {
            if output != OutputType::Boolean {
                return Err(ParseError::bind(
                    self.src,
                    self.span(),
                    "only boolean SEMANTIC(...) calls may appear in a filter",
                ));
            }
            let (template, _) = self.semantic_args()?;
            return Ok(Predicate::Semantic {
                template,
                span: Span::new(start, self.prev_end()),
            });
        }
        let left = self.operand()?;
        if let Operand::Column(column) = &left {
            if self.eat_kw("BETWEEN") {
                let low = self.literal()?.0;
                self.expect_kw("AND")?;
                let high = self.literal()?.0;
                return Ok(Predicate::Between {
                    column: column.clone(),
                    low,
                    high,
                    span: Span::new(start, self.prev_end()),
                });
            }
            if self.is_kw("IN") || (self.is_kw("NOT") && self.is_kw_at(1, "IN")) {
                if self.is_kw("NOT") {
                    return Err(ParseError::syntax(
                        self.src,
                        self.span(),
                        "NOT IN is not supported",
                        vec!["IN".into()],
                    ));
                }
                self.bump();
                self.expect(Tok::LParen)?;
                let mut values = vec![self.literal()?.0];
                while self.eat(&Tok::Comma) {
                    values.push(self.literal()?.0);
                }
                self.expect(Tok::RParen)?;
                return Ok(Predicate::InList {
                    column: column.clone(),
                    values,
                    span: Span::new(start, self.prev_end()),
                });
            }
            if self.eat_kw("IS") {
                let negated = self.eat_kw("NOT");
                self.expect_kw("NULL")?;
                return Ok(Predicate::IsNull {
                    column: column.clone(),
                    negated,
                    span: Span::new(start, self.prev_end()),
                });
            }
        }
        let op = match self.peek() {
            Tok::Eq => CompareOp::Eq,
            Tok::Ne => CompareOp::Ne,
            Tok::Lt => CompareOp::Lt,
            Tok::Le => CompareOp::Le,
            Tok::Gt => CompareOp::Gt,
            Tok::Ge => CompareOp::Ge,
            _ => {
                return Err(self.error(&["=", "<>", "<", "<=", ">", ">=", "BETWEEN", "IN", "IS"]));
            }
        };
        self.bump();
        let right = self.operand()?;
        Ok(Predicate::Compare {
            left,
            op,
            right,
            span: Span::new(start, self.prev_end()),
        })
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.peek() {
            Tok::Ident(s)
                if !is_reserved(s)
                    && !(matches!(self.peek_at(1), Tok::Str(_))
                        && (s.eq_ignore_ascii_case("DATE") || s.eq_ignore_ascii_case("TIMESTAMP"))) =>
            {
                Ok(Operand::Column(self.column_name()?))
            }
            _ => {
                let (v, span) = self.literal().map_err(|_| self.error(&["column", "literal"]))?;
                Ok(Operand::Literal(v, span))
            }
        }
    }

    fn literal(&mut self) -> Result<(Value, Span), ParseError> {
        let span = self.span();
        let value = match self.peek().clone() {
            Tok::Number(n) => {
                let is_int = n.bytes().all(|b| b.is_ascii_digit() || b == b'-');
                if is_int {
                    match n.parse::<i64>() {
                        Ok(i) => Value::Integer(i),
                        Err(_) => {
                            return Err(ParseError::syntax(
                                self.src,
                                span,
                                "integer literal out of range",
                                Vec::new(),
                            ))
                        }
                    }
                } else {
                    match n.parse::<f64>() {
                        Ok(x) if x.is_finite() => Value::Float(x),
                        _ => {
                            return Err(ParseError::syntax(
                                self.src,
                                span,
                                "float literal out of range",
                                Vec::new(),
                            ))
                        }
                    }
                }
            }
            Tok::Str(s) => Value::Text(s),
            Tok::Ident(k) if k.eq_ignore_ascii_case("TRUE") => Value::Boolean(true),
            Tok::Ident(k) if k.eq_ignore_ascii_case("FALSE") => Value::Boolean(false),
            Tok::Ident(k) if k.eq_ignore_ascii_case("NULL") => {
                return Err(ParseError::syntax(
                    self.src,
                    span,
                    "NULL is not a comparable literal; use IS NULL",
                    vec!["IS NULL".into()],
                ))
            }
            Tok::Ident(k)
                if (k.eq_ignore_ascii_case("DATE") || k.eq_ignore_ascii_case("TIMESTAMP"))
                    && matches!(self.peek_at(1), Tok::Str(_)) =>
            {
                self.bump();
                let (s, sspan) = self.string()?;
                return Ok((Value::Text(s), Span::new(span.start, sspan.end)));
            }
            _ => return Err(self.error(&["literal"])),
        };
        self.bump();
        Ok((value, span))
    }
}
