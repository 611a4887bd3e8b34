use alloc::string::String;
use alloc::vec::Vec;

use super::{ParseError, Span};

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    /// Identifier or keyword; keywords are matched case-insensitively by the parser.
    Ident(String),
    /// Numeric literal text, already validated.
    Number(String),
    Str(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Star,
    Semicolon,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        use alloc::format;
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(s) => format!("number {s}"),
            Tok::Str(_) => "string literal".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Star => "`*`".into(),
            Tok::Semicolon => "`;`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Ne => "`<>`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if b == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let single = |tok: Tok| Token {
            tok,
            span: Span::new(start, start + 1),
        };
        match b {
            b',' => out.push(single(Tok::Comma)),
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => out.push(single(Tok::Dot)),
            b'(' => out.push(single(Tok::LParen)),
            b')' => out.push(single(Tok::RParen)),
            b'*' => out.push(single(Tok::Star)),
            b';' => out.push(single(Tok::Semicolon)),
            b'=' => out.push(single(Tok::Eq)),
            b'<' | b'>' | b'!' => {
                let next = bytes.get(i + 1).copied();
                let (tok, len) = match (b, next) {
                    (b'<', Some(b'=')) => (Tok::Le, 2),
                    (b'<', Some(b'>')) => (Tok::Ne, 2),
                    (b'<', _) => (Tok::Lt, 1),
                    (b'>', Some(b'=')) => (Tok::Ge, 2),
                    (b'>', _) => (Tok::Gt, 1),
                    (b'!', Some(b'=')) => (Tok::Ne, 2),
                    _ => {
                        return Err(ParseError::syntax(
                            src,
                            Span::new(start, start + 1),
                            "unexpected character `!`",
                            Vec::new(),
                        ))
                    }
                };
                out.push(Token {
                    tok,
                    span: Span::new(start, start + len),
                });
                i += len;
                continue;
            }
            b'\'' => {
                let mut text = String::new();
                let mut j = i + 1;
                loop {
                    match src[j..].find('\'') {
                        None => {
                            return Err(ParseError::syntax(
                                src,
                                Span::new(start, src.len()),
                                "unterminated string literal",
                                Vec::new(),
                            ))
                        }
                        Some(off) => {
                            text.push_str(&src[j..j + off]);
                            j += off + 1;
                            if bytes.get(j) == Some(&b'\'') {
                                text.push('\'');
                                j += 1;
                            } else {
                                break;
                            }
                        }
                    }
                }
                out.push(Token {
                    tok: Tok::Str(text),
                    span: Span::new(start, j),
                });
                i = j;
                continue;
            }
            b'"' => {
                let end = src[i + 1..].find('"').ok_or_else(|| {
                    ParseError::syntax(
                        src,
                        Span::new(start, src.len()),
                        "unterminated quoted identifier",
                        Vec::new(),
                    )
                })?;
                let name = &src[i + 1..i + 1 + end];
                if name.is_empty() {
                    return Err(ParseError::syntax(
                        src,
                        Span::new(start, i + 2),
                        "empty quoted identifier",
                        Vec::new(),
                    ));
                }
                out.push(Token {
                    tok: Tok::Ident(name.into()),
                    span: Span::new(start, i + 2 + end),
                });
                i += end + 2;
                continue;
            }
            b'-' | b'0'..=b'9' | b'.' => {
                let len = number_len(&src[i..]).ok_or_else(|| {
                    ParseError::syntax(src, Span::new(start, start + 1), "malformed number", Vec::new())
                })?;
                out.push(Token {
                    tok: Tok::Number(src[i..i + len].into()),
                    span: Span::new(start, start + len),
                });
                i += len;
                continue;
            }
            _ if b == b'_' || b.is_ascii_alphabetic() => {
                let mut j = i;
                while j < bytes.len() && (bytes[j] == b'_' || bytes[j].is_ascii_alphanumeric()) {
                    j += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(src[i..j].into()),
                    span: Span::new(start, j),
                });
                i = j;
                continue;
            }
            _ => {
                let ch_len = src[i..].chars().next().map_or(1, char::len_utf8);
                return Err(ParseError::syntax(
                    src,
                    Span::new(start, start + ch_len),
                    "unexpected character",
                    Vec::new(),
                ));
            }
        }
        i += 1;
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span::new(src.len(), src.len()),
    });
    Ok(out)
}

/// Length of a numeric literal at the start of `s`: optional minus, digits,
/// optional fraction, optional exponent.
fn number_len(s: &str) -> Option<usize> {
    let b = s.as_bytes();
    let mut i = 0;
    if b.first() == Some(&b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j == exp_start {
            return None;
        }
        i = j;
    }
    if i < b.len() && (b[i] == b'_' || b[i].is_ascii_alphabetic()) {
        return None;
    }
    Some(i)
}
