//! SQL tokenizer for the Spider grammar subset.

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Literal,
    Operator,
    Punctuation,
}

/// One token. Equality ignores the source span so that re-tokenizing a
/// single-space join of token texts compares equal to the original stream.
#[derive(Debug, Clone)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Range<usize>,
}

impl PartialEq for Token {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.text == other.text
    }
}

impl Eq for Token {}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text.eq_ignore_ascii_case(kw)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuation && self.text == p
    }

    pub fn is_operator(&self, op: &str) -> bool {
        self.kind == TokenKind::Operator && self.text == op
    }
}

const KEYWORDS: &[&str] = &[
    "select", "from", "where", "group", "by", "having", "order", "limit", "offset", "join",
    "inner", "left", "right", "full", "outer", "cross", "on", "as", "and", "or", "not", "in",
    "like", "between", "is", "null", "distinct", "intersect", "union", "except", "asc", "desc",
    "exists", "count", "sum", "avg", "min", "max", "all", "any", "case", "when", "then", "else",
    "end", "cast", "with", "over",
];

pub fn is_keyword_text(text: &str) -> bool {
    KEYWORDS.iter().any(|k| text.eq_ignore_ascii_case(k))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlTokenStream {
    pub tokens: Vec<Token>,
}

impl SqlTokenStream {
    /// Token texts joined with single spaces.
    pub fn render(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Tokenize a SQL string.
///
/// String literals in single or double quotes become single literal tokens
/// (quotes included). Qualified names (`t.col`, `t.*`) are kept as one
/// identifier token. An unterminated string literal is a lex error.
pub fn tokenize(sql: &str) -> Result<SqlTokenStream> {
    let bytes = sql.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;

    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }

        let start = i;
        if c == '\'' || c == '"' {
            let quote = c as u8;
            let mut j = i + 1;
            let mut closed = false;
            while j < bytes.len() {
                if bytes[j] == quote {
                    // A doubled quote is an escaped quote inside the literal.
                    if j + 1 < bytes.len() && bytes[j + 1] == quote {
                        j += 2;
                        continue;
                    }
                    closed = true;
                    break;
                }
                j += 1;
            }
            if !closed {
                return Err(Error::Lex {
                    position: start,
                    message: format!("unterminated string literal starting with {}", c),
                });
            }
            tokens.push(Token {
                kind: TokenKind::Literal,
                text: sql[start..=j].to_string(),
                span: start..j + 1,
            });
            i = j + 1;
        } else if c.is_ascii_digit() {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                j += 1;
            }
            if j < bytes.len()
                && bytes[j] as char == '.'
                && j + 1 < bytes.len()
                && (bytes[j + 1] as char).is_ascii_digit()
            {
                j += 1;
                while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    j += 1;
                }
            }
            tokens.push(Token {
                kind: TokenKind::Literal,
                text: sql[start..j].to_string(),
                span: start..j,
            });
            i = j;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i + 1;
            while j < bytes.len() && ((bytes[j] as char).is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            // Fold qualified names into one identifier token: t.col or t.*
            let mut end = j;
            if j < bytes.len() && bytes[j] == b'.' {
                if j + 1 < bytes.len() && bytes[j + 1] == b'*' {
                    end = j + 2;
                } else if j + 1 < bytes.len()
                    && ((bytes[j + 1] as char).is_ascii_alphabetic() || bytes[j + 1] == b'_')
                {
                    let mut k = j + 2;
                    while k < bytes.len()
                        && ((bytes[k] as char).is_ascii_alphanumeric() || bytes[k] == b'_')
                    {
                        k += 1;
                    }
                    end = k;
                }
            }
            let text = &sql[start..end];
            let kind = if end == j && is_keyword_text(text) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            tokens.push(Token {
                kind,
                text: text.to_string(),
                span: start..end,
            });
            i = end;
        } else if c == '(' || c == ')' || c == ',' || c == ';' || c == '.' {
            tokens.push(Token {
                kind: TokenKind::Punctuation,
                text: c.to_string(),
                span: start..start + 1,
            });
            i += 1;
        } else {
            // Operators, longest match first.
            let two = if i + 1 < bytes.len() { &sql[i..i + 2] } else { "" };
            let text = match two {
                "!=" | "<>" | "<=" | ">=" => two,
                _ => match c {
                    '=' | '<' | '>' | '+' | '-' | '*' | '/' | '%' => &sql[i..i + 1],
                    _ => {
                        return Err(Error::Lex {
                            position: start,
                            message: format!("unexpected character `{c}`"),
                        })
                    }
                },
            };
            tokens.push(Token {
                kind: TokenKind::Operator,
                text: text.to_string(),
                span: start..start + text.len(),
            });
            i += text.len();
        }
    }

    Ok(SqlTokenStream { tokens })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_select() {
        let ts = tokenize("SELECT 1").unwrap();
        assert_eq!(ts.tokens.len(), 2);
        assert_eq!(ts.tokens[0].kind, TokenKind::Keyword);
        assert_eq!(ts.tokens[1].kind, TokenKind::Literal);
    }

    #[test]
    fn double_quoted_string_is_one_token() {
        let ts = tokenize("WHERE name = \"x\"").unwrap();
        let lit = ts.tokens.last().unwrap();
        assert_eq!(lit.kind, TokenKind::Literal);
        assert_eq!(lit.text, "\"x\"");
    }

    #[test]
    fn unterminated_string_is_lex_error() {
        let err = tokenize("WHERE name = \"x").unwrap_err();
        match err {
            Error::Lex { position, .. } => assert_eq!(position, 13),
            other => panic!("expected Lex, got {other}"),
        }
    }

    #[test]
    fn qualified_name_is_single_token() {
        let ts = tokenize("select T1.name , t1.* from x").unwrap();
        assert_eq!(ts.tokens[1].text, "T1.name");
        assert_eq!(ts.tokens[1].kind, TokenKind::Identifier);
        assert_eq!(ts.tokens[3].text, "t1.*");
    }

    #[test]
    fn rejoin_stability() {
        let ts = tokenize("SELECT count(*) FROM t WHERE a >= 2.5 AND b != 'x y'").unwrap();
        let rejoined = ts.render();
        let ts2 = tokenize(&rejoined).unwrap();
        assert_eq!(ts, ts2);
    }

    #[test]
    fn doubled_quote_escape_is_one_literal() {
        let ts = tokenize("where name = 'ed o''brien'").unwrap();
        let lit = ts.tokens.last().unwrap();
        assert_eq!(lit.text, "'ed o''brien'");
        let ts2 = tokenize(&ts.render()).unwrap();
        assert_eq!(ts, ts2);
    }

    #[test]
    fn operators_and_punctuation() {
        let ts = tokenize("(a,b)<>c<=d").unwrap();
        let texts: Vec<&str> = ts.tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["(", "a", ",", "b", ")", "<>", "c", "<=", "d"]);
    }
}
