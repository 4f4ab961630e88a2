//! SQL normalization: alias resolution, explicit ASC, lower-casing, and
//! token spacing with single-quoted literals.

use std::collections::BTreeMap;

use crate::catalog::SchemaCatalog;
use crate::error::{Error, Result};

use super::token::{tokenize, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum AliasTarget {
    /// Alias of a plain table; references are rewritten to the table name.
    Table(String),
    /// Alias of a derived (subquery) table; kept as-is.
    Derived,
}

#[derive(Debug, Default)]
pub(crate) struct AliasScan {
    pub(crate) aliases: BTreeMap<String, AliasTarget>,
    /// Indices of alias-definition tokens to drop (`as t1` after plain tables).
    pub(crate) removed: Vec<usize>,
    /// Plain table identifiers mentioned in FROM/JOIN positions.
    pub(crate) from_tables: Vec<String>,
    /// Token indices of those FROM/JOIN table mentions.
    pub(crate) from_table_indices: Vec<usize>,
}

fn matching_paren(tokens: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

/// Scan FROM/JOIN table units, collecting alias definitions.
pub(crate) fn scan_aliases(tokens: &[Token]) -> Result<AliasScan> {
    let mut scan = AliasScan::default();
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i].is_keyword("from") || tokens[i].is_keyword("join") {
            let mut unit = i + 1;
            loop {
                unit = scan_table_unit(tokens, unit, &mut scan)?;
                // Comma-separated FROM lists continue with more table units.
                if unit < tokens.len() && tokens[unit].is_punct(",") && tokens[i].is_keyword("from")
                {
                    unit += 1;
                } else {
                    break;
                }
            }
            i = unit;
        } else {
            i += 1;
        }
    }
    Ok(scan)
}

/// Process one table unit starting at `start`; returns the index just past it.
fn scan_table_unit(tokens: &[Token], start: usize, scan: &mut AliasScan) -> Result<usize> {
    let Some(tok) = tokens.get(start) else {
        return Ok(start);
    };
    if tok.is_punct("(") {
        // Derived table: keep any alias, it has no original name to restore.
        let close = matching_paren(tokens, start)
            .ok_or_else(|| Error::Normalize("unbalanced parentheses in FROM clause".into()))?;
        let mut end = close + 1;
        if tokens.get(end).map_or(false, |t| t.is_keyword("as")) {
            if let Some(alias) = tokens.get(end + 1).filter(|t| t.kind == TokenKind::Identifier) {
                record_alias(scan, &alias.text, AliasTarget::Derived)?;
                end += 2;
            }
        } else if let Some(alias) = tokens.get(end).filter(|t| t.kind == TokenKind::Identifier) {
            record_alias(scan, &alias.text, AliasTarget::Derived)?;
            end += 1;
        }
        return Ok(end);
    }
    if tok.kind != TokenKind::Identifier || tok.text.contains('.') {
        return Ok(start);
    }
    let table = tok.text.to_lowercase();
    scan.from_tables.push(table.clone());
    scan.from_table_indices.push(start);
    let mut end = start + 1;
    if tokens.get(end).map_or(false, |t| t.is_keyword("as")) {
        if let Some(alias) = tokens.get(end + 1).filter(|t| t.kind == TokenKind::Identifier) {
            record_alias(scan, &alias.text, AliasTarget::Table(table))?;
            scan.removed.push(end);
            scan.removed.push(end + 1);
            end += 2;
        }
    } else if let Some(alias) = tokens
        .get(end)
        .filter(|t| t.kind == TokenKind::Identifier && !t.text.contains('.'))
    {
        // Implicit alias (`from singer t1`).
        record_alias(scan, &alias.text, AliasTarget::Table(table))?;
        scan.removed.push(end);
        end += 1;
    }
    Ok(end)
}

fn record_alias(scan: &mut AliasScan, alias: &str, target: AliasTarget) -> Result<()> {
    let key = alias.to_lowercase();
    if let Some(existing) = scan.aliases.get(&key) {
        if *existing != target {
            return Err(Error::Normalize(format!(
                "alias `{key}` defined more than once with different targets"
            )));
        }
        return Ok(());
    }
    scan.aliases.insert(key, target);
    Ok(())
}

/// Apply the four normalization rules and return the canonical
/// single-space-separated form.
///
/// Table aliases are resolved to original names and their definitions
/// dropped; derived-table aliases are kept. An alias-style qualifier that
/// matches no defined alias, FROM-mentioned table, or catalog table aborts
/// normalization.
pub fn normalize_sql(sql: &str, catalog: &SchemaCatalog) -> Result<String> {
    let stream = tokenize(sql)?;
    let mut tokens = stream.tokens;

    // Rule 3: lower-case all text.
    for t in &mut tokens {
        t.text = t.text.to_lowercase();
    }

    let scan = scan_aliases(&tokens)?;

    // Rule 1: drop alias definitions and rewrite references.
    let mut unresolved: Vec<String> = Vec::new();
    let mut kept: Vec<Token> = Vec::new();
    for (i, mut t) in tokens.into_iter().enumerate() {
        if scan.removed.contains(&i) {
            continue;
        }
        if t.kind == TokenKind::Identifier {
            if let Some((qualifier, rest)) = t.text.split_once('.') {
                match scan.aliases.get(qualifier) {
                    Some(AliasTarget::Table(table)) => {
                        t.text = format!("{table}.{rest}");
                    }
                    Some(AliasTarget::Derived) => {}
                    None => {
                        let known = scan.from_tables.iter().any(|ft| ft == qualifier)
                            || catalog.table_by_name(qualifier).is_some();
                        if !known && !unresolved.contains(&qualifier.to_string()) {
                            unresolved.push(qualifier.to_string());
                        }
                    }
                }
            } else if let Some(AliasTarget::Table(table)) = scan.aliases.get(&t.text) {
                t.text = table.clone();
            }
        }
        kept.push(t);
    }
    if !unresolved.is_empty() {
        return Err(Error::UnresolvedAlias { aliases: unresolved });
    }

    // Rule 2: make ORDER BY directions explicit.
    let tokens = insert_explicit_asc(kept);

    // Rule 4: single spaces around everything; double quotes become single.
    let rendered: Vec<String> = tokens
        .into_iter()
        .map(|t| {
            if t.kind == TokenKind::Literal && t.text.starts_with('"') && t.text.ends_with('"') {
                let inner = &t.text[1..t.text.len() - 1];
                format!("'{}'", inner.replace('\'', "''"))
            } else {
                t.text
            }
        })
        .collect();
    Ok(rendered.join(" "))
}

fn asc_token() -> Token {
    Token {
        kind: TokenKind::Keyword,
        text: "asc".into(),
        span: 0..0,
    }
}

fn insert_explicit_asc(tokens: Vec<Token>) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let in_order_by = tokens[i].is_keyword("order")
            && tokens.get(i + 1).map_or(false, |t| t.is_keyword("by"));
        out.push(tokens[i].clone());
        if !in_order_by {
            i += 1;
            continue;
        }
        out.push(tokens[i + 1].clone());
        i += 2;

        let mut depth = 0usize;
        let mut key_len = 0usize;
        let mut has_direction = false;
        while i < tokens.len() {
            let t = &tokens[i];
            if t.is_punct("(") {
                depth += 1;
            } else if t.is_punct(")") {
                if depth == 0 {
                    break; // end of enclosing subquery
                }
                depth -= 1;
            }
            if depth == 0 {
                if t.is_punct(",") {
                    if key_len > 0 && !has_direction {
                        out.push(asc_token());
                    }
                    key_len = 0;
                    has_direction = false;
                    out.push(t.clone());
                    i += 1;
                    continue;
                }
                if t.is_keyword("limit")
                    || t.is_keyword("intersect")
                    || t.is_keyword("union")
                    || t.is_keyword("except")
                {
                    break;
                }
                if t.is_keyword("asc") || t.is_keyword("desc") {
                    has_direction = true;
                }
            }
            key_len += 1;
            out.push(t.clone());
            i += 1;
        }
        if key_len > 0 && !has_direction {
            out.push(asc_token());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ColumnDef, SchemaCatalog, TableDef, ValueType};

    fn cat() -> SchemaCatalog {
        SchemaCatalog::new(
            "d",
            vec![
                TableDef {
                    name: "singer".into(),
                    columns: vec![
                        ColumnDef { name: "name".into(), value_type: ValueType::Text },
                        ColumnDef { name: "age".into(), value_type: ValueType::Number },
                    ],
                },
                TableDef {
                    name: "t".into(),
                    columns: vec![
                        ColumnDef { name: "a".into(), value_type: ValueType::Text },
                        ColumnDef { name: "age".into(), value_type: ValueType::Number },
                        ColumnDef { name: "name".into(), value_type: ValueType::Text },
                    ],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn alias_resolution_and_lowercase() {
        let out = normalize_sql("SELECT T1.name FROM singer AS T1", &cat()).unwrap();
        assert_eq!(out, "select singer.name from singer");
    }

    #[test]
    fn order_by_gets_asc() {
        let out = normalize_sql("SELECT name FROM t ORDER BY age", &cat()).unwrap();
        assert_eq!(out, "select name from t order by age asc");
    }

    #[test]
    fn parens_spaced_and_quotes_replaced() {
        let out = normalize_sql("SELECT count(*) FROM t WHERE a = \"x\"", &cat()).unwrap();
        assert_eq!(out, "select count ( * ) from t where a = 'x'");
    }

    #[test]
    fn multi_key_order_by() {
        let out = normalize_sql("select a from t order by a desc, age", &cat()).unwrap();
        assert_eq!(out, "select a from t order by a desc , age asc");
    }

    #[test]
    fn order_by_before_limit() {
        let out = normalize_sql("select a from t order by age limit 5", &cat()).unwrap();
        assert_eq!(out, "select a from t order by age asc limit 5");
    }

    #[test]
    fn undefined_alias_is_error() {
        let err = normalize_sql("select T2.name from singer as T1", &cat()).unwrap_err();
        match err {
            Error::UnresolvedAlias { aliases } => assert_eq!(aliases, vec!["t2".to_string()]),
            other => panic!("expected UnresolvedAlias, got {other}"),
        }
    }

    #[test]
    fn hallucinated_from_table_is_not_an_alias_error() {
        let out = normalize_sql("select warp.x from warp", &cat()).unwrap();
        assert_eq!(out, "select warp.x from warp");
    }

    #[test]
    fn derived_table_alias_kept() {
        let out = normalize_sql(
            "select c from (select count(*) as c from t) as sub",
            &cat(),
        )
        .unwrap();
        assert_eq!(out, "select c from ( select count ( * ) as c from t ) as sub");
    }

    #[test]
    fn implicit_alias_resolved() {
        let out = normalize_sql("select T1.name from singer T1", &cat()).unwrap();
        assert_eq!(out, "select singer.name from singer");
    }

    #[test]
    fn idempotent_on_own_output() {
        let inputs = [
            "SELECT T1.name FROM singer AS T1 JOIN t AS T2 ON T1.age = T2.age ORDER BY T1.name",
            "select count(*) from t where a = \"x y\" order by age desc",
        ];
        for sql in inputs {
            let once = normalize_sql(sql, &cat()).unwrap();
            let twice = normalize_sql(&once, &cat()).unwrap();
            assert_eq!(once, twice, "not idempotent for {sql}");
        }
    }

    #[test]
    fn subquery_order_by_scoped() {
        let out = normalize_sql(
            "select a from t where age > (select min(age) from t order by age) order by a",
            &cat(),
        )
        .unwrap();
        assert_eq!(
            out,
            "select a from t where age > ( select min ( age ) from t order by age asc ) order by a asc"
        );
    }
}
