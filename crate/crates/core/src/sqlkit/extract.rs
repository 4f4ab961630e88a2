//! Token-level schema item extraction.
//!
//! Works on any lexable query, including malformed model outputs that do not
//! decompose: tables are read from FROM/JOIN positions, columns from
//! qualified names and scope-resolvable bare identifiers. Identifiers that
//! match nothing in the catalog are collected as hallucinations.

use crate::catalog::{SchemaCatalog, SchemaItemSet, TableId};
use crate::error::Result;

use super::components::VALUE_SENTINEL;
use super::normalize::{scan_aliases, AliasTarget};
use super::token::{tokenize, TokenKind};

/// Extract the schema items referenced by a query.
///
/// Never fails beyond tokenization. Alias references that cannot be resolved
/// become hallucinations rather than errors, unlike [`super::normalize_sql`].
pub fn extract_schema_items(
    sql: &str,
    catalog: &SchemaCatalog,
) -> Result<(SchemaItemSet, Vec<String>)> {
    let stream = tokenize(sql)?;
    let mut tokens = stream.tokens;
    for t in &mut tokens {
        t.text = t.text.to_lowercase();
    }
    // A failed alias scan (unbalanced parens, conflicting aliases) leaves us
    // with no alias knowledge but extraction still proceeds token-wise.
    let scan = scan_aliases(&tokens).unwrap_or_default();

    let mut items = SchemaItemSet::new();
    let mut hallucinations = Vec::new();

    // Tables come from FROM/JOIN positions only.
    let mut scope_tables: Vec<TableId> = Vec::new();
    for &idx in &scan.from_table_indices {
        let name = &tokens[idx].text;
        match catalog.table_by_name(name) {
            Some(tid) => {
                items.add_table(tid);
                if !scope_tables.contains(&tid) {
                    scope_tables.push(tid);
                }
            }
            None => hallucinations.push(name.clone()),
        }
    }

    // Select-output aliases (`count(*) as c`) are not schema items, and
    // neither are later references to them.
    let mut output_aliases: Vec<String> = Vec::new();
    for i in 1..tokens.len() {
        if tokens[i].kind == TokenKind::Identifier
            && tokens[i - 1].is_keyword("as")
            && !scan.removed.contains(&i)
        {
            output_aliases.push(tokens[i].text.clone());
        }
    }

    for (i, tok) in tokens.iter().enumerate() {
        if tok.kind != TokenKind::Identifier
            || scan.removed.contains(&i)
            || scan.from_table_indices.contains(&i)
        {
            continue;
        }
        if i > 0 && tokens[i - 1].is_keyword("as") {
            continue;
        }
        let text = &tok.text;
        if let Some((qualifier, column)) = text.split_once('.') {
            let table_name = match scan.aliases.get(qualifier) {
                Some(AliasTarget::Table(t)) => t.clone(),
                Some(AliasTarget::Derived) => continue,
                None => qualifier.to_string(),
            };
            match catalog.table_by_name(&table_name) {
                Some(tid) => {
                    if column == "*" {
                        items.add_table(tid);
                        continue;
                    }
                    match catalog.column_by_name(tid, column) {
                        Some(cid) => items.add_column(cid),
                        None => hallucinations.push(format!("{table_name}.{column}")),
                    }
                }
                None => hallucinations.push(format!("{table_name}.{column}")),
            }
            continue;
        }
        // Bare identifier: skip alias references, output aliases, and the
        // value-blanking placeholder some parsers emit.
        if scan.aliases.contains_key(text)
            || output_aliases.contains(text)
            || text == VALUE_SENTINEL
        {
            continue;
        }
        let resolved = scope_tables
            .iter()
            .find_map(|&tid| catalog.column_by_name(tid, text));
        match resolved {
            Some(cid) => items.add_column(cid),
            None => hallucinations.push(text.clone()),
        }
    }

    Ok((items, hallucinations))
}
