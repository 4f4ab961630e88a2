//! Clause-component decomposition of Spider-subset SQL for exact set match.
//!
//! A query is broken into orderless per-clause atom collections with literal
//! values blanked to the sentinel `value`. Subqueries decompose recursively;
//! the carrying atom embeds the subquery's canonical fingerprint so that
//! multiset equality of atoms implies equality of the nested structure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::SchemaCatalog;
use crate::error::{Error, Result};

use super::token::{tokenize, Token, TokenKind};

pub const VALUE_SENTINEL: &str = "value";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetOp {
    Intersect,
    Union,
    Except,
}

impl fmt::Display for SetOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetOp::Intersect => write!(f, "intersect"),
            SetOp::Union => write!(f, "union"),
            SetOp::Except => write!(f, "except"),
        }
    }
}

/// Where a nested subquery hangs off its parent query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Attachment {
    FromClause,
    Where,
    Having,
    Join,
    Select,
    OrderBy,
}

impl fmt::Display for Attachment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Attachment::FromClause => "from",
            Attachment::Where => "where",
            Attachment::Having => "having",
            Attachment::Join => "join",
            Attachment::Select => "select",
            Attachment::OrderBy => "order",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    Asc,
    Desc,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Asc => write!(f, "asc"),
            Direction::Desc => write!(f, "desc"),
        }
    }
}

/// Per-clause counters needed by the Spider difficulty rules. Bookkeeping
/// only; excluded from equality.
#[derive(Debug, Clone, Default)]
pub struct ClauseStats {
    /// FROM units including duplicates and derived tables (joins = units - 1).
    pub from_unit_count: usize,
    /// Aggregation applications at this query level.
    pub agg_count: usize,
    pub or_count: usize,
    pub like_count: usize,
    /// WHERE predicates excluding `or` connective atoms.
    pub where_cond_count: usize,
}

/// A decomposed query: orderless clause component collections with values
/// blanked, plus recursive set-operation and subquery structure.
#[derive(Debug, Clone, Default)]
pub struct SqlComponents {
    pub select_items: BTreeMap<String, usize>,
    pub from_tables: BTreeSet<String>,
    pub join_conditions: BTreeSet<String>,
    pub where_predicates: BTreeMap<String, usize>,
    pub group_by: BTreeSet<String>,
    pub having: BTreeMap<String, usize>,
    pub order_by: Vec<(String, Direction)>,
    pub limit_present: bool,
    pub set_ops: Vec<(SetOp, SqlComponents)>,
    /// Distinct nested subqueries, sorted by (attachment, fingerprint).
    pub nested_subqueries: Vec<(Attachment, SqlComponents)>,
    /// Identifier atoms that did not resolve against the FROM scope/catalog.
    pub unresolved: BTreeSet<String>,
    pub stats: ClauseStats,
}

impl PartialEq for SqlComponents {
    fn eq(&self, other: &Self) -> bool {
        // Atoms embed subquery fingerprints, so comparing the clause fields
        // covers nested structure; stats/unresolved are bookkeeping.
        self.select_items == other.select_items
            && self.from_tables == other.from_tables
            && self.join_conditions == other.join_conditions
            && self.where_predicates == other.where_predicates
            && self.group_by == other.group_by
            && self.having == other.having
            && self.order_by == other.order_by
            && self.limit_present == other.limit_present
            && self.set_ops == other.set_ops
    }
}

impl Eq for SqlComponents {}

impl SqlComponents {
    /// Canonical injective rendering of the equality-relevant fields.
    pub fn fingerprint(&self) -> String {
        fn multiset(m: &BTreeMap<String, usize>) -> String {
            m.iter()
                .map(|(a, c)| format!("{a}*{c}"))
                .collect::<Vec<_>>()
                .join(";")
        }
        fn set(s: &BTreeSet<String>) -> String {
            s.iter().cloned().collect::<Vec<_>>().join(";")
        }
        let order = self
            .order_by
            .iter()
            .map(|(e, d)| format!("{e} {d}"))
            .collect::<Vec<_>>()
            .join(";");
        let ops = self
            .set_ops
            .iter()
            .map(|(op, c)| format!("{op}<{}>", c.fingerprint()))
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "S[{}]F[{}]J[{}]W[{}]G[{}]H[{}]O[{}]L[{}]P[{}]",
            multiset(&self.select_items),
            set(&self.from_tables),
            set(&self.join_conditions),
            multiset(&self.where_predicates),
            set(&self.group_by),
            multiset(&self.having),
            order,
            u8::from(self.limit_present),
            ops
        )
    }

    /// Flatten every component into a tagged atom multiset, recursing into
    /// set operations and nested subqueries. Two components flatten equal
    /// iff they compare equal.
    pub fn flatten(&self) -> BTreeMap<String, usize> {
        let mut atoms = BTreeMap::new();
        let mut add = |key: String, count: usize| {
            *atoms.entry(key).or_insert(0) += count;
        };
        for (a, c) in &self.select_items {
            add(format!("select::{a}"), *c);
        }
        for t in &self.from_tables {
            add(format!("from::{t}"), 1);
        }
        for j in &self.join_conditions {
            add(format!("join::{j}"), 1);
        }
        for (a, c) in &self.where_predicates {
            add(format!("where::{a}"), *c);
        }
        for g in &self.group_by {
            add(format!("group::{g}"), 1);
        }
        for (a, c) in &self.having {
            add(format!("having::{a}"), *c);
        }
        for (i, (e, d)) in self.order_by.iter().enumerate() {
            add(format!("order::{i}::{e} {d}"), 1);
        }
        if self.limit_present {
            add("limit".to_string(), 1);
        }
        for (i, (op, sub)) in self.set_ops.iter().enumerate() {
            for (a, c) in sub.flatten() {
                add(format!("setop::{i}::{op}::{a}"), c);
            }
        }
        for (att, sub) in &self.nested_subqueries {
            let fp = sub.fingerprint();
            for (a, c) in sub.flatten() {
                add(format!("sub::{att}::{fp}::{a}"), c);
            }
        }
        atoms
    }

    /// Deduplicate and sort nested subqueries so equal structures store
    /// identical lists.
    fn finalize(&mut self) {
        self.nested_subqueries
            .sort_by(|(a1, c1), (a2, c2)| (a1, c1.fingerprint()).cmp(&(a2, c2.fingerprint())));
        self.nested_subqueries
            .dedup_by(|(a1, c1), (a2, c2)| a1 == a2 && c1.fingerprint() == c2.fingerprint());
    }

    /// Total number of nested queries (subqueries plus set-op branches),
    /// as counted by the Spider difficulty rules.
    pub fn nested_query_count(&self) -> usize {
        self.nested_subqueries.len() + self.set_ops.len()
    }
}

/// Insertion/deletion counts between two decompositions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCount {
    pub insertions: usize,
    pub deletions: usize,
    pub total: usize,
}

/// Symmetric multiset difference over the flattened atom multisets.
/// Insertions are atoms in `gold` missing from `pred`; deletions the reverse.
pub fn count_edits(pred: &SqlComponents, gold: &SqlComponents) -> EditCount {
    let p = pred.flatten();
    let g = gold.flatten();
    let mut insertions = 0usize;
    let mut deletions = 0usize;
    for (atom, gc) in &g {
        let pc = p.get(atom).copied().unwrap_or(0);
        insertions += gc.saturating_sub(pc);
    }
    for (atom, pc) in &p {
        let gc = g.get(atom).copied().unwrap_or(0);
        deletions += pc.saturating_sub(gc);
    }
    EditCount {
        insertions,
        deletions,
        total: insertions + deletions,
    }
}

const AGGREGATES: &[&str] = &["count", "sum", "avg", "min", "max"];

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    catalog: &'a SchemaCatalog,
}

type Scope = Vec<(String, Option<String>)>; // (name in scope, aliased table)

/// Decompose a normalized query into clause components.
///
/// The input must be normalized first; uppercase keywords are rejected.
/// Constructs outside the Spider grammar subset (CTEs, CASE, window
/// functions, generic function calls) are decomposition errors.
pub fn decompose(sql: &str, catalog: &SchemaCatalog) -> Result<SqlComponents> {
    let stream = tokenize(sql)?;
    for t in &stream.tokens {
        if t.kind == TokenKind::Keyword && t.text.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(Error::Decompose(format!(
                "query is not normalized: uppercase keyword `{}`",
                t.text
            )));
        }
    }
    let mut tokens = stream.tokens;
    while tokens.last().map_or(false, |t| t.is_punct(";")) {
        tokens.pop();
    }
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        catalog,
    };
    let comp = parser.parse_query()?;
    if parser.pos != tokens.len() {
        return Err(Error::Decompose(format!(
            "trailing tokens after query: `{}`",
            parser.rest_preview()
        )));
    }
    Ok(comp)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Token> {
        self.tokens.get(self.pos + ahead)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek().map_or(false, |t| t.is_keyword(kw)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.peek().map_or(false, |t| t.is_punct(p)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(Error::Decompose(format!(
                "expected `{kw}` at `{}`",
                self.rest_preview()
            )))
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(Error::Decompose(format!(
                "expected `{p}` at `{}`",
                self.rest_preview()
            )))
        }
    }

    fn rest_preview(&self) -> String {
        self.tokens[self.pos.min(self.tokens.len())..]
            .iter()
            .take(6)
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn parse_query(&mut self) -> Result<SqlComponents> {
        let mut comp = self.parse_select_core()?;
        loop {
            let op = match self.peek() {
                Some(t) if t.is_keyword("intersect") => SetOp::Intersect,
                Some(t) if t.is_keyword("union") => SetOp::Union,
                Some(t) if t.is_keyword("except") => SetOp::Except,
                _ => break,
            };
            self.pos += 1;
            if self.peek().map_or(false, |t| t.is_keyword("all")) {
                return Err(Error::UnsupportedConstruct(format!("{op} all")));
            }
            let rhs = self.parse_select_core()?;
            comp.set_ops.push((op, rhs));
        }
        comp.finalize();
        Ok(comp)
    }

    fn parse_select_core(&mut self) -> Result<SqlComponents> {
        if self.peek().map_or(false, |t| t.is_keyword("with")) {
            return Err(Error::UnsupportedConstruct("with (common table expression)".into()));
        }
        self.expect_keyword("select")?;
        let mut comp = SqlComponents::default();
        let distinct = self.eat_keyword("distinct");

        // FROM scope is needed to resolve select-item identifiers; parse the
        // select list as raw token slices first, then render after FROM.
        let select_start = self.pos;
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            if t.is_punct("(") {
                depth += 1;
            } else if t.is_punct(")") {
                if depth == 0 {
                    break;
                }
                depth -= 1;
            } else if depth == 0 && t.is_keyword("from") {
                break;
            }
            self.pos += 1;
        }
        let select_end = self.pos;

        let mut scope: Scope = Vec::new();
        if self.eat_keyword("from") {
            self.parse_from(&mut comp, &mut scope)?;
        }

        // Re-parse the captured select list against the now-known scope.
        let saved = self.pos;
        self.pos = select_start;
        let mut items: Vec<String> = Vec::new();
        if select_start < select_end {
            loop {
                let (text, _) = self.parse_expr(&mut comp, &scope, Attachment::Select, select_end)?;
                items.push(text);
                if self.pos < select_end && self.peek().map_or(false, |t| t.is_punct(",")) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            if self.pos != select_end {
                return Err(Error::Decompose(format!(
                    "unexpected token in select list: `{}`",
                    self.rest_preview()
                )));
            }
        }
        if items.is_empty() {
            return Err(Error::Decompose("empty select list".into()));
        }
        for item in items {
            let atom = if distinct {
                format!("distinct {item}")
            } else {
                item
            };
            *comp.select_items.entry(atom).or_insert(0) += 1;
        }
        self.pos = saved;

        if self.eat_keyword("where") {
            let atoms = self.parse_condition_list(&mut comp, &scope, Attachment::Where)?;
            for atom in atoms {
                if atom == "or" {
                    comp.stats.or_count += 1;
                } else {
                    comp.stats.where_cond_count += 1;
                }
                *comp.where_predicates.entry(atom).or_insert(0) += 1;
            }
        }
        if self.eat_keyword("group") {
            self.expect_keyword("by")?;
            loop {
                let (text, _) =
                    self.parse_expr(&mut comp, &scope, Attachment::Select, self.tokens.len())?;
                comp.group_by.insert(text);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        if self.eat_keyword("having") {
            let atoms = self.parse_condition_list(&mut comp, &scope, Attachment::Having)?;
            for atom in atoms {
                if atom == "or" {
                    comp.stats.or_count += 1;
                }
                *comp.having.entry(atom).or_insert(0) += 1;
            }
        }
        if self.eat_keyword("order") {
            self.expect_keyword("by")?;
            loop {
                let (text, _) =
                    self.parse_expr(&mut comp, &scope, Attachment::OrderBy, self.tokens.len())?;
                let direction = if self.eat_keyword("desc") {
                    Direction::Desc
                } else {
                    self.eat_keyword("asc");
                    Direction::Asc
                };
                comp.order_by.push((text, direction));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        if self.eat_keyword("limit") {
            // The count is a value slot: presence matters, the number does not.
            self.bump()
                .ok_or_else(|| Error::Decompose("dangling limit".into()))?;
            comp.limit_present = true;
        }
        Ok(comp)
    }

    fn parse_from(&mut self, comp: &mut SqlComponents, scope: &mut Scope) -> Result<()> {
        self.parse_table_unit(comp, scope)?;
        loop {
            if self.eat_punct(",") {
                self.parse_table_unit(comp, scope)?;
                continue;
            }
            let mut saw_join = false;
            while self.peek().map_or(false, |t| {
                t.is_keyword("inner")
                    || t.is_keyword("left")
                    || t.is_keyword("right")
                    || t.is_keyword("full")
                    || t.is_keyword("outer")
                    || t.is_keyword("cross")
            }) {
                self.pos += 1;
                saw_join = true;
            }
            if self.eat_keyword("join") {
                saw_join = true;
            }
            if !saw_join {
                break;
            }
            self.parse_table_unit(comp, scope)?;
            if self.eat_keyword("on") {
                let atoms = self.parse_condition_list(comp, scope, Attachment::Join)?;
                for atom in atoms {
                    if atom == "or" {
                        comp.stats.or_count += 1;
                    }
                    comp.join_conditions.insert(atom);
                }
            }
        }
        Ok(())
    }

    fn parse_table_unit(&mut self, comp: &mut SqlComponents, scope: &mut Scope) -> Result<()> {
        if self.eat_punct("(") {
            let sub = self.parse_query()?;
            self.expect_punct(")")?;
            let fp = sub.fingerprint();
            comp.from_tables.insert(format!("(subquery {fp})"));
            comp.nested_subqueries.push((Attachment::FromClause, sub));
            comp.stats.from_unit_count += 1;
            if self.eat_keyword("as") {
                if let Some(alias) = self.peek().filter(|t| t.kind == TokenKind::Identifier) {
                    let alias = alias.text.clone();
                    scope.push((alias, None));
                    self.pos += 1;
                }
            } else if let Some(alias) = self.peek().filter(|t| {
                t.kind == TokenKind::Identifier && !t.text.contains('.')
            }) {
                let alias = alias.text.clone();
                scope.push((alias, None));
                self.pos += 1;
            }
            return Ok(());
        }
        let table = match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier && !t.text.contains('.') => t.text.clone(),
            _ => {
                return Err(Error::Decompose(format!(
                    "expected table name at `{}`",
                    self.rest_preview()
                )))
            }
        };
        self.pos += 1;
        comp.from_tables.insert(table.clone());
        comp.stats.from_unit_count += 1;
        if self.catalog.table_by_name(&table).is_none() {
            comp.unresolved.insert(table.clone());
        }
        scope.push((table.clone(), Some(table.clone())));
        if self.eat_keyword("as") {
            if let Some(alias) = self.peek().filter(|t| t.kind == TokenKind::Identifier) {
                let alias = alias.text.clone();
                scope.push((alias, Some(table)));
                self.pos += 1;
            }
        } else if let Some(alias) = self
            .peek()
            .filter(|t| t.kind == TokenKind::Identifier && !t.text.contains('.'))
        {
            let alias = alias.text.clone();
            scope.push((alias, Some(table)));
            self.pos += 1;
        }
        Ok(())
    }

    fn parse_condition_list(
        &mut self,
        comp: &mut SqlComponents,
        scope: &Scope,
        attachment: Attachment,
    ) -> Result<Vec<String>> {
        let mut atoms = Vec::new();
        loop {
            let atom = self.parse_predicate(comp, scope, attachment)?;
            atoms.push(atom);
            if self.eat_keyword("and") {
                continue;
            }
            if self.eat_keyword("or") {
                atoms.push("or".to_string());
                continue;
            }
            break;
        }
        Ok(atoms)
    }

    fn parse_predicate(
        &mut self,
        comp: &mut SqlComponents,
        scope: &Scope,
        attachment: Attachment,
    ) -> Result<String> {
        if self.peek().map_or(false, |t| t.is_keyword("not"))
            && self.peek_at(1).map_or(false, |t| t.is_keyword("exists"))
        {
            self.pos += 2;
            let sub = self.parse_subquery_in_parens(comp, attachment)?;
            return Ok(format!("not exists ( {sub} )"));
        }
        if self.eat_keyword("exists") {
            let sub = self.parse_subquery_in_parens(comp, attachment)?;
            return Ok(format!("exists ( {sub} )"));
        }

        let (lhs, _) = self.parse_expr(comp, scope, attachment, self.tokens.len())?;

        if self.eat_keyword("is") {
            let negated = self.eat_keyword("not");
            self.expect_keyword("null")?;
            return Ok(if negated {
                format!("{lhs} is not null")
            } else {
                format!("{lhs} is null")
            });
        }

        let negated = self.eat_keyword("not");
        if self.eat_keyword("between") {
            let low = self.parse_value_term(comp, scope, attachment)?;
            self.expect_keyword("and")?;
            let high = self.parse_value_term(comp, scope, attachment)?;
            let kw = if negated { "not between" } else { "between" };
            return Ok(format!("{lhs} {kw} {low} and {high}"));
        }
        if self.eat_keyword("in") {
            self.expect_punct("(")?;
            if self.peek().map_or(false, |t| t.is_keyword("select")) {
                let sub = self.parse_query()?;
                self.expect_punct(")")?;
                let fp = sub.fingerprint();
                comp.nested_subqueries.push((attachment, sub));
                let kw = if negated { "not in" } else { "in" };
                return Ok(format!("{lhs} {kw} ( subquery {fp} )"));
            }
            // Literal list: a value slot regardless of arity.
            loop {
                let t = self
                    .bump()
                    .ok_or_else(|| Error::Decompose("unterminated in-list".into()))?;
                if t.is_punct(")") {
                    break;
                }
            }
            let kw = if negated { "not in" } else { "in" };
            return Ok(format!("{lhs} {kw} ( {VALUE_SENTINEL} )"));
        }
        if self.eat_keyword("like") {
            comp.stats.like_count += 1;
            let rhs = self.parse_value_term(comp, scope, attachment)?;
            let kw = if negated { "not like" } else { "like" };
            return Ok(format!("{lhs} {kw} {rhs}"));
        }
        if negated {
            return Err(Error::Decompose(format!(
                "expected between/in/like after `not` at `{}`",
                self.rest_preview()
            )));
        }

        let op = match self.peek() {
            Some(t)
                if t.kind == TokenKind::Operator
                    && matches!(t.text.as_str(), "=" | "!=" | "<>" | "<" | ">" | "<=" | ">=") =>
            {
                t.text.clone()
            }
            _ => {
                return Err(Error::Decompose(format!(
                    "expected predicate operator at `{}`",
                    self.rest_preview()
                )))
            }
        };
        self.pos += 1;
        let rhs = self.parse_value_term(comp, scope, attachment)?;
        Ok(format!("{lhs} {op} {rhs}"))
    }

    fn parse_subquery_in_parens(
        &mut self,
        comp: &mut SqlComponents,
        attachment: Attachment,
    ) -> Result<String> {
        self.expect_punct("(")?;
        let sub = self.parse_query()?;
        self.expect_punct(")")?;
        let fp = sub.fingerprint();
        comp.nested_subqueries.push((attachment, sub));
        Ok(format!("subquery {fp}"))
    }

    /// A comparison value slot: literals blank to the sentinel, subqueries
    /// embed their fingerprint, anything else renders as an expression.
    fn parse_value_term(
        &mut self,
        comp: &mut SqlComponents,
        scope: &Scope,
        attachment: Attachment,
    ) -> Result<String> {
        if self.peek().map_or(false, |t| t.is_punct("("))
            && self.peek_at(1).map_or(false, |t| t.is_keyword("select"))
        {
            let sub = self.parse_subquery_in_parens(comp, attachment)?;
            return Ok(format!("( {sub} )"));
        }
        let (text, is_literal) = self.parse_expr(comp, scope, attachment, self.tokens.len())?;
        if is_literal {
            Ok(VALUE_SENTINEL.to_string())
        } else {
            Ok(text)
        }
    }

    /// Scalar expression: term {arith-op term}. Returns the rendered text and
    /// whether the whole expression is one bare literal.
    fn parse_expr(
        &mut self,
        comp: &mut SqlComponents,
        scope: &Scope,
        attachment: Attachment,
        end: usize,
    ) -> Result<(String, bool)> {
        let (mut text, mut is_literal) = self.parse_term(comp, scope, attachment, end)?;
        loop {
            if self.pos >= end {
                break;
            }
            let cont = match self.peek() {
                Some(t)
                    if t.kind == TokenKind::Operator
                        && matches!(t.text.as_str(), "+" | "-" | "*" | "/" | "%") =>
                {
                    t.text.clone()
                }
                _ => break,
            };
            self.pos += 1;
            let (rhs, _) = self.parse_term(comp, scope, attachment, end)?;
            text = format!("{text} {cont} {rhs}");
            is_literal = false;
        }
        Ok((text, is_literal))
    }

    fn parse_term(
        &mut self,
        comp: &mut SqlComponents,
        scope: &Scope,
        attachment: Attachment,
        end: usize,
    ) -> Result<(String, bool)> {
        if self.pos >= end {
            return Err(Error::Decompose("expected expression".into()));
        }
        let tok = self.peek().cloned().ok_or_else(|| {
            Error::Decompose("expected expression at end of input".into())
        })?;

        match tok.kind {
            TokenKind::Literal => {
                self.pos += 1;
                Ok((tok.text, true))
            }
            TokenKind::Operator if tok.text == "*" => {
                self.pos += 1;
                Ok(("*".to_string(), false))
            }
            TokenKind::Operator if tok.text == "-" => {
                // Unary minus folds into a literal value.
                self.pos += 1;
                let (inner, is_literal) = self.parse_term(comp, scope, attachment, end)?;
                if is_literal {
                    Ok((format!("-{inner}"), true))
                } else {
                    Ok((format!("- {inner}"), false))
                }
            }
            TokenKind::Keyword if AGGREGATES.contains(&tok.text.as_str()) => {
                comp.stats.agg_count += 1;
                self.pos += 1;
                self.expect_punct("(")?;
                let distinct = self.eat_keyword("distinct");
                let inner = if self.peek().map_or(false, |t| t.is_operator("*")) {
                    self.pos += 1;
                    "*".to_string()
                } else {
                    let (inner, _) = self.parse_expr(comp, scope, attachment, self.tokens.len())?;
                    inner
                };
                self.expect_punct(")")?;
                let body = if distinct {
                    format!("distinct {inner}")
                } else {
                    inner
                };
                Ok((format!("{} ( {} )", tok.text, body), false))
            }
            TokenKind::Keyword if tok.text == "case" || tok.text == "when" => {
                Err(Error::UnsupportedConstruct("case when".into()))
            }
            TokenKind::Keyword if tok.text == "over" => {
                Err(Error::UnsupportedConstruct("window function".into()))
            }
            TokenKind::Keyword if tok.text == "cast" => {
                Err(Error::UnsupportedConstruct("cast".into()))
            }
            TokenKind::Keyword if tok.text == "null" => {
                self.pos += 1;
                Ok(("null".to_string(), true))
            }
            TokenKind::Identifier => {
                if self.peek_at(1).map_or(false, |t| t.is_punct("(")) {
                    return Err(Error::UnsupportedConstruct(format!(
                        "function `{}`",
                        tok.text
                    )));
                }
                self.pos += 1;
                let resolved = self.resolve_identifier(&tok.text, scope, comp);
                Ok((resolved, false))
            }
            TokenKind::Punctuation if tok.text == "(" => {
                self.pos += 1;
                if self.peek().map_or(false, |t| t.is_keyword("select")) {
                    let sub = self.parse_query()?;
                    self.expect_punct(")")?;
                    let fp = sub.fingerprint();
                    comp.nested_subqueries.push((attachment, sub));
                    return Ok((format!("( subquery {fp} )"), false));
                }
                let (inner, _) = self.parse_expr(comp, scope, attachment, self.tokens.len())?;
                self.expect_punct(")").map_err(|_| {
                    Error::UnsupportedConstruct("parenthesized condition group".into())
                })?;
                Ok((format!("( {inner} )"), false))
            }
            _ => Err(Error::Decompose(format!(
                "unexpected token `{}` in expression",
                tok.text
            ))),
        }
    }

    /// Resolve an identifier against the FROM scope, rewriting scope aliases
    /// and recording unresolvable names.
    fn resolve_identifier(&self, name: &str, scope: &Scope, comp: &mut SqlComponents) -> String {
        if let Some((qualifier, rest)) = name.split_once('.') {
            for (scope_name, target) in scope {
                if scope_name == qualifier {
                    return match target {
                        Some(table) => {
                            let resolved = format!("{table}.{rest}");
                            self.check_column(table, rest, &resolved, comp);
                            resolved
                        }
                        None => name.to_string(), // derived-table alias
                    };
                }
            }
            if self.catalog.table_by_name(qualifier).is_some() {
                let resolved = name.to_string();
                self.check_column(qualifier, rest, &resolved, comp);
                return resolved;
            }
            comp.unresolved.insert(name.to_string());
            return name.to_string();
        }
        // Unqualified: resolvable if any scoped real table has the column.
        let resolvable = scope.iter().any(|(_, target)| {
            target.as_deref().map_or(false, |table| {
                self.catalog
                    .table_by_name(table)
                    .map_or(false, |tid| self.catalog.column_by_name(tid, name).is_some())
            })
        });
        // Derived-table outputs cannot be checked against the catalog.
        let has_derived = scope.iter().any(|(_, target)| target.is_none());
        if !resolvable && !has_derived {
            comp.unresolved.insert(name.to_string());
        }
        name.to_string()
    }

    fn check_column(&self, table: &str, column: &str, rendered: &str, comp: &mut SqlComponents) {
        if column == "*" {
            return;
        }
        let ok = self
            .catalog
            .table_by_name(table)
            .map_or(false, |tid| self.catalog.column_by_name(tid, column).is_some());
        if !ok {
            comp.unresolved.insert(rendered.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ColumnDef, SchemaCatalog, TableDef, ValueType};

    fn cat() -> SchemaCatalog {
        SchemaCatalog::new(
            "d",
            vec![TableDef {
                name: "t".into(),
                columns: vec![
                    ColumnDef { name: "a".into(), value_type: ValueType::Text },
                    ColumnDef { name: "b".into(), value_type: ValueType::Text },
                    ColumnDef { name: "name".into(), value_type: ValueType::Text },
                    ColumnDef { name: "age".into(), value_type: ValueType::Number },
                    ColumnDef { name: "val".into(), value_type: ValueType::Number },
                ],
            }],
        )
        .unwrap()
    }

    #[test]
    fn select_order_is_ignored() {
        let c = cat();
        let a = decompose("select a , b from t", &c).unwrap();
        let b = decompose("select b , a from t", &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn values_are_blanked() {
        let c = cat();
        let a = decompose("select name from t where age = 5", &c).unwrap();
        let b = decompose("select name from t where age = 99", &c).unwrap();
        assert_eq!(a, b);
        assert!(a.where_predicates.contains_key("age = value"));
    }

    #[test]
    fn case_when_is_unsupported() {
        let c = cat();
        let err = decompose("select case when a = 1 then 2 else 3 end from t", &c).unwrap_err();
        assert!(matches!(err, Error::UnsupportedConstruct(_)), "{err}");
    }

    #[test]
    fn uppercase_keyword_rejected() {
        let c = cat();
        let err = decompose("SELECT a from t", &c).unwrap_err();
        assert!(err.to_string().contains("not normalized"), "{err}");
    }

    #[test]
    fn order_by_direction_matters() {
        let c = cat();
        let asc = decompose("select a from t order by val asc", &c).unwrap();
        let desc = decompose("select a from t order by val desc", &c).unwrap();
        assert_ne!(asc, desc);
    }

    #[test]
    fn limit_value_is_blanked() {
        let c = cat();
        let one = decompose("select a from t limit 1", &c).unwrap();
        let five = decompose("select a from t limit 5", &c).unwrap();
        assert_eq!(one, five);
        assert!(one.limit_present);
        let none = decompose("select a from t", &c).unwrap();
        assert_ne!(one, none);
    }

    #[test]
    fn em_witness_pair_differs() {
        let c = cat();
        let a = decompose("select name from t order by val asc limit 1", &c).unwrap();
        let b = decompose("select max ( val ) from t", &c).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn subquery_structure_compared() {
        let c = cat();
        let a = decompose("select a from t where age > ( select avg ( age ) from t )", &c).unwrap();
        let b = decompose("select a from t where age > ( select avg ( val ) from t )", &c).unwrap();
        assert_ne!(a, b);
        let a2 =
            decompose("select a from t where age > ( select avg ( age ) from t )", &c).unwrap();
        assert_eq!(a, a2);
        assert_eq!(a.nested_subqueries.len(), 1);
    }

    #[test]
    fn set_op_queries() {
        let c = cat();
        let q = decompose("select a from t intersect select b from t", &c).unwrap();
        assert_eq!(q.set_ops.len(), 1);
        assert_eq!(q.set_ops[0].0, SetOp::Intersect);
        assert_eq!(q.nested_query_count(), 1);
    }

    #[test]
    fn or_atoms_distinguish_connectives() {
        let c = cat();
        let and_q = decompose("select a from t where age = 1 and val = 2", &c).unwrap();
        let or_q = decompose("select a from t where age = 1 or val = 2", &c).unwrap();
        assert_ne!(and_q, or_q);
        assert_eq!(or_q.stats.or_count, 1);
    }

    #[test]
    fn edit_count_zero_iff_equal() {
        let c = cat();
        let a = decompose("select a from t where age = 1", &c).unwrap();
        let b = decompose("select a from t where age = 1 and val = 2", &c).unwrap();
        assert_eq!(count_edits(&a, &a).total, 0);
        let edits = count_edits(&a, &b);
        assert_eq!(edits.insertions, 1);
        assert_eq!(edits.deletions, 0);
        let back = count_edits(&b, &a);
        assert_eq!(back.insertions, 0);
        assert_eq!(back.deletions, 1);
    }

    #[test]
    fn missing_where_predicate_counts_one_insertion() {
        let c = cat();
        let gold = decompose("select a from t where age = 1 and val = 2", &c).unwrap();
        let pred = decompose("select a from t where age = 1", &c).unwrap();
        let e = count_edits(&pred, &gold);
        assert_eq!((e.insertions, e.deletions, e.total), (1, 0, 1));
    }

    #[test]
    fn unresolved_identifiers_recorded() {
        let c = cat();
        let q = decompose("select warp from t", &c).unwrap();
        assert!(q.unresolved.contains("warp"));
    }

    #[test]
    fn in_list_is_single_value_slot() {
        let c = cat();
        let a = decompose("select a from t where age in ( 1 , 2 )", &c).unwrap();
        let b = decompose("select a from t where age in ( 3 , 4 , 5 )", &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_folds_into_atom() {
        let c = cat();
        let q = decompose("select distinct name from t", &c).unwrap();
        assert!(q.select_items.contains_key("distinct name"));
    }
}
