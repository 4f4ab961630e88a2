//! Execution accuracy against read-only SQLite databases, single and
//! test-suite (all-variants conjunction) forms.

use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

use crate::error::{Error, Result};
use crate::sqlkit::{tokenize, TokenKind};

/// Relative tolerance for floating-point result cells; database numeric
/// functions differ in last-bit behavior across variants.
const FLOAT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn sort_key(&self) -> String {
        match self {
            Cell::Null => "n".to_string(),
            Cell::Int(v) => format!("r{:+.6e}", *v as f64),
            Cell::Real(v) => format!("r{:+.6e}", v),
            Cell::Text(s) => format!("t{s}"),
            Cell::Blob(b) => format!("b{b:02x?}"),
        }
    }

    fn matches(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Null, Cell::Null) => true,
            (Cell::Text(a), Cell::Text(b)) => a == b,
            (Cell::Blob(a), Cell::Blob(b)) => a == b,
            (Cell::Int(a), Cell::Int(b)) => a == b,
            (a, b) => match (a.as_number(), b.as_number()) {
                (Some(x), Some(y)) => {
                    (x - y).abs() <= FLOAT_REL_TOL * x.abs().max(y.abs()).max(1.0)
                }
                _ => false,
            },
        }
    }

    fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Real(v) => Some(*v),
            _ => None,
        }
    }
}

type Rows = Vec<Vec<Cell>>;

fn open_read_only(path: &Path) -> Result<Connection> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "database file does not exist: {}",
            path.display()
        )));
    }
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?;
    Ok(conn)
}

fn run_query(conn: &Connection, sql: &str, timeout: Duration) -> rusqlite::Result<Rows> {
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));
    let result = (|| {
        let mut stmt = conn.prepare(sql)?;
        let column_count = stmt.column_count();
        let mut rows = stmt.query([])?;
        let mut out: Rows = Vec::new();
        while let Some(row) = rows.next()? {
            let mut cells = Vec::with_capacity(column_count);
            for i in 0..column_count {
                let cell = match row.get_ref(i)? {
                    ValueRef::Null => Cell::Null,
                    ValueRef::Integer(v) => Cell::Int(v),
                    ValueRef::Real(v) => Cell::Real(v),
                    ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                    ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
                };
                cells.push(cell);
            }
            out.push(cells);
        }
        Ok(out)
    })();
    conn.progress_handler(0, None::<fn() -> bool>);
    result
}

/// True when the query has a top-level ORDER BY (outside any parentheses),
/// which makes result comparison order-sensitive.
fn has_top_level_order_by(sql: &str) -> bool {
    let Ok(stream) = tokenize(sql) else {
        return false;
    };
    let mut depth = 0usize;
    for t in &stream.tokens {
        match t.kind {
            TokenKind::Punctuation if t.text == "(" => depth += 1,
            TokenKind::Punctuation if t.text == ")" => depth = depth.saturating_sub(1),
            TokenKind::Keyword if depth == 0 && t.text.eq_ignore_ascii_case("order") => {
                return true;
            }
            _ => {}
        }
    }
    false
}

fn rows_match(pred: &Rows, gold: &Rows, order_sensitive: bool) -> bool {
    if pred.len() != gold.len() {
        return false;
    }
    if pred.iter().zip(gold).any(|(p, g)| p.len() != g.len()) {
        return false;
    }
    let compare = |p: &Rows, g: &Rows| {
        p.iter()
            .zip(g)
            .all(|(pr, gr)| pr.iter().zip(gr).all(|(pc, gc)| pc.matches(gc)))
    };
    if order_sensitive {
        return compare(pred, gold);
    }
    let sorted = |rows: &Rows| -> Rows {
        let mut sorted = rows.clone();
        sorted.sort_by_key(|row| {
            row.iter().map(Cell::sort_key).collect::<Vec<_>>().join("\x1f")
        });
        sorted
    };
    compare(&sorted(pred), &sorted(gold))
}

/// Compare pred and gold execution results on one database.
///
/// Both run read-only under a timeout. Result multisets compare
/// order-insensitively unless the gold query carries a top-level ORDER BY.
/// A pred execution error or timeout scores false; a gold execution error is
/// a data-integrity error.
pub fn execution_accuracy(
    pred_sql: &str,
    gold_sql: &str,
    database: &Path,
    timeout: Duration,
) -> Result<bool> {
    let conn = open_read_only(database)?;
    let gold_rows = run_query(&conn, gold_sql, timeout).map_err(|e| {
        Error::DataIntegrity(format!(
            "gold query failed on {}: {e} (`{gold_sql}`)",
            database.display()
        ))
    })?;
    let pred_rows = match run_query(&conn, pred_sql, timeout) {
        Ok(rows) => rows,
        Err(_) => return Ok(false),
    };
    Ok(rows_match(
        &pred_rows,
        &gold_rows,
        has_top_level_order_by(gold_sql),
    ))
}

/// Test-suite execution accuracy: the conjunction of [`execution_accuracy`]
/// over every database variant.
pub fn test_suite_execution(
    pred_sql: &str,
    gold_sql: &str,
    databases: &[impl AsRef<Path>],
    timeout: Duration,
) -> Result<bool> {
    if databases.is_empty() {
        return Err(Error::Config(
            "test-suite execution requires at least one database variant".into(),
        ));
    }
    for db in databases {
        if !execution_accuracy(pred_sql, gold_sql, db.as_ref(), timeout)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make_db(dir: &Path, name: &str, seed_sql: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(seed_sql).unwrap();
        path
    }

    const SEED: &str = "
        create table t (name text, val integer);
        insert into t values ('a', 42), ('b', 42), ('c', 42), ('d', 42), ('e', 42);
    ";

    #[test]
    fn order_by_limit_vs_max_executes_equal() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(dir.path(), "t.sqlite", SEED);
        let ok = execution_accuracy(
            "select val from t order by val asc limit 1",
            "select max ( val ) from t",
            &db,
            Duration::from_secs(5),
        )
        .unwrap();
        assert!(ok);
    }

    #[test]
    fn runtime_error_scores_false() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(dir.path(), "t.sqlite", SEED);
        let ok = execution_accuracy(
            "select nonexistent from t",
            "select val from t",
            &db,
            Duration::from_secs(5),
        )
        .unwrap();
        assert!(!ok);
    }

    #[test]
    fn gold_error_is_data_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(dir.path(), "t.sqlite", SEED);
        let err = execution_accuracy(
            "select val from t",
            "select nonexistent from t",
            &db,
            Duration::from_secs(5),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DataIntegrity(_)), "{err}");
    }

    #[test]
    fn writes_rejected_by_read_only_open() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(dir.path(), "t.sqlite", SEED);
        let before = std::fs::read(&db).unwrap();
        let ok = execution_accuracy(
            "insert into t values ('x', 1)",
            "select val from t",
            &db,
            Duration::from_secs(5),
        )
        .unwrap();
        assert!(!ok);
        assert_eq!(before, std::fs::read(&db).unwrap(), "db bytes changed");
    }

    #[test]
    fn order_sensitivity_keyed_on_gold() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(
            dir.path(),
            "t.sqlite",
            "create table t (v integer); insert into t values (1), (2);",
        );
        // Unordered gold: reversed results still match.
        let ok = execution_accuracy(
            "select v from t order by v desc",
            "select v from t",
            &db,
            Duration::from_secs(5),
        )
        .unwrap();
        assert!(ok);
        // Ordered gold: reversed results do not.
        let ok = execution_accuracy(
            "select v from t order by v desc",
            "select v from t order by v asc",
            &db,
            Duration::from_secs(5),
        )
        .unwrap();
        assert!(!ok);
    }

    #[test]
    fn suite_is_a_conjunction() {
        let dir = tempfile::tempdir().unwrap();
        let main = make_db(
            dir.path(),
            "main.sqlite",
            "create table t (a integer, b integer); insert into t values (1, 1), (2, 2);",
        );
        let variant = make_db(
            dir.path(),
            "variant_1.sqlite",
            "create table t (a integer, b integer); insert into t values (1, 9), (2, 8);",
        );
        let pred = "select a from t";
        let gold = "select b from t";
        assert!(execution_accuracy(pred, gold, &main, Duration::from_secs(5)).unwrap());
        assert!(!execution_accuracy(pred, gold, &variant, Duration::from_secs(5)).unwrap());
        assert!(!test_suite_execution(pred, gold, &[main.clone(), variant], Duration::from_secs(5))
            .unwrap());
        assert!(test_suite_execution(pred, gold, &[main], Duration::from_secs(5)).unwrap());
    }

    #[test]
    fn float_cells_compare_with_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(
            dir.path(),
            "t.sqlite",
            "create table t (v real); insert into t values (1.0), (2.0), (2.0);",
        );
        let ok = execution_accuracy(
            "select sum ( v ) / count ( * ) from t",
            "select avg ( v ) from t",
            &db,
            Duration::from_secs(5),
        )
        .unwrap();
        assert!(ok);
    }

    #[test]
    fn empty_results_match() {
        let dir = tempfile::tempdir().unwrap();
        let db = make_db(dir.path(), "t.sqlite", SEED);
        let ok = execution_accuracy(
            "select val from t where name = 'zzz'",
            "select val from t where val > 100",
            &db,
            Duration::from_secs(5),
        )
        .unwrap();
        assert!(ok);
    }
}
