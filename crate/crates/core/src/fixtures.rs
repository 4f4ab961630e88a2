//! Materialize SQLite database files from a directory of seed SQL scripts.
//!
//! Layout: `<sql_dir>/<db_id>/main.sql` builds `<out_dir>/<db_id>/<db_id>.sqlite`
//! and every `<sql_dir>/<db_id>/variant_<k>.sql` builds a sibling
//! `variant_<k>.sqlite`. Keeping the corpus as SQL text makes the bundled
//! databases reproducible and diffable.

use std::path::{Path, PathBuf};

use rusqlite::Connection;

use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Build every database under `sql_dir` into `out_dir`, replacing existing
/// files. Returns the created database paths grouped as (db_id, main,
/// variants).
pub fn materialize_databases(
    sql_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<(String, PathBuf, Vec<PathBuf>)>> {
    let mut created = Vec::new();
    let mut db_dirs: Vec<PathBuf> = std::fs::read_dir(sql_dir)
        .map_err(io_err(sql_dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    db_dirs.sort();

    for db_dir in db_dirs {
        let db_id = db_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("bad fixture dir name: {}", db_dir.display())))?
            .to_string();
        let main_sql = db_dir.join("main.sql");
        if !main_sql.exists() {
            return Err(Error::Config(format!(
                "fixture db `{db_id}` has no main.sql"
            )));
        }
        let target_dir = out_dir.join(&db_id);
        std::fs::create_dir_all(&target_dir).map_err(io_err(&target_dir))?;

        let main_db = target_dir.join(format!("{db_id}.sqlite"));
        build_one(&main_sql, &main_db)?;

        let mut variants = Vec::new();
        let mut variant_sqls: Vec<PathBuf> = std::fs::read_dir(&db_dir)
            .map_err(io_err(&db_dir))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().map_or(false, |e| e == "sql")
                    && p.file_stem()
                        .and_then(|s| s.to_str())
                        .map_or(false, |s| s.starts_with("variant_"))
            })
            .collect();
        variant_sqls.sort();
        for variant_sql in variant_sqls {
            let stem = variant_sql.file_stem().unwrap().to_str().unwrap();
            let variant_db = target_dir.join(format!("{stem}.sqlite"));
            build_one(&variant_sql, &variant_db)?;
            variants.push(variant_db);
        }
        created.push((db_id, main_db, variants));
    }
    Ok(created)
}

fn build_one(sql_path: &Path, db_path: &Path) -> Result<()> {
    if db_path.exists() {
        std::fs::remove_file(db_path).map_err(io_err(db_path))?;
    }
    let script = std::fs::read_to_string(sql_path).map_err(io_err(sql_path))?;
    let conn = Connection::open(db_path)?;
    conn.execute_batch(&script)?;
    conn.close().map_err(|(_, e)| Error::Database(e))?;
    Ok(())
}

/// The databases available for one db_id under a databases directory:
/// `<dir>/<db_id>/<db_id>.sqlite` plus any `variant_*.sqlite` siblings.
pub fn database_variants(databases_dir: &Path, db_id: &str) -> Result<Vec<PathBuf>> {
    let dir = databases_dir.join(db_id);
    let main = dir.join(format!("{db_id}.sqlite"));
    if !main.exists() {
        return Err(Error::Config(format!(
            "no database for `{db_id}` at {}",
            main.display()
        )));
    }
    let mut all = vec![main];
    let mut variants: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().map_or(false, |e| e == "sqlite")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .map_or(false, |s| s.starts_with("variant_"))
        })
        .collect();
    variants.sort();
    all.extend(variants);
    Ok(all)
}
