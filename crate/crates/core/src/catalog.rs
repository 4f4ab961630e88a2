//! Relational schema catalogs and their flattened text serializations.
//!
//! Catalogs are loaded from the Spider `tables.json` layout and are immutable
//! afterwards, so they can be shared freely across evaluation workers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a table within its catalog. Stable and equal to source-file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableId(pub usize);

/// Index of a column within its table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnId {
    pub table: usize,
    pub column: usize,
}

/// Coarse value type of a column, as declared in the schema file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Text,
    Number,
    Time,
    Boolean,
    Other,
}

impl ValueType {
    fn from_spider(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "text" => ValueType::Text,
            "number" => ValueType::Number,
            "time" => ValueType::Time,
            "boolean" => ValueType::Boolean,
            _ => ValueType::Other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ColumnDef {
    /// Original, unnormalized column name.
    pub name: String,
    pub value_type: ValueType,
}

#[derive(Debug, Clone)]
pub struct TableDef {
    /// Original, unnormalized table name.
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

/// One database's tables and columns with stable ordering and a
/// case-insensitive name index.
#[derive(Debug, Clone)]
pub struct SchemaCatalog {
    pub db_id: String,
    tables: Vec<TableDef>,
    table_index: HashMap<String, TableId>,
    column_index: Vec<HashMap<String, usize>>,
    /// Foreign key pairs as (referencing, referenced) columns. Ingested for
    /// format fidelity; unused by the pipeline.
    foreign_keys: Vec<(ColumnId, ColumnId)>,
    primary_keys: Vec<ColumnId>,
}

impl SchemaCatalog {
    pub fn new(db_id: impl Into<String>, tables: Vec<TableDef>) -> Result<Self> {
        let db_id = db_id.into();
        let mut table_index = HashMap::new();
        let mut column_index = Vec::with_capacity(tables.len());
        for (ti, table) in tables.iter().enumerate() {
            if table.name.is_empty() {
                return Err(Error::Validation(format!(
                    "db `{db_id}`: table {ti} has an empty name"
                )));
            }
            if table.columns.is_empty() {
                return Err(Error::Validation(format!(
                    "db `{db_id}`: table `{}` has no columns",
                    table.name
                )));
            }
            let key = table.name.to_lowercase();
            if table_index.insert(key, TableId(ti)).is_some() {
                return Err(Error::Validation(format!(
                    "db `{db_id}`: duplicate table name `{}`",
                    table.name
                )));
            }
            let mut cols = HashMap::new();
            for (ci, col) in table.columns.iter().enumerate() {
                if col.name.is_empty() {
                    return Err(Error::Validation(format!(
                        "db `{db_id}`: table `{}` column {ci} has an empty name",
                        table.name
                    )));
                }
                if cols.insert(col.name.to_lowercase(), ci).is_some() {
                    return Err(Error::Validation(format!(
                        "db `{db_id}`: duplicate column name `{}` in table `{}`",
                        col.name, table.name
                    )));
                }
            }
            column_index.push(cols);
        }
        Ok(SchemaCatalog {
            db_id,
            tables,
            table_index,
            column_index,
            foreign_keys: Vec::new(),
            primary_keys: Vec::new(),
        })
    }

    pub fn tables(&self) -> &[TableDef] {
        &self.tables
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    /// Total number of columns across all tables (M = sum of n_i).
    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    pub fn table(&self, id: TableId) -> &TableDef {
        &self.tables[id.0]
    }

    pub fn column(&self, id: ColumnId) -> &ColumnDef {
        &self.tables[id.table].columns[id.column]
    }

    /// Case-insensitive table lookup.
    pub fn table_by_name(&self, name: &str) -> Option<TableId> {
        self.table_index.get(&name.to_lowercase()).copied()
    }

    /// Case-insensitive column lookup within a table.
    pub fn column_by_name(&self, table: TableId, name: &str) -> Option<ColumnId> {
        self.column_index[table.0]
            .get(&name.to_lowercase())
            .map(|&column| ColumnId {
                table: table.0,
                column,
            })
    }

    pub fn table_ids(&self) -> impl Iterator<Item = TableId> + '_ {
        (0..self.tables.len()).map(TableId)
    }

    pub fn column_ids(&self) -> impl Iterator<Item = ColumnId> + '_ {
        self.tables.iter().enumerate().flat_map(|(ti, t)| {
            (0..t.columns.len()).map(move |ci| ColumnId {
                table: ti,
                column: ci,
            })
        })
    }

    /// Foreign key column pairs, read-only.
    pub fn foreign_keys(&self) -> &[(ColumnId, ColumnId)] {
        &self.foreign_keys
    }

    /// Primary key columns, read-only.
    pub fn primary_keys(&self) -> &[ColumnId] {
        &self.primary_keys
    }
}

/// A set of schema items: tables plus (table, column) pairs.
///
/// Inserting a column always inserts its parent table, so the set is closed
/// under "column implies table" and serializes without orphan columns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaItemSet {
    tables: BTreeSet<TableId>,
    columns: BTreeSet<ColumnId>,
}

impl SchemaItemSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_table(&mut self, id: TableId) {
        self.tables.insert(id);
    }

    pub fn add_column(&mut self, id: ColumnId) {
        self.tables.insert(TableId(id.table));
        self.columns.insert(id);
    }

    pub fn tables(&self) -> &BTreeSet<TableId> {
        &self.tables
    }

    pub fn columns(&self) -> &BTreeSet<ColumnId> {
        &self.columns
    }

    pub fn contains_table(&self, id: TableId) -> bool {
        self.tables.contains(&id)
    }

    pub fn contains_column(&self, id: ColumnId) -> bool {
        self.columns.contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty() && self.columns.is_empty()
    }

    /// Item count: tables plus columns.
    pub fn len(&self) -> usize {
        self.tables.len() + self.columns.len()
    }

    /// Items present in `self` but not `other`.
    pub fn difference(&self, other: &SchemaItemSet) -> SchemaItemSet {
        SchemaItemSet {
            tables: self.tables.difference(&other.tables).copied().collect(),
            columns: self.columns.difference(&other.columns).copied().collect(),
        }
    }

    pub fn intersection(&self, other: &SchemaItemSet) -> SchemaItemSet {
        SchemaItemSet {
            tables: self.tables.intersection(&other.tables).copied().collect(),
            columns: self.columns.intersection(&other.columns).copied().collect(),
        }
    }

    /// Size of the symmetric difference against `other`.
    pub fn symmetric_distance(&self, other: &SchemaItemSet) -> usize {
        self.difference(other).len() + other.difference(self).len()
    }

    /// Human-readable item names (`table` and `table.column`), sorted.
    pub fn item_names(&self, catalog: &SchemaCatalog) -> Vec<String> {
        let mut names: Vec<String> = self
            .tables
            .iter()
            .map(|&t| catalog.table(t).name.to_lowercase())
            .collect();
        names.extend(self.columns.iter().map(|&c| {
            format!(
                "{}.{}",
                catalog.table(TableId(c.table)).name.to_lowercase(),
                catalog.column(c).name.to_lowercase()
            )
        }));
        names.sort();
        names
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Raw record shape of a Spider `tables.json` entry.
#[derive(Debug, Deserialize)]
struct SpiderSchemaRecord {
    db_id: String,
    table_names_original: Vec<String>,
    /// `[table_index, name]` pairs; index -1 marks the `*` pseudo-column.
    column_names_original: Vec<(i64, String)>,
    #[serde(default)]
    column_types: Vec<String>,
    #[serde(default)]
    foreign_keys: Vec<(i64, i64)>,
    #[serde(default)]
    primary_keys: Vec<i64>,
}

/// Load all catalogs from a Spider-layout `tables.json` file.
///
/// Returns a map from `db_id` to catalog. Duplicate `db_id`s, duplicate
/// table/column names, and dangling column references are validation errors.
pub fn load_catalogs(path: &Path) -> Result<BTreeMap<String, SchemaCatalog>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records: Vec<SpiderSchemaRecord> = serde_json::from_str(&text)
        .map_err(|e| Error::from_json(&path.display().to_string(), &text, &e))?;

    let mut catalogs = BTreeMap::new();
    for record in records {
        let catalog = catalog_from_record(record)?;
        let db_id = catalog.db_id.clone();
        if catalogs.insert(db_id.clone(), catalog).is_some() {
            return Err(Error::Validation(format!("duplicate db_id `{db_id}`")));
        }
    }
    Ok(catalogs)
}

fn catalog_from_record(record: SpiderSchemaRecord) -> Result<SchemaCatalog> {
    let mut tables: Vec<TableDef> = record
        .table_names_original
        .iter()
        .map(|name| TableDef {
            name: name.clone(),
            columns: Vec::new(),
        })
        .collect();

    // Spider's global column index space, including the `*` entry, is needed
    // to translate foreign/primary key references to (table, column) ids.
    let mut global_to_id: Vec<Option<ColumnId>> = Vec::with_capacity(record.column_names_original.len());
    for (gi, (ti, name)) in record.column_names_original.iter().enumerate() {
        if *ti < 0 {
            global_to_id.push(None);
            continue;
        }
        let ti = *ti as usize;
        let table = tables.get_mut(ti).ok_or_else(|| {
            Error::Validation(format!(
                "db `{}`: column `{}` references nonexistent table index {}",
                record.db_id, name, ti
            ))
        })?;
        let value_type = record
            .column_types
            .get(gi)
            .map(|t| ValueType::from_spider(t))
            .unwrap_or(ValueType::Other);
        global_to_id.push(Some(ColumnId {
            table: ti,
            column: table.columns.len(),
        }));
        table.columns.push(ColumnDef {
            name: name.clone(),
            value_type,
        });
    }

    let mut catalog = SchemaCatalog::new(record.db_id.clone(), tables)?;

    let resolve = |idx: i64| -> Option<ColumnId> {
        usize::try_from(idx).ok().and_then(|i| global_to_id.get(i).copied().flatten())
    };
    catalog.foreign_keys = record
        .foreign_keys
        .iter()
        .filter_map(|&(a, b)| Some((resolve(a)?, resolve(b)?)))
        .collect();
    catalog.primary_keys = record.primary_keys.iter().filter_map(|&k| resolve(k)).collect();
    Ok(catalog)
}

/// Render the flattened schema text: `table : col, col | table : col`,
/// lower-cased throughout.
pub fn serialize_schema(catalog: &SchemaCatalog) -> String {
    catalog
        .tables()
        .iter()
        .map(|t| {
            let cols = t
                .columns
                .iter()
                .map(|c| c.name.to_lowercase())
                .collect::<Vec<_>>()
                .join(", ");
            format!("{} : {}", t.name.to_lowercase(), cols)
        })
        .collect::<Vec<_>>()
        .join(" | ")
}

/// Serialize an item set in catalog order: `db_id | table : col, col | table`.
///
/// Tables with no selected columns render as the bare table name. Empty item
/// sets are rejected: a predictor that selects nothing is an upstream failure.
pub fn serialize_item_set(
    db_id: &str,
    items: &SchemaItemSet,
    catalog: &SchemaCatalog,
) -> Result<String> {
    if items.is_empty() {
        return Err(Error::Validation(format!(
            "db `{db_id}`: refusing to serialize an empty schema item set"
        )));
    }
    let mut table_order: Vec<TableId> = items.tables().iter().copied().collect();
    table_order.sort();
    let column_order = |t: TableId| {
        let mut cols: Vec<ColumnId> = items
            .columns()
            .iter()
            .copied()
            .filter(|c| c.table == t.0)
            .collect();
        cols.sort();
        cols
    };
    serialize_items_ordered(db_id, catalog, &table_order, column_order)
}

/// Serialize an item set with an explicit table ordering and per-table column
/// ordering (used for score-ranked serializations).
pub fn serialize_items_ordered(
    db_id: &str,
    catalog: &SchemaCatalog,
    table_order: &[TableId],
    mut column_order: impl FnMut(TableId) -> Vec<ColumnId>,
) -> Result<String> {
    let mut parts = vec![db_id.to_lowercase()];
    for &t in table_order {
        if t.0 >= catalog.table_count() {
            return Err(Error::Validation(format!(
                "table id {t} not in catalog `{}`",
                catalog.db_id
            )));
        }
        let name = catalog.table(t).name.to_lowercase();
        let cols = column_order(t);
        if cols.is_empty() {
            parts.push(name);
        } else {
            let rendered = cols
                .iter()
                .map(|&c| {
                    if c.table != t.0 || c.column >= catalog.table(t).columns.len() {
                        return Err(Error::Validation(format!(
                            "column id ({}, {}) not in catalog `{}`",
                            c.table, c.column, catalog.db_id
                        )));
                    }
                    Ok(catalog.column(c).name.to_lowercase())
                })
                .collect::<Result<Vec<_>>>()?
                .join(", ");
            parts.push(format!("{name} : {rendered}"));
        }
    }
    Ok(parts.join(" | "))
}

/// Parse generator-style item-set text back into catalog items.
///
/// Never fails: unrecognized tables and columns are collected as
/// hallucinations (columns qualified as `table.column`) and everything
/// recognizable is kept. Inverse of [`serialize_item_set`] on well-formed
/// input.
pub fn parse_item_set(text: &str, catalog: &SchemaCatalog) -> (SchemaItemSet, Vec<String>) {
    let mut items = SchemaItemSet::new();
    let mut hallucinations = Vec::new();

    let segments: Vec<&str> = text.split('|').map(str::trim).collect();
    for (i, segment) in segments.iter().enumerate() {
        if segment.is_empty() {
            continue;
        }
        let (table_part, columns_part) = match segment.split_once(':') {
            Some((t, c)) => (t.trim(), Some(c.trim())),
            None => (segment.trim(), None),
        };
        // The first segment is usually the db_id header; drop it silently
        // when it matches, otherwise fall through to table parsing so
        // headerless generator output still parses.
        if i == 0 && columns_part.is_none() && table_part.eq_ignore_ascii_case(&catalog.db_id) {
            continue;
        }
        match catalog.table_by_name(table_part) {
            Some(table) => {
                items.add_table(table);
                if let Some(cols) = columns_part {
                    for col in cols.split(',').map(str::trim).filter(|c| !c.is_empty()) {
                        match catalog.column_by_name(table, col) {
                            Some(id) => items.add_column(id),
                            None => hallucinations.push(format!(
                                "{}.{}",
                                catalog.table(table).name.to_lowercase(),
                                col
                            )),
                        }
                    }
                }
            }
            None => {
                if table_part.is_empty() {
                    continue;
                }
                hallucinations.push(table_part.to_string());
                if let Some(cols) = columns_part {
                    for col in cols.split(',').map(str::trim).filter(|c| !c.is_empty()) {
                        hallucinations.push(format!("{table_part}.{col}"));
                    }
                }
            }
        }
    }
    (items, hallucinations)
}
