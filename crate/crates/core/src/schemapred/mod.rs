//! Schema prediction: scoring catalog items for relevance to the corrected
//! parse, focal-loss training utilities, top-k truncation, and prediction
//! quality metrics.

mod classifier;

pub use classifier::{train_classifier, ClassifierState, TrainingCurve, TrainingRun};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{
    serialize_item_set, serialize_items_ordered, ColumnId, SchemaCatalog, SchemaItemSet, TableId,
};
use crate::corpus::{gold_items, CorrectionExample};
use crate::error::{Error, Result};
use crate::sqlkit;

/// Relevance scores in [0,1] for every catalog item.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaScores {
    pub table_scores: Vec<f64>,
    /// Per table, per column.
    pub column_scores: Vec<Vec<f64>>,
}

impl SchemaScores {
    pub fn zeros(catalog: &SchemaCatalog) -> Self {
        SchemaScores {
            table_scores: vec![0.0; catalog.table_count()],
            column_scores: catalog
                .tables()
                .iter()
                .map(|t| vec![0.0; t.columns.len()])
                .collect(),
        }
    }

    pub fn covers(&self, catalog: &SchemaCatalog) -> bool {
        self.table_scores.len() == catalog.table_count()
            && self.column_scores.len() == catalog.table_count()
            && self
                .column_scores
                .iter()
                .zip(catalog.tables())
                .all(|(scores, table)| scores.len() == table.columns.len())
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.table_scores.iter().all(|s| s.is_finite())
            && self.column_scores.iter().flatten().all(|s| s.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Domain("non-finite schema score".into()))
        }
    }
}

/// Binary presence labels for every catalog item, derived from gold items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaLabels {
    pub table_labels: Vec<bool>,
    pub column_labels: Vec<Vec<bool>>,
}

impl SchemaLabels {
    pub fn from_items(catalog: &SchemaCatalog, items: &SchemaItemSet) -> Self {
        SchemaLabels {
            table_labels: (0..catalog.table_count())
                .map(|t| items.contains_table(TableId(t)))
                .collect(),
            column_labels: catalog
                .tables()
                .iter()
                .enumerate()
                .map(|(t, table)| {
                    (0..table.columns.len())
                        .map(|c| items.contains_column(ColumnId { table: t, column: c }))
                        .collect()
                })
                .collect(),
        }
    }
}

/// Top-k truncation thresholds: keep `k1` tables and `k2` columns per kept
/// table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKConfig {
    pub k1: usize,
    pub k2: usize,
}

impl Default for TopKConfig {
    fn default() -> Self {
        TopKConfig { k1: 4, k2: 5 }
    }
}

impl TopKConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::Config("top-k thresholds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Focal loss parameters: the focusing exponent and an optional
/// positive-class balance weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_balance: Option<f64>,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        FocalLossParams {
            gamma: 2.0,
            class_balance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaSource {
    Lexical,
    Classifier,
    GeneratorText,
    Oracle,
}

impl fmt::Display for SchemaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaSource::Lexical => write!(f, "lexical"),
            SchemaSource::Classifier => write!(f, "classifier"),
            SchemaSource::GeneratorText => write!(f, "generator_text"),
            SchemaSource::Oracle => write!(f, "oracle"),
        }
    }
}

/// A schema prediction ready for input serialization.
#[derive(Debug, Clone)]
pub struct SchemaPrediction {
    pub items: SchemaItemSet,
    /// Score-ranked serialization; parses back to `items`.
    pub ranked_serialization: String,
    pub hallucinations: Vec<String>,
    pub source: SchemaSource,
}

impl SchemaPrediction {
    /// An empty prediction cannot be serialized; the pipeline falls back to
    /// the full flattened schema for such examples.
    pub fn is_unusable(&self) -> bool {
        self.items.is_empty()
    }
}

/// Focal loss of one score against a binary label:
/// `-(1 - p_t)^gamma * ln(p_t)` with `p_t = score` for positive labels and
/// `1 - score` otherwise. `gamma = 0` reduces to cross-entropy.
///
/// Scores exactly at 0 or 1 are a domain error; callers clamp.
pub fn focal_loss(score: f64, label: bool, params: &FocalLossParams) -> Result<f64> {
    if !(score > 0.0 && score < 1.0) {
        return Err(Error::Domain(format!(
            "focal loss requires a score strictly inside (0,1), got {score}"
        )));
    }
    if params.gamma < 0.0 {
        return Err(Error::Domain(format!(
            "gamma must be non-negative, got {}",
            params.gamma
        )));
    }
    let p_t = if label { score } else { 1.0 - score };
    let balance = match params.class_balance {
        Some(alpha) => {
            if label {
                alpha
            } else {
                1.0 - alpha
            }
        }
        None => 1.0,
    };
    Ok(-balance * (1.0 - p_t).powf(params.gamma) * p_t.ln())
}

/// The two-term batch loss: mean table focal loss plus mean column focal
/// loss, with the column mean over all M columns of the catalog.
pub fn batch_loss(
    scores: &SchemaScores,
    labels: &SchemaLabels,
    params: &FocalLossParams,
) -> Result<f64> {
    if scores.table_scores.len() != labels.table_labels.len()
        || scores.column_scores.len() != labels.column_labels.len()
        || scores
            .column_scores
            .iter()
            .zip(&labels.column_labels)
            .any(|(s, l)| s.len() != l.len())
    {
        return Err(Error::Coverage(
            "scores and labels cover different catalog shapes".into(),
        ));
    }
    scores.check_finite()?;
    let n = scores.table_scores.len();
    let m: usize = scores.column_scores.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::Coverage("empty catalog in batch loss".into()));
    }

    let mut table_sum = 0.0;
    for (s, &l) in scores.table_scores.iter().zip(&labels.table_labels) {
        table_sum += focal_loss(*s, l, params)?;
    }
    let mut column_sum = 0.0;
    for (col_scores, col_labels) in scores.column_scores.iter().zip(&labels.column_labels) {
        for (s, &l) in col_scores.iter().zip(col_labels) {
            column_sum += focal_loss(*s, l, params)?;
        }
    }
    let column_term = if m == 0 { 0.0 } else { column_sum / m as f64 };
    Ok(table_sum / n as f64 + column_term)
}

/// Split an item name into match parts (underscores split).
pub(crate) fn name_parts(name: &str) -> Vec<String> {
    name.to_lowercase()
        .split('_')
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

/// Word tokens of free text: runs of alphanumerics, underscores split.
pub(crate) fn text_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Fraction of name parts found among the text tokens. A part matches on
/// token equality, or containment either way when both sides are at least
/// four characters.
pub(crate) fn overlap(parts: &[String], tokens: &[String]) -> f64 {
    if parts.is_empty() {
        return 0.0;
    }
    let hits = parts
        .iter()
        .filter(|part| {
            tokens.iter().any(|tok| {
                tok == *part
                    || (part.len() >= 4 && tok.len() >= 4 && (tok.contains(part.as_str()) || part.contains(tok.as_str())))
            })
        })
        .count();
    hits as f64 / parts.len() as f64
}

/// Lexical-overlap baseline scorer.
///
/// Each item scores the normalized overlap between its name parts and the
/// concatenated question, feedback, and incorrect parse. Items that appear
/// verbatim in the incorrect parse get a score floor of 0.5.
pub fn predict_lexical(example: &CorrectionExample, catalog: &SchemaCatalog) -> SchemaScores {
    let text = format!(
        "{} {} {}",
        example.question, example.feedback, example.incorrect_parse
    );
    let tokens = text_tokens(&text);
    let parse_items = sqlkit::extract_schema_items(&example.incorrect_parse, catalog)
        .map(|(items, _)| items)
        .unwrap_or_default();

    let mut scores = SchemaScores::zeros(catalog);
    for (ti, table) in catalog.tables().iter().enumerate() {
        let mut s = overlap(&name_parts(&table.name), &tokens);
        if parse_items.contains_table(TableId(ti)) {
            s = s.max(0.5);
        }
        scores.table_scores[ti] = s;
        for (ci, col) in table.columns.iter().enumerate() {
            let mut cs = overlap(&name_parts(&col.name), &tokens);
            if parse_items.contains_column(ColumnId { table: ti, column: ci }) {
                cs = cs.max(0.5);
            }
            scores.column_scores[ti][ci] = cs;
        }
    }
    scores
}

/// Keep the top-k1 tables and, within each kept table, the top-k2 columns,
/// ranked by descending score with catalog order breaking ties.
pub fn truncate_top_k(
    scores: &SchemaScores,
    cfg: &TopKConfig,
    catalog: &SchemaCatalog,
    source: SchemaSource,
) -> Result<SchemaPrediction> {
    cfg.validate()?;
    if !scores.covers(catalog) {
        return Err(Error::Coverage(
            "scores do not cover the catalog".into(),
        ));
    }
    scores.check_finite()?;

    let mut ranked_tables: Vec<usize> = (0..catalog.table_count()).collect();
    ranked_tables.sort_by(|&a, &b| {
        scores.table_scores[b]
            .partial_cmp(&scores.table_scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    ranked_tables.truncate(cfg.k1);

    let mut items = SchemaItemSet::new();
    let mut kept_columns: BTreeMap<usize, Vec<ColumnId>> = BTreeMap::new();
    for &t in &ranked_tables {
        items.add_table(TableId(t));
        let mut cols: Vec<usize> = (0..catalog.tables()[t].columns.len()).collect();
        cols.sort_by(|&a, &b| {
            scores.column_scores[t][b]
                .partial_cmp(&scores.column_scores[t][a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        cols.truncate(cfg.k2);
        let ids: Vec<ColumnId> = cols
            .into_iter()
            .map(|c| ColumnId { table: t, column: c })
            .collect();
        for &id in &ids {
            items.add_column(id);
        }
        kept_columns.insert(t, ids);
    }

    let table_order: Vec<TableId> = ranked_tables.iter().map(|&t| TableId(t)).collect();
    let ranked_serialization =
        serialize_items_ordered(&catalog.db_id, catalog, &table_order, |t| {
            kept_columns.get(&t.0).cloned().unwrap_or_default()
        })?;

    Ok(SchemaPrediction {
        items,
        ranked_serialization,
        hallucinations: Vec::new(),
        source,
    })
}

/// Adapt generator-style text output (`db | table : col`) into a prediction.
///
/// Hallucinated identifiers are dropped from the item set but recorded, so
/// out-of-catalog items never reach serialized inputs. Never fails; an
/// unusable (empty) prediction is the worst case.
pub fn predict_from_generator_text(text: &str, catalog: &SchemaCatalog) -> SchemaPrediction {
    let (items, hallucinations) = crate::catalog::parse_item_set(text, catalog);
    let ranked_serialization = if items.is_empty() {
        String::new()
    } else {
        serialize_item_set(&catalog.db_id, &items, catalog)
            .expect("non-empty parsed items serialize")
    };
    SchemaPrediction {
        items,
        ranked_serialization,
        hallucinations,
        source: SchemaSource::GeneratorText,
    }
}

/// Gold-schema oracle prediction: exactly the items of the gold parse.
pub fn oracle_prediction(
    example: &CorrectionExample,
    catalogs: &BTreeMap<String, SchemaCatalog>,
) -> Result<SchemaPrediction> {
    let items = gold_items(example, catalogs)?;
    let catalog = &catalogs[&example.db_id];
    let ranked_serialization = serialize_item_set(&catalog.db_id, &items, catalog)?;
    Ok(SchemaPrediction {
        items,
        ranked_serialization,
        hallucinations: Vec::new(),
        source: SchemaSource::Oracle,
    })
}

/// Set precision/recall/F1 over the union of table and column items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn schema_prf1(pred: &SchemaItemSet, gold: &SchemaItemSet) -> Prf1 {
    if pred.is_empty() && gold.is_empty() {
        return Prf1 { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    if pred.is_empty() || gold.is_empty() {
        return Prf1 { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let overlap = pred.intersection(gold).len() as f64;
    let precision = overlap / pred.len() as f64;
    let recall = overlap / gold.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 { precision, recall, f1 }
}
