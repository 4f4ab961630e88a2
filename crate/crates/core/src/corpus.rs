//! Correction dataset ingestion, validation, and feature shuffling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{SchemaCatalog, SchemaItemSet};
use crate::error::{Error, Result};
use crate::sqlkit;

/// One interaction item: a question, an incorrect parse, human feedback, and
/// the gold parse it should be corrected to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionExample {
    pub example_id: String,
    pub db_id: String,
    pub question: String,
    pub feedback: String,
    pub incorrect_parse: String,
    pub gold_parse: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Vec<String>>,
}

/// Which shuffleable feature a derangement applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleFeature {
    Feedback,
    IncorrectParse,
}

impl std::fmt::Display for ShuffleFeature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShuffleFeature::Feedback => write!(f, "feedback"),
            ShuffleFeature::IncorrectParse => write!(f, "incorrect_parse"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    /// Base parser whose errors this split records (e.g. seq2struct, t5-large).
    pub source_parser: String,
    pub examples: Vec<CorrectionExample>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Source-field names for the varying layouts of released test sets.
/// Values are the keys used in the input JSON; `example_id` may be absent,
/// in which case ids are synthesized from record position.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub example_id: String,
    pub db_id: String,
    pub question: String,
    pub feedback: String,
    pub incorrect_parse: String,
    pub gold_parse: String,
    pub explanation: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            example_id: "example_id".into(),
            db_id: "db_id".into(),
            question: "question".into(),
            feedback: "feedback".into(),
            incorrect_parse: "incorrect_parse".into(),
            gold_parse: "gold_parse".into(),
            explanation: "explanation".into(),
        }
    }
}

/// A per-example validation problem found while loading or checking a split.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub example_id: String,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

const SEPARATOR: &str = " | ";

fn get_str(record: &Value, key: &str, index: usize) -> Result<String> {
    match record.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(Error::Validation(format!(
            "record {index}: field `{key}` is not a string: {other}"
        ))),
        None => Err(Error::Validation(format!(
            "record {index}: missing field `{key}`"
        ))),
    }
}

fn get_explanation(record: &Value, key: &str, index: usize) -> Result<Option<Vec<String>>> {
    match record.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(vec![s.clone()])),
        Some(Value::Array(items)) => {
            let mut lines = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::String(s) => lines.push(s.clone()),
                    other => {
                        return Err(Error::Validation(format!(
                            "record {index}: explanation entry is not a string: {other}"
                        )))
                    }
                }
            }
            Ok(Some(lines))
        }
        Some(other) => Err(Error::Validation(format!(
            "record {index}: field `{key}` is neither string nor array: {other}"
        ))),
    }
}

/// Check one example against the corpus invariants. Errors make the example
/// unusable; warnings (separator collisions) only affect input injectivity.
pub fn validate_example(
    example: &CorrectionExample,
    catalogs: &BTreeMap<String, SchemaCatalog>,
) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut error = |message: String| {
        diags.push(Diagnostic {
            example_id: example.example_id.clone(),
            severity: Severity::Error,
            message,
        });
    };

    let Some(catalog) = catalogs.get(&example.db_id) else {
        error(format!("unknown db_id `{}`", example.db_id));
        return diags;
    };

    match sqlkit::normalize_sql(&example.gold_parse, catalog) {
        Ok(normalized) => {
            if let Err(e) = sqlkit::decompose(&normalized, catalog) {
                error(format!("gold parse does not decompose: {e}"));
            }
        }
        Err(e) => error(format!("gold parse does not normalize: {e}")),
    }
    if let Err(e) = sqlkit::tokenize(&example.incorrect_parse) {
        error(format!("incorrect parse does not tokenize: {e}"));
    }

    for (field, text) in [
        ("question", &example.question),
        ("feedback", &example.feedback),
        ("incorrect_parse", &example.incorrect_parse),
    ] {
        if text.contains(SEPARATOR) {
            diags.push(Diagnostic {
                example_id: example.example_id.clone(),
                severity: Severity::Warning,
                message: format!(
                    "field `{field}` contains the segment separator `{SEPARATOR}`; \
                     model inputs built from it are not injective"
                ),
            });
        }
    }
    diags
}

/// Load a correction split from a JSON array, validating every record.
///
/// Records that fail validation reject the whole load; the error lists the
/// offending example ids. Use [`validate_example`] directly for a
/// diagnostics-only pass.
pub fn load_split(
    path: &Path,
    catalogs: &BTreeMap<String, SchemaCatalog>,
    fields: &FieldMap,
    split_name: &str,
    source_parser: &str,
) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records: Vec<Value> = serde_json::from_str(&text)
        .map_err(|e| Error::from_json(&path.display().to_string(), &text, &e))?;

    let mut examples = Vec::with_capacity(records.len());
    let mut seen_ids = BTreeMap::new();
    for (index, record) in records.iter().enumerate() {
        let example_id = match record.get(&fields.example_id) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("ex{index:04}"),
        };
        if let Some(prev) = seen_ids.insert(example_id.clone(), index) {
            return Err(Error::Validation(format!(
                "duplicate example_id `{example_id}` (records {prev} and {index})"
            )));
        }
        examples.push(CorrectionExample {
            example_id,
            db_id: get_str(record, &fields.db_id, index)?,
            question: get_str(record, &fields.question, index)?,
            feedback: get_str(record, &fields.feedback, index)?,
            incorrect_parse: get_str(record, &fields.incorrect_parse, index)?,
            gold_parse: get_str(record, &fields.gold_parse, index)?,
            explanation: get_explanation(record, &fields.explanation, index)?,
        });
    }

    let mut failed: Vec<String> = Vec::new();
    for example in &examples {
        let diags = validate_example(example, catalogs);
        if diags.iter().any(|d| d.severity == Severity::Error) {
            let reasons = diags
                .iter()
                .filter(|d| d.severity == Severity::Error)
                .map(|d| d.message.clone())
                .collect::<Vec<_>>()
                .join("; ");
            failed.push(format!("{} ({reasons})", example.example_id));
        }
    }
    if !failed.is_empty() {
        return Err(Error::Validation(format!(
            "{} record(s) rejected: {}",
            failed.len(),
            failed.join(", ")
        )));
    }

    Ok(DatasetSplit {
        name: split_name.to_string(),
        source_parser: source_parser.to_string(),
        examples,
    })
}

/// Canonical re-serialization of a split (pretty JSON array of examples in
/// the canonical field names). `load_split` of the output round-trips.
pub fn save_split(split: &DatasetSplit, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(&split.examples).expect("examples serialize");
    std::fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Permute one feature across the split with a derangement: no example keeps
/// its own value. Deterministic in `seed`; all other fields untouched.
///
/// Uses Sattolo's algorithm, which draws a uniform cyclic permutation — every
/// cycle of length >= 2 is fixed-point free.
pub fn shuffle_feature(
    split: &DatasetSplit,
    feature: ShuffleFeature,
    seed: u64,
) -> Result<DatasetSplit> {
    let n = split.examples.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "cannot shuffle a split of {n} example(s); need at least 2"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        perm.swap(i, j);
    }

    let mut examples = split.examples.clone();
    for (i, example) in examples.iter_mut().enumerate() {
        let source = &split.examples[perm[i]];
        match feature {
            ShuffleFeature::Feedback => example.feedback = source.feedback.clone(),
            ShuffleFeature::IncorrectParse => {
                example.incorrect_parse = source.incorrect_parse.clone()
            }
        }
    }
    Ok(DatasetSplit {
        name: format!("{}+shuffled-{feature}", split.name),
        source_parser: split.source_parser.clone(),
        examples,
    })
}

/// The schema items appearing in an example's gold parse.
///
/// Gold parses are trusted: any hallucination is a data-integrity error.
pub fn gold_items(
    example: &CorrectionExample,
    catalogs: &BTreeMap<String, SchemaCatalog>,
) -> Result<SchemaItemSet> {
    let catalog = catalogs.get(&example.db_id).ok_or_else(|| {
        Error::Validation(format!(
            "example `{}`: unknown db_id `{}`",
            example.example_id, example.db_id
        ))
    })?;
    let normalized = sqlkit::normalize_sql(&example.gold_parse, catalog)?;
    let (items, hallucinations) = sqlkit::extract_schema_items(&normalized, catalog)?;
    if !hallucinations.is_empty() {
        return Err(Error::DataIntegrity(format!(
            "example `{}`: gold parse references unknown schema items: {}",
            example.example_id,
            hallucinations.join(", ")
        )));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ColumnDef, TableDef, ValueType};

    fn catalogs() -> BTreeMap<String, SchemaCatalog> {
        let mut map = BTreeMap::new();
        map.insert(
            "flight_2".to_string(),
            SchemaCatalog::new(
                "flight_2",
                vec![TableDef {
                    name: "flights".into(),
                    columns: vec![
                        ColumnDef { name: "id".into(), value_type: ValueType::Number },
                        ColumnDef { name: "sourceairport".into(), value_type: ValueType::Text },
                    ],
                }],
            )
            .unwrap(),
        );
        map
    }

    fn example(id: &str) -> CorrectionExample {
        CorrectionExample {
            example_id: id.into(),
            db_id: "flight_2".into(),
            question: format!("question {id}"),
            feedback: format!("feedback {id}"),
            incorrect_parse: "select id from flights".into(),
            gold_parse: "select sourceairport from flights".into(),
            explanation: None,
        }
    }

    fn split(n: usize) -> DatasetSplit {
        DatasetSplit {
            name: "test".into(),
            source_parser: "seq2struct".into(),
            examples: (0..n).map(|i| example(&format!("e{i}"))).collect(),
        }
    }

    #[test]
    fn load_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        std::fs::write(
            &path,
            r#"[
              {"db_id": "flight_2", "question": "q1", "feedback": "f1",
               "incorrect_parse": "select id from flights",
               "gold_parse": "select sourceairport from flights"},
              {"db_id": "flight_2", "question": "q2", "feedback": "f2",
               "incorrect_parse": "select id from flights",
               "gold_parse": "select id from flights"},
              {"db_id": "flight_2", "question": "q3", "feedback": "f3",
               "incorrect_parse": "select id from flights",
               "gold_parse": "select count ( * ) from flights",
               "explanation": ["step one"]}
            ]"#,
        )
        .unwrap();
        let split =
            load_split(&path, &catalogs(), &FieldMap::default(), "fixture", "seq2struct").unwrap();
        assert_eq!(split.len(), 3);
        assert_eq!(split.examples[0].example_id, "ex0000");
        assert_eq!(split.examples[2].explanation.as_deref(), Some(&["step one".to_string()][..]));
    }

    #[test]
    fn unknown_db_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        std::fs::write(
            &path,
            r#"[{"db_id": "nonexistent", "question": "q", "feedback": "f",
                 "incorrect_parse": "select 1", "gold_parse": "select 1"}]"#,
        )
        .unwrap();
        let err =
            load_split(&path, &catalogs(), &FieldMap::default(), "x", "p").unwrap_err();
        assert!(err.to_string().contains("unknown db_id"), "{err}");
    }

    #[test]
    fn missing_field_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        std::fs::write(&path, r#"[{"db_id": "flight_2"}]"#).unwrap();
        let err = load_split(&path, &catalogs(), &FieldMap::default(), "x", "p").unwrap_err();
        assert!(err.to_string().contains("record 0"), "{err}");
    }

    #[test]
    fn round_trip_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let original = split(3);
        save_split(&original, &path).unwrap();
        let loaded =
            load_split(&path, &catalogs(), &FieldMap::default(), "test", "seq2struct").unwrap();
        assert_eq!(loaded.examples, original.examples);
    }

    #[test]
    fn shuffle_is_deterministic_derangement() {
        let s = split(6);
        let a = shuffle_feature(&s, ShuffleFeature::Feedback, 7).unwrap();
        let b = shuffle_feature(&s, ShuffleFeature::Feedback, 7).unwrap();
        for (x, y) in a.examples.iter().zip(&b.examples) {
            assert_eq!(x.feedback, y.feedback);
        }
        for (orig, shuf) in s.examples.iter().zip(&a.examples) {
            assert_ne!(orig.feedback, shuf.feedback, "derangement violated");
            assert_eq!(orig.question, shuf.question);
            assert_eq!(orig.example_id, shuf.example_id);
        }
        let mut original: Vec<_> = s.examples.iter().map(|e| e.feedback.clone()).collect();
        let mut shuffled: Vec<_> = a.examples.iter().map(|e| e.feedback.clone()).collect();
        original.sort();
        shuffled.sort();
        assert_eq!(original, shuffled, "multiset not preserved");
    }

    #[test]
    fn shuffle_two_examples_swaps() {
        let s = split(2);
        let a = shuffle_feature(&s, ShuffleFeature::IncorrectParse, 1).unwrap();
        assert_eq!(a.examples[0].incorrect_parse, s.examples[1].incorrect_parse);
        assert_eq!(a.examples[1].incorrect_parse, s.examples[0].incorrect_parse);
    }

    #[test]
    fn shuffle_single_example_rejected() {
        assert!(shuffle_feature(&split(1), ShuffleFeature::Feedback, 0).is_err());
    }

    #[test]
    fn gold_items_extracts_trusted_items() {
        let items = gold_items(&example("e0"), &catalogs()).unwrap();
        assert_eq!(items.tables().len(), 1);
        assert_eq!(items.columns().len(), 1);
    }

    #[test]
    fn gold_hallucination_is_data_integrity_error() {
        let mut ex = example("e0");
        ex.gold_parse = "select warp from flights".into();
        let err = gold_items(&ex, &catalogs()).unwrap_err();
        assert!(matches!(err, Error::DataIntegrity(_)), "{err}");
    }

    #[test]
    fn separator_collision_is_warning_not_error() {
        let mut ex = example("e0");
        ex.feedback = "left | right".into();
        let diags = validate_example(&ex, &catalogs());
        assert!(diags.iter().all(|d| d.severity == Severity::Warning));
        assert_eq!(diags.len(), 1);
    }
}
