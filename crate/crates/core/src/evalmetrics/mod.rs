//! Evaluation metrics: exact set match, execution accuracy, interaction
//! deltas, schema usage-rate analysis, and report assembly.

mod exec;
mod report;

pub use exec::{execution_accuracy, test_suite_execution};
pub use report::{
    build_report, matrix_to_csv, render_text, EditBucket, ErrorMatrix, EvaluationReport,
    ExampleOutcome, MatrixCell, ShuffleDeltas, EDIT_BUCKETS,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{SchemaCatalog, SchemaItemSet};
use crate::error::{Error, Result};
use crate::sqlkit;

/// Structural equality of two queries: orderless per-clause component sets
/// with values blanked, recursing through set operations and subqueries.
///
/// The gold query must normalize and decompose; a pred that does not is
/// simply not an exact match.
pub fn exact_set_match(pred_sql: &str, gold_sql: &str, catalog: &SchemaCatalog) -> Result<bool> {
    let gold_norm = sqlkit::normalize_sql(gold_sql, catalog).map_err(|e| {
        Error::DataIntegrity(format!("gold query does not normalize: {e} (`{gold_sql}`)"))
    })?;
    let gold = sqlkit::decompose(&gold_norm, catalog).map_err(|e| {
        Error::DataIntegrity(format!("gold query does not decompose: {e} (`{gold_sql}`)"))
    })?;
    let Ok(pred_norm) = sqlkit::normalize_sql(pred_sql, catalog) else {
        return Ok(false);
    };
    let Ok(pred) = sqlkit::decompose(&pred_norm, catalog) else {
        return Ok(false);
    };
    Ok(pred == gold)
}

/// End-to-end gain attributable to one turn of correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionDelta {
    pub base_pct: f64,
    /// Signed percentage-point change over the full split.
    pub delta_pct: f64,
    pub final_pct: f64,
    pub total_examples: usize,
    pub base_correct: usize,
    pub corrected_fixed: usize,
}

/// Compute the delta-with-interaction metric.
///
/// `base_outcomes` covers the full dev split; `corrected_outcomes` covers
/// only examples whose base flag was false. A corrected entry for an
/// example that was already base-correct (or absent) is a consistency error.
pub fn delta_with_interaction(
    base_outcomes: &BTreeMap<String, bool>,
    corrected_outcomes: &BTreeMap<String, bool>,
) -> Result<InteractionDelta> {
    if base_outcomes.is_empty() {
        return Err(Error::Consistency("base outcomes are empty".into()));
    }
    for (id, _) in corrected_outcomes {
        match base_outcomes.get(id) {
            None => {
                return Err(Error::Consistency(format!(
                    "corrected outcome for `{id}` which is not in the base split"
                )))
            }
            Some(true) => {
                return Err(Error::Consistency(format!(
                    "corrected outcome for `{id}` which was already base-correct"
                )))
            }
            Some(false) => {}
        }
    }
    let total = base_outcomes.len();
    let base_correct = base_outcomes.values().filter(|&&v| v).count();
    let corrected_fixed = corrected_outcomes.values().filter(|&&v| v).count();
    let base_pct = 100.0 * base_correct as f64 / total as f64;
    let delta_pct = 100.0 * corrected_fixed as f64 / total as f64;
    Ok(InteractionDelta {
        base_pct,
        delta_pct,
        final_pct: base_pct + delta_pct,
        total_examples: total,
        base_correct,
        corrected_fixed,
    })
}

/// Per-example schema usage rates: how the final parse's items relate to the
/// items that were serialized for it, and both of their distances to gold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRates {
    /// Items in the final parse that were never serialized.
    pub overpredictions: usize,
    /// Serialized items the final parse failed to integrate.
    pub underpredictions: usize,
    /// |serialized Δ gold|
    pub dist_serialized_gold: usize,
    /// |final Δ gold|
    pub dist_final_gold: usize,
}

pub fn usage_rate_analysis(
    serialized: &SchemaItemSet,
    final_parse_items: &SchemaItemSet,
    gold: &SchemaItemSet,
) -> UsageRates {
    UsageRates {
        overpredictions: final_parse_items.difference(serialized).len(),
        underpredictions: serialized.difference(final_parse_items).len(),
        dist_serialized_gold: serialized.symmetric_distance(gold),
        dist_final_gold: final_parse_items.symmetric_distance(gold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ColumnDef, ColumnId, TableDef, TableId, ValueType};

    fn cat() -> SchemaCatalog {
        SchemaCatalog::new(
            "d",
            vec![TableDef {
                name: "t".into(),
                columns: vec![
                    ColumnDef { name: "a".into(), value_type: ValueType::Text },
                    ColumnDef { name: "b".into(), value_type: ValueType::Text },
                    ColumnDef { name: "name".into(), value_type: ValueType::Text },
                    ColumnDef { name: "val".into(), value_type: ValueType::Number },
                ],
            }],
        )
        .unwrap()
    }

    #[test]
    fn orderless_select_matches() {
        let c = cat();
        assert!(exact_set_match("select a , b from t", "select b , a from t", &c).unwrap());
    }

    #[test]
    fn order_by_limit_vs_max_is_not_em() {
        let c = cat();
        assert!(!exact_set_match(
            "select name from t order by val asc limit 1",
            "select max ( val ) from t",
            &c
        )
        .unwrap());
    }

    #[test]
    fn syntax_error_pred_is_false() {
        let c = cat();
        assert!(!exact_set_match("select from from t t t", "select a from t", &c).unwrap());
        assert!(!exact_set_match("select 'unterminated from t", "select a from t", &c).unwrap());
    }

    #[test]
    fn values_ignored() {
        let c = cat();
        assert!(exact_set_match(
            "select name from t where val = 5",
            "select name from t where val = 99",
            &c
        )
        .unwrap());
    }

    #[test]
    fn undecomposable_gold_is_an_error() {
        let c = cat();
        assert!(exact_set_match("select a from t", "select case when", &c).is_err());
    }

    #[test]
    fn delta_arithmetic() {
        let mut base = BTreeMap::new();
        for i in 0..100 {
            base.insert(format!("e{i:03}"), i < 41);
        }
        let mut corrected = BTreeMap::new();
        for i in 41..100 {
            corrected.insert(format!("e{i:03}"), i < 41 + 26);
        }
        let delta = delta_with_interaction(&base, &corrected).unwrap();
        assert!((delta.base_pct - 41.0).abs() < 1e-12);
        assert!((delta.delta_pct - 26.0).abs() < 1e-12);
        assert!((delta.final_pct - 67.0).abs() < 1e-12);
    }

    #[test]
    fn delta_no_corrections_is_zero() {
        let mut base = BTreeMap::new();
        base.insert("a".to_string(), true);
        base.insert("b".to_string(), false);
        let delta = delta_with_interaction(&base, &BTreeMap::new()).unwrap();
        assert_eq!(delta.delta_pct, 0.0);
        assert_eq!(delta.final_pct, delta.base_pct);
    }

    #[test]
    fn delta_rejects_correcting_a_correct_example() {
        let mut base = BTreeMap::new();
        base.insert("a".to_string(), true);
        let mut corrected = BTreeMap::new();
        corrected.insert("a".to_string(), true);
        let err = delta_with_interaction(&base, &corrected).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)), "{err}");
    }

    #[test]
    fn usage_rates_hand_counts() {
        let mut serialized = SchemaItemSet::new();
        serialized.add_table(TableId(0));
        serialized.add_column(ColumnId { table: 0, column: 0 });
        let mut final_items = serialized.clone();
        final_items.add_column(ColumnId { table: 0, column: 1 });
        let gold = final_items.clone();
        let rates = usage_rate_analysis(&serialized, &final_items, &gold);
        assert_eq!(rates.overpredictions, 1);
        assert_eq!(rates.underpredictions, 0);
        assert_eq!(rates.dist_serialized_gold, 1);
        assert_eq!(rates.dist_final_gold, 0);
    }

    #[test]
    fn usage_rates_identical_sets_are_zero() {
        let mut s = SchemaItemSet::new();
        s.add_table(TableId(0));
        let rates = usage_rate_analysis(&s, &s, &s);
        assert_eq!(rates, UsageRates::default());
    }
}
