//! Per-example outcomes and aggregate evaluation reports.

use serde::{Deserialize, Serialize};

use crate::corrector::InputConfig;
use crate::error::{Error, Result};
use crate::schemapred::Prf1;
use crate::sqlkit::{Difficulty, EditCount};

use super::UsageRates;

/// Everything recorded for one evaluated example. Reports must be
/// byte-reproducible, so no timestamps or latencies appear here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub example_id: String,
    pub em: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ex: Option<bool>,
    /// Edits between the corrected parse and gold; absent when the corrected
    /// parse does not decompose.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit_count: Option<EditCount>,
    /// Edits between the original incorrect parse and gold — the distance
    /// the correction had to cover; drives the error-rate matrix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub required_edits: Option<EditCount>,
    pub difficulty: Difficulty,
    pub schema_pred_items: Vec<String>,
    pub final_parse_items: Vec<String>,
    pub schema_pred_prf1: Prf1,
    pub final_parse_prf1: Prf1,
    pub schema_pred_hallucinations: usize,
    pub final_parse_hallucinations: usize,
    /// The schema prediction was empty and the full flattened schema was
    /// serialized instead.
    pub schema_fallback: bool,
    pub correction_failed: bool,
    pub usage: UsageRates,
}

/// Edit-count buckets along the matrix axis: 1, 2, 3, 4, and 5-or-more.
pub const EDIT_BUCKETS: [&str; 5] = ["1", "2", "3", "4", "5+"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditBucket(pub usize);

impl EditBucket {
    /// Bucket index for a required-edit total; zero-edit examples fall
    /// outside the matrix.
    pub fn from_edits(total: usize) -> Option<Self> {
        match total {
            0 => None,
            1..=4 => Some(EditBucket(total - 1)),
            _ => Some(EditBucket(4)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub examples: usize,
    pub errors: usize,
    /// errors / examples; absent for empty cells.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
}

/// Error rates bucketed by gold difficulty (rows) and required edits
/// (columns). Examples whose incorrect parse does not decompose carry no
/// edit distance and are excluded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub difficulties: Vec<String>,
    pub edit_buckets: Vec<String>,
    /// Row-major: cells[difficulty][bucket].
    pub cells: Vec<Vec<MatrixCell>>,
}

impl ErrorMatrix {
    fn from_outcomes(outcomes: &[ExampleOutcome]) -> Self {
        let mut cells = vec![vec![MatrixCell::default(); EDIT_BUCKETS.len()]; Difficulty::ALL.len()];
        for outcome in outcomes {
            let Some(required) = &outcome.required_edits else {
                continue;
            };
            let Some(bucket) = EditBucket::from_edits(required.total) else {
                continue;
            };
            let row = Difficulty::ALL
                .iter()
                .position(|d| *d == outcome.difficulty)
                .expect("difficulty in ALL");
            let cell = &mut cells[row][bucket.0];
            cell.examples += 1;
            if !outcome.em {
                cell.errors += 1;
            }
        }
        for row in &mut cells {
            for cell in row {
                if cell.examples > 0 {
                    cell.error_rate = Some(cell.errors as f64 / cell.examples as f64);
                }
            }
        }
        ErrorMatrix {
            difficulties: Difficulty::ALL.iter().map(|d| d.to_string()).collect(),
            edit_buckets: EDIT_BUCKETS.iter().map(|b| b.to_string()).collect(),
            cells,
        }
    }
}

/// EM percentage-point changes of shuffled-feature reruns against the
/// original run; negative when the model actually uses the feature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ShuffleDeltas {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback_em_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub incorrect_parse_em_delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split_name: String,
    pub source_parser: String,
    pub backend: String,
    pub schema_source: String,
    pub input_config: InputConfig,
    pub example_count: usize,
    pub em_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ex_pct: Option<f64>,
    /// Mean schema-prediction quality against gold items.
    pub schema_pred_prf1: Prf1,
    /// Mean quality of the items appearing in the final corrected parses.
    pub final_parse_prf1: Prf1,
    pub schema_pred_hallucination_total: usize,
    pub final_parse_hallucination_total: usize,
    pub schema_fallback_count: usize,
    pub correction_failure_count: usize,
    pub overpredictions_total: usize,
    pub underpredictions_total: usize,
    pub avg_dist_serialized_gold: f64,
    pub avg_dist_final_gold: f64,
    pub error_matrix: ErrorMatrix,
    pub shuffle_deltas: ShuffleDeltas,
    /// Metric conventions this artifact fixes where the original tooling
    /// left them open.
    pub conventions: Vec<String>,
    pub outcomes: Vec<ExampleOutcome>,
}

fn conventions() -> Vec<String> {
    vec![
        "edit counts are symmetric multiset differences over flattened clause atoms, \
         a surrogate for the original edit-counting scripts"
            .to_string(),
        "distinct folds into each select atom rather than acting as a separate flag".to_string(),
        "exact set match blanks literal values; limit compares as presence only".to_string(),
        "order by direction participates in exact set match".to_string(),
    ]
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        values.sum::<f64>() / count as f64
    }
}

/// Assemble the aggregate report. Outcomes must cover exactly the split's
/// example ids; missing ids are an error.
pub fn build_report(
    split_name: &str,
    source_parser: &str,
    backend: &str,
    schema_source: &str,
    input_config: &InputConfig,
    expected_ids: &[String],
    mut outcomes: Vec<ExampleOutcome>,
    shuffle_deltas: ShuffleDeltas,
) -> Result<EvaluationReport> {
    outcomes.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let mut missing: Vec<&String> = Vec::new();
    for id in expected_ids {
        if !outcomes.iter().any(|o| &o.example_id == id) {
            missing.push(id);
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "outcomes missing for {} example(s): {}",
            missing.len(),
            missing
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    if outcomes.len() != expected_ids.len() {
        return Err(Error::Validation(format!(
            "{} outcomes for {} expected examples",
            outcomes.len(),
            expected_ids.len()
        )));
    }

    let n = outcomes.len();
    let em_pct = mean(outcomes.iter().map(|o| f64::from(u8::from(o.em))), n) * 100.0;
    let ex_flags: Vec<bool> = outcomes.iter().filter_map(|o| o.ex).collect();
    let ex_pct = if ex_flags.is_empty() {
        None
    } else {
        Some(mean(ex_flags.iter().map(|&b| f64::from(u8::from(b))), ex_flags.len()) * 100.0)
    };
    let mean_prf1 = |get: fn(&ExampleOutcome) -> Prf1| Prf1 {
        precision: mean(outcomes.iter().map(|o| get(o).precision), n),
        recall: mean(outcomes.iter().map(|o| get(o).recall), n),
        f1: mean(outcomes.iter().map(|o| get(o).f1), n),
    };

    Ok(EvaluationReport {
        split_name: split_name.to_string(),
        source_parser: source_parser.to_string(),
        backend: backend.to_string(),
        schema_source: schema_source.to_string(),
        input_config: input_config.clone(),
        example_count: n,
        em_pct,
        ex_pct,
        schema_pred_prf1: mean_prf1(|o| o.schema_pred_prf1),
        final_parse_prf1: mean_prf1(|o| o.final_parse_prf1),
        schema_pred_hallucination_total: outcomes.iter().map(|o| o.schema_pred_hallucinations).sum(),
        final_parse_hallucination_total: outcomes.iter().map(|o| o.final_parse_hallucinations).sum(),
        schema_fallback_count: outcomes.iter().filter(|o| o.schema_fallback).count(),
        correction_failure_count: outcomes.iter().filter(|o| o.correction_failed).count(),
        overpredictions_total: outcomes.iter().map(|o| o.usage.overpredictions).sum(),
        underpredictions_total: outcomes.iter().map(|o| o.usage.underpredictions).sum(),
        avg_dist_serialized_gold: mean(
            outcomes.iter().map(|o| o.usage.dist_serialized_gold as f64),
            n,
        ),
        avg_dist_final_gold: mean(outcomes.iter().map(|o| o.usage.dist_final_gold as f64), n),
        error_matrix: ErrorMatrix::from_outcomes(&outcomes),
        shuffle_deltas,
        conventions: conventions(),
        outcomes,
    })
}

/// Aligned-column plain-text rendering.
pub fn render_text(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("split           {}", report.split_name));
    line(format!("source parser   {}", report.source_parser));
    line(format!("backend         {}", report.backend));
    line(format!("schema source   {}", report.schema_source));
    line(format!("examples        {}", report.example_count));
    line(format!("EM%             {:.2}", report.em_pct));
    match report.ex_pct {
        Some(ex) => line(format!("EX%             {ex:.2}")),
        None => line("EX%             n/a (no databases configured)".to_string()),
    }
    line(String::new());
    line("schema prediction vs gold items".to_string());
    line(format!(
        "  P {:.4}  R {:.4}  F1 {:.4}  hallucinations {}",
        report.schema_pred_prf1.precision,
        report.schema_pred_prf1.recall,
        report.schema_pred_prf1.f1,
        report.schema_pred_hallucination_total
    ));
    line("final parse items vs gold items".to_string());
    line(format!(
        "  P {:.4}  R {:.4}  F1 {:.4}  hallucinations {}",
        report.final_parse_prf1.precision,
        report.final_parse_prf1.recall,
        report.final_parse_prf1.f1,
        report.final_parse_hallucination_total
    ));
    line(String::new());
    line(format!(
        "schema fallbacks {}   correction failures {}",
        report.schema_fallback_count, report.correction_failure_count
    ));
    line(format!(
        "overpredictions {}   underpredictions {}   avg dist serialized/gold {:.4}   avg dist final/gold {:.4}",
        report.overpredictions_total,
        report.underpredictions_total,
        report.avg_dist_serialized_gold,
        report.avg_dist_final_gold
    ));
    if report.shuffle_deltas.feedback_em_delta.is_some()
        || report.shuffle_deltas.incorrect_parse_em_delta.is_some()
    {
        line(String::new());
        line("shuffled-feature EM% change".to_string());
        if let Some(d) = report.shuffle_deltas.feedback_em_delta {
            line(format!("  feedback         {d:+.2}"));
        }
        if let Some(d) = report.shuffle_deltas.incorrect_parse_em_delta {
            line(format!("  incorrect parse  {d:+.2}"));
        }
    }
    line(String::new());
    line("error rate by difficulty x required edits".to_string());
    let header = std::iter::once(format!("{:<8}", ""))
        .chain(report.edit_bucket_headers())
        .collect::<String>();
    line(header);
    for (di, difficulty) in report.error_matrix.difficulties.iter().enumerate() {
        let mut row = format!("{difficulty:<8}");
        for cell in &report.error_matrix.cells[di] {
            match cell.error_rate {
                Some(rate) => row.push_str(&format!("{:>8}", format!("{rate:.2}"))),
                None => row.push_str(&format!("{:>8}", "-")),
            }
        }
        line(row);
    }
    out
}

impl EvaluationReport {
    fn edit_bucket_headers(&self) -> impl Iterator<Item = String> + '_ {
        self.error_matrix
            .edit_buckets
            .iter()
            .map(|b| format!("{b:>8}"))
    }
}

/// CSV of the difficulty x edit-bucket matrix for external plotting.
pub fn matrix_to_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("difficulty,edit_bucket,examples,errors,error_rate\n");
    for (di, difficulty) in report.error_matrix.difficulties.iter().enumerate() {
        for (bi, bucket) in report.error_matrix.edit_buckets.iter().enumerate() {
            let cell = &report.error_matrix.cells[di][bi];
            let rate = cell
                .error_rate
                .map(|r| format!("{r}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{difficulty},{bucket},{},{},{rate}\n",
                cell.examples, cell.errors
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: &str, em: bool, difficulty: Difficulty, required: usize) -> ExampleOutcome {
        ExampleOutcome {
            example_id: id.to_string(),
            em,
            ex: Some(em),
            edit_count: Some(EditCount::default()),
            required_edits: Some(EditCount {
                insertions: required,
                deletions: 0,
                total: required,
            }),
            difficulty,
            schema_pred_items: vec![],
            final_parse_items: vec![],
            schema_pred_prf1: Prf1 { precision: 1.0, recall: 1.0, f1: 1.0 },
            final_parse_prf1: Prf1 { precision: 1.0, recall: 1.0, f1: 1.0 },
            schema_pred_hallucinations: 0,
            final_parse_hallucinations: 0,
            schema_fallback: false,
            correction_failed: false,
            usage: UsageRates::default(),
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("e{i}")).collect()
    }

    #[test]
    fn aggregate_equals_mean_of_flags() {
        let outcomes = vec![
            outcome("e0", true, Difficulty::Easy, 1),
            outcome("e1", false, Difficulty::Easy, 2),
            outcome("e2", true, Difficulty::Hard, 6),
            outcome("e3", true, Difficulty::Extra, 3),
        ];
        let report = build_report(
            "s",
            "p",
            "oracle",
            "oracle",
            &InputConfig::default(),
            &ids(4),
            outcomes,
            ShuffleDeltas::default(),
        )
        .unwrap();
        assert!((report.em_pct - 75.0).abs() < 1e-9);
        assert!((report.ex_pct.unwrap() - 75.0).abs() < 1e-9);
    }

    #[test]
    fn missing_outcome_is_an_error() {
        let outcomes = vec![outcome("e0", true, Difficulty::Easy, 1)];
        let err = build_report(
            "s",
            "p",
            "oracle",
            "oracle",
            &InputConfig::default(),
            &ids(2),
            outcomes,
            ShuffleDeltas::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("e1"), "{err}");
    }

    #[test]
    fn matrix_buckets_and_rates() {
        let outcomes = vec![
            outcome("e0", true, Difficulty::Easy, 1),
            outcome("e1", false, Difficulty::Easy, 1),
            outcome("e2", false, Difficulty::Extra, 9),
        ];
        let report = build_report(
            "s",
            "p",
            "b",
            "s",
            &InputConfig::default(),
            &ids(3),
            outcomes,
            ShuffleDeltas::default(),
        )
        .unwrap();
        let easy_row = &report.error_matrix.cells[0];
        assert_eq!(easy_row[0].examples, 2);
        assert_eq!(easy_row[0].errors, 1);
        assert!((easy_row[0].error_rate.unwrap() - 0.5).abs() < 1e-12);
        let extra_row = &report.error_matrix.cells[3];
        assert_eq!(extra_row[4].examples, 1);
        assert!(easy_row[2].error_rate.is_none());
        let csv = matrix_to_csv(&report);
        assert!(csv.contains("easy,1,2,1,0.5"));
        let text = render_text(&report);
        assert!(text.contains("EM%"));
    }

    #[test]
    fn zero_edit_examples_stay_out_of_matrix() {
        assert!(EditBucket::from_edits(0).is_none());
        assert_eq!(EditBucket::from_edits(1), Some(EditBucket(0)));
        assert_eq!(EditBucket::from_edits(4), Some(EditBucket(3)));
        assert_eq!(EditBucket::from_edits(17), Some(EditBucket(4)));
    }
}
