//! Desk-scale logistic schema classifier over hand-crafted lexical features,
//! trained with the two-term focal batch loss by full-batch gradient descent.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ColumnId, SchemaCatalog, SchemaItemSet, TableId};
use crate::corpus::{gold_items, CorrectionExample, DatasetSplit};
use crate::error::{Error, Result};
use crate::sqlkit;

use super::{name_parts, overlap, text_tokens, FocalLossParams, SchemaScores};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

const FEATURE_NAMES: [&str; 7] = [
    "bias",
    "overlap_question_feedback_parse",
    "in_incorrect_parse",
    "verbatim_in_feedback",
    "verbatim_in_question",
    "catalog_position",
    "is_table",
];

const SCORE_EPS: f64 = 1e-7;

/// Trained classifier weights plus the metadata needed to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub gamma: f64,
    pub seed: u64,
}

impl ClassifierState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("classifier state serializes");
        std::fs::write(path, body).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let state: ClassifierState = serde_json::from_str(&text)
            .map_err(|e| Error::from_json(&path.display().to_string(), &text, &e))?;
        if state.version != WEIGHTS_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported weights file version {} (expected {})",
                state.version, WEIGHTS_FORMAT_VERSION
            )));
        }
        if state.weights.len() != FEATURE_NAMES.len() {
            return Err(Error::Config(format!(
                "weights file has {} weights, expected {}",
                state.weights.len(),
                FEATURE_NAMES.len()
            )));
        }
        Ok(state)
    }

    /// Score every catalog item for one example.
    pub fn predict(&self, example: &CorrectionExample, catalog: &SchemaCatalog) -> SchemaScores {
        let features = ExampleFeatures::build(example, catalog);
        let mut scores = SchemaScores::zeros(catalog);
        for ti in 0..catalog.table_count() {
            scores.table_scores[ti] = sigmoid(dot(&self.weights, &features.table(ti)));
            for ci in 0..catalog.tables()[ti].columns.len() {
                scores.column_scores[ti][ci] =
                    sigmoid(dot(&self.weights, &features.column(ti, ci)));
            }
        }
        scores
    }
}

/// One epoch's mean loss, written to the training-curve CSV.
#[derive(Debug, Clone, Serialize)]
pub struct TrainingCurve {
    pub losses: Vec<f64>,
}

/// Result of a training run. On divergence the curve up to the failure is
/// still available for persisting; `state` is only present for clean runs.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub state: Option<ClassifierState>,
    pub curve: TrainingCurve,
    pub divergence: Option<String>,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, loss) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{loss}\n"));
        }
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Precomputed per-example text context shared by all its item features.
struct ExampleFeatures {
    tokens_all: Vec<String>,
    tokens_feedback: Vec<String>,
    tokens_question: Vec<String>,
    parse_items: SchemaItemSet,
    table_parts: Vec<Vec<String>>,
    column_parts: Vec<Vec<Vec<String>>>,
    table_count: usize,
    column_counts: Vec<usize>,
}

impl ExampleFeatures {
    fn build(example: &CorrectionExample, catalog: &SchemaCatalog) -> Self {
        let all = format!(
            "{} {} {}",
            example.question, example.feedback, example.incorrect_parse
        );
        let parse_items = sqlkit::extract_schema_items(&example.incorrect_parse, catalog)
            .map(|(items, _)| items)
            .unwrap_or_default();
        ExampleFeatures {
            tokens_all: text_tokens(&all),
            tokens_feedback: text_tokens(&example.feedback),
            tokens_question: text_tokens(&example.question),
            parse_items,
            table_parts: catalog
                .tables()
                .iter()
                .map(|t| name_parts(&t.name))
                .collect(),
            column_parts: catalog
                .tables()
                .iter()
                .map(|t| t.columns.iter().map(|c| name_parts(&c.name)).collect())
                .collect(),
            table_count: catalog.table_count(),
            column_counts: catalog.tables().iter().map(|t| t.columns.len()).collect(),
        }
    }

    fn verbatim(parts: &[String], tokens: &[String]) -> f64 {
        // Whole-name presence: every part matched exactly.
        if !parts.is_empty() && parts.iter().all(|p| tokens.contains(p)) {
            1.0
        } else {
            0.0
        }
    }

    fn table(&self, ti: usize) -> [f64; 7] {
        let parts = &self.table_parts[ti];
        [
            1.0,
            overlap(parts, &self.tokens_all),
            f64::from(self.parse_items.contains_table(TableId(ti))),
            Self::verbatim(parts, &self.tokens_feedback),
            Self::verbatim(parts, &self.tokens_question),
            ti as f64 / self.table_count.max(1) as f64,
            1.0,
        ]
    }

    fn column(&self, ti: usize, ci: usize) -> [f64; 7] {
        let parts = &self.column_parts[ti][ci];
        let id = ColumnId { table: ti, column: ci };
        [
            1.0,
            overlap(parts, &self.tokens_all),
            f64::from(self.parse_items.contains_column(id)),
            Self::verbatim(parts, &self.tokens_feedback),
            Self::verbatim(parts, &self.tokens_question),
            ci as f64 / self.column_counts[ti].max(1) as f64,
            0.0,
        ]
    }
}

/// d(FL)/dz for s = sigmoid(z), p_t = s or 1-s by label.
fn focal_grad_z(score: f64, label: bool, params: &FocalLossParams) -> f64 {
    let s = score.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    let p_t = if label { s } else { 1.0 - s };
    let gamma = params.gamma;
    let one_minus = 1.0 - p_t;
    let d_fl_d_pt =
        gamma * one_minus.powf((gamma - 1.0).max(0.0)) * p_t.ln() - one_minus.powf(gamma) / p_t;
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
    let d_pt_d_z = if label { s * (1.0 - s) } else { -(s * (1.0 - s)) };
    balance * d_fl_d_pt * d_pt_d_z
}

/// Train the logistic classifier on a split by full-batch gradient descent.
///
/// Deterministic given `seed`: weights are initialized from a seeded RNG and
/// examples are visited in split order. A non-finite loss stops training;
/// the partial curve is returned with a divergence note so callers can
/// persist it.
pub fn train_classifier(
    split: &DatasetSplit,
    catalogs: &BTreeMap<String, SchemaCatalog>,
    params: &FocalLossParams,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<TrainingRun> {
    if split.is_empty() {
        return Err(Error::Validation("cannot train on an empty split".into()));
    }

    struct Prepared {
        features: ExampleFeatures,
        table_labels: Vec<bool>,
        column_labels: Vec<Vec<bool>>,
    }

    let mut prepared = Vec::with_capacity(split.len());
    for example in &split.examples {
        let catalog = catalogs.get(&example.db_id).ok_or_else(|| {
            Error::Validation(format!(
                "example `{}`: unknown db_id `{}`",
                example.example_id, example.db_id
            ))
        })?;
        let gold = gold_items(example, catalogs)?;
        let labels = super::SchemaLabels::from_items(catalog, &gold);
        prepared.push(Prepared {
            features: ExampleFeatures::build(example, catalog),
            table_labels: labels.table_labels,
            column_labels: labels.column_labels,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<f64> = (0..FEATURE_NAMES.len())
        .map(|_| rng.gen_range(-0.01..0.01))
        .collect();

    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut grad = vec![0.0; weights.len()];
        let mut loss_sum = 0.0;
        for p in &prepared {
            let n = p.table_labels.len() as f64;
            let m: usize = p.column_labels.iter().map(Vec::len).sum();
            let m = m as f64;
            for (ti, &label) in p.table_labels.iter().enumerate() {
                let x = p.features.table(ti);
                let s = sigmoid(dot(&weights, &x));
                let clamped = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
                loss_sum += super::focal_loss(clamped, label, params)? / n;
                let g = focal_grad_z(s, label, params) / n;
                for (gi, xi) in grad.iter_mut().zip(&x) {
                    *gi += g * xi;
                }
            }
            for (ti, cols) in p.column_labels.iter().enumerate() {
                for (ci, &label) in cols.iter().enumerate() {
                    let x = p.features.column(ti, ci);
                    let s = sigmoid(dot(&weights, &x));
                    let clamped = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
                    loss_sum += super::focal_loss(clamped, label, params)? / m;
                    let g = focal_grad_z(s, label, params) / m;
                    for (gi, xi) in grad.iter_mut().zip(&x) {
                        *gi += g * xi;
                    }
                }
            }
        }
        let loss = loss_sum / prepared.len() as f64;
        if !loss.is_finite() {
            return Ok(TrainingRun {
                state: None,
                curve: TrainingCurve { losses },
                divergence: Some(format!(
                    "non-finite loss at epoch {epoch} (lr {learning_rate}, gamma {})",
                    params.gamma
                )),
            });
        }
        losses.push(loss);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= learning_rate * g / prepared.len() as f64;
        }
    }

    Ok(TrainingRun {
        state: Some(ClassifierState {
            version: WEIGHTS_FORMAT_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights,
            gamma: params.gamma,
            seed,
        }),
        curve: TrainingCurve { losses },
        divergence: None,
    })
}
