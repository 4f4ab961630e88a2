//! Evaluation harness for feedback-driven SQL parse correction.
//!
//! The pipeline: load schema catalogs and a correction dataset, predict the
//! schema items a corrected parse should use, build a unified model input,
//! obtain a corrected parse from a backend (oracle, identity, or a remote
//! inference server), and score the result with exact set match, execution
//! accuracy, schema F1, and edit-distance breakdowns.

pub mod catalog;
pub mod corpus;
pub mod corrector;
pub mod error;
pub mod evalmetrics;
pub mod fixtures;
pub mod schemapred;
pub mod sqlkit;

pub use error::{Error, Result};
