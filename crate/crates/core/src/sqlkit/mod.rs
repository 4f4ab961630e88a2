//! SQL tokenization, normalization, component decomposition, schema item
//! extraction, edit counting, and difficulty classification.

mod components;
mod difficulty;
mod extract;
mod normalize;
mod token;

pub use components::{
    count_edits, decompose, Attachment, ClauseStats, Direction, EditCount, SetOp, SqlComponents,
    VALUE_SENTINEL,
};
pub use difficulty::{classify_difficulty, Difficulty};
pub use extract::extract_schema_items;
pub use normalize::normalize_sql;
pub use token::{tokenize, SqlTokenStream, Token, TokenKind};
