//! Evaluation metrics: TER with block shifts (plus an exhaustive oracle for
//! short inputs) and corpus BLEU.
//!
//! Tokens are compared exactly, case-sensitively. All functions are pure.

mod bleu;
mod ter;

pub use bleu::{bleu, BleuResult, Smoothing, MAX_ORDER};
pub use ter::{
    corpus_ter, levenshtein, ter, ter_oracle, TerResult, MAX_SHIFT_LEN, ORACLE_MAX_LEN,
    ORACLE_MAX_SHIFTS,
};
