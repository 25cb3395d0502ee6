//! Selection of example sentences that clarify the differences between
//! confusing near-synonyms.
//!
//! The pipeline filters each word's candidate pool with a dictionary-likeness
//! classifier, scores every survivor under every word's usage model (a
//! Gaussian mixture over context embeddings or a bidirectional LSTM), and
//! ranks by fitness times relative closeness. Optionally the pools are first
//! restricted to sentences whose aligned L1 translation is shared by all
//! words of the set.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix formulas.
#![allow(clippy::needless_range_loop)]

pub mod alignment;
pub mod bilstm;
pub mod corpus;
pub mod dict_filter;
pub mod error;
pub mod gmm;
pub mod selection;

pub use error::{Error, Result};
