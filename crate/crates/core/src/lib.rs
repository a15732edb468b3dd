//! Comprehension metrics for classical Chinese poetry corpora.
//!
//! The engine runs in three stages: a validated, content-addressed corpus
//! ([`corpus`]), per-poem and pairwise metrics computed from teacher-forced
//! model traces ([`adapter`], [`metrics`], [`pairwise`]) and persisted in a
//! content-addressed [`store`], and anthology-level summaries
//! ([`summarize`]).

pub mod numerics;
pub mod rng;
pub mod corpus;
pub mod freqtab;
pub mod tokenizer;
pub mod adapter;
pub mod metrics;
pub mod store;
pub mod pairwise;
pub mod planted;
pub mod summarize;
