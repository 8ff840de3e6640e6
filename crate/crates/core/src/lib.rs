//! Real-time toxic span detection for multiplayer game chat.
//!
//! The pipeline, end to end:
//!
//! 1. [`chat`] defines the class taxonomy, chat lines and match sessions.
//! 2. [`context`] assembles a model input for one target line: scope-filtered
//!    chat history, relative speaker ids and token-budget truncation.
//! 3. [`tokenizer`] is a lowercase whitespace + punctuation splitter with a
//!    frequency-built vocabulary.
//! 4. [`model`] is a small token-classification transformer encoder whose
//!    input embedding is the sum of token, position, team, chat-type and
//!    player encodings, trained with an Adam-style optimizer and early
//!    stopping.
//! 5. [`data`] holds corpus plumbing: multi-annotator label aggregation,
//!    inter-annotator agreement, adapters for external corpora, a synthetic
//!    corpus generator and deterministic match-level splits.
//! 6. [`eval`] computes weighted precision/recall/F1, precision-recall
//!    curves, cross-corpus transfer matrices and history-length breakdowns.
//! 7. [`moderation`] turns per-line toxicity scores into post-game flag
//!    statistics and report-coverage ratios.

pub mod chat;
pub mod context;
pub mod corpus;
pub mod data;
pub mod eval;
pub mod model;
pub mod moderation;
pub mod tokenizer;
