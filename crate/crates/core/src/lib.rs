//! Unsupervised selective rationalization with online noise injection.
//!
//! A generator scores tokens, a hard top-k selection turns the scores into a
//! binary rationale mask, and two predictors (one attention-based over the
//! full input, one restricted to the rationale) are trained cooperatively
//! with cross-entropy plus a Jensen-Shannon coupling term. During training,
//! low-importance rationale tokens are probabilistically replaced with
//! vocabulary samples drawn from corpus statistics, which discourages the
//! generator from smuggling label information through unimportant tokens.
//!
//! Modules:
//! - [`corpus`]: tokenization, vocabulary, TF*IDF / ATF*IDF statistics and
//!   the replacement and sampling distributions derived from them
//! - [`noise`]: seeded online perturbation of masked rationales
//! - [`diffcore`]: reverse-mode autodiff with a finite-difference checker
//! - [`model`]: generator, selection strategies, the two predictors, losses
//! - [`training`]: the cooperative training loop and the noise-level sweep
//! - [`eval`]: plausibility (P/R/F1, IOU-F1) and faithfulness
//!   (comprehensiveness, sufficiency) metrics
//! - [`data`]: ERASER-style ingestion, benchmark construction from raw
//!   review corpora, overlap detection, and synthetic corpus generation

pub mod corpus;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod model;
pub mod noise;
pub mod training;
pub mod util;

pub use error::{Error, Result};
