//! The reader abstraction: anything that scores span or choice questions.
//!
//! Readers return raw logits; turning them into values is the decoder's
//! job. Besides the trait this module ships three deterministic readers
//! ([`OracleReader`], [`ExactMatchReader`], [`RandomReader`]) and a client
//! for readers running in another process ([`ExternalReader`]).

mod builtin;
mod external;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::examplegen::SerializedContext;
use crate::num::Scalar;
use crate::types::SlotName;

pub use builtin::{ExactMatchReader, OracleReader, RandomReader};
pub use external::{Endpoint, ExternalReader, WireRequest, WireResponse};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReaderError {
    #[error("reader failure: {0}")]
    Failure(String),
    #[error("reader timed out on request {0}")]
    Timeout(String),
    #[error("shape mismatch: expected {expected} scores, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("could not connect to reader: {0}")]
    Connect(String),
}

/// Start/end logits, one per context token including the sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScores<T> {
    pub start_logits: Vec<T>,
    pub end_logits: Vec<T>,
}

impl<T: Scalar> SpanScores<T> {
    pub fn len(&self) -> usize {
        self.start_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_logits.is_empty()
    }

    /// Checks both vectors against the context length and for finiteness.
    pub fn validate(&self, num_tokens: usize) -> Result<(), ReaderError> {
        for v in [&self.start_logits, &self.end_logits] {
            if v.len() != num_tokens {
                return Err(ReaderError::ShapeMismatch { expected: num_tokens, got: v.len() });
            }
        }
        check_finite(self.start_logits.iter().chain(&self.end_logits))
    }

    /// Logit 1 at `start`/`end`, 0 elsewhere.
    pub fn one_hot(num_tokens: usize, start: usize, end: usize) -> Self {
        let mut start_logits = vec![T::zero(); num_tokens];
        let mut end_logits = vec![T::zero(); num_tokens];
        start_logits[start] = T::one();
        end_logits[end] = T::one();
        Self { start_logits, end_logits }
    }
}

/// One logit per option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScores<T> {
    pub option_logits: Vec<T>,
}

impl<T: Scalar> ChoiceScores<T> {
    pub fn validate(&self, num_options: usize) -> Result<(), ReaderError> {
        if self.option_logits.len() != num_options {
            return Err(ReaderError::ShapeMismatch {
                expected: num_options,
                got: self.option_logits.len(),
            });
        }
        check_finite(&self.option_logits)
    }
}

fn check_finite<'a, T: Scalar>(it: impl IntoIterator<Item = &'a T>) -> Result<(), ReaderError> {
    if it.into_iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ReaderError::Failure("non-finite logit".into()))
    }
}

/// A span question for one (dialogue, turn, slot).
#[derive(Debug, Clone, Copy)]
pub struct SpanQuery<'a> {
    pub id: &'a str,
    pub dialogue_id: &'a str,
    pub turn: usize,
    pub slot: &'a SlotName,
    pub question: &'a str,
    pub context: &'a SerializedContext,
}

/// A multiple-choice question; `options` ends with the two reserved options.
#[derive(Debug, Clone, Copy)]
pub struct ChoiceQuery<'a> {
    pub id: &'a str,
    pub dialogue_id: &'a str,
    pub turn: usize,
    pub slot: &'a SlotName,
    pub question: &'a str,
    pub context: &'a SerializedContext,
    pub options: &'a [String],
}

/// Whether a reader tolerates concurrent `score_*` calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    SingleFlight,
}

pub trait Reader<T: Scalar>: Send + Sync {
    /// Short name recorded in reports (`oracle`, `exact-match`, ...).
    fn name(&self) -> &str;

    fn score_span(&self, query: &SpanQuery<'_>) -> Result<SpanScores<T>, ReaderError>;

    fn score_choice(&self, query: &ChoiceQuery<'_>) -> Result<ChoiceScores<T>, ReaderError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    /// Oracle readers see gold labels; reports must flag their numbers.
    fn is_oracle(&self) -> bool {
        false
    }
}

/// Scores a span question and checks the result's shape.
pub fn score_span<T: Scalar, R: Reader<T> + ?Sized>(
    reader: &R,
    query: &SpanQuery<'_>,
) -> Result<SpanScores<T>, ReaderError> {
    if query.context.tokens.is_empty() {
        return Err(ReaderError::Failure("empty context".into()));
    }
    let scores = reader.score_span(query)?;
    scores.validate(query.context.len())?;
    Ok(scores)
}

/// Scores a choice question and checks the result's shape.
pub fn score_choice<T: Scalar, R: Reader<T> + ?Sized>(
    reader: &R,
    query: &ChoiceQuery<'_>,
) -> Result<ChoiceScores<T>, ReaderError> {
    if query.options.len() < 3 {
        return Err(ReaderError::Failure(format!(
            "choice question needs at least 3 options, got {}",
            query.options.len()
        )));
    }
    let scores = reader.score_choice(query)?;
    scores.validate(query.options.len())?;
    Ok(scores)
}
