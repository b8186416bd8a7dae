//! Dialogue state tracking framed as reading comprehension.
//!
//! The crate covers the full desk-scale pipeline: parsing MultiWOZ-style
//! corpora ([`ingest`]), classifying slots as extractive and/or categorical
//! from corpus statistics ([`taxonomy`]), turning every (turn, slot) pair
//! into a span or multiple-choice question ([`examplegen`]), scoring those
//! questions with a pluggable [`readers::Reader`], decoding the scores back
//! into slot values ([`decode`], [`canon`]) and measuring the result
//! ([`track`], [`eval`]).
//!
//! Score-carrying types are generic over the float type through
//! [`num::Scalar`]; the aliases below fix the common `f64`/`f32` choices.

pub mod canon;
pub mod decode;
pub mod error;
pub mod eval;
pub mod examplegen;
pub mod ingest;
pub mod num;
pub mod readers;
pub mod taxonomy;
pub mod testkit;
pub mod text;
pub mod track;
pub mod types;

pub use error::{Error, Result};
pub use num::Scalar;
pub use types::{GoldValue, SlotName, SlotValue};

/// Span logits in double precision.
pub type SpanLogits = readers::SpanScores<f64>;
/// Option logits in double precision.
pub type ChoiceLogits = readers::ChoiceScores<f64>;
/// Decoder configuration in double precision.
pub type Config = decode::DecodeConfig<f64>;

/// Span logits in single precision.
pub type SpanLogits32 = readers::SpanScores<f32>;
/// Option logits in single precision.
pub type ChoiceLogits32 = readers::ChoiceScores<f32>;
/// Decoder configuration in single precision.
pub type Config32 = decode::DecodeConfig<f32>;
