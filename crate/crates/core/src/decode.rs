//! From reader logits to slot values.

use serde::{Deserialize, Serialize};

use crate::canon::{self, Canonical};
use crate::error::{Error, Result};
use crate::examplegen::SerializedContext;
use crate::ingest::Ontology;
use crate::num::Scalar;
use crate::readers::{ChoiceScores, SpanScores};
use crate::text::rfind_tokens;
use crate::types::{SlotName, SlotValue, OPTION_DONTCARE, OPTION_NONE};

/// Normalized phrases that mark a user utterance as expressing no preference.
pub const DONTCARE_PHRASES: &[&str] = &[
    "do not care",
    "don ' t care",
    "dont care",
    "do n ' t care",
    "does not matter",
    "doesn ' t matter",
    "does n ' t matter",
    "do not mind",
    "don ' t mind",
    "no preference",
    "preference",
    "any will do",
    "either is fine",
    "any is fine",
    "anything is fine",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig<T> {
    pub max_span_len: usize,
    /// Margin τ: the null answer wins when `null + τ ≥ best span`.
    pub null_threshold: T,
    pub canonicalize: bool,
    pub similarity_cutoff: f64,
}

impl<T: Scalar> Default for DecodeConfig<T> {
    fn default() -> Self {
        Self {
            max_span_len: 10,
            null_threshold: T::zero(),
            canonicalize: true,
            similarity_cutoff: 0.6,
        }
    }
}

impl<T: Scalar> DecodeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_span_len == 0 {
            return Err(Error::InvalidConfig("max_span_len must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.similarity_cutoff) {
            return Err(Error::InvalidConfig(format!(
                "similarity cutoff {} outside [0, 1]",
                self.similarity_cutoff
            )));
        }
        if !self.null_threshold.is_finite() {
            return Err(Error::InvalidConfig("null threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let Some(max) = logits.iter().copied().reduce(T::max) else {
        return Vec::new();
    };
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the maximum; the lowest index wins ties. Panics on empty input.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    None,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanDecision<T> {
    pub kind: SpanKind,
    pub start: usize,
    pub end: usize,
    /// `start + end` logit of the returned pair (the sentinel pair for None).
    pub score: T,
}

/// Best span with `1 ≤ i ≤ j ≤ i + max_span_len − 1` against the sentinel.
///
/// Ties go to the smaller start, then the smaller end. The sentinel pair
/// `(0, 0)` is returned when `null + τ ≥ best`, or when no token follows it.
#[allow(clippy::needless_range_loop)]
pub fn decode_span<T: Scalar>(scores: &SpanScores<T>, cfg: &DecodeConfig<T>) -> SpanDecision<T> {
    let (s, e) = (&scores.start_logits, &scores.end_logits);
    let n = s.len().min(e.len());
    let null = s[0] + e[0];
    let mut best: Option<(usize, usize, T)> = None;
    for i in 1..n {
        let hi = (i + cfg.max_span_len).min(n);
        for j in i..hi {
            let v = s[i] + e[j];
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((i, j, v));
            }
        }
    }
    match best {
        Some((start, end, score)) if null + cfg.null_threshold < score => SpanDecision {
            kind: SpanKind::Value,
            start,
            end,
            score,
        },
        _ => SpanDecision { kind: SpanKind::None, start: 0, end: 0, score: null },
    }
}

/// Maps the argmax option to a value; the score is its softmax probability.
pub fn decode_choice<T: Scalar>(scores: &ChoiceScores<T>, options: &[String]) -> (SlotValue, T) {
    let idx = argmax(&scores.option_logits);
    let prob = softmax(&scores.option_logits)[idx];
    let value = match options[idx].as_str() {
        OPTION_NONE => SlotValue::None,
        OPTION_DONTCARE => SlotValue::DontCare,
        text => SlotValue::Value(text.to_owned()),
    };
    (value, prob)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Categorical,
    Extractive,
}

/// Token span a value was read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub slot: SlotName,
    pub value: SlotValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Evidence>,
    pub score: f64,
    pub model: ModelKind,
}

/// True when a normalized utterance contains a no-preference phrase.
pub fn expresses_dontcare<S: AsRef<str>>(utterance_tokens: &[S]) -> bool {
    DONTCARE_PHRASES.iter().any(|p| {
        let needle: Vec<&str> = p.split(' ').collect();
        rfind_tokens(utterance_tokens, &needle).is_some()
    })
}

/// Turns a span decision into a value.
///
/// A span becomes DontCare when it lies inside one user utterance, that
/// utterance contains a [`DONTCARE_PHRASES`] entry, and the span resolves to
/// no ontology candidate. This test does not depend on `cfg.canonicalize`;
/// the flag only decides whether a resolvable span is replaced by its
/// candidate or kept verbatim.
pub fn span_value<T: Scalar>(
    decision: &SpanDecision<T>,
    context: &SerializedContext,
    slot: &SlotName,
    ontology: &Ontology,
    cfg: &DecodeConfig<T>,
) -> Result<(SlotValue, Option<Evidence>)> {
    if decision.kind == SpanKind::None {
        return Ok((SlotValue::None, None));
    }
    let text = context.span_text(decision.start, decision.end);
    let evidence = Evidence { start: decision.start, end: decision.end, text: text.clone() };
    let resolved = canon::resolve(&text, slot, ontology, cfg.similarity_cutoff)?;
    if resolved == Canonical::NoMatch {
        let utterance = context
            .enclosing_user_turn(decision.start, decision.end)
            .and_then(|t| context.user_range(t));
        if let Some((a, b)) = utterance {
            let toks: Vec<&str> = context.tokens[a..=b].iter().map(|t| t.text.as_str()).collect();
            if expresses_dontcare(&toks) {
                return Ok((SlotValue::DontCare, Some(evidence)));
            }
        }
    }
    let value = match resolved {
        Canonical::Exact(c) | Canonical::Closest(c, _) if cfg.canonicalize => c,
        _ => text,
    };
    Ok((SlotValue::Value(value), Some(evidence)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(s: &[f64], e: &[f64]) -> SpanScores<f64> {
        SpanScores { start_logits: s.to_vec(), end_logits: e.to_vec() }
    }

    fn brute(sc: &SpanScores<f64>, cfg: &DecodeConfig<f64>) -> (SpanKind, usize, usize) {
        let n = sc.len();
        let mut pairs = Vec::new();
        for i in 1..n {
            for j in i..n {
                if j - i < cfg.max_span_len {
                    pairs.push((sc.start_logits[i] + sc.end_logits[j], i, j));
                }
            }
        }
        let best = pairs
            .iter()
            .fold(None::<(f64, usize, usize)>, |acc, &p| match acc {
                Some(a) if a.0 > p.0 || (a.0 == p.0 && (a.1, a.2) < (p.1, p.2)) => Some(a),
                _ => Some(p),
            });
        match best {
            Some((v, i, j)) if sc.start_logits[0] + sc.end_logits[0] + cfg.null_threshold < v => (SpanKind::Value, i, j),
            _ => (SpanKind::None, 0, 0),
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0f64, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-12);
        let p = softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let p = softmax(&[1000.0f32, 0.0]);
        assert!(p[0].is_finite() && (p[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn span_examples() {
        let cfg = DecodeConfig::<f64>::default();
        let mut s = vec![0.0; 8];
        let mut e = vec![0.0; 8];
        s[5] = 3.0;
        e[6] = 3.0;
        let d = decode_span(&scores(&s, &e), &cfg);
        assert_eq!((d.kind, d.start, d.end), (SpanKind::Value, 5, 6));

        let d = decode_span(&scores(&[0.0; 4], &[0.0; 4]), &cfg);
        assert_eq!((d.kind, d.start, d.end), (SpanKind::None, 0, 0));

        // End peak before start peak.
        let d = decode_span(&scores(&[0.0, 0.0, 0.0, 2.0], &[0.0, 0.0, 2.0, 0.0]), &cfg);
        assert!(d.start <= d.end);
        assert_eq!(brute(&scores(&[0.0, 0.0, 0.0, 2.0], &[0.0, 0.0, 2.0, 0.0]), &cfg), (d.kind, d.start, d.end));
    }

    #[test]
    fn threshold_shifts_null_decision() {
        let sc = scores(&[1.0, 1.5, 0.0], &[1.0, 1.0, 0.0]);
        let cfg = DecodeConfig::<f64>::default();
        assert_eq!(decode_span(&sc, &cfg).kind, SpanKind::Value);
        let cfg = DecodeConfig { null_threshold: 0.5, ..cfg };
        assert_eq!(decode_span(&sc, &cfg).kind, SpanKind::None);
    }

    #[test]
    fn choice_examples() {
        let opts: Vec<String> = ["free", "no", "yes", OPTION_DONTCARE, OPTION_NONE].map(String::from).to_vec();
        let v = |l: &[f64]| decode_choice(&ChoiceScores { option_logits: l.to_vec() }, &opts).0;
        assert_eq!(v(&[0.0, 0.0, 2.0, 0.0, 0.0]), SlotValue::Value("yes".into()));
        assert_eq!(v(&[0.0, 0.0, 0.0, 0.0, 1.0]), SlotValue::None);
        assert_eq!(v(&[0.0, 0.0, 0.0, 1.0, 0.0]), SlotValue::DontCare);
        assert_eq!(v(&[1.0, 1.0, 0.0, 0.0, 0.0]), SlotValue::Value("free".into()));
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::<f64>::default().validate().is_ok());
        assert!(DecodeConfig::<f64> { max_span_len: 0, ..Default::default() }.validate().is_err());
        assert!(DecodeConfig::<f32> { similarity_cutoff: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn dontcare_phrases_match_tokens() {
        assert!(expresses_dontcare(&["i", "do", "not", "care", "about", "the", "area"]));
        assert!(expresses_dontcare(&["it", "doesn", "'", "t", "matter"]));
        assert!(!expresses_dontcare(&["i", "care", "a", "lot"]));
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            n in 1usize..13,
            l in 1usize..6,
            tau in -1.0f64..1.0,
            raw in proptest::collection::vec(-3i32..4, 26),
        ) {
            let s: Vec<f64> = raw[..n].iter().map(|&x| x as f64 / 2.0).collect();
            let e: Vec<f64> = raw[13..13 + n].iter().map(|&x| x as f64 / 2.0).collect();
            let sc = scores(&s, &e);
            let cfg = DecodeConfig { max_span_len: l, null_threshold: tau, ..Default::default() };
            let d = decode_span(&sc, &cfg);
            prop_assert_eq!((d.kind, d.start, d.end), brute(&sc, &cfg));
            if d.kind == SpanKind::Value {
                prop_assert!(d.start >= 1 && d.end - d.start < l);
            }
        }
    }
}
