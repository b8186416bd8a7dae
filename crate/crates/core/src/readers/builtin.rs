use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::{ChoiceQuery, ChoiceScores, Reader, ReaderError, SpanQuery, SpanScores};
use crate::examplegen::{gold_option_index, span_label};
use crate::ingest::{DialogueCorpus, Ontology};
use crate::num::Scalar;
use crate::text::rfind_tokens;
use crate::types::{OPTION_DONTCARE, OPTION_NONE};

/// Answers from the gold labels of a corpus.
///
/// Span questions peak at the labeled span (the sentinel for None); a
/// concrete value with no matching span also peaks at the sentinel, so the
/// oracle is exact only on spannable data. Choice questions put logit 1 on
/// the gold option.
pub struct OracleReader {
    corpus: Arc<DialogueCorpus>,
    by_id: HashMap<String, usize>,
}

impl OracleReader {
    pub fn new(corpus: Arc<DialogueCorpus>) -> Self {
        let by_id = corpus
            .dialogues
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        Self { corpus, by_id }
    }

    fn dialogue(&self, id: &str) -> Result<&crate::types::Dialogue, ReaderError> {
        self.by_id
            .get(id)
            .map(|&i| &self.corpus.dialogues[i])
            .ok_or_else(|| ReaderError::Failure(format!("oracle has no dialogue {id}")))
    }
}

impl<T: Scalar> Reader<T> for OracleReader {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score_span(&self, q: &SpanQuery<'_>) -> Result<SpanScores<T>, ReaderError> {
        let d = self.dialogue(q.dialogue_id)?;
        let (start, end) = match span_label(d, q.turn, q.slot, q.context) {
            Ok(a) => (a.start, a.end),
            Err(_) => (0, 0),
        };
        Ok(SpanScores::one_hot(q.context.len(), start, end))
    }

    fn score_choice(&self, q: &ChoiceQuery<'_>) -> Result<ChoiceScores<T>, ReaderError> {
        let d = self.dialogue(q.dialogue_id)?;
        let gold = d.turn(q.turn).and_then(|t| t.gold_state.get(q.slot));
        let idx = gold_option_index(gold, q.options, &self.corpus.ontology)
            .ok_or_else(|| ReaderError::Failure(format!("gold value of {} is not an option", q.slot)))?;
        let mut option_logits = vec![T::zero(); q.options.len()];
        option_logits[idx] = T::one();
        Ok(ChoiceScores { option_logits })
    }

    fn is_oracle(&self) -> bool {
        true
    }
}

/// String matching against the ontology; a deterministic baseline.
///
/// Span scoring marks the last occurrence of any candidate (or alias of a
/// candidate) of the queried slot with logit 1 at its start and end; the
/// sentinel gets 0.5 in both vectors so it wins only when nothing matched.
/// Choice scoring gives 1 to every option whose text occurs in the context,
/// 0 to "do not care" and 0.5 to "not mentioned".
pub struct ExactMatchReader {
    ontology: Arc<Ontology>,
}

impl ExactMatchReader {
    pub fn new(ontology: Arc<Ontology>) -> Self {
        Self { ontology }
    }
}

const SENTINEL_LOGIT: f64 = 0.5;

impl<T: Scalar> Reader<T> for ExactMatchReader {
    fn name(&self) -> &str {
        "exact-match"
    }

    fn score_span(&self, q: &SpanQuery<'_>) -> Result<SpanScores<T>, ReaderError> {
        let n = q.context.len();
        let mut surface: Vec<&str> = self
            .ontology
            .candidates(q.slot)
            .map(|c| c.iter().map(String::as_str).collect())
            .unwrap_or_default();
        let cands: Vec<&str> = surface.clone();
        surface.extend(
            self.ontology
                .aliases()
                .iter()
                .filter(|(_, target)| cands.contains(&target.as_str()))
                .map(|(alias, _)| alias.as_str()),
        );
        let mut scores = match q.context.find_value_span(&surface) {
            Some((s, e)) => SpanScores::one_hot(n, s, e),
            None => SpanScores {
                start_logits: vec![T::zero(); n],
                end_logits: vec![T::zero(); n],
            },
        };
        scores.start_logits[0] = T::of(SENTINEL_LOGIT);
        scores.end_logits[0] = T::of(SENTINEL_LOGIT);
        Ok(scores)
    }

    fn score_choice(&self, q: &ChoiceQuery<'_>) -> Result<ChoiceScores<T>, ReaderError> {
        let hay: Vec<&str> = q.context.tokens[1..].iter().map(|t| t.text.as_str()).collect();
        let option_logits = q
            .options
            .iter()
            .map(|opt| match opt.as_str() {
                OPTION_NONE => T::of(SENTINEL_LOGIT),
                OPTION_DONTCARE => T::zero(),
                text => {
                    let needle: Vec<&str> = text.split(' ').collect();
                    if rfind_tokens(&hay, &needle).is_some() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
            })
            .collect();
        Ok(ChoiceScores { option_logits })
    }
}

/// Uniform logits in `[-1, 1)`, seeded per request.
///
/// The generator for each request is SplitMix64 seeded with the FNV-1a hash
/// of the reader seed, the request id and the token texts, so identical
/// requests always get identical scores regardless of call order.
pub struct RandomReader {
    seed: u64,
}

impl RandomReader {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, id: &str, tokens: impl Iterator<Item = impl AsRef<str>>) -> SplitMix64 {
        let mut h = FnvHasher::default();
        h.write(&self.seed.to_le_bytes());
        h.write(id.as_bytes());
        for t in tokens {
            h.write(&[0xff]);
            h.write(t.as_ref().as_bytes());
        }
        SplitMix64::from_seed(h.finish().to_le_bytes())
    }
}

fn uniform<T: Scalar>(rng: &mut SplitMix64) -> T {
    let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    T::of(2.0 * unit - 1.0)
}

impl<T: Scalar> Reader<T> for RandomReader {
    fn name(&self) -> &str {
        "random"
    }

    fn score_span(&self, q: &SpanQuery<'_>) -> Result<SpanScores<T>, ReaderError> {
        let mut rng = self.rng(q.id, q.context.tokens.iter().map(|t| &t.text));
        let n = q.context.len();
        let start_logits = (0..n).map(|_| uniform(&mut rng)).collect();
        let end_logits = (0..n).map(|_| uniform(&mut rng)).collect();
        Ok(SpanScores { start_logits, end_logits })
    }

    fn score_choice(&self, q: &ChoiceQuery<'_>) -> Result<ChoiceScores<T>, ReaderError> {
        let mut rng = self.rng(q.id, q.context.tokens.iter().map(|t| &t.text).chain(q.options));
        Ok(ChoiceScores {
            option_logits: (0..q.options.len()).map(|_| uniform(&mut rng)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::argmax;
    use crate::examplegen::{choice_options, serialize_context};
    use crate::testkit;
    use crate::types::SlotName;

    fn span_query<'a>(
        id: &'a str,
        slot: &'a SlotName,
        ctx: &'a crate::examplegen::SerializedContext,
        turn: usize,
    ) -> SpanQuery<'a> {
        SpanQuery { id, dialogue_id: id, turn, slot, question: "q", context: ctx }
    }

    #[test]
    fn oracle_span_peaks_at_gold() {
        let corpus = Arc::new(testkit::sample_corpus());
        let d = &corpus.dialogues[0];
        let ctx = serialize_context(d, 3).unwrap();
        let slot: SlotName = "restaurant.semi.name".parse().unwrap();
        let oracle = OracleReader::new(Arc::clone(&corpus));
        let s: SpanScores<f64> = oracle.score_span(&span_query(&d.id, &slot, &ctx, 3)).unwrap();
        let (gs, ge) = ctx.find_value_span(&["fitzbillies restaurant"]).unwrap();
        assert_eq!(argmax(&s.start_logits), gs);
        assert_eq!(argmax(&s.end_logits), ge);
    }

    #[test]
    fn exact_match_falls_back_to_sentinel() {
        let corpus = testkit::sample_corpus();
        let d = &corpus.dialogues[0];
        let ctx = serialize_context(d, 1).unwrap();
        let slot: SlotName = "restaurant.semi.name".parse().unwrap();
        let r = ExactMatchReader::new(Arc::new(corpus.ontology.clone()));
        let s: SpanScores<f64> = r.score_span(&span_query(&d.id, &slot, &ctx, 1)).unwrap();
        assert_eq!((argmax(&s.start_logits), argmax(&s.end_logits)), (0, 0));
    }

    #[test]
    fn exact_match_prefers_later_value() {
        let corpus = testkit::fixture_corpus(1, 0);
        let d = testkit::dialogue("d", &[("i want the north", Some("sure"), &[]), ("actually the south", None, &[])]);
        let ctx = serialize_context(&d, 2).unwrap();
        let slot: SlotName = "hotel.semi.area".parse().unwrap();
        let r = ExactMatchReader::new(Arc::new(corpus.ontology.clone()));
        let s: SpanScores<f32> = r.score_span(&span_query("d", &slot, &ctx, 2)).unwrap();
        assert_eq!(ctx.tokens[argmax(&s.start_logits)].text, "south");
    }

    #[test]
    fn exact_match_choice() {
        let corpus = testkit::fixture_corpus(1, 0);
        let specs = testkit::specs_for(&corpus, 15);
        let area = specs.iter().find(|s| s.slot.as_str() == "hotel.semi.area").unwrap();
        let options = choice_options(area);
        let r = ExactMatchReader::new(Arc::new(corpus.ontology.clone()));
        let d = testkit::dialogue("d", &[("a hotel in the north please", None, &[])]);
        let ctx = serialize_context(&d, 1).unwrap();
        let q = ChoiceQuery { id: "d", dialogue_id: "d", turn: 1, slot: &area.slot, question: "q", context: &ctx, options: &options };
        let s: ChoiceScores<f64> = r.score_choice(&q).unwrap();
        assert_eq!(options[argmax(&s.option_logits)], "north");

        let d = testkit::dialogue("d", &[("a cheap hotel please", None, &[])]);
        let ctx = serialize_context(&d, 1).unwrap();
        let q = ChoiceQuery { context: &ctx, ..q };
        let s: ChoiceScores<f64> = r.score_choice(&q).unwrap();
        assert_eq!(options[argmax(&s.option_logits)], OPTION_NONE);
    }

    #[test]
    fn random_reader_is_deterministic() {
        let d = testkit::dialogue("d", &[("a cheap hotel please", None, &[])]);
        let ctx = serialize_context(&d, 1).unwrap();
        let slot: SlotName = "hotel.semi.area".parse().unwrap();
        let q = span_query("d:1:hotel.semi.area", &slot, &ctx, 1);
        let a: SpanScores<f64> = RandomReader::new(42).score_span(&q).unwrap();
        let b: SpanScores<f64> = RandomReader::new(42).score_span(&q).unwrap();
        let c: SpanScores<f64> = RandomReader::new(43).score_span(&q).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.start_logits.iter().all(|x| (-1.0..1.0).contains(x)));
    }
}
