//! Per-turn state prediction.
//!
//! Every turn is predicted from its full context `D_t`; nothing is carried
//! over from earlier turns unless [`TrackOptions::carryover`] is set.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{decode_choice, decode_span, span_value, DecodeConfig, ModelKind, SlotPrediction};
use crate::error::{Error, Result};
use crate::examplegen::{choice_options, example_id, DialogueView, SerializedContext};
use crate::ingest::{DialogueCorpus, Ontology};
use crate::num::Scalar;
use crate::readers::{self, ChoiceQuery, Concurrency, Reader, SpanQuery};
use crate::taxonomy::SlotSpec;
use crate::types::{Dialogue, SlotName, SlotValue};

/// A slot whose reader call failed under partial tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFailure {
    pub slot: SlotName,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePrediction {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub state: BTreeMap<SlotName, SlotPrediction>,
    /// Slots predicted as None because their reader failed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<SlotFailure>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackOptions {
    /// Keep the previous turn's value when a slot decodes to None.
    pub carryover: bool,
    /// Record reader failures per slot instead of aborting.
    pub partial: bool,
    /// Route every slot to span decoding.
    pub no_categorical_model: bool,
}

/// Readers per model type; they may be the same object.
#[derive(Clone)]
pub struct ReaderSet<T> {
    pub span: Arc<dyn Reader<T>>,
    pub choice: Arc<dyn Reader<T>>,
}

impl<T: Scalar> ReaderSet<T> {
    pub fn single(reader: Arc<dyn Reader<T>>) -> Self {
        Self { span: Arc::clone(&reader), choice: reader }
    }

    pub fn is_oracle(&self) -> bool {
        self.span.is_oracle() || self.choice.is_oracle()
    }

    fn single_flight(&self) -> bool {
        self.span.concurrency() == Concurrency::SingleFlight || self.choice.concurrency() == Concurrency::SingleFlight
    }

    /// `span` or `span+choice` names for reports.
    pub fn name(&self) -> String {
        if Arc::ptr_eq(&self.span, &self.choice) || self.span.name() == self.choice.name() {
            self.span.name().to_owned()
        } else {
            format!("{}+{}", self.span.name(), self.choice.name())
        }
    }
}

/// Model a slot is tracked with. Slots that are both categorical and
/// extractive use the categorical model.
pub fn route(spec: &SlotSpec, opts: &TrackOptions) -> ModelKind {
    if spec.is_categorical && !opts.no_categorical_model {
        ModelKind::Categorical
    } else {
        ModelKind::Extractive
    }
}

/// Everything needed to predict, shared across turns.
pub struct Tracker<'a, T> {
    pub specs: &'a [SlotSpec],
    pub readers: &'a ReaderSet<T>,
    pub ontology: &'a Ontology,
    pub config: &'a DecodeConfig<T>,
    pub options: TrackOptions,
    options_cache: Vec<Vec<String>>,
}

impl<'a, T: Scalar> Tracker<'a, T> {
    pub fn new(
        specs: &'a [SlotSpec],
        readers: &'a ReaderSet<T>,
        ontology: &'a Ontology,
        config: &'a DecodeConfig<T>,
        options: TrackOptions,
    ) -> Result<Self> {
        config.validate()?;
        for spec in specs {
            if !ontology.contains_slot(&spec.slot) {
                return Err(Error::UnknownSlotInOntology(spec.slot.clone()));
            }
        }
        Ok(Self {
            specs,
            readers,
            ontology,
            config,
            options,
            options_cache: specs.iter().map(choice_options).collect(),
        })
    }

    fn predict_slot(
        &self,
        dialogue: &Dialogue,
        turn: usize,
        ctx: &SerializedContext,
        i: usize,
    ) -> Result<SlotPrediction> {
        let spec = &self.specs[i];
        let id = example_id(&dialogue.id, turn, &spec.slot);
        let wrap = |source| Error::Reader {
            dialogue: dialogue.id.clone(),
            turn,
            slot: spec.slot.clone(),
            source,
        };
        let model = route(spec, &self.options);
        match model {
            ModelKind::Categorical => {
                let options = &self.options_cache[i];
                let q = ChoiceQuery {
                    id: &id,
                    dialogue_id: &dialogue.id,
                    turn,
                    slot: &spec.slot,
                    question: &spec.question,
                    context: ctx,
                    options,
                };
                let scores = readers::score_choice(self.readers.choice.as_ref(), &q).map_err(wrap)?;
                let (value, score) = decode_choice(&scores, options);
                Ok(SlotPrediction { slot: spec.slot.clone(), value, evidence: None, score: score.as_f64(), model })
            }
            ModelKind::Extractive => {
                let q = SpanQuery {
                    id: &id,
                    dialogue_id: &dialogue.id,
                    turn,
                    slot: &spec.slot,
                    question: &spec.question,
                    context: ctx,
                };
                let scores = readers::score_span(self.readers.span.as_ref(), &q).map_err(wrap)?;
                let decision = decode_span(&scores, self.config);
                let (value, evidence) = span_value(&decision, ctx, &spec.slot, self.ontology, self.config)?;
                Ok(SlotPrediction {
                    slot: spec.slot.clone(),
                    value,
                    evidence,
                    score: decision.score.as_f64(),
                    model,
                })
            }
        }
    }

    fn predict_turn(&self, view: &DialogueView<'_>, turn: usize) -> Result<StatePrediction> {
        let dialogue = view.dialogue;
        let ctx = view.context(turn)?;
        let mut state = BTreeMap::new();
        let mut failures = Vec::new();
        for (i, spec) in self.specs.iter().enumerate() {
            let pred = match self.predict_slot(dialogue, turn, &ctx, i) {
                Ok(p) => p,
                Err(e @ Error::Reader { .. }) if self.options.partial => {
                    log::warn!("{e}");
                    failures.push(SlotFailure { slot: spec.slot.clone(), error: e.to_string() });
                    SlotPrediction {
                        slot: spec.slot.clone(),
                        value: SlotValue::None,
                        evidence: None,
                        score: 0.0,
                        model: route(spec, &self.options),
                    }
                }
                Err(e) => return Err(e),
            };
            state.insert(spec.slot.clone(), pred);
        }
        Ok(StatePrediction { dialogue_id: dialogue.id.clone(), turn_index: turn, state, failures })
    }

    /// Prediction for a single turn (1-based).
    pub fn predict_state(&self, dialogue: &Dialogue, turn: usize) -> Result<StatePrediction> {
        self.predict_turn(&DialogueView::new(dialogue), turn)
    }

    /// Predictions for every turn of a dialogue, in order.
    pub fn predict_dialogue(&self, dialogue: &Dialogue) -> Result<Vec<StatePrediction>> {
        let view = DialogueView::new(dialogue);
        let mut out: Vec<StatePrediction> = Vec::with_capacity(view.num_turns());
        for turn in 1..=view.num_turns() {
            let mut pred = self.predict_turn(&view, turn)?;
            if self.options.carryover {
                if let Some(prev) = out.last() {
                    for (slot, p) in pred.state.iter_mut() {
                        match prev.state.get(slot) {
                            Some(old) if p.value.is_none() && !old.value.is_none() => *p = old.clone(),
                            _ => {}
                        }
                    }
                }
            }
            out.push(pred);
        }
        Ok(out)
    }

    /// Predictions for a whole corpus, ordered by dialogue then turn.
    ///
    /// Dialogues run in parallel on the current rayon pool unless a reader
    /// declares itself single-flight.
    pub fn predict_corpus(&self, corpus: &DialogueCorpus) -> Result<Vec<StatePrediction>> {
        let per_dialogue: Vec<Vec<StatePrediction>> = if self.readers.single_flight() {
            corpus.dialogues.iter().map(|d| self.predict_dialogue(d)).collect::<Result<_>>()?
        } else {
            corpus.dialogues.par_iter().map(|d| self.predict_dialogue(d)).collect::<Result<_>>()?
        };
        Ok(per_dialogue.into_iter().flatten().collect())
    }
}

/// One-call prediction for a single turn.
pub fn predict_state<T: Scalar>(
    dialogue: &Dialogue,
    turn: usize,
    specs: &[SlotSpec],
    readers: &ReaderSet<T>,
    ontology: &Ontology,
    config: &DecodeConfig<T>,
    options: TrackOptions,
) -> Result<StatePrediction> {
    Tracker::new(specs, readers, ontology, config, options)?.predict_state(dialogue, turn)
}

pub fn write_predictions<W: Write>(mut out: W, preds: &[StatePrediction]) -> Result<()> {
    for p in preds {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<StatePrediction>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readers::{ChoiceScores, ExactMatchReader, OracleReader, ReaderError, SpanScores};
    use crate::testkit;
    use crate::types::gold_primary;

    struct Failing;

    impl Reader<f64> for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn score_span(&self, q: &SpanQuery<'_>) -> std::result::Result<SpanScores<f64>, ReaderError> {
            if q.slot.as_str() == "restaurant.semi.name" {
                Err(ReaderError::Failure("boom".into()))
            } else {
                Ok(SpanScores::one_hot(q.context.len(), 0, 0))
            }
        }
        fn score_choice(&self, q: &ChoiceQuery<'_>) -> std::result::Result<ChoiceScores<f64>, ReaderError> {
            let mut v = vec![0.0; q.options.len()];
            *v.last_mut().unwrap() = 1.0;
            Ok(ChoiceScores { option_logits: v })
        }
    }

    #[test]
    fn oracle_recovers_sample_state() {
        let corpus = Arc::new(testkit::sample_corpus());
        let specs = testkit::specs_for(&corpus, 2);
        let readers = ReaderSet::single(Arc::new(OracleReader::new(Arc::clone(&corpus))) as Arc<dyn Reader<f64>>);
        let cfg = DecodeConfig::default();
        let tracker = Tracker::new(&specs, &readers, &corpus.ontology, &cfg, TrackOptions::default()).unwrap();
        let d = &corpus.dialogues[0];
        for pred in tracker.predict_dialogue(d).unwrap() {
            let gold = &d.turn(pred.turn_index).unwrap().gold_state;
            for (slot, p) in &pred.state {
                assert_eq!(p.value, gold_primary(gold, slot), "turn {} {slot}", pred.turn_index);
            }
        }
    }

    #[test]
    fn exact_match_reads_restaurant_name() {
        let corpus = testkit::sample_corpus();
        let specs = testkit::specs_for(&corpus, 0);
        let readers = ReaderSet::single(Arc::new(ExactMatchReader::new(Arc::new(corpus.ontology.clone()))) as Arc<dyn Reader<f64>>);
        let cfg = DecodeConfig::default();
        let pred = predict_state(&corpus.dialogues[0], 3, &specs, &readers, &corpus.ontology, &cfg, TrackOptions::default()).unwrap();
        let name = &pred.state[&"restaurant.semi.name".parse::<SlotName>().unwrap()];
        assert_eq!(name.value, SlotValue::Value("fitzbillies restaurant".into()));
        assert_eq!(name.evidence.as_ref().unwrap().text, "fitzbillies restaurant");
        assert_eq!(name.model, ModelKind::Extractive);
    }

    #[test]
    fn failure_names_slot_and_partial_mode_continues() {
        let corpus = testkit::sample_corpus();
        let specs = testkit::specs_for(&corpus, 0);
        let readers = ReaderSet::single(Arc::new(Failing) as Arc<dyn Reader<f64>>);
        let cfg = DecodeConfig::default();
        let d = &corpus.dialogues[0];
        let err = predict_state(d, 1, &specs, &readers, &corpus.ontology, &cfg, TrackOptions::default()).unwrap_err();
        assert!(matches!(&err, Error::Reader { slot, .. } if slot.as_str() == "restaurant.semi.name"));
        assert!(err.to_string().contains("restaurant.semi.name"));

        let opts = TrackOptions { partial: true, ..Default::default() };
        let pred = predict_state(d, 1, &specs, &readers, &corpus.ontology, &cfg, opts).unwrap();
        assert_eq!(pred.failures.len(), 1);
        assert_eq!(pred.state.len(), specs.len());
    }

    #[test]
    fn ablation_routes_everything_to_spans() {
        let corpus = testkit::choice_corpus();
        let specs = testkit::specs_for(&corpus, 15);
        assert!(specs.iter().all(|s| route(s, &TrackOptions::default()) == ModelKind::Categorical));
        let opts = TrackOptions { no_categorical_model: true, ..Default::default() };
        assert!(specs.iter().all(|s| route(s, &opts) == ModelKind::Extractive));
    }

    /// Exact match on turn 1, nothing afterwards.
    struct FirstTurnOnly(ExactMatchReader);

    impl Reader<f64> for FirstTurnOnly {
        fn name(&self) -> &str {
            "first-turn"
        }
        fn score_span(&self, q: &SpanQuery<'_>) -> std::result::Result<SpanScores<f64>, ReaderError> {
            if q.turn == 1 {
                self.0.score_span(q)
            } else {
                Ok(SpanScores::one_hot(q.context.len(), 0, 0))
            }
        }
        fn score_choice(&self, q: &ChoiceQuery<'_>) -> std::result::Result<ChoiceScores<f64>, ReaderError> {
            self.0.score_choice(q)
        }
    }

    #[test]
    fn carryover_keeps_previous_value() {
        let corpus = testkit::sample_corpus();
        let specs = testkit::specs_for(&corpus, 0);
        let reader = FirstTurnOnly(ExactMatchReader::new(Arc::new(corpus.ontology.clone())));
        let readers = ReaderSet::single(Arc::new(reader) as Arc<dyn Reader<f64>>);
        let cfg = DecodeConfig::default();
        let d = testkit::dialogue("c", &[("somewhere in the north", Some("ok"), &[]), ("what else", None, &[])]);
        let area: SlotName = "restaurant.semi.area".parse().unwrap();

        let plain = Tracker::new(&specs, &readers, &corpus.ontology, &cfg, TrackOptions::default()).unwrap();
        let preds = plain.predict_dialogue(&d).unwrap();
        assert_eq!(preds[0].state[&area].value, SlotValue::Value("north".into()));
        assert_eq!(preds[1].state[&area].value, SlotValue::None);

        let opts = TrackOptions { carryover: true, ..Default::default() };
        let carry = Tracker::new(&specs, &readers, &corpus.ontology, &cfg, opts).unwrap();
        assert_eq!(carry.predict_dialogue(&d).unwrap()[1].state[&area].value, SlotValue::Value("north".into()));
    }

    #[test]
    fn predictions_round_trip_jsonl() {
        let corpus = Arc::new(testkit::sample_corpus());
        let specs = testkit::specs_for(&corpus, 2);
        let readers = ReaderSet::single(Arc::new(OracleReader::new(Arc::clone(&corpus))) as Arc<dyn Reader<f64>>);
        let cfg = DecodeConfig::default();
        let preds = Tracker::new(&specs, &readers, &corpus.ontology, &cfg, TrackOptions::default())
            .unwrap()
            .predict_corpus(&corpus)
            .unwrap();
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        assert_eq!(read_predictions(&buf[..]).unwrap(), preds);
    }
}
