//! Joint goal accuracy, slot accuracy and error breakdowns.
//!
//! Every turn of every dialogue is scored, and every ontology slot is
//! checked at every turn. A predicted value is correct when, after
//! normalization and aliasing, it equals any alternative of the gold value.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decode::{ModelKind, SlotPrediction};
use crate::error::{Error, Result};
use crate::ingest::{DialogueCorpus, Ontology};
use crate::taxonomy::SlotSpec;
use crate::text::normalize_text;
use crate::track::StatePrediction;
use crate::types::{GoldValue, SlotName, SlotValue};

/// Watermark attached to reports produced with gold-reading readers.
pub const ORACLE_WATERMARK: &str = "oracle";

/// Does `pred` match the gold annotation (`None` when the slot is unset)?
pub fn values_match(pred: &SlotValue, gold: Option<&GoldValue>, ontology: &Ontology) -> bool {
    match (pred, gold) {
        (SlotValue::None, None) => true,
        (SlotValue::DontCare, Some(GoldValue::DontCare)) => true,
        (SlotValue::Value(p), Some(GoldValue::Value(alts))) => {
            let p = normalize_text(p);
            let p = ontology.resolve(&p);
            alts.iter().any(|a| ontology.resolve(a) == p)
        }
        _ => false,
    }
}

/// Error categories of a wrong (turn, slot) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    RefNotNonePredNone,
    RefNonePredNotNone,
    BothNotNoneMismatch,
}

pub fn classify_error(pred: &SlotValue, gold: Option<&GoldValue>) -> ErrorKind {
    match (pred.is_none(), gold.is_none()) {
        (true, _) => ErrorKind::RefNotNonePredNone,
        (false, true) => ErrorKind::RefNonePredNotNone,
        (false, false) => ErrorKind::BothNotNoneMismatch,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub ref_not_none_pred_none: usize,
    pub ref_none_pred_not_none: usize,
    pub both_not_none_mismatch: usize,
}

impl ErrorCounts {
    fn add(&mut self, kind: ErrorKind) {
        match kind {
            ErrorKind::RefNotNonePredNone => self.ref_not_none_pred_none += 1,
            ErrorKind::RefNonePredNotNone => self.ref_none_pred_not_none += 1,
            ErrorKind::BothNotNoneMismatch => self.both_not_none_mismatch += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.ref_not_none_pred_none + self.ref_none_pred_not_none + self.both_not_none_mismatch
    }

    /// Shares in percent, in field order; all zero when there are no errors.
    pub fn percentages(&self) -> [f64; 3] {
        let t = self.total();
        if t == 0 {
            return [0.0; 3];
        }
        [self.ref_not_none_pred_none, self.ref_none_pred_not_none, self.both_not_none_mismatch]
            .map(|c| 100.0 * c as f64 / t as f64)
    }
}

/// Error counts per model type, keyed by the model recorded in each prediction.
pub type ErrorBreakdown = BTreeMap<ModelKind, ErrorCounts>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotTally {
    pub correct: usize,
    pub total: usize,
    pub nonempty_correct: usize,
    pub nonempty_total: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl SlotTally {
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct, self.total)
    }

    pub fn nonempty_accuracy(&self) -> Option<f64> {
        ratio(self.nonempty_correct, self.nonempty_total)
    }
}

/// Raw counts from one pass over predictions and gold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub num_dialogues: usize,
    pub num_turns: usize,
    pub joint_correct: usize,
    pub slots: BTreeMap<SlotName, SlotTally>,
    pub errors: ErrorBreakdown,
}

/// Scores predictions against the corpus.
///
/// Fails with `MissingPrediction` when a turn, or an ontology slot within
/// a turn, has no prediction. Extra predictions are ignored.
pub fn tally(predictions: &[StatePrediction], corpus: &DialogueCorpus) -> Result<Tally> {
    let index: HashMap<(&str, usize), &StatePrediction> = predictions
        .iter()
        .map(|p| ((p.dialogue_id.as_str(), p.turn_index), p))
        .collect();
    let slots: Vec<&SlotName> = corpus.ontology.slots().collect();
    let mut out = Tally {
        num_dialogues: corpus.len(),
        slots: slots.iter().map(|s| ((*s).clone(), SlotTally::default())).collect(),
        ..Tally::default()
    };
    for d in &corpus.dialogues {
        for turn in &d.turns {
            let missing = |slot: Option<&SlotName>| Error::MissingPrediction {
                dialogue: d.id.clone(),
                turn: turn.index,
                slot: slot.cloned(),
            };
            let pred = index.get(&(d.id.as_str(), turn.index)).ok_or_else(|| missing(None))?;
            out.num_turns += 1;
            let mut all_correct = true;
            for slot in &slots {
                let p: &SlotPrediction = pred.state.get(*slot).ok_or_else(|| missing(Some(slot)))?;
                let gold = turn.gold_state.get(*slot);
                let ok = values_match(&p.value, gold, &corpus.ontology);
                let t = out.slots.get_mut(*slot).expect("slot initialized");
                t.total += 1;
                t.correct += ok as usize;
                if gold.is_some() {
                    t.nonempty_total += 1;
                    t.nonempty_correct += ok as usize;
                }
                if !ok {
                    all_correct = false;
                    out.errors.entry(p.model).or_default().add(classify_error(&p.value, gold));
                }
            }
            out.joint_correct += all_correct as usize;
        }
    }
    Ok(out)
}

/// Fraction of turns on which every slot is right.
pub fn joint_goal_accuracy(predictions: &[StatePrediction], corpus: &DialogueCorpus) -> Result<f64> {
    let t = tally(predictions, corpus)?;
    ratio(t.joint_correct, t.num_turns).ok_or(Error::EmptyCorpus)
}

/// Per-slot accuracy. With `nonempty_only`, pairs whose gold is None are
/// left out; slots with no remaining pairs map to `None`.
pub fn slot_metrics(
    predictions: &[StatePrediction],
    corpus: &DialogueCorpus,
    nonempty_only: bool,
) -> Result<BTreeMap<SlotName, Option<f64>>> {
    let t = tally(predictions, corpus)?;
    Ok(t.slots
        .into_iter()
        .map(|(s, c)| (s, if nonempty_only { c.nonempty_accuracy() } else { c.accuracy() }))
        .collect())
}

pub fn error_breakdown(predictions: &[StatePrediction], corpus: &DialogueCorpus) -> Result<ErrorBreakdown> {
    Ok(tally(predictions, corpus)?.errors)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// SHA-256 over the decoding configuration and the slot classification.
pub fn config_fingerprint<C: Serialize>(config: &C, specs: &[SlotSpec]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    h.update(b"\n");
    h.update(serde_json::to_vec(specs)?);
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watermark: Option<String>,
    pub reader: String,
    pub num_dialogues: usize,
    pub num_turns: usize,
    pub joint_goal_accuracy: f64,
    pub average_slot_accuracy: f64,
    pub per_slot_accuracy: BTreeMap<SlotName, f64>,
    /// Mean over slots that have at least one non-None gold pair.
    pub average_nonempty_slot_accuracy: Option<f64>,
    pub nonempty_slot_accuracy: BTreeMap<SlotName, Option<f64>>,
    pub error_breakdown: ErrorBreakdown,
    pub config_fingerprint: String,
    /// The resolved run configuration.
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Builds the report; `oracle` adds the watermark.
    pub fn new(
        tally: &Tally,
        reader: &str,
        oracle: bool,
        fingerprint: String,
        config: serde_json::Value,
    ) -> Result<Self> {
        let jga = ratio(tally.joint_correct, tally.num_turns).ok_or(Error::EmptyCorpus)?;
        let per_slot: BTreeMap<SlotName, f64> = tally
            .slots
            .iter()
            .filter_map(|(s, c)| c.accuracy().map(|a| (s.clone(), a)))
            .collect();
        let nonempty: BTreeMap<SlotName, Option<f64>> =
            tally.slots.iter().map(|(s, c)| (s.clone(), c.nonempty_accuracy())).collect();
        Ok(Self {
            watermark: oracle.then(|| ORACLE_WATERMARK.to_owned()),
            reader: reader.to_owned(),
            num_dialogues: tally.num_dialogues,
            num_turns: tally.num_turns,
            joint_goal_accuracy: jga,
            average_slot_accuracy: mean(per_slot.values().copied()).unwrap_or(0.0),
            per_slot_accuracy: per_slot,
            average_nonempty_slot_accuracy: mean(nonempty.values().filter_map(|x| *x)),
            nonempty_slot_accuracy: nonempty,
            error_breakdown: tally.errors.clone(),
            config_fingerprint: fingerprint,
            config,
        })
    }

    pub fn is_oracle(&self) -> bool {
        self.watermark.as_deref() == Some(ORACLE_WATERMARK)
    }

    /// `metric,value` rows.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        let mut row = |k: &str, v: String| w.write_record([k, &v]);
        row("watermark", self.watermark.clone().unwrap_or_default())?;
        row("reader", self.reader.clone())?;
        row("num_dialogues", self.num_dialogues.to_string())?;
        row("num_turns", self.num_turns.to_string())?;
        row("joint_goal_accuracy", format!("{:.6}", self.joint_goal_accuracy))?;
        row("average_slot_accuracy", format!("{:.6}", self.average_slot_accuracy))?;
        row(
            "average_nonempty_slot_accuracy",
            self.average_nonempty_slot_accuracy.map(|x| format!("{x:.6}")).unwrap_or_default(),
        )?;
        for (model, c) in &self.error_breakdown {
            let m = match model {
                ModelKind::Categorical => "categorical",
                ModelKind::Extractive => "extractive",
            };
            let pct = c.percentages();
            row(&format!("{m}.ref_not_none_pred_none"), c.ref_not_none_pred_none.to_string())?;
            row(&format!("{m}.ref_none_pred_not_none"), c.ref_none_pred_not_none.to_string())?;
            row(&format!("{m}.both_not_none_mismatch"), c.both_not_none_mismatch.to_string())?;
            row(&format!("{m}.ref_not_none_pred_none_pct"), format!("{:.2}", pct[0]))?;
            row(&format!("{m}.ref_none_pred_not_none_pct"), format!("{:.2}", pct[1]))?;
            row(&format!("{m}.both_not_none_mismatch_pct"), format!("{:.2}", pct[2]))?;
        }
        row("config_fingerprint", self.config_fingerprint.clone())?;
        w.flush()?;
        Ok(())
    }

    /// `slot,accuracy,nonempty_accuracy` rows, one per slot.
    pub fn write_slot_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "accuracy", "nonempty_accuracy"])?;
        for (slot, acc) in &self.per_slot_accuracy {
            let ne = self.nonempty_slot_accuracy.get(slot).copied().flatten();
            w.write_record([
                slot.to_string(),
                format!("{acc:.6}"),
                ne.map(|x| format!("{x:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn pred(d: &str, turn: usize, vals: &[(&str, SlotValue)]) -> StatePrediction {
        StatePrediction {
            dialogue_id: d.to_owned(),
            turn_index: turn,
            state: vals
                .iter()
                .map(|(s, v)| {
                    let slot: SlotName = s.parse().unwrap();
                    (
                        slot.clone(),
                        SlotPrediction { slot, value: v.clone(), evidence: None, score: 0.0, model: ModelKind::Extractive },
                    )
                })
                .collect(),
            failures: Vec::new(),
        }
    }

    fn v(s: &str) -> SlotValue {
        SlotValue::Value(s.into())
    }

    fn two_turn_corpus() -> DialogueCorpus {
        DialogueCorpus {
            dialogues: vec![testkit::dialogue(
                "d",
                &[
                    ("north please", Some("ok"), &[("hotel.semi.area", "north")]),
                    ("and it leaves at 15:29", None, &[("hotel.semi.area", "north"), ("train.semi.leaveat", "15:29")]),
                ],
            )],
            ontology: Ontology::new(
                [
                    ("hotel.semi.area", vec!["north", "south"]),
                    ("train.semi.leaveat", vec!["15:29", "16:07"]),
                ]
                .into_iter()
                .map(|(s, vs)| (s.parse().unwrap(), vs.into_iter().map(String::from).collect()))
                .collect(),
            ),
        }
    }

    #[test]
    fn one_wrong_slot_in_two_turns() {
        let c = two_turn_corpus();
        let preds = vec![
            pred("d", 1, &[("hotel.semi.area", v("north")), ("train.semi.leaveat", SlotValue::None)]),
            pred("d", 2, &[("hotel.semi.area", v("north")), ("train.semi.leaveat", v("16:07"))]),
        ];
        assert_eq!(joint_goal_accuracy(&preds, &c).unwrap(), 0.5);
        let per = slot_metrics(&preds, &c, false).unwrap();
        assert_eq!(per[&"hotel.semi.area".parse().unwrap()], Some(1.0));
        assert_eq!(per[&"train.semi.leaveat".parse().unwrap()], Some(0.5));
        let ne = slot_metrics(&preds, &c, true).unwrap();
        assert_eq!(ne[&"train.semi.leaveat".parse().unwrap()], Some(0.0));
        let eb = error_breakdown(&preds, &c).unwrap();
        assert_eq!(eb[&ModelKind::Extractive].both_not_none_mismatch, 1);
        assert_eq!(eb[&ModelKind::Extractive].total(), 1);
    }

    #[test]
    fn error_categories() {
        let north = GoldValue::Value(vec!["north".into()]);
        assert_eq!(classify_error(&SlotValue::None, Some(&north)), ErrorKind::RefNotNonePredNone);
        assert_eq!(classify_error(&v("yes"), None), ErrorKind::RefNonePredNotNone);
        let t = GoldValue::Value(vec!["15:29".into()]);
        assert_eq!(classify_error(&v("16:07"), Some(&t)), ErrorKind::BothNotNoneMismatch);
        assert_eq!(classify_error(&SlotValue::DontCare, None), ErrorKind::RefNonePredNotNone);
    }

    #[test]
    fn matching_uses_alternatives_and_aliases() {
        let ont = two_turn_corpus()
            .ontology
            .with_aliases([("northern".to_owned(), "north".to_owned())].into())
            .unwrap();
        let gold = GoldValue::Value(vec!["south".into(), "north".into()]);
        assert!(values_match(&v("north"), Some(&gold), &ont));
        assert!(values_match(&v("Northern"), Some(&gold), &ont));
        assert!(!values_match(&v("east"), Some(&gold), &ont));
        assert!(values_match(&SlotValue::DontCare, Some(&GoldValue::DontCare), &ont));
        assert!(!values_match(&SlotValue::None, Some(&GoldValue::DontCare), &ont));
    }

    #[test]
    fn missing_predictions_are_errors() {
        let c = two_turn_corpus();
        let preds = vec![pred("d", 1, &[("hotel.semi.area", v("north")), ("train.semi.leaveat", SlotValue::None)])];
        assert!(matches!(joint_goal_accuracy(&preds, &c), Err(Error::MissingPrediction { turn: 2, slot: None, .. })));
        let preds = vec![
            pred("d", 1, &[("hotel.semi.area", v("north"))]),
            pred("d", 2, &[("hotel.semi.area", v("north"))]),
        ];
        assert!(matches!(joint_goal_accuracy(&preds, &c), Err(Error::MissingPrediction { slot: Some(_), .. })));
    }

    #[test]
    fn always_none_hits_empty_state_fraction() {
        // 10 single-turn dialogues, 3 with empty gold state.
        let dialogues = (0..10)
            .map(|i| {
                let state: &[(&str, &str)] = if i < 3 { &[] } else { &[("hotel.semi.area", "north")] };
                testkit::dialogue(&format!("d{i}"), &[("hi", None, state)])
            })
            .collect();
        let c = DialogueCorpus { dialogues, ontology: two_turn_corpus().ontology };
        let preds: Vec<_> = (0..10)
            .map(|i| pred(&format!("d{i}"), 1, &[("hotel.semi.area", SlotValue::None), ("train.semi.leaveat", SlotValue::None)]))
            .collect();
        assert!((joint_goal_accuracy(&preds, &c).unwrap() - 0.3).abs() < 1e-12);
        let ne = slot_metrics(&preds, &c, true).unwrap();
        assert_eq!(ne[&"hotel.semi.area".parse().unwrap()], Some(0.0));
        assert_eq!(ne[&"train.semi.leaveat".parse().unwrap()], None);
    }

    #[test]
    fn fingerprint_tracks_config() {
        let specs = testkit::specs_for(&testkit::choice_corpus(), 2);
        let a = config_fingerprint(&crate::Config::default(), &specs).unwrap();
        let b = config_fingerprint(&crate::Config { max_span_len: 5, ..Default::default() }, &specs).unwrap();
        assert_eq!(a.len(), 64);
        assert_ne!(a, b);
        assert_eq!(a, config_fingerprint(&crate::Config::default(), &specs).unwrap());
    }

    #[test]
    fn report_watermark_and_csv() {
        let c = two_turn_corpus();
        let preds = vec![
            pred("d", 1, &[("hotel.semi.area", v("north")), ("train.semi.leaveat", SlotValue::None)]),
            pred("d", 2, &[("hotel.semi.area", v("north")), ("train.semi.leaveat", v("15:29"))]),
        ];
        let t = tally(&preds, &c).unwrap();
        let r = EvalReport::new(&t, "oracle", true, "x".into(), serde_json::Value::Null).unwrap();
        assert!(r.is_oracle());
        assert_eq!(r.joint_goal_accuracy, 1.0);
        let mut buf = Vec::new();
        r.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,value\nwatermark,oracle\n"));
        let mut buf = Vec::new();
        r.write_slot_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
