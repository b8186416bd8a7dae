//! Slot statistics and the extractive/categorical split.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::examplegen::DialogueView;
use crate::ingest::{DialogueCorpus, Ontology};
use crate::types::{GoldValue, SlotName};

const BUILTIN_QUESTIONS: &str = include_str!("../data/questions.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub slot: SlotName,
    pub num_possible_values: usize,
    pub exact_match_rate: f64,
    /// Concrete gold (turn, slot) labels seen.
    pub num_labels: usize,
    /// Of those, labels with a matching token run in `D_t`.
    pub num_matched: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot: SlotName,
    pub question: String,
    pub is_categorical: bool,
    pub is_extractive: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choice_values: Vec<String>,
}

/// Slot → question text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionTable(BTreeMap<String, String>);

impl QuestionTable {
    pub fn builtin() -> Self {
        Self(serde_json::from_str(BUILTIN_QUESTIONS).expect("built-in question table is valid JSON"))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        crate::ingest::read_json(path).map(Self)
    }

    /// Question for a slot; slots missing from the table get a generic
    /// `what is the <name> of the <domain>?`.
    pub fn question(&self, slot: &SlotName) -> String {
        self.0
            .get(slot.as_str())
            .cloned()
            .unwrap_or_else(|| format!("what is the {} of the {}?", slot.name(), slot.domain()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyParams {
    pub num_categorical: usize,
    pub extractive_threshold: f64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self {
            num_categorical: 15,
            extractive_threshold: 0.80,
        }
    }
}

#[derive(Default, Clone)]
struct Counts(BTreeMap<SlotName, (usize, usize)>);

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        for (slot, (n, m)) in other.0 {
            let e = self.0.entry(slot).or_default();
            e.0 += n;
            e.1 += m;
        }
        self
    }
}

/// One [`SlotStats`] per ontology slot, in slot-name order.
///
/// The exact-match rate counts a concrete gold label as matched when any
/// alternative occurs as a contiguous token run anywhere in the full context
/// `D_t` of its turn. Slots without concrete labels get rate 0.
pub fn compute_slot_stats(corpus: &DialogueCorpus) -> Result<Vec<SlotStats>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counts = corpus
        .dialogues
        .par_iter()
        .map(|d| -> Result<Counts> {
            let view = DialogueView::new(d);
            let mut c = Counts::default();
            for turn in &d.turns {
                let values: Vec<_> = turn
                    .gold_state
                    .iter()
                    .filter(|(_, g)| matches!(g, GoldValue::Value(_)))
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let ctx = view.context(turn.index)?;
                for (slot, gold) in values {
                    let e = c.0.entry(slot.clone()).or_default();
                    e.0 += 1;
                    if let GoldValue::Value(alts) = gold {
                        if ctx.find_value_span(alts).is_some() {
                            e.1 += 1;
                        }
                    }
                }
            }
            Ok(c)
        })
        .try_reduce(Counts::default, |a, b| Ok(a.merge(b)))?;

    Ok(corpus
        .ontology
        .slots()
        .map(|slot| {
            let (n, m) = counts.0.get(slot).copied().unwrap_or_default();
            SlotStats {
                slot: slot.clone(),
                num_possible_values: corpus.ontology.candidates(slot).map_or(0, <[_]>::len),
                exact_match_rate: if n == 0 { 0.0 } else { m as f64 / n as f64 },
                num_labels: n,
                num_matched: m,
            }
        })
        .collect())
}

/// Stats sorted ascending by number of values, ties by slot name.
pub fn sort_by_num_values(stats: &[SlotStats]) -> Vec<&SlotStats> {
    let mut sorted: Vec<&SlotStats> = stats.iter().collect();
    sorted.sort_by(|a, b| {
        a.num_possible_values
            .cmp(&b.num_possible_values)
            .then_with(|| a.slot.cmp(&b.slot))
    });
    sorted
}

/// Assigns model types.
///
/// The `num_categorical` slots with the fewest values are categorical; slots
/// whose match rate reaches `extractive_threshold` are extractive; anything
/// left with neither flag is made categorical. Output follows the
/// [`sort_by_num_values`] order.
pub fn classify_slots(
    stats: &[SlotStats],
    ontology: &Ontology,
    questions: &QuestionTable,
    params: ClassifyParams,
) -> Result<Vec<SlotSpec>> {
    if stats.is_empty() {
        return Err(Error::InvalidConfig("no slot statistics to classify".into()));
    }
    if params.num_categorical > stats.len() {
        return Err(Error::InvalidConfig(format!(
            "num_categorical = {} exceeds the {} available slots",
            params.num_categorical,
            stats.len()
        )));
    }
    if !(0.0..=1.0).contains(&params.extractive_threshold) {
        return Err(Error::InvalidConfig(format!(
            "extractive threshold {} outside [0, 1]",
            params.extractive_threshold
        )));
    }
    sort_by_num_values(stats)
        .into_iter()
        .enumerate()
        .map(|(rank, st)| {
            let is_extractive = st.exact_match_rate >= params.extractive_threshold;
            let is_categorical = rank < params.num_categorical || !is_extractive;
            let choice_values = if is_categorical {
                let vals = ontology
                    .candidates(&st.slot)
                    .ok_or_else(|| Error::UnknownSlotInOntology(st.slot.clone()))?;
                if vals.is_empty() {
                    return Err(Error::InvalidConfig(format!("categorical slot {} has no candidate values", st.slot)));
                }
                vals.to_vec()
            } else {
                Vec::new()
            };
            Ok(SlotSpec {
                slot: st.slot.clone(),
                question: questions.question(&st.slot),
                is_categorical,
                is_extractive,
                choice_values,
            })
        })
        .collect()
}

/// Writes the slot table as CSV (`slot,num_possible_values,exact_match_rate,is_categorical,is_extractive`),
/// rows in classification order, rate with four decimals.
pub fn write_stats_csv<W: Write>(out: W, stats: &[SlotStats], specs: &[SlotSpec]) -> Result<()> {
    let by_slot: BTreeMap<&SlotName, &SlotSpec> = specs.iter().map(|s| (&s.slot, s)).collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "num_possible_values", "exact_match_rate", "is_categorical", "is_extractive"])?;
    for st in sort_by_num_values(stats) {
        let spec = by_slot.get(&st.slot);
        w.write_record([
            st.slot.to_string(),
            st.num_possible_values.to_string(),
            format!("{:.4}", st.exact_match_rate),
            spec.is_some_and(|s| s.is_categorical).to_string(),
            spec.is_some_and(|s| s.is_extractive).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_specs(path: &Path) -> Result<Vec<SlotSpec>> {
    let specs: Vec<SlotSpec> = crate::ingest::read_json(path)?;
    for s in &specs {
        if !(s.is_categorical || s.is_extractive) || s.is_categorical == s.choice_values.is_empty() {
            return Err(Error::MalformedCorpus {
                path: path.to_owned(),
                at: s.slot.to_string(),
                msg: "slot spec needs a model type, and choice values exactly when categorical".into(),
            });
        }
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn stat(slot: &str, n: usize, rate: f64) -> SlotStats {
        SlotStats {
            slot: slot.parse().unwrap(),
            num_possible_values: n,
            exact_match_rate: rate,
            num_labels: 0,
            num_matched: 0,
        }
    }

    fn ontology_for(stats: &[SlotStats]) -> Ontology {
        Ontology::new(
            stats
                .iter()
                .map(|s| (s.slot.clone(), (0..s.num_possible_values).map(|i| format!("v{i}")).collect()))
                .collect(),
        )
    }

    /// Reference (count, rate) pairs.
    fn reference_stats() -> Vec<SlotStats> {
        testkit::REFERENCE_SLOT_STATS
            .iter()
            .map(|(s, n, r)| stat(s, *n, *r))
            .collect()
    }

    #[test]
    fn reference_statistics_split_3_12_15() {
        let stats = reference_stats();
        let specs = classify_slots(&stats, &ontology_for(&stats), &QuestionTable::builtin(), ClassifyParams::default()).unwrap();
        let cat_only = specs.iter().filter(|s| s.is_categorical && !s.is_extractive).count();
        let both = specs.iter().filter(|s| s.is_categorical && s.is_extractive).count();
        let ext_only = specs.iter().filter(|s| !s.is_categorical && s.is_extractive).count();
        assert_eq!((cat_only, both, ext_only), (3, 12, 15));
        let order: Vec<_> = specs.iter().map(|s| s.slot.as_str()).collect();
        assert_eq!(order[0], "hotel.semi.internet");
        assert_eq!(order[14], "hotel.book.day");
        assert_eq!(order[29], "taxi.semi.departure");
    }

    #[test]
    fn no_categorical_prefix_with_high_rates_is_all_extractive() {
        let stats = vec![stat("a.semi.x", 2, 0.9), stat("a.semi.y", 5, 0.95), stat("b.book.z", 9, 1.0)];
        let specs = classify_slots(
            &stats,
            &ontology_for(&stats),
            &QuestionTable::builtin(),
            ClassifyParams { num_categorical: 0, extractive_threshold: 0.8 },
        )
        .unwrap();
        assert!(specs.iter().all(|s| s.is_extractive && !s.is_categorical && s.choice_values.is_empty()));
    }

    #[test]
    fn unspannable_slot_outside_prefix_is_forced_categorical() {
        let stats = vec![stat("a.semi.x", 50, 0.9), stat("a.semi.y", 60, 0.95), stat("a.semi.z", 2, 0.10)];
        let specs = classify_slots(
            &stats,
            &ontology_for(&stats),
            &QuestionTable::builtin(),
            ClassifyParams { num_categorical: 0, extractive_threshold: 0.8 },
        )
        .unwrap();
        let z = specs.iter().find(|s| s.slot.as_str() == "a.semi.z").unwrap();
        assert!(z.is_categorical && !z.is_extractive);
        assert_eq!(z.choice_values, ["v0", "v1"]);
    }

    #[test]
    fn too_many_categorical_is_invalid() {
        let stats = vec![stat("a.semi.x", 2, 0.9)];
        let r = classify_slots(
            &stats,
            &ontology_for(&stats),
            &QuestionTable::builtin(),
            ClassifyParams { num_categorical: 2, extractive_threshold: 0.8 },
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn ties_break_by_slot_name() {
        let stats = vec![stat("b.semi.x", 3, 0.9), stat("a.semi.x", 3, 0.9)];
        let specs = classify_slots(
            &stats,
            &ontology_for(&stats),
            &QuestionTable::builtin(),
            ClassifyParams { num_categorical: 1, extractive_threshold: 0.8 },
        )
        .unwrap();
        assert_eq!(specs[0].slot.as_str(), "a.semi.x");
        assert!(specs[0].is_categorical && !specs[1].is_categorical);
    }

    #[test]
    fn verbatim_value_gives_full_rate() {
        let corpus = testkit::single_value_corpus();
        let stats = compute_slot_stats(&corpus).unwrap();
        let area = stats.iter().find(|s| s.slot.as_str() == "hotel.semi.area").unwrap();
        assert_eq!(area.exact_match_rate, 1.0);
        assert_eq!(area.num_labels, 1);
    }

    #[test]
    fn empty_corpus_has_no_stats() {
        assert!(matches!(compute_slot_stats(&DialogueCorpus::default()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn builtin_questions_cover_reference_slots() {
        let q = QuestionTable::builtin();
        for (slot, _, _) in testkit::REFERENCE_SLOT_STATS {
            assert!(q.0.contains_key(*slot), "{slot}");
        }
        let food: SlotName = "restaurant.semi.food".parse().unwrap();
        assert_eq!(q.question(&food), "what type of food does the user want to eat?");
        let odd: SlotName = "bus.semi.stop".parse().unwrap();
        assert_eq!(q.question(&odd), "what is the stop of the bus?");
    }

    #[test]
    fn csv_has_header_and_one_row_per_slot() {
        let stats = reference_stats();
        let specs = classify_slots(&stats, &ontology_for(&stats), &QuestionTable::builtin(), ClassifyParams::default()).unwrap();
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &stats, &specs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "slot,num_possible_values,exact_match_rate,is_categorical,is_extractive");
        assert_eq!(lines.len(), 31);
        assert_eq!(lines[1], "hotel.semi.internet,3,0.6210,true,false");
    }
}
