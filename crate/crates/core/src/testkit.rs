//! Small corpora for tests, examples and smoke runs.
//!
//! [`fixture_corpus`] generates MultiWOZ-shaped dialogues over the usual 30
//! slots in which every concrete value occurs verbatim in the context and
//! every "don't care" is voiced with a phrase from
//! [`crate::decode::DONTCARE_PHRASES`], so an oracle reader can recover the
//! gold state exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::ingest::{DialogueCorpus, Ontology};
use crate::taxonomy::{classify_slots, compute_slot_stats, ClassifyParams, QuestionTable, SlotSpec};
use crate::types::{Dialogue, GoldState, GoldValue, SlotName, Turn};

/// Reference MultiWOZ 2.1 slot statistics: (slot, #values, exact-match rate).
pub const REFERENCE_SLOT_STATS: &[(&str, usize, f64)] = &[
    ("hotel.semi.type", 3, 0.611),
    ("hotel.semi.internet", 3, 0.621),
    ("hotel.semi.parking", 4, 0.631),
    ("restaurant.semi.pricerange", 4, 0.978),
    ("hotel.semi.pricerange", 6, 0.977),
    ("hotel.semi.area", 6, 0.988),
    ("attraction.semi.area", 6, 0.990),
    ("restaurant.semi.area", 6, 0.992),
    ("hotel.semi.stars", 7, 0.992),
    ("hotel.book.people", 8, 0.982),
    ("hotel.book.stay", 8, 0.989),
    ("train.semi.day", 8, 0.993),
    ("restaurant.book.day", 8, 0.987),
    ("restaurant.book.people", 8, 0.991),
    ("hotel.book.day", 11, 0.981),
    ("train.book.people", 12, 0.947),
    ("train.semi.destination", 27, 0.982),
    ("attraction.semi.type", 27, 0.866),
    ("train.semi.departure", 31, 0.976),
    ("restaurant.book.time", 67, 0.972),
    ("hotel.semi.name", 78, 0.887),
    ("taxi.semi.arriveby", 97, 0.919),
    ("restaurant.semi.food", 103, 0.964),
    ("taxi.semi.leaveat", 108, 0.811),
    ("train.semi.arriveby", 156, 0.915),
    ("attraction.semi.name", 158, 0.843),
    ("restaurant.semi.name", 182, 0.939),
    ("train.semi.leaveat", 201, 0.874),
    ("taxi.semi.destination", 251, 0.879),
    ("taxi.semi.departure", 253, 0.846),
];

type TurnSpec<'a> = (&'a str, Option<&'a str>, &'a [(&'a str, &'a str)]);

/// Builds a dialogue; each turn lists its complete gold state as raw labels.
pub fn dialogue(id: &str, turns: &[TurnSpec<'_>]) -> Dialogue {
    let turns: Vec<Turn> = turns
        .iter()
        .enumerate()
        .map(|(i, (user, agent, state))| Turn {
            index: i + 1,
            user_utterance: (*user).to_owned(),
            agent_utterance: agent.map(str::to_owned),
            gold_state: state
                .iter()
                .filter_map(|(slot, raw)| {
                    let slot: SlotName = slot.parse().expect("valid slot name");
                    GoldValue::parse(raw).map(|v| (slot, v))
                })
                .collect(),
        })
        .collect();
    let domains = turns
        .iter()
        .flat_map(|t| t.gold_state.keys().map(|s| s.domain().to_owned()))
        .collect();
    Dialogue { id: id.to_owned(), domains, turns }
}

fn ontology(entries: &[(&str, &[&str])]) -> Ontology {
    Ontology::new(
        entries
            .iter()
            .map(|(slot, vals)| (slot.parse().expect("valid slot name"), vals.iter().map(|v| (*v).to_owned()).collect()))
            .collect(),
    )
}

/// The restaurant dialogue used to illustrate span answers.
pub fn sample_dialogue() -> Dialogue {
    const T1: &[(&str, &str)] = &[("restaurant.semi.area", "centre")];
    const T2: &[(&str, &str)] = &[
        ("restaurant.semi.area", "centre"),
        ("restaurant.semi.food", "dontcare"),
        ("restaurant.semi.pricerange", "expensive"),
    ];
    const T3: &[(&str, &str)] = &[
        ("restaurant.semi.area", "centre"),
        ("restaurant.semi.food", "dontcare"),
        ("restaurant.semi.pricerange", "expensive"),
        ("restaurant.semi.name", "fitzbillies restaurant"),
    ];
    dialogue(
        "sample",
        &[
            (
                "I'm so hungry. Can you find me a place to eat in the city centre?",
                Some("I'm happy to help! There are a great deal of restaurants there. What type of food did you have in mind?"),
                T1,
            ),
            ("I do not care, it just needs to be expensive.", Some("Fitzbillies restaurant serves British food would that be okay?"), T2),
            ("Yes, may I have the address?", None, T3),
        ],
    )
}

pub fn sample_corpus() -> DialogueCorpus {
    DialogueCorpus {
        dialogues: vec![sample_dialogue()],
        ontology: ontology(&[
            ("restaurant.semi.area", &["centre", "north", "south", "east", "west"]),
            ("restaurant.semi.food", &["british", "italian", "chinese", "indian"]),
            ("restaurant.semi.pricerange", &["cheap", "moderate", "expensive"]),
            ("restaurant.semi.name", &["fitzbillies restaurant", "pizza hut city centre", "lan hong house", "the copper kettle"]),
            ("hotel.semi.area", &["centre", "north", "south", "east", "west"]),
        ]),
    }
}

/// The hotel dialogue used to illustrate multiple-choice answers.
pub fn choice_corpus() -> DialogueCorpus {
    const T1: &[(&str, &str)] = &[("hotel.semi.pricerange", "cheap"), ("hotel.semi.type", "hotel")];
    const T2: &[(&str, &str)] = &[
        ("hotel.semi.pricerange", "cheap"),
        ("hotel.semi.type", "hotel"),
        ("hotel.semi.area", "dontcare"),
        ("hotel.semi.parking", "yes"),
    ];
    let d = dialogue(
        "choice",
        &[
            (
                "I am looking for a place to to stay that has cheap price range it should be in a type of hotel",
                Some("Okay , Do you have a specific area you want to stay in?"),
                T1,
            ),
            ("No, I just need to make sure it's cheap. Oh, and I need parking.", None, T2),
        ],
    );
    DialogueCorpus {
        dialogues: vec![d],
        ontology: ontology(&[
            ("hotel.semi.area", &["east", "west", "north", "south", "centre"]),
            ("hotel.semi.parking", &["yes", "no", "free"]),
            ("hotel.semi.pricerange", &["cheap", "moderate", "expensive"]),
            ("hotel.semi.type", &["hotel", "guesthouse"]),
        ]),
    }
}

/// One dialogue whose only label appears verbatim.
pub fn single_value_corpus() -> DialogueCorpus {
    DialogueCorpus {
        dialogues: vec![dialogue(
            "single",
            &[("i want a hotel in the north", None, &[("hotel.semi.area", "north")])],
        )],
        ontology: ontology(&[("hotel.semi.area", &["north", "south", "east", "west", "centre"])]),
    }
}

/// Statistics plus classification with the built-in questions; `n` is
/// clamped to the number of slots.
pub fn specs_for(corpus: &DialogueCorpus, num_categorical: usize) -> Vec<SlotSpec> {
    let stats = compute_slot_stats(corpus).expect("non-empty corpus");
    let params = ClassifyParams {
        num_categorical: num_categorical.min(stats.len()),
        ..ClassifyParams::default()
    };
    classify_slots(&stats, &corpus.ontology, &QuestionTable::builtin(), params).expect("valid classification")
}

const AREAS: &[&str] = &["north", "south", "east", "west", "centre"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const PEOPLE: &[&str] = &["1", "2", "3", "4", "5", "6", "7", "8"];
const TIMES: &[&str] = &["08:15", "09:30", "10:15", "11:45", "12:00", "13:30", "15:29", "16:07", "17:45", "19:15", "20:00"];
const PLACES: &[&str] = &[
    "lan hong house",
    "the gonville hotel",
    "fitzbillies restaurant",
    "cambridge train station",
    "kings college",
    "pizza hut city centre",
    "the cambridge belfry",
    "funky fun house",
    "allenbell",
    "acorn guest house",
    "the lensfield hotel",
    "london kings cross",
];
const STATIONS: &[&str] = &["cambridge", "london kings cross", "bishops stortford", "ely", "norwich", "stansted airport", "peterborough"];

/// Gold labels with an alternative spelling, keyed by the spoken value.
const ALTERNATIVES: &[(&str, &str)] = &[("north american", "north american|american"), ("guesthouse", "guesthouse|guest house")];

struct SlotDef {
    slot: &'static str,
    values: &'static [&'static str],
    /// Extra ontology entries that are never spoken.
    extra: &'static [&'static str],
    template: &'static str,
    /// Word used when the user voices no preference.
    dontcare: Option<&'static str>,
    /// Values may be offered by the agent and accepted by the user.
    offered: bool,
}

const fn def(slot: &'static str, values: &'static [&'static str], template: &'static str) -> SlotDef {
    SlotDef { slot, values, extra: &[], template, dontcare: None, offered: false }
}

const fn dc(mut d: SlotDef, word: &'static str) -> SlotDef {
    d.dontcare = Some(word);
    d
}

const fn offered(mut d: SlotDef) -> SlotDef {
    d.offered = true;
    d
}

const fn extra(mut d: SlotDef, extra: &'static [&'static str]) -> SlotDef {
    d.extra = extra;
    d
}

const SLOTS: &[SlotDef] = &[
    extra(def("hotel.semi.type", &["hotel", "guesthouse"], "a {v} to stay at"), &["guest house"]),
    dc(def("hotel.semi.internet", &["yes", "no", "free"], "{v} on the wifi"), "wifi"),
    dc(def("hotel.semi.parking", &["yes", "no", "free"], "{v} on the parking"), "parking"),
    dc(def("hotel.semi.pricerange", PRICES, "a {v} place to sleep"), "price"),
    dc(def("hotel.semi.area", AREAS, "lodging in the {v}"), "area"),
    dc(def("hotel.semi.stars", &["0", "1", "2", "3", "4", "5"], "a {v} star rating"), "stars"),
    offered(def(
        "hotel.semi.name",
        &["the gonville hotel", "allenbell", "acorn guest house", "the lensfield hotel", "the cambridge belfry"],
        "a room at {v}",
    )),
    def("hotel.book.people", PEOPLE, "a room for {v} people"),
    def("hotel.book.stay", PEOPLE, "a stay of {v} nights"),
    def("hotel.book.day", DAYS, "check in on {v}"),
    dc(def("restaurant.semi.pricerange", PRICES, "a {v} meal"), "cost"),
    dc(def("restaurant.semi.area", AREAS, "dinner in the {v}"), "location"),
    extra(
        dc(
            def(
                "restaurant.semi.food",
                &["british", "italian", "chinese", "indian", "european", "north american", "gastropub", "seafood", "korean"],
                "{v} food",
            ),
            "food",
        ),
        &["american"],
    ),
    offered(def(
        "restaurant.semi.name",
        &["fitzbillies restaurant", "pizza hut city centre", "lan hong house", "the copper kettle", "curry garden"],
        "a table at {v}",
    )),
    def("restaurant.book.time", TIMES, "a booking at {v}"),
    def("restaurant.book.day", DAYS, "a table on {v}"),
    def("restaurant.book.people", PEOPLE, "a table for {v}"),
    dc(def("attraction.semi.area", AREAS, "sights in the {v}"), "part of town"),
    dc(
        def(
            "attraction.semi.type",
            &["museum", "architecture", "college", "park", "theatre", "nightclub", "boat", "swimming pool"],
            "some {v} to visit",
        ),
        "kind of attraction",
    ),
    offered(def(
        "attraction.semi.name",
        &["kings college", "funky fun house", "the fitzwilliam museum", "cherry hinton water play", "all saints church"],
        "a visit to {v}",
    )),
    def("train.semi.day", DAYS, "a train on {v}"),
    def("train.semi.destination", STATIONS, "a train going to {v}"),
    def("train.semi.departure", STATIONS, "a train from {v}"),
    dc(def("train.semi.leaveat", TIMES, "a train leaving after {v}"), "departure time"),
    dc(def("train.semi.arriveby", TIMES, "a train arriving by {v}"), "arrival time"),
    def("train.book.people", PEOPLE, "train tickets for {v}"),
    def("taxi.semi.departure", PLACES, "a taxi from {v}"),
    def("taxi.semi.destination", PLACES, "a taxi to {v}"),
    dc(def("taxi.semi.leaveat", TIMES, "a taxi leaving at {v}"), "pickup time"),
    def("taxi.semi.arriveby", TIMES, "a taxi arriving by {v}"),
];

const DOMAINS: &[&str] = &["hotel", "restaurant", "attraction", "train", "taxi"];

const DONTCARE_TEMPLATES: &[&str] = &[
    "i do not care about the {w}",
    "i have no preference on the {w}",
    "i don't mind the {w}",
    "i think the {w} does not matter",
];

const AGENT_REPLIES: &[&str] = &[
    "okay , is there anything else ?",
    "sure , what else do you need ?",
    "i can help with that . anything more ?",
    "got it . do you have other requirements ?",
];

/// The fixture ontology: every slot of [`fixture_corpus`].
pub fn fixture_ontology() -> Ontology {
    Ontology::new(
        SLOTS
            .iter()
            .map(|d| {
                let vals = d.values.iter().chain(d.extra).map(|v| (*v).to_owned()).collect();
                (d.slot.parse().expect("valid slot name"), vals)
            })
            .collect(),
    )
}

fn pick<'a, T>(rng: &mut SplitMix64, xs: &'a [T]) -> &'a T {
    &xs[(rng.next_u64() % xs.len() as u64) as usize]
}

fn chance(rng: &mut SplitMix64, p: f64) -> bool {
    ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) < p
}

struct Draft {
    user: Vec<String>,
    agent: Option<String>,
    state: GoldState,
}

/// `n` synthetic dialogues, deterministic in `seed`.
pub fn fixture_corpus(n: usize, seed: u64) -> DialogueCorpus {
    let mut rng = SplitMix64::from_seed(seed.to_le_bytes());
    let dialogues = (0..n).map(|i| fixture_dialogue(&format!("fx{i:04}"), &mut rng)).collect();
    DialogueCorpus { dialogues, ontology: fixture_ontology() }
}

fn fixture_dialogue(id: &str, rng: &mut SplitMix64) -> Dialogue {
    let mut order: Vec<&str> = DOMAINS.to_vec();
    for i in (1..order.len()).rev() {
        order.swap(i, (rng.next_u64() % (i as u64 + 1)) as usize);
    }
    let num_domains = 1 + (rng.next_u64() % 3) as usize;
    let mut drafts: Vec<Draft> = Vec::new();
    let mut state = GoldState::new();
    let alternatives: BTreeMap<&str, &str> = ALTERNATIVES.iter().copied().collect();

    for domain in &order[..num_domains] {
        let mut slots: Vec<&SlotDef> = SLOTS.iter().filter(|d| d.slot.starts_with(&format!("{domain}."))).collect();
        for i in (1..slots.len()).rev() {
            slots.swap(i, (rng.next_u64() % (i as u64 + 1)) as usize);
        }
        let k = 2 + (rng.next_u64() % 3) as usize;
        slots.truncate(k);
        for group in slots.chunks(2) {
            let mut dontcare_parts = Vec::new();
            let mut parts = Vec::new();
            for d in group {
                let slot: SlotName = d.slot.parse().expect("valid slot name");
                if let (Some(word), true) = (d.dontcare, chance(rng, 0.2)) {
                    dontcare_parts.push(pick(rng, DONTCARE_TEMPLATES).replace("{w}", word));
                    state.insert(slot, GoldValue::DontCare);
                    continue;
                }
                let v = *pick(rng, d.values);
                let label = alternatives.get(v).copied().unwrap_or(v);
                let prev = drafts.last_mut().filter(|p| p.agent.is_none());
                match prev {
                    Some(p) if d.offered && chance(rng, 0.5) => {
                        p.agent = Some(format!("how about {v} ?"));
                        parts.push("that sounds good".to_owned());
                    }
                    _ => parts.push(format!("i need {}", d.template.replace("{v}", v))),
                }
                state.insert(slot, GoldValue::parse(label).expect("concrete label"));
            }
            dontcare_parts.extend(parts);
            if let Some(p) = drafts.last_mut() {
                if p.agent.is_none() {
                    p.agent = Some((*pick(rng, AGENT_REPLIES)).to_owned());
                }
            }
            drafts.push(Draft { user: dontcare_parts, agent: None, state: state.clone() });
        }
    }
    if let Some(p) = drafts.last_mut() {
        p.agent.get_or_insert_with(|| (*pick(rng, AGENT_REPLIES)).to_owned());
    }
    drafts.push(Draft {
        user: vec!["thank you , that is all".to_owned()],
        agent: Some("you are welcome . goodbye .".to_owned()),
        state: state.clone(),
    });

    let turns = drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| Turn {
            index: i + 1,
            user_utterance: format!("{} .", d.user.join(" , and ")),
            agent_utterance: d.agent,
            gold_state: d.state,
        })
        .collect();
    let domains: BTreeSet<String> = order[..num_domains].iter().map(|d| (*d).to_owned()).collect();
    Dialogue { id: id.to_owned(), domains, turns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examplegen::{span_label, DialogueView};

    #[test]
    fn fixture_is_deterministic_and_covers_thirty_slots() {
        let a = fixture_corpus(20, 3);
        assert_eq!(a, fixture_corpus(20, 3));
        assert_ne!(a, fixture_corpus(20, 4));
        assert_eq!(a.ontology.len(), 30);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn fixture_labels_are_spannable_and_in_ontology() {
        let corpus = fixture_corpus(50, 11);
        for d in &corpus.dialogues {
            let view = DialogueView::new(d);
            for t in &d.turns {
                let ctx = view.context(t.index).unwrap();
                for (slot, gold) in &t.gold_state {
                    assert!(span_label(d, t.index, slot, &ctx).is_ok(), "{} {} {slot}", d.id, t.index);
                    let cands = corpus.ontology.candidates(slot).unwrap();
                    assert!(gold.alternatives().iter().all(|a| cands.contains(a)));
                }
            }
        }
    }

    #[test]
    fn small_corpora_are_in_ontology() {
        for c in [sample_corpus(), choice_corpus(), single_value_corpus()] {
            for d in &c.dialogues {
                for t in &d.turns {
                    for slot in t.gold_state.keys() {
                        assert!(c.ontology.contains_slot(slot));
                    }
                }
            }
        }
    }

    #[test]
    fn reference_stats_have_thirty_rows() {
        assert_eq!(REFERENCE_SLOT_STATS.len(), 30);
        let names: BTreeSet<_> = REFERENCE_SLOT_STATS.iter().map(|r| r.0).collect();
        let fixture: BTreeSet<_> = SLOTS.iter().map(|d| d.slot).collect();
        assert_eq!(names, fixture);
    }
}
