//! Corpus and ontology loading, plus deterministic few-shot subsampling.
//!
//! On-disk formats:
//!
//! * dialogue file: a JSON array of
//!   `{"id", "domains": [..], "turns": [{"user", "agent" | null, "state": {"domain.group.name": "value" | "a|b" | "dontcare"}}]}`
//! * ontology file: `{"domain.group.name": [values]}`
//! * alias file: `{alias: canonical}`
//!
//! Raw MultiWOZ 2.0/2.1 dumps are converted into the dialogue schema by
//! [`multiwoz`].

pub mod multiwoz;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_text;
use crate::types::{Dialogue, GoldState, GoldValue, SlotName, SlotValue, Turn};

/// Domains dropped unless the caller overrides the exclusion list.
pub const DEFAULT_EXCLUDED_DOMAINS: [&str; 2] = ["hospital", "police"];

/// Candidate values per slot, plus an optional alias table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ontology {
    values: BTreeMap<SlotName, Vec<String>>,
    aliases: BTreeMap<String, String>,
}

impl Ontology {
    /// Builds an ontology from raw value lists.
    ///
    /// Values are normalized, deduplicated in first-seen order, and the
    /// None/DontCare spellings are dropped.
    pub fn new(raw: BTreeMap<SlotName, Vec<String>>) -> Self {
        let values = raw
            .into_iter()
            .map(|(slot, vals)| {
                let mut seen = HashSet::new();
                let clean = vals
                    .iter()
                    .filter_map(|v| match SlotValue::parse(v) {
                        SlotValue::Value(t) => Some(t),
                        _ => None,
                    })
                    .filter(|t| seen.insert(t.clone()))
                    .collect();
                (slot, clean)
            })
            .collect();
        Self {
            values,
            aliases: BTreeMap::new(),
        }
    }

    /// Attaches an alias table. Keys and targets are normalized; every target
    /// must be a candidate of at least one slot.
    pub fn with_aliases(mut self, raw: BTreeMap<String, String>) -> std::result::Result<Self, String> {
        let all: HashSet<&str> = self.values.values().flatten().map(String::as_str).collect();
        let mut aliases = BTreeMap::new();
        for (alias, target) in raw {
            let (alias, target) = (normalize_text(&alias), normalize_text(&target));
            if !all.contains(target.as_str()) {
                return Err(format!("alias target `{target}` is not a candidate of any slot"));
            }
            aliases.insert(alias, target);
        }
        self.aliases = aliases;
        Ok(self)
    }

    pub fn slots(&self) -> impl Iterator<Item = &SlotName> {
        self.values.keys()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn candidates(&self, slot: &SlotName) -> Option<&[String]> {
        self.values.get(slot).map(Vec::as_slice)
    }

    pub fn contains_slot(&self, slot: &SlotName) -> bool {
        self.values.contains_key(slot)
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    /// Maps normalized text through the alias table (identity when absent).
    pub fn resolve<'a>(&'a self, text: &'a str) -> &'a str {
        self.aliases.get(text).map(String::as_str).unwrap_or(text)
    }

    pub(crate) fn retain_slots(&mut self, keep: impl Fn(&SlotName) -> bool) {
        self.values.retain(|s, _| keep(s));
    }

    /// Serializable `{"slot": [values]}` form.
    pub fn to_json_map(&self) -> BTreeMap<String, Vec<String>> {
        self.values
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DialogueCorpus {
    pub dialogues: Vec<Dialogue>,
    pub ontology: Ontology,
}

impl DialogueCorpus {
    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn num_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }
}

/// One dialogue as stored in the dialogue file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    #[serde(default)]
    pub domains: Vec<String>,
    pub turns: Vec<TurnRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub user: String,
    #[serde(default)]
    pub agent: Option<String>,
    #[serde(default)]
    pub state: BTreeMap<String, Option<String>>,
}

impl DialogueRecord {
    pub fn from_dialogue(d: &Dialogue) -> Self {
        Self {
            id: d.id.clone(),
            domains: d.domains.iter().cloned().collect(),
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecord {
                    user: t.user_utterance.clone(),
                    agent: t.agent_utterance.clone(),
                    state: t
                        .gold_state
                        .iter()
                        .map(|(k, v)| (k.to_string(), Some(v.to_label())))
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Which dialogues and slots [`build_corpus`] keeps.
#[derive(Debug, Clone)]
pub struct DomainFilter {
    /// Keep only dialogues touching one of these domains; `None` keeps all.
    pub include: Option<BTreeSet<String>>,
    /// Domains removed from dialogues, states and the ontology.
    pub exclude: BTreeSet<String>,
}

impl Default for DomainFilter {
    fn default() -> Self {
        Self {
            include: None,
            exclude: DEFAULT_EXCLUDED_DOMAINS.iter().map(|d| d.to_string()).collect(),
        }
    }
}

impl DomainFilter {
    pub fn only(domains: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            include: Some(domains.into_iter().map(Into::into).collect()),
            ..Self::default()
        }
    }
}

/// Reads and validates a dialogue file and ontology.
///
/// Dialogues whose domain set misses `filter_domains` (when given) are
/// dropped, as are the hospital and police domains.
pub fn load_corpus(
    dialogue_file: &Path,
    ontology_file: &Path,
    filter_domains: Option<&BTreeSet<String>>,
) -> Result<DialogueCorpus> {
    let filter = DomainFilter {
        include: filter_domains.cloned(),
        ..DomainFilter::default()
    };
    load_corpus_with(dialogue_file, ontology_file, None, &filter)
}

/// [`load_corpus`] with an optional alias file and an explicit filter.
pub fn load_corpus_with(
    dialogue_file: &Path,
    ontology_file: &Path,
    alias_file: Option<&Path>,
    filter: &DomainFilter,
) -> Result<DialogueCorpus> {
    let ontology = read_ontology(ontology_file, alias_file)?;
    let records: Vec<DialogueRecord> = read_json(dialogue_file)?;
    build_corpus(records, ontology, filter).map_err(|e| with_path(e, dialogue_file))
}

pub fn read_ontology(ontology_file: &Path, alias_file: Option<&Path>) -> Result<Ontology> {
    let raw: BTreeMap<String, Vec<String>> = read_json(ontology_file)?;
    let mut values = BTreeMap::new();
    for (key, vals) in raw {
        let slot: SlotName = key.parse().map_err(|_| Error::MalformedCorpus {
            path: ontology_file.to_owned(),
            at: format!("key `{key}`"),
            msg: "not a domain.group.name slot".into(),
        })?;
        values.insert(slot, vals);
    }
    let ontology = Ontology::new(values);
    if let Some((slot, _)) = ontology.values.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::MalformedCorpus {
            path: ontology_file.to_owned(),
            at: format!("key `{slot}`"),
            msg: "no candidate values".into(),
        });
    }
    match alias_file {
        None => Ok(ontology),
        Some(p) => {
            let raw: BTreeMap<String, String> = read_json(p)?;
            ontology.with_aliases(raw).map_err(|msg| Error::MalformedCorpus {
                path: p.to_owned(),
                at: "aliases".into(),
                msg,
            })
        }
    }
}

/// Validates parsed records against an ontology and applies a domain filter.
pub fn build_corpus(
    records: Vec<DialogueRecord>,
    mut ontology: Ontology,
    filter: &DomainFilter,
) -> Result<DialogueCorpus> {
    let excluded = |d: &str| filter.exclude.contains(d);
    ontology.retain_slots(|s| !excluded(s.domain()));

    let mut seen_ids = HashSet::new();
    let mut dialogues = Vec::new();
    for (ri, rec) in records.into_iter().enumerate() {
        let malformed = |at: String, msg: &str| Error::MalformedCorpus {
            path: PathBuf::new(),
            at,
            msg: msg.to_owned(),
        };
        if !seen_ids.insert(rec.id.clone()) {
            return Err(malformed(format!("[{ri}] (id {})", rec.id), "duplicate dialogue id"));
        }
        if rec.turns.is_empty() {
            return Err(malformed(format!("[{ri}] (id {})", rec.id), "dialogue has no turns"));
        }

        let mut turns = Vec::with_capacity(rec.turns.len());
        let mut state_domains = BTreeSet::new();
        for (ti, tr) in rec.turns.into_iter().enumerate() {
            let mut gold_state = GoldState::new();
            for (key, raw) in &tr.state {
                let slot: SlotName = key.parse().map_err(|_| {
                    malformed(
                        format!("[{ri}].turns[{ti}].state.{key}"),
                        "not a domain.group.name slot",
                    )
                })?;
                if excluded(slot.domain()) {
                    continue;
                }
                if !ontology.contains_slot(&slot) {
                    return Err(Error::UnknownSlot {
                        slot: key.clone(),
                        dialogue: rec.id.clone(),
                        turn: ti + 1,
                    });
                }
                if let Some(gold) = raw.as_deref().and_then(GoldValue::parse) {
                    state_domains.insert(slot.domain().to_owned());
                    gold_state.insert(slot, gold);
                }
            }
            turns.push(Turn {
                index: ti + 1,
                user_utterance: tr.user,
                agent_utterance: tr.agent,
                gold_state,
            });
        }

        let mut domains: BTreeSet<String> = if rec.domains.is_empty() {
            state_domains
        } else {
            rec.domains.into_iter().map(|d| d.to_lowercase()).collect()
        };
        domains.retain(|d| !excluded(d));
        if domains.is_empty() {
            continue;
        }
        if let Some(include) = &filter.include {
            if domains.is_disjoint(include) {
                continue;
            }
        }
        dialogues.push(Dialogue {
            id: rec.id,
            domains,
            turns,
        });
    }
    Ok(DialogueCorpus { dialogues, ontology })
}

/// Writes dialogues back to the dialogue-file schema.
pub fn write_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let records: Vec<_> = dialogues.iter().map(DialogueRecord::from_dialogue).collect();
    fs::write(path, serde_json::to_string_pretty(&records)? + "\n")?;
    Ok(())
}

pub fn write_ontology(path: &Path, ontology: &Ontology) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&ontology.to_json_map())? + "\n")?;
    Ok(())
}

/// Number of dialogues a few-shot draw keeps: `ceil(fraction * n)`.
///
/// The product is computed in `f64` and nudged down by `1e-9` so that exact
/// percentages such as `0.05 * 100` do not round up to the next integer.
pub fn fewshot_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Indices (ascending) chosen by the few-shot sampler.
///
/// Algorithm, fixed so other implementations reproduce it exactly:
/// SplitMix64 seeded with `seed`; a partial Fisher-Yates shuffle over
/// `0..n` where step `i` swaps position `i` with
/// `i + ((next_u64() as u128 * (n - i) as u128) >> 64)`; the first `k`
/// positions are the sample, reported in ascending order.
pub fn fewshot_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    let k = fewshot_size(n, fraction).min(n);
    let mut rng = SplitMix64::from_seed(seed.to_le_bytes());
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let span = (n - i) as u128;
        let j = i + ((rng.next_u64() as u128 * span) >> 64) as usize;
        idx.swap(i, j);
    }
    let mut picked = idx[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Keeps `ceil(fraction * N)` whole dialogues, chosen by [`fewshot_indices`],
/// in their original order.
pub fn subsample_fewshot(corpus: &DialogueCorpus, fraction: f64, seed: u64) -> Result<DialogueCorpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let picked = fewshot_indices(corpus.len(), fraction, seed)?;
    Ok(DialogueCorpus {
        dialogues: picked.into_iter().map(|i| corpus.dialogues[i].clone()).collect(),
        ontology: corpus.ontology.clone(),
    })
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    parse_json(path, &text)
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::MalformedCorpus {
        path: path.to_owned(),
        at: format!(
            "line {} column {} (byte offset {})",
            e.line(),
            e.column(),
            byte_offset(text, e.line(), e.column())
        ),
        msg: e.to_string(),
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::MalformedCorpus { at, msg, .. } => Error::MalformedCorpus {
            path: path.to_owned(),
            at,
            msg,
        },
        other => other,
    }
}
