//! Domain types shared by every stage of the pipeline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotGroup {
    Semi,
    Book,
}

impl SlotGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotGroup::Semi => "semi",
            SlotGroup::Book => "book",
        }
    }
}

/// A `domain.group.name` slot identifier such as `hotel.semi.parking`.
///
/// Ordering, equality and hashing all go through the canonical string, so
/// sorting slot names sorts their canonical forms.
#[derive(Clone)]
pub struct SlotName {
    key: String,
    domain_len: usize,
    group: SlotGroup,
}

impl SlotName {
    pub fn new(domain: &str, group: SlotGroup, name: &str) -> Result<Self, Error> {
        let key = format!("{domain}.{}.{name}", group.as_str());
        if !valid_part(domain) || !valid_part(name) {
            return Err(Error::InvalidSlotName(key));
        }
        Ok(Self {
            domain_len: domain.len(),
            group,
            key,
        })
    }

    pub fn domain(&self) -> &str {
        &self.key[..self.domain_len]
    }

    pub fn group(&self) -> SlotGroup {
        self.group
    }

    pub fn name(&self) -> &str {
        let skip = self.domain_len + 1 + self.group.as_str().len() + 1;
        &self.key[skip..]
    }

    pub fn as_str(&self) -> &str {
        &self.key
    }
}

fn valid_part(s: &str) -> bool {
    !s.is_empty()
        && !s.contains('.')
        && !s.chars().any(|c| c.is_whitespace() || c.is_uppercase())
}

impl FromStr for SlotName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::InvalidSlotName(s.to_owned());
        let mut parts = s.split('.');
        let (Some(domain), Some(group), Some(name), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let group = match group {
            "semi" => SlotGroup::Semi,
            "book" => SlotGroup::Book,
            _ => return Err(bad()),
        };
        SlotName::new(domain, group, name)
    }
}

impl fmt::Display for SlotName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key)
    }
}

impl fmt::Debug for SlotName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SlotName({})", self.key)
    }
}

impl PartialEq for SlotName {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for SlotName {}

impl Hash for SlotName {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key.hash(state)
    }
}

impl PartialOrd for SlotName {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SlotName {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

impl Serialize for SlotName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.key)
    }
}

impl<'de> Deserialize<'de> for SlotName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Annotation strings that mean "no value".
const NONE_FORMS: [&str; 4] = ["", "none", "not mentioned", "not given"];

/// Annotation strings that mean "the user has no preference".
const DONTCARE_FORMS: [&str; 6] = [
    "dontcare",
    "dont care",
    "don't care",
    "do n't care",
    "do not care",
    "does not care",
];

/// Reserved choice option standing for [`SlotValue::DontCare`].
pub const OPTION_DONTCARE: &str = "do not care";
/// Reserved choice option standing for [`SlotValue::None`].
pub const OPTION_NONE: &str = "not mentioned";

/// A single slot value: unset, "don't care", or normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum SlotValue {
    #[default]
    None,
    DontCare,
    Value(String),
}

impl SlotValue {
    /// Interprets a raw annotation or prediction string.
    pub fn parse(raw: &str) -> Self {
        let lowered = raw.trim().to_lowercase();
        if NONE_FORMS.contains(&lowered.as_str()) {
            return SlotValue::None;
        }
        let norm = normalize_text(&lowered);
        if DONTCARE_FORMS.contains(&lowered.as_str()) || DONTCARE_FORMS.contains(&norm.as_str()) {
            return SlotValue::DontCare;
        }
        if norm.is_empty() || NONE_FORMS.contains(&norm.as_str()) {
            SlotValue::None
        } else {
            SlotValue::Value(norm)
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, SlotValue::None)
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            SlotValue::Value(t) => Some(t),
            _ => None,
        }
    }

    /// The string written to files: `none`, `dontcare`, or the value text.
    pub fn as_label(&self) -> &str {
        match self {
            SlotValue::None => "none",
            SlotValue::DontCare => "dontcare",
            SlotValue::Value(t) => t,
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_label())
    }
}

impl Serialize for SlotValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_label())
    }
}

impl<'de> Deserialize<'de> for SlotValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(SlotValue::parse(&String::deserialize(d)?))
    }
}

/// A gold annotation. Unset slots are simply absent from a turn's state.
///
/// Multi-valued annotations (`"a|b"`) keep every alternative in order; the
/// first is the primary value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoldValue {
    DontCare,
    Value(Vec<String>),
}

impl GoldValue {
    /// Parses a raw annotation, returning `None` for the unset forms.
    pub fn parse(raw: &str) -> Option<Self> {
        let mut values: Vec<String> = Vec::new();
        let mut first_is_dontcare = false;
        for (i, alt) in raw.split('|').enumerate() {
            match SlotValue::parse(alt) {
                SlotValue::None => {}
                SlotValue::DontCare => first_is_dontcare |= i == 0,
                SlotValue::Value(v) => {
                    if !values.contains(&v) {
                        values.push(v)
                    }
                }
            }
        }
        if first_is_dontcare {
            Some(GoldValue::DontCare)
        } else if values.is_empty() {
            if raw.split('|').any(|a| SlotValue::parse(a) == SlotValue::DontCare) {
                Some(GoldValue::DontCare)
            } else {
                None
            }
        } else {
            Some(GoldValue::Value(values))
        }
    }

    pub fn primary(&self) -> SlotValue {
        match self {
            GoldValue::DontCare => SlotValue::DontCare,
            GoldValue::Value(alts) => SlotValue::Value(alts[0].clone()),
        }
    }

    pub fn alternatives(&self) -> &[String] {
        match self {
            GoldValue::DontCare => &[],
            GoldValue::Value(alts) => alts,
        }
    }

    /// Inverse of [`GoldValue::parse`].
    pub fn to_label(&self) -> String {
        match self {
            GoldValue::DontCare => "dontcare".to_owned(),
            GoldValue::Value(alts) => alts.join("|"),
        }
    }
}

/// Gold state of one turn: only slots with a value or "don't care" appear.
pub type GoldState = BTreeMap<SlotName, GoldValue>;

/// Looks up a slot in a gold state, mapping absence to [`SlotValue::None`].
pub fn gold_primary(state: &GoldState, slot: &SlotName) -> SlotValue {
    state.get(slot).map(GoldValue::primary).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    /// 1-based.
    pub index: usize,
    pub user_utterance: String,
    pub agent_utterance: Option<String>,
    pub gold_state: GoldState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub domains: BTreeSet<String>,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn turn(&self, index: usize) -> Option<&Turn> {
        index.checked_sub(1).and_then(|i| self.turns.get(i))
    }
}
