//! Conversion of raw MultiWOZ 2.0/2.1 dumps into the dialogue-file schema.
//!
//! A raw dump maps dialogue ids to `{"goal": {..}, "log": [..]}`. Even log
//! entries are user utterances; odd entries are agent utterances whose
//! `metadata` holds the belief state after the preceding user turn, as
//! `metadata[domain]["semi" | "book"][slot]`. Dialogue acts, span info and
//! database pointers are ignored.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde_json::Value;

use super::{parse_json, DialogueRecord, TurnRecord};
use crate::error::{Error, Result};
use crate::types::{GoldValue, SlotGroup, SlotName};

/// Converts a raw MultiWOZ JSON text.
///
/// `keep_ids`, when given, restricts the output to those dialogue ids (the
/// `valListFile`/`testListFile` split lists); `drop_ids` removes ids, which
/// yields the training split when fed both lists. Output order follows the
/// input's key order sorted by id, so conversion is deterministic.
pub fn convert_raw(
    path: &Path,
    text: &str,
    keep_ids: Option<&HashSet<String>>,
    drop_ids: Option<&HashSet<String>>,
) -> Result<Vec<DialogueRecord>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let root: Value = parse_json(path, text)?;
    let malformed = |at: String, msg: &str| Error::MalformedCorpus {
        path: path.to_owned(),
        at,
        msg: msg.to_owned(),
    };
    let entries: Vec<(String, &Value)> = match &root {
        Value::Object(map) => map.iter().map(|(k, v)| (k.clone(), v)).collect(),
        Value::Array(items) if items.is_empty() => Vec::new(),
        _ => return Err(malformed("root".into(), "expected an object keyed by dialogue id")),
    };

    let mut out = Vec::new();
    for (id, dialogue) in entries {
        if keep_ids.is_some_and(|k| !k.contains(&id)) || drop_ids.is_some_and(|d| d.contains(&id)) {
            continue;
        }
        let log = dialogue
            .get("log")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(format!("{id}.log"), "missing log array"))?;
        let mut turns = Vec::new();
        let mut state = BTreeMap::new();
        for (i, pair) in log.chunks(2).enumerate() {
            let user = text_of(&pair[0]).ok_or_else(|| malformed(format!("{id}.log[{}]", 2 * i), "missing text"))?;
            let agent = match pair.get(1) {
                Some(entry) => {
                    let text = text_of(entry).ok_or_else(|| malformed(format!("{id}.log[{}]", 2 * i + 1), "missing text"))?;
                    if let Some(meta) = entry.get("metadata") {
                        state = belief_state(meta).map_err(|m| malformed(format!("{id}.log[{}].metadata", 2 * i + 1), &m))?;
                    }
                    Some(text)
                }
                None => None,
            };
            turns.push(TurnRecord {
                user,
                agent,
                state: state.iter().map(|(k, v)| (k.clone(), Some(v.clone()))).collect(),
            });
        }
        if turns.is_empty() {
            continue;
        }
        out.push(DialogueRecord {
            domains: goal_domains(dialogue).unwrap_or_else(|| domains_of(&turns)),
            id,
            turns,
        });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn text_of(entry: &Value) -> Option<String> {
    entry.get("text").and_then(Value::as_str).map(|s| s.trim().to_owned())
}

/// Canonical slot key for a raw `(domain, group, slot)` triple, or `None`
/// for non-slot fields such as `booked`.
pub fn slot_key(domain: &str, group: &str, slot: &str) -> Option<String> {
    let name: String = slot.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
    if name.is_empty() || name == "booked" || name == "ticket" {
        return None;
    }
    let group = match group {
        "semi" => SlotGroup::Semi,
        "book" => SlotGroup::Book,
        _ => return None,
    };
    SlotName::new(&domain.to_lowercase(), group, &name).ok().map(|s| s.to_string())
}

fn belief_state(meta: &Value) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut state = BTreeMap::new();
    let Some(domains) = meta.as_object() else {
        return Ok(state);
    };
    for (domain, groups) in domains {
        let Some(groups) = groups.as_object() else { continue };
        for (group, slots) in groups {
            let Some(slots) = slots.as_object() else { continue };
            for (slot, value) in slots {
                let Some(key) = slot_key(domain, group, slot) else { continue };
                let raw = match value {
                    Value::String(s) => s.clone(),
                    Value::Array(vals) => vals.iter().filter_map(Value::as_str).collect::<Vec<_>>().join("|"),
                    Value::Null => continue,
                    other => return Err(format!("slot {key} has non-string value {other}")),
                };
                if GoldValue::parse(&raw).is_some() {
                    state.insert(key, raw.trim().to_owned());
                }
            }
        }
    }
    Ok(state)
}

fn goal_domains(dialogue: &Value) -> Option<Vec<String>> {
    let goal = dialogue.get("goal")?.as_object()?;
    let domains: Vec<String> = goal
        .iter()
        .filter(|(k, v)| !matches!(k.as_str(), "topic" | "message") && v.as_object().is_some_and(|o| !o.is_empty()))
        .map(|(k, _)| k.to_lowercase())
        .collect();
    (!domains.is_empty()).then_some(domains)
}

fn domains_of(turns: &[TurnRecord]) -> Vec<String> {
    let set: BTreeSet<String> = turns
        .iter()
        .flat_map(|t| t.state.keys())
        .filter_map(|k| k.split('.').next().map(str::to_owned))
        .collect();
    set.into_iter().collect()
}

/// Converts a raw MultiWOZ ontology (`{"hotel-price range": [..], "hotel-book day": [..]}`,
/// or the `hotel-semi-area` variant) into `{"domain.group.name": [..]}`.
pub fn convert_raw_ontology(path: &Path, text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let raw: BTreeMap<String, Vec<String>> = parse_json(path, text)?;
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (key, values) in raw {
        let parts: Vec<&str> = key.splitn(3, '-').collect();
        let key_opt = match parts.as_slice() {
            [domain, group @ ("semi" | "book"), slot] => slot_key(domain, group, slot),
            [domain, rest] => match rest.strip_prefix("book ") {
                Some(slot) => slot_key(domain, "book", slot),
                None => slot_key(domain, "semi", rest),
            },
            _ => None,
        };
        let key = key_opt.ok_or_else(|| Error::MalformedCorpus {
            path: path.to_owned(),
            at: format!("key `{key}`"),
            msg: "unrecognized ontology key".into(),
        })?;
        out.entry(key).or_default().extend(values);
    }
    Ok(out)
}

/// Builds an ontology from the values observed in gold states, in
/// first-seen order. Used when no ontology file accompanies a dump.
pub fn derive_ontology(records: &[DialogueRecord]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for rec in records {
        for turn in &rec.turns {
            for (slot, raw) in &turn.state {
                let Some(GoldValue::Value(alts)) = raw.as_deref().and_then(GoldValue::parse) else {
                    out.entry(slot.clone()).or_default();
                    continue;
                };
                let vals = out.entry(slot.clone()).or_default();
                for a in alts {
                    if !vals.contains(&a) {
                        vals.push(a);
                    }
                }
            }
        }
    }
    out.retain(|_, v| !v.is_empty());
    out
}
