//! Snapping free-text spans onto ontology values.
//!
//! Similarity is the Ratcliff-Obershelp ratio `2·M / (|a| + |b|)`, where `M`
//! is the number of characters covered by the recursively found longest
//! common blocks. The block search reproduces Python's
//! `difflib.SequenceMatcher` (no junk function, automatic "popular element"
//! pruning for sequences of 200+ characters), so scores agree with
//! `difflib.get_close_matches` character for character.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ingest::Ontology;
use crate::types::SlotName;

/// A common block: `a[a_start..a_start+len] == b[b_start..b_start+len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub a_start: usize,
    pub b_start: usize,
    pub len: usize,
}

struct Matcher<'a> {
    a: &'a [char],
    b: &'a [char],
    b2j: HashMap<char, Vec<usize>>,
}

impl<'a> Matcher<'a> {
    fn new(a: &'a [char], b: &'a [char]) -> Self {
        let mut b2j: HashMap<char, Vec<usize>> = HashMap::new();
        for (j, &c) in b.iter().enumerate() {
            b2j.entry(c).or_default().push(j);
        }
        let n = b.len();
        if n >= 200 {
            let ntest = n / 100 + 1;
            b2j.retain(|_, idxs| idxs.len() <= ntest);
        }
        Self { a, b, b2j }
    }

    fn longest_match(&self, alo: usize, ahi: usize, blo: usize, bhi: usize) -> Block {
        let (a, b) = (self.a, self.b);
        let (mut besti, mut bestj, mut bestsize) = (alo, blo, 0usize);
        let mut j2len: HashMap<usize, usize> = HashMap::new();
        for (i, ch) in a.iter().enumerate().take(ahi).skip(alo) {
            let mut next: HashMap<usize, usize> = HashMap::new();
            if let Some(js) = self.b2j.get(ch) {
                for &j in js {
                    if j < blo {
                        continue;
                    }
                    if j >= bhi {
                        break;
                    }
                    let k = j.checked_sub(1).and_then(|p| j2len.get(&p)).copied().unwrap_or(0) + 1;
                    next.insert(j, k);
                    if k > bestsize {
                        besti = i + 1 - k;
                        bestj = j + 1 - k;
                        bestsize = k;
                    }
                }
            }
            j2len = next;
        }
        // Extend through elements pruned as popular.
        while besti > alo && bestj > blo && a[besti - 1] == b[bestj - 1] {
            besti -= 1;
            bestj -= 1;
            bestsize += 1;
        }
        while besti + bestsize < ahi && bestj + bestsize < bhi && a[besti + bestsize] == b[bestj + bestsize] {
            bestsize += 1;
        }
        Block { a_start: besti, b_start: bestj, len: bestsize }
    }

    fn matching_blocks(&self) -> Vec<Block> {
        let mut queue = vec![(0, self.a.len(), 0, self.b.len())];
        let mut blocks = Vec::new();
        while let Some((alo, ahi, blo, bhi)) = queue.pop() {
            let m = self.longest_match(alo, ahi, blo, bhi);
            if m.len > 0 {
                if alo < m.a_start && blo < m.b_start {
                    queue.push((alo, m.a_start, blo, m.b_start));
                }
                if m.a_start + m.len < ahi && m.b_start + m.len < bhi {
                    queue.push((m.a_start + m.len, ahi, m.b_start + m.len, bhi));
                }
                blocks.push(m);
            }
        }
        blocks.sort_by_key(|b| (b.a_start, b.b_start));
        blocks
    }
}

/// Matching blocks of `a` against `b`, sorted by position.
pub fn matching_blocks(a: &str, b: &str) -> Vec<Block> {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    Matcher::new(&a, &b).matching_blocks()
}

/// Ratcliff-Obershelp similarity in `[0, 1]`; two empty strings score 1.
///
/// Not symmetric in general: `a` plays the role of the candidate and `b` of
/// the query, as in `get_close_matches`.
pub fn similarity_ratio(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let m: usize = Matcher::new(&a, &b).matching_blocks().iter().map(|b| b.len).sum();
    2.0 * m as f64 / total as f64
}

/// Best candidate by ratio (earliest wins ties) if it reaches `cutoff`.
pub fn closest_match<'c, S: AsRef<str>>(query: &str, candidates: &'c [S], cutoff: f64) -> Option<(&'c str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for c in candidates {
        let r = similarity_ratio(c.as_ref(), query);
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((c.as_ref(), r));
        }
    }
    best.filter(|(_, r)| *r >= cutoff)
}

/// Resolution of a span against a slot's ontology.
#[derive(Debug, Clone, PartialEq)]
pub enum Canonical {
    /// Already a candidate, directly or through the alias table.
    Exact(String),
    /// Nearest candidate with its ratio.
    Closest(String, f64),
    /// Nothing reached the cutoff.
    NoMatch,
}

pub fn resolve(span_text: &str, slot: &SlotName, ontology: &Ontology, cutoff: f64) -> Result<Canonical> {
    let cands = ontology
        .candidates(slot)
        .ok_or_else(|| Error::UnknownSlotInOntology(slot.clone()))?;
    let aliased = ontology.resolve(span_text);
    if cands.iter().any(|c| c == aliased) {
        return Ok(Canonical::Exact(aliased.to_owned()));
    }
    Ok(match closest_match(span_text, cands, cutoff) {
        Some((c, r)) => Canonical::Closest(c.to_owned(), r),
        None => Canonical::NoMatch,
    })
}

/// Maps a normalized span onto the slot's closest candidate, or returns it
/// unchanged when no candidate reaches `cutoff`.
pub fn canonicalize(span_text: &str, slot: &SlotName, ontology: &Ontology, cutoff: f64) -> Result<String> {
    Ok(match resolve(span_text, slot, ontology, cutoff)? {
        Canonical::Exact(c) | Canonical::Closest(c, _) => c,
        Canonical::NoMatch => span_text.to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;
    use proptest::prelude::*;

    // Reference ratios computed with Python's difflib.SequenceMatcher(None, a, b).ratio().
    #[test]
    fn ratios_match_difflib() {
        let cases: &[(&str, &str, f64)] = &[
            ("lan hong house", "the hong house", 0.785714),
            ("the gonville hotel", "the hong house", 0.625),
            ("acorn guest house", "the hong house", 0.580645),
            ("funky fun house", "the hong house", 0.482759),
            ("the gonville hotel", "the gonville", 0.8),
            ("kings college", "kings colege", 0.96),
            ("pizza hut city centre", "zzzz", 0.16),
            ("fitzbillies restaurant", "zzzz", 0.076923),
            ("abcd", "bcda", 0.75),
            ("tide", "diet", 0.25),
            ("diet", "tide", 0.5),
            ("", "", 1.0),
        ];
        for &(a, b, want) in cases {
            let got = similarity_ratio(a, b);
            assert!((got - want).abs() < 1e-6, "{a:?} vs {b:?}: {got} != {want}");
        }
    }

    #[test]
    fn long_sequences_use_popular_pruning() {
        // difflib: SequenceMatcher(None, "a"*10 + "b", "a"*250 + "b").ratio() == 0.08396946564885496
        let a = format!("{}b", "a".repeat(10));
        let b = format!("{}b", "a".repeat(250));
        assert!((similarity_ratio(&a, &b) - 0.08396946564885496).abs() < 1e-12);
        // Every character of "ab"*150 is popular, so nothing matches.
        assert_eq!(similarity_ratio("xaby", &"ab".repeat(150)), 0.0);
    }

    #[test]
    fn departure_snaps_to_ontology() {
        let corpus = testkit::fixture_corpus(1, 0);
        let slot: SlotName = "taxi.semi.departure".parse().unwrap();
        assert_eq!(canonicalize("the hong house", &slot, &corpus.ontology, 0.6).unwrap(), "lan hong house");
        assert_eq!(canonicalize("lan hong house", &slot, &corpus.ontology, 0.6).unwrap(), "lan hong house");
        assert_eq!(canonicalize("zzzz", &slot, &corpus.ontology, 0.6).unwrap(), "zzzz");
        assert!(matches!(
            canonicalize("x", &"bus.semi.stop".parse().unwrap(), &corpus.ontology, 0.6),
            Err(Error::UnknownSlotInOntology(_))
        ));
    }

    #[test]
    fn ties_go_to_earlier_candidate() {
        let cands = ["abx", "aby"];
        assert_eq!(closest_match("ab", &cands, 0.0).unwrap().0, "abx");
    }

    proptest! {
        #[test]
        fn ratio_in_unit_interval(a in "[a-e ]{0,30}", b in "[a-e ]{0,30}") {
            let r = similarity_ratio(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r));
            if a == b { prop_assert_eq!(r, 1.0); }
        }
    }
}
