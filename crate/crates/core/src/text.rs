//! Text normalization and whitespace tokenization.
//!
//! Every string that is compared anywhere in the pipeline (utterances, gold
//! values, ontology candidates, decoded spans) goes through
//! [`normalize_text`] first, so that matching reduces to token-sequence
//! equality.

use serde::{Deserialize, Serialize};

const SPLIT_PUNCT: [char; 7] = ['.', ',', '?', '!', '\'', '"', ':'];

/// Lowercases, isolates punctuation as standalone tokens and collapses
/// whitespace.
///
/// A `:` directly between two ASCII digits is kept in place so clock times
/// such as `15:29` survive as one token.
pub fn normalize_text(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut spaced = String::with_capacity(lower.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        if SPLIT_PUNCT.contains(&c) && !is_time_colon(&chars, i) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_time_colon(chars: &[char], i: usize) -> bool {
    chars[i] == ':'
        && i > 0
        && chars[i - 1].is_ascii_digit()
        && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
    Sentinel,
}

/// A whitespace token of a serialized context.
///
/// Offsets count Unicode scalar values, not bytes, so they agree with
/// implementations in other languages on non-ASCII text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    pub turn_index: usize,
    pub speaker: Speaker,
}

impl Token {
    pub fn is_sentinel(&self) -> bool {
        self.speaker == Speaker::Sentinel
    }
}

/// Splits already-normalized text on single spaces.
///
/// Tokens are attributed to turn 0 and the user; [`crate::examplegen`]
/// re-attributes them when it assembles a context.
pub fn tokenize(normalized: &str) -> Vec<Token> {
    tokenize_at(normalized, 0, 0, Speaker::User)
}

pub(crate) fn tokenize_at(
    normalized: &str,
    base_offset: usize,
    turn_index: usize,
    speaker: Speaker,
) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut buf = String::new();
    let mut pos = 0;
    for c in normalized.chars() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: std::mem::take(&mut buf),
                    char_start: base_offset + s,
                    char_end: base_offset + pos,
                    turn_index,
                    speaker,
                });
            }
        } else {
            if start.is_none() {
                start = Some(pos);
            }
            buf.push(c);
        }
        pos += 1;
    }
    if let Some(s) = start {
        out.push(Token {
            text: buf,
            char_start: base_offset + s,
            char_end: base_offset + pos,
            turn_index,
            speaker,
        });
    }
    out
}

/// Normalizes and splits in one go; the usual entry point for matching.
pub fn token_texts(raw: &str) -> Vec<String> {
    normalize_text(raw)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Start index of the last occurrence of `needle` as a contiguous run in
/// `haystack`, comparing token texts. An empty needle never matches.
pub fn rfind_tokens<H: AsRef<str>, N: AsRef<str>>(haystack: &[H], needle: &[N]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len()).rev().find(|&i| {
        haystack[i..i + needle.len()]
            .iter()
            .zip(needle)
            .all(|(h, n)| h.as_ref() == n.as_ref())
    })
}
