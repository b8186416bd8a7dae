//! Reading-comprehension views of a dialogue.
//!
//! At turn `t` the passage is `u_1 a_1 … a_{t-1} u_t` behind a sentinel
//! token at position 0, every slot becomes a question, and the answer is
//! either a token span (extractive slots) or an option index (categorical
//! slots).

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DialogueCorpus, Ontology};
use crate::taxonomy::SlotSpec;
use crate::text::{normalize_text, rfind_tokens, tokenize_at, Speaker, Token};
use crate::types::{Dialogue, GoldValue, SlotName, SlotValue, OPTION_DONTCARE, OPTION_NONE};

/// Text of the token at position 0; the span `(0, 0)` means "no value".
pub const SENTINEL: &str = "[ctx]";

/// Inclusive token index range.
pub type TokenRange = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRanges {
    pub user: Option<TokenRange>,
    pub agent: Option<TokenRange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerializedContext {
    pub tokens: Vec<Token>,
    pub turn_boundaries: BTreeMap<usize, TurnRanges>,
}

impl SerializedContext {
    /// Rebuilds a context from the token texts of a wire request.
    ///
    /// Turn structure is not on the wire, so everything after the sentinel
    /// is attributed to a single user turn 1.
    pub fn from_wire_tokens<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut tokens = vec![Token {
            text: SENTINEL.to_owned(),
            char_start: 0,
            char_end: 0,
            turn_index: 0,
            speaker: Speaker::Sentinel,
        }];
        let mut offset = 0;
        for t in texts.iter().skip(1) {
            let text = t.as_ref().to_owned();
            let len = text.chars().count();
            tokens.push(Token {
                text,
                char_start: offset,
                char_end: offset + len,
                turn_index: 1,
                speaker: Speaker::User,
            });
            offset += len + 1;
        }
        let mut turn_boundaries = BTreeMap::new();
        if tokens.len() > 1 {
            turn_boundaries.insert(
                1,
                TurnRanges {
                    user: Some((1, tokens.len() - 1)),
                    agent: None,
                },
            );
        }
        Self { tokens, turn_boundaries }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when only the sentinel is present.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Space-joined text of an inclusive token range.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        self.tokens[start..=end]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn user_range(&self, turn: usize) -> Option<TokenRange> {
        self.turn_boundaries.get(&turn).and_then(|r| r.user)
    }

    /// The turn whose user utterance fully contains `[start, end]`, if any.
    pub fn enclosing_user_turn(&self, start: usize, end: usize) -> Option<usize> {
        self.turn_boundaries
            .iter()
            .find(|(_, r)| r.user.is_some_and(|(a, b)| a <= start && end <= b))
            .map(|(t, _)| *t)
    }

    /// Last span whose token texts equal one of `alternatives` (normalized
    /// strings). Among alternatives, the occurrence starting latest wins;
    /// equal starts prefer the longer match.
    pub fn find_value_span<S: AsRef<str>>(&self, alternatives: &[S]) -> Option<TokenRange> {
        let hay: Vec<&str> = self.tokens[1..].iter().map(|t| t.text.as_str()).collect();
        alternatives
            .iter()
            .filter_map(|alt| {
                let needle: Vec<&str> = alt.as_ref().split(' ').filter(|s| !s.is_empty()).collect();
                rfind_tokens(&hay, &needle).map(|i| (i + 1, i + needle.len()))
            })
            .max_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
    }
}

/// Normalized, tokenized utterances of one dialogue, reused across turns.
#[derive(Debug, Clone)]
pub struct DialogueView<'a> {
    pub dialogue: &'a Dialogue,
    user: Vec<String>,
    agent: Vec<Option<String>>,
}

impl<'a> DialogueView<'a> {
    pub fn new(dialogue: &'a Dialogue) -> Self {
        Self {
            dialogue,
            user: dialogue.turns.iter().map(|t| normalize_text(&t.user_utterance)).collect(),
            agent: dialogue
                .turns
                .iter()
                .map(|t| t.agent_utterance.as_deref().map(normalize_text))
                .collect(),
        }
    }

    pub fn num_turns(&self) -> usize {
        self.user.len()
    }

    /// Context `D_t` for a 1-based turn.
    pub fn context(&self, turn: usize) -> Result<SerializedContext> {
        if turn == 0 || turn > self.num_turns() {
            return Err(Error::TurnOutOfRange {
                dialogue: self.dialogue.id.clone(),
                turn,
                len: self.num_turns(),
            });
        }
        let mut tokens = vec![Token {
            text: SENTINEL.to_owned(),
            char_start: 0,
            char_end: 0,
            turn_index: 0,
            speaker: Speaker::Sentinel,
        }];
        let mut boundaries = BTreeMap::new();
        let mut offset = 0usize;
        for t in 1..=turn {
            let mut ranges = TurnRanges { user: None, agent: None };
            let mut push = |text: &str, speaker: Speaker, tokens: &mut Vec<Token>| -> Option<TokenRange> {
                let toks = tokenize_at(text, offset, t, speaker);
                if toks.is_empty() {
                    return None;
                }
                offset = toks.last().map(|k| k.char_end + 1).unwrap_or(offset);
                let first = tokens.len();
                tokens.extend(toks);
                Some((first, tokens.len() - 1))
            };
            ranges.user = push(&self.user[t - 1], Speaker::User, &mut tokens);
            if t < turn {
                if let Some(agent) = &self.agent[t - 1] {
                    ranges.agent = push(agent, Speaker::Agent, &mut tokens);
                }
            }
            boundaries.insert(t, ranges);
        }
        Ok(SerializedContext {
            tokens,
            turn_boundaries: boundaries,
        })
    }
}

/// Builds `D_t` for a dialogue. Prefer [`DialogueView`] when visiting many turns.
pub fn serialize_context(dialogue: &Dialogue, turn: usize) -> Result<SerializedContext> {
    DialogueView::new(dialogue).context(turn)
}

/// Last span matching any normalized alternative of a concrete gold value.
pub fn find_value_span(context: &SerializedContext, gold: &GoldValue) -> Option<TokenRange> {
    match gold {
        GoldValue::Value(alts) => context.find_value_span(alts),
        GoldValue::DontCare => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    None,
    DontCare,
    Value,
}

/// Span target for one (turn, slot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnswer {
    pub start: usize,
    pub end: usize,
    pub kind: AnswerKind,
}

/// Why a span label could not be produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unspannable {
    /// A concrete value that does not occur as a token run in the context.
    Value,
    /// DontCare whose originating user utterance has no tokens.
    DontCare,
}

/// Span label for `slot` at `turn` given its context.
///
/// None → `(0, 0)`; DontCare → the full user utterance of the earliest turn
/// `≤ turn` annotated DontCare; a value → its last occurrence.
pub fn span_label(
    dialogue: &Dialogue,
    turn: usize,
    slot: &SlotName,
    context: &SerializedContext,
) -> std::result::Result<SpanAnswer, Unspannable> {
    let gold = dialogue.turn(turn).and_then(|t| t.gold_state.get(slot));
    match gold {
        None => Ok(SpanAnswer { start: 0, end: 0, kind: AnswerKind::None }),
        Some(GoldValue::DontCare) => {
            let first = dialogue.turns[..turn]
                .iter()
                .find(|t| t.gold_state.get(slot) == Some(&GoldValue::DontCare))
                .map(|t| t.index)
                .unwrap_or(turn);
            context
                .user_range(first)
                .map(|(start, end)| SpanAnswer { start, end, kind: AnswerKind::DontCare })
                .ok_or(Unspannable::DontCare)
        }
        Some(gold @ GoldValue::Value(_)) => find_value_span(context, gold)
            .map(|(start, end)| SpanAnswer { start, end, kind: AnswerKind::Value })
            .ok_or(Unspannable::Value),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanExample {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub slot: SlotName,
    pub question: String,
    pub context: Arc<SerializedContext>,
    pub answer: SpanAnswer,
    pub gold_value: SlotValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceExample {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub slot: SlotName,
    pub question: String,
    pub context: Arc<SerializedContext>,
    pub options: Vec<String>,
    pub gold_index: usize,
}

/// `choice_values` followed by the two reserved options.
pub fn choice_options(spec: &SlotSpec) -> Vec<String> {
    let mut options = spec.choice_values.clone();
    options.push(OPTION_DONTCARE.to_owned());
    options.push(OPTION_NONE.to_owned());
    options
}

pub fn example_id(dialogue_id: &str, turn: usize, slot: &SlotName) -> String {
    format!("{dialogue_id}:{turn}:{slot}")
}

/// Span example for an extractive slot, or `None` when the gold value cannot
/// be located.
pub fn make_span_example(
    dialogue: &Dialogue,
    turn: usize,
    spec: &SlotSpec,
    context: &Arc<SerializedContext>,
) -> std::result::Result<SpanExample, Unspannable> {
    let answer = span_label(dialogue, turn, &spec.slot, context)?;
    let gold_value = dialogue
        .turn(turn)
        .and_then(|t| t.gold_state.get(&spec.slot))
        .map(GoldValue::primary)
        .unwrap_or_default();
    Ok(SpanExample {
        dialogue_id: dialogue.id.clone(),
        turn_index: turn,
        slot: spec.slot.clone(),
        question: spec.question.clone(),
        context: Arc::clone(context),
        answer,
        gold_value,
    })
}

/// Index of the gold option, resolving value alternatives through aliases.
pub fn gold_option_index(
    gold: Option<&GoldValue>,
    options: &[String],
    ontology: &Ontology,
) -> Option<usize> {
    let find = |s: &str| options.iter().position(|o| o == s);
    match gold {
        None => find(OPTION_NONE),
        Some(GoldValue::DontCare) => find(OPTION_DONTCARE),
        Some(GoldValue::Value(alts)) => alts.iter().find_map(|a| find(ontology.resolve(a))),
    }
}

pub fn make_choice_example(
    dialogue: &Dialogue,
    turn: usize,
    spec: &SlotSpec,
    context: &Arc<SerializedContext>,
    ontology: &Ontology,
) -> Result<ChoiceExample> {
    let options = choice_options(spec);
    let gold = dialogue.turn(turn).and_then(|t| t.gold_state.get(&spec.slot));
    let gold_index = gold_option_index(gold, &options, ontology).ok_or_else(|| Error::ValueNotInOntology {
        slot: spec.slot.clone(),
        value: gold.map(GoldValue::to_label).unwrap_or_default(),
        dialogue: dialogue.id.clone(),
        turn,
    })?;
    Ok(ChoiceExample {
        dialogue_id: dialogue.id.clone(),
        turn_index: turn,
        slot: spec.slot.clone(),
        question: spec.question.clone(),
        context: Arc::clone(context),
        options,
        gold_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    Span,
    Choice,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Example {
    Span(SpanExample),
    Choice(ChoiceExample),
}

impl Example {
    pub fn id(&self) -> String {
        match self {
            Example::Span(e) => example_id(&e.dialogue_id, e.turn_index, &e.slot),
            Example::Choice(e) => example_id(&e.dialogue_id, e.turn_index, &e.slot),
        }
    }

    pub fn to_record(&self) -> ExampleRecord {
        let tokens = |c: &SerializedContext| c.tokens.iter().map(|t| t.text.clone()).collect();
        match self {
            Example::Span(e) => ExampleRecord::Span {
                id: self.id(),
                slot: e.slot.clone(),
                question: e.question.clone(),
                tokens: tokens(&e.context),
                answer: e.answer,
            },
            Example::Choice(e) => ExampleRecord::Choice {
                id: self.id(),
                slot: e.slot.clone(),
                question: e.question.clone(),
                tokens: tokens(&e.context),
                options: e.options.clone(),
                gold_index: e.gold_index,
            },
        }
    }
}

/// One JSONL line of generated training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ExampleRecord {
    Span {
        id: String,
        slot: SlotName,
        question: String,
        tokens: Vec<String>,
        answer: SpanAnswer,
    },
    Choice {
        id: String,
        slot: SlotName,
        question: String,
        tokens: Vec<String>,
        options: Vec<String>,
        gold_index: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub total: usize,
    pub span: usize,
    pub choice: usize,
    pub span_none: usize,
    pub span_dontcare: usize,
    pub span_value: usize,
    pub choice_none: usize,
    pub choice_dontcare: usize,
    pub choice_value: usize,
    /// Concrete gold values with no matching span (dropped).
    pub unspannable: usize,
    /// DontCare labels whose user utterance was empty (dropped).
    pub unspannable_dontcare: usize,
    /// Choice examples skipped because the gold value was not an option.
    pub off_ontology: usize,
}

impl GenerationReport {
    /// Examples whose answer is not None.
    pub fn positive(&self) -> usize {
        self.span_dontcare + self.span_value + self.choice_dontcare + self.choice_value
    }

    fn merge(&mut self, o: &GenerationReport) {
        self.total += o.total;
        self.span += o.span;
        self.choice += o.choice;
        self.span_none += o.span_none;
        self.span_dontcare += o.span_dontcare;
        self.span_value += o.span_value;
        self.choice_none += o.choice_none;
        self.choice_dontcare += o.choice_dontcare;
        self.choice_value += o.choice_value;
        self.unspannable += o.unspannable;
        self.unspannable_dontcare += o.unspannable_dontcare;
        self.off_ontology += o.off_ontology;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions {
    pub mode: GenerationMode,
    /// Skip (and count) choice examples whose gold value is not an option
    /// instead of failing.
    pub skip_off_ontology: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            mode: GenerationMode::Both,
            skip_off_ontology: false,
        }
    }
}

fn generate_dialogue(
    dialogue: &Dialogue,
    specs: &[SlotSpec],
    ontology: &Ontology,
    opts: GenerateOptions,
) -> Result<(Vec<Example>, GenerationReport)> {
    let view = DialogueView::new(dialogue);
    let mut out = Vec::new();
    let mut rep = GenerationReport::default();
    let want_span = opts.mode != GenerationMode::Choice;
    let want_choice = opts.mode != GenerationMode::Span;
    for turn in 1..=view.num_turns() {
        let ctx = Arc::new(view.context(turn)?);
        for spec in specs {
            if want_choice && spec.is_categorical {
                match make_choice_example(dialogue, turn, spec, &ctx, ontology) {
                    Ok(ex) => {
                        let reserved = ex.options.len() - 2;
                        match ex.gold_index {
                            i if i == reserved => rep.choice_dontcare += 1,
                            i if i == reserved + 1 => rep.choice_none += 1,
                            _ => rep.choice_value += 1,
                        }
                        rep.choice += 1;
                        out.push(Example::Choice(ex));
                    }
                    Err(Error::ValueNotInOntology { .. }) if opts.skip_off_ontology => rep.off_ontology += 1,
                    Err(e) => return Err(e),
                }
            }
            if want_span && spec.is_extractive {
                match make_span_example(dialogue, turn, spec, &ctx) {
                    Ok(ex) => {
                        match ex.answer.kind {
                            AnswerKind::None => rep.span_none += 1,
                            AnswerKind::DontCare => rep.span_dontcare += 1,
                            AnswerKind::Value => rep.span_value += 1,
                        }
                        rep.span += 1;
                        out.push(Example::Span(ex));
                    }
                    Err(Unspannable::Value) => rep.unspannable += 1,
                    Err(Unspannable::DontCare) => rep.unspannable_dontcare += 1,
                }
            }
        }
    }
    rep.total = rep.span + rep.choice;
    Ok((out, rep))
}

/// Emits every example of the corpus, in dialogue/turn/spec order, to `sink`.
///
/// Dialogues are processed in parallel in bounded chunks; the emission order
/// and the report do not depend on the thread count.
pub fn generate_corpus<F>(
    corpus: &DialogueCorpus,
    specs: &[SlotSpec],
    opts: GenerateOptions,
    mut sink: F,
) -> Result<GenerationReport>
where
    F: FnMut(Example) -> Result<()>,
{
    const CHUNK: usize = 64;
    let mut report = GenerationReport::default();
    for chunk in corpus.dialogues.chunks(CHUNK) {
        let parts: Vec<_> = chunk
            .par_iter()
            .map(|d| generate_dialogue(d, specs, &corpus.ontology, opts))
            .collect::<Result<_>>()?;
        for (examples, rep) in parts {
            report.merge(&rep);
            for ex in examples {
                sink(ex)?;
            }
        }
    }
    Ok(report)
}

/// Convenience wrapper writing JSONL records.
pub fn write_jsonl<W: Write>(
    corpus: &DialogueCorpus,
    specs: &[SlotSpec],
    opts: GenerateOptions,
    out: &mut W,
) -> Result<GenerationReport> {
    generate_corpus(corpus, specs, opts, |ex| {
        serde_json::to_writer(&mut *out, &ex.to_record())?;
        out.write_all(b"\n")?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn sample() -> Dialogue {
        testkit::sample_dialogue()
    }

    #[test]
    fn single_turn_context_is_sentinel_plus_user() {
        let d = testkit::dialogue("d", &[("Hello there", None, &[])]);
        let ctx = serialize_context(&d, 1).unwrap();
        assert_eq!(ctx.texts(), ["[ctx]", "hello", "there"]);
        assert_eq!((ctx.tokens[0].char_start, ctx.tokens[0].char_end), (0, 0));
        assert_eq!(ctx.tokens[0].speaker, Speaker::Sentinel);
    }

    #[test]
    fn context_excludes_current_agent_turn() {
        let d = testkit::dialogue("d", &[("u one", Some("a one"), &[]), ("u two", Some("a two"), &[])]);
        let ctx = serialize_context(&d, 2).unwrap();
        assert_eq!(ctx.texts(), ["[ctx]", "u", "one", "a", "one", "u", "two"]);
        assert_eq!(ctx.turn_boundaries[&1], TurnRanges { user: Some((1, 2)), agent: Some((3, 4)) });
        assert_eq!(ctx.turn_boundaries[&2], TurnRanges { user: Some((5, 6)), agent: None });
        assert!(matches!(serialize_context(&d, 3), Err(Error::TurnOutOfRange { .. })));
        assert!(matches!(serialize_context(&d, 0), Err(Error::TurnOutOfRange { .. })));
    }

    #[test]
    fn sample_context_ends_with_third_user_turn() {
        let ctx = serialize_context(&sample(), 3).unwrap();
        let texts = ctx.texts();
        let tail = &texts[texts.len() - 8..];
        assert_eq!(tail.join(" "), "yes , may i have the address ?");
    }

    #[test]
    fn offsets_follow_joined_text() {
        let ctx = serialize_context(&sample(), 2).unwrap();
        let joined = ctx.tokens[1..].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
        let chars: Vec<char> = joined.chars().collect();
        for t in &ctx.tokens[1..] {
            let s: String = chars[t.char_start..t.char_end].iter().collect();
            assert_eq!(s, t.text);
        }
    }

    #[test]
    fn value_span_in_agent_turn() {
        let ctx = serialize_context(&sample(), 3).unwrap();
        let gold = GoldValue::Value(vec!["fitzbillies restaurant".into()]);
        let (s, e) = find_value_span(&ctx, &gold).unwrap();
        assert_eq!(ctx.span_text(s, e), "fitzbillies restaurant");
        assert_eq!(e, s + 1);
        assert_eq!(ctx.tokens[s].speaker, Speaker::Agent);
        assert!(find_value_span(&ctx, &GoldValue::Value(vec!["pizza hut".into()])).is_none());
    }

    #[test]
    fn repeated_value_labels_later_occurrence() {
        let d = testkit::dialogue("d", &[("north please", Some("the north ?"), &[]), ("yes north", None, &[])]);
        let ctx = serialize_context(&d, 2).unwrap();
        // tokens: [ctx] north please the north ? yes north
        assert_eq!(ctx.find_value_span(&["north"]), Some((7, 7)));
    }

    #[test]
    fn dontcare_span_is_first_dontcare_user_turn() {
        let d = sample();
        let food: SlotName = "restaurant.semi.food".parse().unwrap();
        let ctx = serialize_context(&d, 3).unwrap();
        let ans = span_label(&d, 3, &food, &ctx).unwrap();
        assert_eq!(ans.kind, AnswerKind::DontCare);
        assert_eq!(ctx.span_text(ans.start, ans.end), "i do not care , it just needs to be expensive .");
        assert_eq!(Some((ans.start, ans.end)), ctx.user_range(2));
    }

    #[test]
    fn unmentioned_slot_gets_sentinel_span() {
        let d = sample();
        let slot: SlotName = "hotel.semi.area".parse().unwrap();
        let ctx = serialize_context(&d, 1).unwrap();
        assert_eq!(span_label(&d, 1, &slot, &ctx).unwrap(), SpanAnswer { start: 0, end: 0, kind: AnswerKind::None });
    }

    #[test]
    fn sub_token_value_is_unspannable() {
        let slot: SlotName = "restaurant.semi.pricerange".parse().unwrap();
        let d = testkit::dialogue("d", &[("something cheaply priced", None, &[("restaurant.semi.pricerange", "cheap")])]);
        let ctx = serialize_context(&d, 1).unwrap();
        assert_eq!(span_label(&d, 1, &slot, &ctx), Err(Unspannable::Value));
    }

    #[test]
    fn choice_example_reserved_options() {
        let corpus = testkit::choice_corpus();
        let specs = testkit::specs_for(&corpus, 15);
        let d = &corpus.dialogues[0];
        let view = DialogueView::new(d);
        let ctx = Arc::new(view.context(2).unwrap());
        let parking = specs.iter().find(|s| s.slot.as_str() == "hotel.semi.parking").unwrap();
        let ex = make_choice_example(d, 2, parking, &ctx, &corpus.ontology).unwrap();
        assert_eq!(ex.options, ["yes", "no", "free", "do not care", "not mentioned"]);
        assert_eq!(ex.options[ex.gold_index], "yes");
        let area = specs.iter().find(|s| s.slot.as_str() == "hotel.semi.area").unwrap();
        let ex = make_choice_example(d, 2, area, &ctx, &corpus.ontology).unwrap();
        assert_eq!(ex.options[ex.gold_index], "do not care");
        let ex = make_choice_example(d, 1, area, &Arc::new(view.context(1).unwrap()), &corpus.ontology).unwrap();
        assert_eq!(ex.options[ex.gold_index], "not mentioned");
    }

    #[test]
    fn off_ontology_choice_value_errors() {
        let corpus = testkit::choice_corpus();
        let specs = testkit::specs_for(&corpus, 15);
        let parking = specs.iter().find(|s| s.slot.as_str() == "hotel.semi.parking").unwrap();
        let d = testkit::dialogue("x", &[("valet please", None, &[("hotel.semi.parking", "valet")])]);
        let ctx = Arc::new(serialize_context(&d, 1).unwrap());
        assert!(matches!(
            make_choice_example(&d, 1, parking, &ctx, &corpus.ontology),
            Err(Error::ValueNotInOntology { .. })
        ));
    }

    #[test]
    fn empty_corpus_generates_nothing() {
        let corpus = DialogueCorpus::default();
        let mut n = 0;
        let rep = generate_corpus(&corpus, &[], GenerateOptions::default(), |_| {
            n += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 0);
        assert_eq!(rep, GenerationReport::default());
    }

    #[test]
    fn jsonl_schema() {
        let corpus = testkit::choice_corpus();
        let specs = testkit::specs_for(&corpus, 15);
        let mut buf = Vec::new();
        write_jsonl(&corpus, &specs, GenerateOptions::default(), &mut buf).unwrap();
        let first = String::from_utf8(buf).unwrap().lines().next().unwrap().to_owned();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert!(v["type"] == "span" || v["type"] == "choice");
        assert!(v["tokens"][0] == SENTINEL);
        assert!(v["id"].as_str().unwrap().starts_with("choice:1:"));
    }
}
