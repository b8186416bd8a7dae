use std::path::PathBuf;

use thiserror::Error;

use crate::types::SlotName;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input does not conform to a documented schema. `at` locates the record.
    #[error("malformed corpus {}: {at}: {msg}", path.display())]
    MalformedCorpus {
        path: PathBuf,
        at: String,
        msg: String,
    },

    #[error("gold state references unknown slot `{slot}` (dialogue {dialogue}, turn {turn})")]
    UnknownSlot {
        slot: String,
        dialogue: String,
        turn: usize,
    },

    #[error("invalid few-shot fraction {0}; expected a value in (0, 1]")]
    InvalidFraction(f64),

    #[error("corpus has no dialogues")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("turn {turn} out of range for dialogue {dialogue} with {len} turns")]
    TurnOutOfRange {
        dialogue: String,
        turn: usize,
        len: usize,
    },

    #[error("value `{value}` of slot {slot} is not a choice option (dialogue {dialogue}, turn {turn})")]
    ValueNotInOntology {
        slot: SlotName,
        value: String,
        dialogue: String,
        turn: usize,
    },

    #[error("slot {0} has no ontology entry")]
    UnknownSlotInOntology(SlotName),

    #[error("reader failed on {dialogue} turn {turn} slot {slot}: {source}")]
    Reader {
        dialogue: String,
        turn: usize,
        slot: SlotName,
        #[source]
        source: crate::readers::ReaderError,
    },

    #[error("no prediction for dialogue {dialogue} turn {turn}{}", slot.as_ref().map(|s| format!(" slot {s}")).unwrap_or_default())]
    MissingPrediction {
        dialogue: String,
        turn: usize,
        slot: Option<SlotName>,
    },

    #[error("invalid slot name `{0}`; expected domain.group.name with group semi or book")]
    InvalidSlotName(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
