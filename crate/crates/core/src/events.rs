//! Event wire format written by pipeline steps.
//!
//! One JSON object per line, UTF-8: `k` kind, `n` name, `v` value, optional
//! `t` type hint. Example: `{"k":"log","n":"text_src","v":"OCR"}`. The
//! channel is one-way; steps receive everything they need up front through
//! `FLOR_EVENTS`, `FLOR_CKPT_DIR`, `FLOR_ARGS`, and `FLOR_REPLAY`.

use serde::{Deserialize, Serialize};

use crate::error::{FlorError, Result};

/// Environment variable naming the event file a step appends to.
pub const ENV_EVENTS: &str = "FLOR_EVENTS";
/// Directory where checkpoints are materialized for (and written by) steps.
pub const ENV_CKPT_DIR: &str = "FLOR_CKPT_DIR";
/// JSON map of resolved argument values handed to the step.
pub const ENV_ARGS: &str = "FLOR_ARGS";
/// Set to "1" during replay, unset otherwise.
pub const ENV_REPLAY: &str = "FLOR_REPLAY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LoopBegin,
    IterBegin,
    IterEnd,
    LoopEnd,
    Log,
    Arg,
    Ckpt,
    Flush,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "k")]
    pub kind: EventKind,
    #[serde(rename = "n", default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(rename = "v", default, skip_serializing_if = "String::is_empty")]
    pub value: String,
    #[serde(rename = "t", default, skip_serializing_if = "Option::is_none")]
    pub type_hint: Option<i64>,
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization cannot fail")
    }
}

/// Parse one wire line; `ordinal` is the 1-based line number for errors.
pub fn parse_event_line(line: &str, ordinal: usize) -> Result<Event> {
    serde_json::from_str(line).map_err(|e| FlorError::Protocol {
        ordinal,
        msg: format!("bad event line: {e}"),
    })
}

/// Parse a full event stream, skipping blank lines.
pub fn parse_event_stream(text: &str) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_event_line(line, idx + 1)?);
    }
    Ok(out)
}
