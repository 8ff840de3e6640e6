//! Streaming inference: chat lines arrive as JSONL, one record per line,
//! possibly interleaved across matches. Each match keeps its own live
//! session so history and relative ids accumulate independently, and
//! every line is answered as soon as it is read.
//!
//! Memory stays proportional to the number of *active* matches: a
//! session is dropped on an explicit `end_of_match` record or after a
//! configurable number of input records without a line for that match.

use crate::error::CliError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use toxbuster_core::chat::{ChatLine, ChatType, LabeledToken, MatchSession, TeamSize, ToxicClass};
use toxbuster_core::model::{PredictError, Predictor};

/// One input record: either a chat line or an end-of-match sentinel
/// (`{"match_id": ..., "end_of_match": true}`).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InRecord {
    match_id: String,
    #[serde(default)]
    end_of_match: bool,
    #[serde(default)]
    line_index: Option<usize>,
    #[serde(default)]
    player_key: Option<String>,
    #[serde(default)]
    team_key: Option<String>,
    #[serde(default)]
    chat_type: Option<ChatType>,
    #[serde(default)]
    text: Option<String>,
    /// Tolerated so corpus files can be replayed as streams; ignored.
    #[serde(default)]
    #[allow(dead_code)]
    token_labels: Option<Vec<ToxicClass>>,
}

#[derive(Debug, Serialize)]
struct OutRecord<'a> {
    match_id: &'a str,
    line_index: usize,
    line_class: ToxicClass,
    score: f64,
    tokens: &'a [LabeledToken],
}

struct SessionState {
    session: MatchSession,
    /// `line_index` of the newest line, as it appeared in the input.
    last_index: usize,
    /// Input-record counter value when this match last received a line.
    last_seen: u64,
}

pub struct StreamSettings {
    pub num_teams: usize,
    pub team_size: TeamSize,
    /// Evict a match after this many input records without a line for
    /// it; `0` disables idle eviction.
    pub idle_records: u64,
}

fn field<T>(value: Option<T>, name: &str, record_number: u64) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::Config(format!("input record {record_number}: missing field {name}"))
    })
}

/// Runs the whole stream. Input `line_index` values must be strictly
/// increasing within a match (gaps are fine); violations end the run
/// with a stream-order error.
pub fn run_stream(
    predictor: &Predictor,
    reader: impl BufRead,
    mut writer: impl Write,
    settings: &StreamSettings,
) -> Result<(), CliError> {
    let mut active: HashMap<String, SessionState> = HashMap::new();
    let mut record_number: u64 = 0;
    for input_line in reader.lines() {
        let input_line = input_line.map_err(|e| CliError::io("input", e))?;
        if input_line.trim().is_empty() {
            continue;
        }
        record_number += 1;
        let record: InRecord = serde_json::from_str(&input_line).map_err(|e| {
            CliError::Config(format!("input record {record_number}: {e}"))
        })?;

        if record.end_of_match {
            active.remove(&record.match_id);
            continue;
        }

        let line_index = field(record.line_index, "line_index", record_number)?;
        let player_key = field(record.player_key, "player_key", record_number)?;
        let team_key = field(record.team_key, "team_key", record_number)?;
        let chat_type = field(record.chat_type, "chat_type", record_number)?;
        let text = field(record.text, "text", record_number)?;

        let state = active.entry(record.match_id.clone()).or_insert_with(|| SessionState {
            session: MatchSession::new(
                record.match_id.clone(),
                settings.num_teams,
                settings.team_size,
            ),
            last_index: 0,
            last_seen: record_number,
        });
        if !state.session.lines.is_empty() && line_index <= state.last_index {
            return Err(CliError::Stream(format!(
                "match {}: line_index {line_index} after {}",
                record.match_id, state.last_index
            )));
        }
        state.last_index = line_index;
        state.last_seen = record_number;

        // Sessions index lines by position; the stream's own numbering
        // is only checked for order and echoed back in the output.
        let position = state.session.lines.len();
        state.session.lines.push(ChatLine {
            match_id: record.match_id.clone(),
            line_index: position,
            player_key,
            team_key,
            chat_type,
            text,
            token_labels: None,
        });

        let (line_class, score, tokens) =
            match predictor.predict_line(&state.session, position) {
                Ok(prediction) => (prediction.line_class, prediction.score, prediction.tokens),
                // A line with no tokens carries nothing to flag.
                Err(PredictError::NoTokens { .. }) => (ToxicClass::NonToxic, 0.0, Vec::new()),
                Err(other) => {
                    return Err(CliError::Config(format!(
                        "input record {record_number}: {other}"
                    )))
                }
            };
        let out = OutRecord {
            match_id: &record.match_id,
            line_index,
            line_class,
            score,
            tokens: &tokens,
        };
        serde_json::to_writer(&mut writer, &out)
            .map_err(|e| CliError::Io(format!("output: {e}")))?;
        writer.write_all(b"\n").map_err(|e| CliError::io("output", e))?;
        writer.flush().map_err(|e| CliError::io("output", e))?;

        if settings.idle_records > 0 {
            active.retain(|_, s| record_number - s.last_seen <= settings.idle_records);
        }
    }
    Ok(())
}
