//! Corpus files: one JSON chat line per text line, grouped into sessions
//! by match id.

use crate::chat::{ChatLine, MatchSession, TeamSize, Violation};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line_number}: {source}")]
    Parse { line_number: usize, source: serde_json::Error },
    #[error("match {match_id}: {violation}")]
    Invalid { match_id: String, violation: Violation },
}

/// Reads a JSONL corpus and groups it into sessions, in order of first
/// appearance of each match id. Every session is validated.
pub fn read_corpus(
    reader: impl BufRead,
    num_teams: usize,
    team_size: TeamSize,
) -> Result<Vec<MatchSession>, CorpusError> {
    let mut order: Vec<String> = Vec::new();
    let mut by_match: BTreeMap<String, Vec<ChatLine>> = BTreeMap::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ChatLine = serde_json::from_str(&line)
            .map_err(|source| CorpusError::Parse { line_number: number + 1, source })?;
        if !by_match.contains_key(&parsed.match_id) {
            order.push(parsed.match_id.clone());
        }
        by_match.entry(parsed.match_id.clone()).or_default().push(parsed);
    }
    let mut sessions = Vec::with_capacity(order.len());
    for match_id in order {
        let lines = by_match.remove(&match_id).expect("collected above");
        let session = MatchSession { match_id: match_id.clone(), num_teams, team_size, lines };
        if let Some(violation) = crate::chat::validate_session(&session).into_iter().next() {
            return Err(CorpusError::Invalid { match_id, violation });
        }
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn write_corpus(mut writer: impl Write, sessions: &[MatchSession]) -> Result<(), CorpusError> {
    for session in sessions {
        for line in &session.lines {
            serde_json::to_writer(&mut writer, line)
                .map_err(|source| CorpusError::Parse { line_number: 0, source })?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}
