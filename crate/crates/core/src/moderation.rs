//! Post-game moderation: thresholded line flagging, per-player flag
//! statistics, report-coverage ratios and proactive-moderation candidates.

use crate::chat::MatchSession;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error)]
pub enum ModerationError {
    #[error("flag refers to unknown line {line_index} of match {match_id}")]
    UnknownFlag { match_id: String, line_index: usize },
    #[error("invalid report sets: {0}")]
    InvalidSets(String),
}

/// One scored line, as produced by prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScore {
    pub match_id: String,
    pub line_index: usize,
    pub player_key: String,
    pub score: f64,
}

/// Lines whose toxicity score reaches `threshold`. An infinite threshold
/// flags nothing.
pub fn flag_lines(scores: &[LineScore], threshold: f64) -> BTreeSet<(String, usize)> {
    scores
        .iter()
        .filter(|s| s.score >= threshold)
        .map(|s| (s.match_id.clone(), s.line_index))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerFlagStats {
    pub player_key: String,
    pub matches_played: usize,
    pub flagged_total: usize,
    pub avg_flagged_per_match: f64,
}

/// Per-player flag counts over every player appearing in `sessions`.
///
/// Each flag is attributed to the player who wrote the flagged line; a
/// flag pointing outside the sessions is an error.
pub fn player_flag_stats(
    flags: &BTreeSet<(String, usize)>,
    sessions: &[MatchSession],
) -> Result<BTreeMap<String, PlayerFlagStats>, ModerationError> {
    let by_match: BTreeMap<&str, &MatchSession> =
        sessions.iter().map(|s| (s.match_id.as_str(), s)).collect();
    let mut stats: BTreeMap<String, PlayerFlagStats> = BTreeMap::new();
    for session in sessions {
        for player in session.distinct_players() {
            let entry = stats.entry(player.to_string()).or_insert_with(|| PlayerFlagStats {
                player_key: player.to_string(),
                matches_played: 0,
                flagged_total: 0,
                avg_flagged_per_match: 0.0,
            });
            entry.matches_played += 1;
        }
    }
    for (match_id, line_index) in flags {
        let line = by_match
            .get(match_id.as_str())
            .and_then(|s| s.lines.get(*line_index))
            .ok_or_else(|| ModerationError::UnknownFlag {
                match_id: match_id.clone(),
                line_index: *line_index,
            })?;
        let entry =
            stats.get_mut(&line.player_key).expect("line speakers are in the roster");
        entry.flagged_total += 1;
    }
    for entry in stats.values_mut() {
        entry.avg_flagged_per_match = entry.flagged_total as f64 / entry.matches_played as f64;
    }
    Ok(stats)
}

/// Player sets compared in the coverage report: all players, players
/// reported through the chat-report flow, players reported for any
/// reason, and players the model flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSets {
    pub players: BTreeSet<String>,
    pub chat_reported: BTreeSet<String>,
    pub reported: BTreeSet<String>,
    pub flagged: BTreeSet<String>,
}

impl ReportSets {
    pub fn new(
        players: BTreeSet<String>,
        chat_reported: BTreeSet<String>,
        reported: BTreeSet<String>,
        flagged: BTreeSet<String>,
    ) -> Result<Self, ModerationError> {
        for (name, subset) in
            [("chat_reported", &chat_reported), ("reported", &reported), ("flagged", &flagged)]
        {
            if let Some(stray) = subset.difference(&players).next() {
                return Err(ModerationError::InvalidSets(format!(
                    "{name} contains {stray}, which is not in players"
                )));
            }
        }
        Ok(ReportSets { players, chat_reported, reported, flagged })
    }
}

/// Coverage ratios as percentages; denominators that are empty sets yield
/// `None` (rendered as "undefined" in text and `null` in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationRatios {
    #[serde(rename = "F/P")]
    pub flagged_over_players: Option<f64>,
    #[serde(rename = "(F∩CR)/CR")]
    pub flagged_over_chat_reported: Option<f64>,
    #[serde(rename = "(F∩¬CR)/¬CR")]
    pub flagged_over_not_chat_reported: Option<f64>,
    #[serde(rename = "(F∩R)/R")]
    pub flagged_over_reported: Option<f64>,
    #[serde(rename = "(F∩¬R)/¬R")]
    pub flagged_over_not_reported: Option<f64>,
}

fn percent(numerator: usize, denominator: usize) -> Option<f64> {
    if denominator == 0 {
        None
    } else {
        Some(100.0 * numerator as f64 / denominator as f64)
    }
}

pub fn moderation_report(sets: &ReportSets) -> ModerationRatios {
    let ReportSets { players, chat_reported, reported, flagged } = sets;
    let inter = |a: &BTreeSet<String>, b: &BTreeSet<String>| a.intersection(b).count();
    let not_chat_reported: BTreeSet<String> =
        players.difference(chat_reported).cloned().collect();
    let not_reported: BTreeSet<String> = players.difference(reported).cloned().collect();
    ModerationRatios {
        flagged_over_players: percent(flagged.len(), players.len()),
        flagged_over_chat_reported: percent(inter(flagged, chat_reported), chat_reported.len()),
        flagged_over_not_chat_reported: percent(
            inter(flagged, &not_chat_reported),
            not_chat_reported.len(),
        ),
        flagged_over_reported: percent(inter(flagged, reported), reported.len()),
        flagged_over_not_reported: percent(inter(flagged, &not_reported), not_reported.len()),
    }
}

impl ModerationRatios {
    pub fn to_text(&self) -> String {
        let row = |name: &str, v: Option<f64>| match v {
            Some(v) => format!("{name:<12} {v:>10.2}%\n"),
            None => format!("{name:<12} {:>11}\n", "undefined"),
        };
        let mut out = String::new();
        out.push_str(&row("F/P", self.flagged_over_players));
        out.push_str(&row("(F∩CR)/CR", self.flagged_over_chat_reported));
        out.push_str(&row("(F∩¬CR)/¬CR", self.flagged_over_not_chat_reported));
        out.push_str(&row("(F∩R)/R", self.flagged_over_reported));
        out.push_str(&row("(F∩¬R)/¬R", self.flagged_over_not_reported));
        out
    }
}

/// Players worth a proactive review: not in `exclude` (typically the
/// chat-reported set, who are already in the report queue) and flagged at
/// least `min_avg_per_match` times per match on average. The floor is
/// inclusive.
pub fn proactive_candidates(
    stats: &BTreeMap<String, PlayerFlagStats>,
    min_avg_per_match: f64,
    exclude: &BTreeSet<String>,
) -> Vec<String> {
    stats
        .values()
        .filter(|s| !exclude.contains(&s.player_key))
        .filter(|s| s.avg_flagged_per_match >= min_avg_per_match)
        .map(|s| s.player_key.clone())
        .collect()
}
