//! Builds the model input for one target chat line: scope-filtered history
//! selection, session-relative speaker ids, token-budget truncation and
//! track assembly.
//!
//! A built sequence is `[CLS]`, each included history line followed by one
//! `[SEP]`, then the current line and a final `[SEP]`. Six equal-length
//! tracks describe it: token ids, absolute positions, team ids, chat-type
//! ids, player ids and the supervision mask, which is true exactly on the
//! current line's text tokens.

use crate::chat::{ChatLine, ChatType, MatchSession, TeamSize};
use crate::tokenizer::Tokenizer;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// How much chat history is visible when classifying a line.
///
/// Scopes are strictly nested: each variant sees every line its
/// predecessor sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// The current line only.
    NoHistory,
    /// Prior lines written by the current player.
    Personal,
    /// Personal, plus prior lines from the player's team.
    Team,
    /// Team, plus prior all-chat lines from anyone.
    Global,
    /// Every prior line of the session, including enemy team chat.
    Moderator,
}

impl Scope {
    pub const ALL: [Scope; 5] =
        [Scope::NoHistory, Scope::Personal, Scope::Team, Scope::Global, Scope::Moderator];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::NoHistory => "no_history",
            Scope::Personal => "personal",
            Scope::Team => "team",
            Scope::Global => "global",
            Scope::Moderator => "moderator",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scope: {0}")]
pub struct UnknownScope(pub String);

impl FromStr for Scope {
    type Err = UnknownScope;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.replace('-', "_");
        Scope::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == normalized)
            .ok_or_else(|| UnknownScope(s.to_string()))
    }
}

/// How speaker metadata reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataMode {
    /// Metadata tracks carry per-token team, chat-type and player ids.
    SpeakerSegmentation,
    /// Literal marker tokens are prepended to each line; tracks stay
    /// neutral.
    InLine,
    /// No metadata at all; tracks stay neutral.
    None,
}

impl MetadataMode {
    pub const ALL: [MetadataMode; 3] =
        [MetadataMode::SpeakerSegmentation, MetadataMode::InLine, MetadataMode::None];

    pub fn as_str(self) -> &'static str {
        match self {
            MetadataMode::SpeakerSegmentation => "speaker_segmentation",
            MetadataMode::InLine => "in_line",
            MetadataMode::None => "none",
        }
    }
}

impl fmt::Display for MetadataMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown metadata mode: {0}")]
pub struct UnknownMetadataMode(pub String);

impl FromStr for MetadataMode {
    type Err = UnknownMetadataMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.replace('-', "_");
        MetadataMode::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == normalized)
            .ok_or_else(|| UnknownMetadataMode(s.to_string()))
    }
}

/// Chat-type track values. `[CLS]`/`[PAD]` and the non-segmented metadata
/// modes use the neutral index.
pub const CHAT_TYPE_TEAM: usize = 0;
pub const CHAT_TYPE_ALL: usize = 1;
pub const CHAT_TYPE_NEUTRAL: usize = 2;

pub fn chat_type_index(t: ChatType) -> usize {
    match t {
        ChatType::Team => CHAT_TYPE_TEAM,
        ChatType::All => CHAT_TYPE_ALL,
    }
}

/// Encoding-time knobs shared by training and prediction.
///
/// `team_slots`/`player_slots` size the id space of the metadata tracks;
/// the neutral index of a track equals its slot count, so embedding tables
/// need `slots + 1` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextSettings {
    pub scope: Scope,
    pub metadata_mode: MetadataMode,
    pub max_tokens: usize,
    pub team_slots: usize,
    pub player_slots: usize,
}

impl Default for ContextSettings {
    fn default() -> Self {
        ContextSettings {
            scope: Scope::Global,
            metadata_mode: MetadataMode::SpeakerSegmentation,
            max_tokens: 512,
            team_slots: 2,
            player_slots: 10,
        }
    }
}

impl ContextSettings {
    pub fn team_neutral(&self) -> usize {
        self.team_slots
    }

    pub fn player_neutral(&self) -> usize {
        self.player_slots
    }

    /// Embedding rows needed per metadata track (real ids plus neutral).
    pub fn team_rows(&self) -> usize {
        self.team_slots + 1
    }

    pub fn chat_type_rows(&self) -> usize {
        CHAT_TYPE_NEUTRAL + 1
    }

    pub fn player_rows(&self) -> usize {
        self.player_slots + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("target line {target} out of range for session of {len} lines")]
    TargetOutOfRange { target: usize, len: usize },
    #[error("max_tokens = {max_tokens} cannot hold [CLS], one current token and [SEP]")]
    MaxTokensTooSmall { max_tokens: usize },
    #[error("session has {teams} teams but num_teams = {capacity}")]
    TeamOverflow { teams: usize, capacity: usize },
    #[error("team {team_key} has {members} members but team_size = {team_size}")]
    PlayerOverflow { team_key: String, members: usize, team_size: usize },
    #[error("unbounded team size requires a single team")]
    UnboundedMultiTeam,
}

/// Session-relative ids for every player and team of one session, centered
/// on the target line's speaker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelativeIds {
    pub player_rel: BTreeMap<String, usize>,
    pub team_rel: BTreeMap<String, usize>,
}

/// Prior lines visible from `scope` when classifying `session.lines[target]`,
/// in chronological order.
pub fn select_history<'a>(
    session: &'a MatchSession,
    target: usize,
    scope: Scope,
) -> Result<Vec<&'a ChatLine>, ContextError> {
    let current = session
        .lines
        .get(target)
        .ok_or(ContextError::TargetOutOfRange { target, len: session.lines.len() })?;
    let visible = |line: &ChatLine| match scope {
        Scope::NoHistory => false,
        Scope::Personal => line.player_key == current.player_key,
        Scope::Team => line.player_key == current.player_key || line.team_key == current.team_key,
        Scope::Global => {
            line.player_key == current.player_key
                || line.team_key == current.team_key
                || line.chat_type == ChatType::All
        }
        Scope::Moderator => true,
    };
    Ok(session.lines[..target].iter().filter(|l| visible(l)).collect())
}

/// Assigns speaker-centered relative ids.
///
/// The target line's speaker is player 0 and its team is team 0. Teams are
/// numbered by most recent prior chat first, then by team key for teams
/// with no prior chat. Each team owns a block of `team_size` player ids
/// starting at `team_rel * team_size`; inside a block, the speaker comes
/// first, then teammates by most recent prior chat, then by player key.
pub fn assign_relative_ids(
    session: &MatchSession,
    target: usize,
) -> Result<RelativeIds, ContextError> {
    let current = session
        .lines
        .get(target)
        .ok_or(ContextError::TargetOutOfRange { target, len: session.lines.len() })?;

    // Last prior chat per player and per team; the roster covers the whole
    // session so ids stay stable as a match progresses.
    let mut player_last: BTreeMap<&str, Option<usize>> = BTreeMap::new();
    let mut team_last: BTreeMap<&str, Option<usize>> = BTreeMap::new();
    let mut team_of: BTreeMap<&str, &str> = BTreeMap::new();
    for (idx, line) in session.lines.iter().enumerate() {
        let player = player_last.entry(&line.player_key).or_insert(None);
        let team = team_last.entry(&line.team_key).or_insert(None);
        if idx < target {
            *player = Some(idx);
            *team = Some(idx);
        }
        team_of.entry(&line.player_key).or_insert(&line.team_key);
    }

    let mut teams: Vec<&str> =
        team_last.keys().copied().filter(|t| *t != current.team_key).collect();
    // Most recent prior chat first; `None` (never chatted) sorts last,
    // then ties fall back to the key order.
    teams.sort_by(|a, b| {
        let (ra, rb) = (team_last[a], team_last[b]);
        rb.cmp(&ra).then_with(|| a.cmp(b))
    });
    teams.insert(0, current.team_key.as_str());

    if teams.len() > session.num_teams {
        return Err(ContextError::TeamOverflow { teams: teams.len(), capacity: session.num_teams });
    }
    let block = match session.team_size {
        TeamSize::Bounded(n) => n,
        TeamSize::Unbounded if teams.len() == 1 => 0,
        TeamSize::Unbounded => return Err(ContextError::UnboundedMultiTeam),
    };

    let mut team_rel = BTreeMap::new();
    let mut player_rel = BTreeMap::new();
    for (team_idx, team_key) in teams.iter().enumerate() {
        team_rel.insert(team_key.to_string(), team_idx);
        let mut members: Vec<&str> = team_of
            .iter()
            .filter(|(p, t)| **t == *team_key && **p != current.player_key)
            .map(|(p, _)| *p)
            .collect();
        members.sort_by(|a, b| {
            let (ra, rb) = (player_last[a], player_last[b]);
            rb.cmp(&ra).then_with(|| a.cmp(b))
        });
        if *team_key == current.team_key {
            members.insert(0, &current.player_key);
        }
        if let TeamSize::Bounded(n) = session.team_size {
            if members.len() > n {
                return Err(ContextError::PlayerOverflow {
                    team_key: team_key.to_string(),
                    members: members.len(),
                    team_size: n,
                });
            }
        }
        for (slot, player) in members.iter().enumerate() {
            player_rel.insert(player.to_string(), team_idx * block + slot);
        }
    }
    Ok(RelativeIds { player_rel, team_rel })
}

/// Fits a history/current token pair into `max` tokens: the history loses
/// tokens from its oldest end first, and only once the history is empty is
/// the current sequence trimmed on the right.
pub fn truncate_pair<'a, T>(history: &'a [T], current: &'a [T], max: usize) -> (&'a [T], &'a [T]) {
    if current.len() >= max {
        return (&history[history.len()..], &current[..max]);
    }
    let keep = max - current.len();
    let start = history.len().saturating_sub(keep);
    (&history[start..], current)
}

/// One encoder input. All six tracks have equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub token_ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub team_track: Vec<usize>,
    pub chat_type_track: Vec<usize>,
    pub player_track: Vec<usize>,
    pub loss_mask: Vec<bool>,
    /// Half-open range of the current line's text tokens.
    pub current_line_span: (usize, usize),
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn tracks_consistent(&self) -> bool {
        let n = self.token_ids.len();
        self.positions.len() == n
            && self.team_track.len() == n
            && self.chat_type_track.len() == n
            && self.player_track.len() == n
            && self.loss_mask.len() == n
            && self.current_line_span.0 <= self.current_line_span.1
            && self.current_line_span.1 <= n
    }
}

#[derive(Clone, Copy)]
struct TokenSlot {
    id: usize,
    team: usize,
    chat_type: usize,
    player: usize,
    current_text: bool,
}

struct LineMeta {
    team: usize,
    chat_type: usize,
    player: usize,
}

/// Builds the full encoder input for `session.lines[target]`.
///
/// Truncation budgets `max_tokens - 2` tokens for the history and current
/// regions; `[CLS]` and the final `[SEP]` are always present. In the
/// in-line mode the current region starts with that line's marker tokens,
/// so markers survive right-truncation before text tokens do.
pub fn build_input(
    session: &MatchSession,
    target: usize,
    tokenizer: &Tokenizer,
    settings: &ContextSettings,
) -> Result<EncodedSequence, ContextError> {
    if settings.max_tokens < 3 {
        return Err(ContextError::MaxTokensTooSmall { max_tokens: settings.max_tokens });
    }
    let history = select_history(session, target, settings.scope)?;
    let current = &session.lines[target];
    let rel = match settings.metadata_mode {
        MetadataMode::None => None,
        _ => Some(assign_relative_ids(session, target)?),
    };
    let neutral = LineMeta {
        team: settings.team_neutral(),
        chat_type: CHAT_TYPE_NEUTRAL,
        player: settings.player_neutral(),
    };

    // Ids beyond the configured slot count collapse to neutral; that only
    // happens on unbounded sessions, where far commenters carry no
    // identity the tables could represent.
    let clamp = |id: usize, slots: usize| if id < slots { id } else { slots };
    let meta_of = |line: &ChatLine| -> LineMeta {
        match (settings.metadata_mode, &rel) {
            (MetadataMode::SpeakerSegmentation, Some(rel)) => LineMeta {
                team: clamp(rel.team_rel[&line.team_key], settings.team_slots),
                chat_type: chat_type_index(line.chat_type),
                player: clamp(rel.player_rel[&line.player_key], settings.player_slots),
            },
            _ => LineMeta { team: neutral.team, chat_type: neutral.chat_type, player: neutral.player },
        }
    };
    let markers_of = |line: &ChatLine| -> Vec<usize> {
        let (MetadataMode::InLine, Some(rel)) = (settings.metadata_mode, &rel) else {
            return Vec::new();
        };
        let player_marker = format!("[p{}]", rel.player_rel[&line.player_key]);
        let team_marker = format!("[t{}]", rel.team_rel[&line.team_key]);
        let chat_marker = match line.chat_type {
            ChatType::Team => "[team]",
            ChatType::All => "[all]",
        };
        [player_marker.as_str(), team_marker.as_str(), chat_marker]
            .iter()
            .map(|m| tokenizer.token_id(m).unwrap_or(tokenizer.unk_id()))
            .collect()
    };

    let push_line = |region: &mut Vec<TokenSlot>, line: &ChatLine, is_current: bool| {
        let meta = meta_of(line);
        for id in markers_of(line) {
            region.push(TokenSlot {
                id,
                team: meta.team,
                chat_type: meta.chat_type,
                player: meta.player,
                current_text: false,
            });
        }
        for id in tokenizer.encode_text(&line.text) {
            region.push(TokenSlot {
                id,
                team: meta.team,
                chat_type: meta.chat_type,
                player: meta.player,
                current_text: is_current,
            });
        }
    };

    let mut history_region = Vec::new();
    for line in &history {
        push_line(&mut history_region, line, false);
        // Each history line is terminated by a separator carrying that
        // line's metadata.
        let meta = meta_of(line);
        history_region.push(TokenSlot {
            id: tokenizer.sep_id(),
            team: meta.team,
            chat_type: meta.chat_type,
            player: meta.player,
            current_text: false,
        });
    }
    let mut current_region = Vec::new();
    push_line(&mut current_region, current, true);

    let budget = settings.max_tokens - 2;
    let (kept_history, kept_current) = truncate_pair(&history_region, &current_region, budget);

    let current_meta = meta_of(current);
    let mut slots = Vec::with_capacity(kept_history.len() + kept_current.len() + 2);
    slots.push(TokenSlot {
        id: tokenizer.cls_id(),
        team: neutral.team,
        chat_type: neutral.chat_type,
        player: neutral.player,
        current_text: false,
    });
    slots.extend_from_slice(kept_history);
    slots.extend_from_slice(kept_current);
    slots.push(TokenSlot {
        id: tokenizer.sep_id(),
        team: current_meta.team,
        chat_type: current_meta.chat_type,
        player: current_meta.player,
        current_text: false,
    });

    let span_start = slots.iter().position(|s| s.current_text);
    let span_end = slots.iter().rposition(|s| s.current_text).map(|i| i + 1);
    let (span_start, span_end) = match (span_start, span_end) {
        (Some(a), Some(b)) => (a, b),
        // The current line kept no text tokens (empty text, or markers
        // consumed the whole budget); the span is empty just before the
        // final separator.
        _ => (slots.len() - 1, slots.len() - 1),
    };

    Ok(EncodedSequence {
        token_ids: slots.iter().map(|s| s.id).collect(),
        positions: (0..slots.len()).collect(),
        team_track: slots.iter().map(|s| s.team).collect(),
        chat_type_track: slots.iter().map(|s| s.chat_type).collect(),
        player_track: slots.iter().map(|s| s.player).collect(),
        loss_mask: slots.iter().map(|s| s.current_text).collect(),
        current_line_span: (span_start, span_end),
    })
}
