//! Chat domain types: the toxic class taxonomy with its fixed severity
//! order, per-token labels, chat lines and match sessions.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

/// Closed taxonomy of chat line token classes.
///
/// Every corpus label maps to exactly one member; adapters perform that
/// mapping. The declaration order is the severity order: `HateHarassment`
/// is the most severe class and `NonToxic` the least.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToxicClass {
    HateHarassment,
    Threats,
    MinorEndangerment,
    Extremism,
    ScamsAds,
    InsultsFlaming,
    Spam,
    OtherOffensive,
    NonToxic,
}

impl ToxicClass {
    /// All classes in severity order, most severe first.
    pub const ALL: [ToxicClass; 9] = [
        ToxicClass::HateHarassment,
        ToxicClass::Threats,
        ToxicClass::MinorEndangerment,
        ToxicClass::Extremism,
        ToxicClass::ScamsAds,
        ToxicClass::InsultsFlaming,
        ToxicClass::Spam,
        ToxicClass::OtherOffensive,
        ToxicClass::NonToxic,
    ];

    /// Rank in the severity order; 0 is most severe, 8 is `NonToxic`.
    pub fn severity_rank(self) -> usize {
        self as usize
    }

    pub fn from_severity_rank(rank: usize) -> Option<ToxicClass> {
        Self::ALL.get(rank).copied()
    }

    pub fn is_toxic(self) -> bool {
        self != ToxicClass::NonToxic
    }

    /// Stable snake_case name used in every serialized artifact.
    pub fn as_str(self) -> &'static str {
        match self {
            ToxicClass::HateHarassment => "hate_harassment",
            ToxicClass::Threats => "threats",
            ToxicClass::MinorEndangerment => "minor_endangerment",
            ToxicClass::Extremism => "extremism",
            ToxicClass::ScamsAds => "scams_ads",
            ToxicClass::InsultsFlaming => "insults_flaming",
            ToxicClass::Spam => "spam",
            ToxicClass::OtherOffensive => "other_offensive",
            ToxicClass::NonToxic => "non_toxic",
        }
    }
}

impl fmt::Display for ToxicClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown toxic class: {0}")]
pub struct UnknownClass(pub String);

impl FromStr for ToxicClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToxicClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("empty line has no class")]
pub struct EmptyLine;

/// Class of a whole line: the most severe class among its token labels.
pub fn line_class_from_tokens(labels: &[ToxicClass]) -> Result<ToxicClass, EmptyLine> {
    labels.iter().copied().min_by_key(|c| c.severity_rank()).ok_or(EmptyLine)
}

/// Channel a chat line was sent on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatType {
    Team,
    All,
}

impl fmt::Display for ChatType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChatType::Team => "team",
            ChatType::All => "all",
        })
    }
}

/// One chat line. `token_labels`, when present, aligns one label per
/// tokenizer token of `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatLine {
    pub match_id: String,
    pub line_index: usize,
    pub player_key: String,
    pub team_key: String,
    pub chat_type: ChatType,
    pub text: String,
    pub token_labels: Option<Vec<ToxicClass>>,
}

/// One predicted token with its class and the probability assigned to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledToken {
    pub text: String,
    pub class: ToxicClass,
    pub score: f64,
}

/// Number of players per team. Thread-shaped documents (e.g. comment
/// chains) use [`TeamSize::Unbounded`], which skips the capacity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeamSize {
    Bounded(usize),
    Unbounded,
}

impl TeamSize {
    pub fn bound(self) -> Option<usize> {
        match self {
            TeamSize::Bounded(n) => Some(n),
            TeamSize::Unbounded => None,
        }
    }
}

/// All chat lines of one match (or one thread-shaped document), in
/// chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSession {
    pub match_id: String,
    pub num_teams: usize,
    pub team_size: TeamSize,
    pub lines: Vec<ChatLine>,
}

impl MatchSession {
    pub fn new(match_id: impl Into<String>, num_teams: usize, team_size: TeamSize) -> Self {
        MatchSession { match_id: match_id.into(), num_teams, team_size, lines: Vec::new() }
    }

    /// Maximum distinct players the relative id space can hold, or `None`
    /// when the team size is unbounded.
    pub fn player_capacity(&self) -> Option<usize> {
        self.team_size.bound().map(|n| n * self.num_teams)
    }

    pub fn distinct_players(&self) -> BTreeSet<&str> {
        self.lines.iter().map(|l| l.player_key.as_str()).collect()
    }
}

/// A structural problem found by [`validate_session`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `lines[i].line_index` must equal `i`.
    IndexGap { position: usize, expected: usize, found: usize },
    /// A line's `match_id` differs from the session's.
    ForeignLine { position: usize, match_id: String },
    /// More distinct players than `num_teams * team_size`.
    PlayerOverflow { players: usize, capacity: usize },
    /// The same player key appears with two different team keys.
    TeamInconsistency { player_key: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IndexGap { position, expected, found } => {
                write!(f, "line at position {position}: expected line_index {expected}, found {found}")
            }
            Violation::ForeignLine { position, match_id } => {
                write!(f, "line at position {position} belongs to match {match_id}")
            }
            Violation::PlayerOverflow { players, capacity } => {
                write!(f, "{players} distinct players exceed capacity {capacity}")
            }
            Violation::TeamInconsistency { player_key } => {
                write!(f, "player {player_key} appears on more than one team")
            }
        }
    }
}

/// Checks line-index contiguity, player-count capacity and player/team
/// consistency. An empty result means the session is well-formed.
pub fn validate_session(session: &MatchSession) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut teams_seen: BTreeMap<&str, &str> = BTreeMap::new();
    for (position, line) in session.lines.iter().enumerate() {
        if line.line_index != position {
            violations.push(Violation::IndexGap {
                position,
                expected: position,
                found: line.line_index,
            });
        }
        if line.match_id != session.match_id {
            violations.push(Violation::ForeignLine { position, match_id: line.match_id.clone() });
        }
        match teams_seen.get(line.player_key.as_str()) {
            None => {
                teams_seen.insert(&line.player_key, &line.team_key);
            }
            Some(team) if *team != line.team_key => {
                violations.push(Violation::TeamInconsistency { player_key: line.player_key.clone() });
            }
            Some(_) => {}
        }
    }
    if let Some(capacity) = session.player_capacity() {
        let players = session.distinct_players().len();
        if players > capacity {
            violations.push(Violation::PlayerOverflow { players, capacity });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_order_is_total_and_stable() {
        for (rank, class) in ToxicClass::ALL.iter().enumerate() {
            assert_eq!(class.severity_rank(), rank);
            assert_eq!(ToxicClass::from_severity_rank(rank), Some(*class));
        }
        assert_eq!(ToxicClass::from_severity_rank(9), None);
        assert!(ToxicClass::HateHarassment.severity_rank() < ToxicClass::Threats.severity_rank());
        assert!(ToxicClass::Spam.severity_rank() < ToxicClass::OtherOffensive.severity_rank());
        assert!(ToxicClass::OtherOffensive.severity_rank() < ToxicClass::NonToxic.severity_rank());
    }

    #[test]
    fn class_names_round_trip() {
        for class in ToxicClass::ALL {
            assert_eq!(class.as_str().parse::<ToxicClass>().unwrap(), class);
            let json = serde_json::to_string(&class).unwrap();
            assert_eq!(json, format!("\"{}\"", class.as_str()));
            assert_eq!(serde_json::from_str::<ToxicClass>(&json).unwrap(), class);
        }
        assert!("gibberish".parse::<ToxicClass>().is_err());
    }

    #[test]
    fn line_class_is_most_severe_token_class() {
        let labels = [ToxicClass::NonToxic, ToxicClass::Spam, ToxicClass::Threats];
        assert_eq!(line_class_from_tokens(&labels).unwrap(), ToxicClass::Threats);
        let benign = [ToxicClass::NonToxic, ToxicClass::NonToxic];
        assert_eq!(line_class_from_tokens(&benign).unwrap(), ToxicClass::NonToxic);
        assert_eq!(line_class_from_tokens(&[]), Err(EmptyLine));
    }

    #[test]
    fn line_class_single_toxic_token_dominates() {
        let mut labels = vec![ToxicClass::NonToxic; 11];
        labels[7] = ToxicClass::HateHarassment;
        assert_eq!(line_class_from_tokens(&labels).unwrap(), ToxicClass::HateHarassment);
    }

    fn line(idx: usize, player: &str, team: &str) -> ChatLine {
        ChatLine {
            match_id: "m0".into(),
            line_index: idx,
            player_key: player.into(),
            team_key: team.into(),
            chat_type: ChatType::Team,
            text: "hello".into(),
            token_labels: None,
        }
    }

    #[test]
    fn validate_accepts_well_formed_session() {
        let mut s = MatchSession::new("m0", 2, TeamSize::Bounded(2));
        s.lines = vec![line(0, "a", "red"), line(1, "b", "red"), line(2, "c", "blue")];
        assert!(validate_session(&s).is_empty());
    }

    #[test]
    fn validate_reports_index_gap_overflow_and_team_flip() {
        let mut s = MatchSession::new("m0", 1, TeamSize::Bounded(1));
        s.lines = vec![line(0, "a", "red"), line(2, "b", "red"), line(2, "a", "blue")];
        let violations = validate_session(&s);
        assert!(violations.iter().any(|v| matches!(v, Violation::IndexGap { position: 1, .. })));
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::TeamInconsistency { player_key } if player_key == "a")));
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::PlayerOverflow { players: 2, capacity: 1 })));
    }

    #[test]
    fn unbounded_sessions_skip_capacity_check() {
        let mut s = MatchSession::new("m0", 1, TeamSize::Unbounded);
        s.lines = (0..40).map(|i| line(i, &format!("p{i}"), "thread")).collect();
        assert!(validate_session(&s).is_empty());
    }

    #[test]
    fn chat_line_json_schema_is_stable() {
        let l = ChatLine {
            match_id: "m1".into(),
            line_index: 3,
            player_key: "p7".into(),
            team_key: "radiant".into(),
            chat_type: ChatType::All,
            text: "gg ez".into(),
            token_labels: Some(vec![ToxicClass::NonToxic, ToxicClass::InsultsFlaming]),
        };
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(
            json,
            r#"{"match_id":"m1","line_index":3,"player_key":"p7","team_key":"radiant","chat_type":"all","text":"gg ez","token_labels":["non_toxic","insults_flaming"]}"#
        );
        let back: ChatLine = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
        let unlabeled: ChatLine =
            serde_json::from_str(r#"{"match_id":"m1","line_index":0,"player_key":"p","team_key":"t","chat_type":"team","text":"hi","token_labels":null}"#)
                .unwrap();
        assert_eq!(unlabeled.token_labels, None);
    }
}
