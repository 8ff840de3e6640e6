//! Seeded synthetic chat corpora with known ground truth, used to probe
//! how much conversational history and speaker metadata a classifier
//! actually uses.
//!
//! Three families:
//! - keyword: toxicity is decided by words in the current line alone;
//!   different word lists yield corpora with disjoint vocabularies for
//!   cross-corpus evaluation.
//! - context: a payload line is toxic only if a trigger callout appeared
//!   earlier in the match. The trigger's speaker and channel rotate
//!   between the payload author, a teammate, and an opponent, so each
//!   wider history scope decides strictly more matches than the last.
//! - identity: the deciding cue is visible to everyone, but the payload
//!   is toxic only when an opponent (not a teammate) said the cue, so
//!   only speaker metadata can separate the two cases.

use crate::chat::{ChatLine, ChatType, MatchSession, TeamSize, ToxicClass};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NUM_TEAMS: usize = 2;
const PLAYERS_PER_TEAM: usize = 5;
const PLAYER_COUNT: usize = NUM_TEAMS * PLAYERS_PER_TEAM;
/// Index of the trigger/placebo/cue line inside each match.
const SIGNAL_IDX: usize = 1;

/// Current-line preset: a line is toxic exactly when it contains one of
/// the trigger words.
#[derive(Debug, Clone)]
pub struct KeywordRule {
    pub benign: Vec<String>,
    pub triggers: Vec<String>,
    pub toxic_class: ToxicClass,
}

impl Default for KeywordRule {
    fn default() -> Self {
        KeywordRule {
            benign: words(&["mid", "lane", "push", "back", "care", "rune", "stack", "roam"]),
            triggers: words(&["trash", "garbage"]),
            toxic_class: ToxicClass::InsultsFlaming,
        }
    }
}

/// History preset: the payload text is fixed, and its toxicity depends
/// only on whether the trigger word was said earlier in the match. In
/// untriggered matches the same slot holds a placebo word, so the mere
/// presence of an early callout carries no signal.
#[derive(Debug, Clone)]
pub struct ContextRule {
    pub trigger: String,
    pub placebo: String,
    pub payload: Vec<String>,
    pub filler: Vec<String>,
    pub toxic_class: ToxicClass,
}

impl Default for ContextRule {
    fn default() -> Self {
        ContextRule {
            trigger: "gank".into(),
            placebo: "ward".into(),
            payload: words(&["report", "them", "all"]),
            filler: words(&["gg", "glhf", "nice", "try", "top", "bot", "omw", "def"]),
            toxic_class: ToxicClass::InsultsFlaming,
        }
    }
}

/// Speaker preset: every match has the same cue line in all-chat; the
/// payload is toxic exactly when an opponent of the payload author said
/// the cue, benign when a teammate did.
#[derive(Debug, Clone)]
pub struct IdentityRule {
    pub cue: String,
    pub payload: Vec<String>,
    pub filler: Vec<String>,
    pub toxic_class: ToxicClass,
}

impl Default for IdentityRule {
    fn default() -> Self {
        IdentityRule {
            cue: "ez".into(),
            payload: words(&["report", "them", "all"]),
            filler: words(&["gg", "glhf", "nice", "try", "top", "bot", "omw", "def"]),
            toxic_class: ToxicClass::InsultsFlaming,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SynthPreset {
    Keyword(KeywordRule),
    Context(ContextRule),
    Identity(IdentityRule),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub matches: usize,
    pub lines_per_match: usize,
    pub seed: u64,
    pub preset: SynthPreset,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("need at least one match")]
    NoMatches,
    #[error("{preset} preset needs at least {min} lines per match, got {got}")]
    TooFewLines { preset: &'static str, min: usize, got: usize },
    #[error("word list {0:?} must not be empty")]
    EmptyWords(&'static str),
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|w| w.to_string()).collect()
}

fn player_key(player: usize) -> String {
    format!("p{player}")
}

fn team_key_of(player: usize) -> String {
    format!("t{}", player / PLAYERS_PER_TEAM)
}

/// How many lines at the end of a match carry the history-dependent
/// payload (at least one, roughly two fifths).
fn payload_count(lines_per_match: usize) -> usize {
    (2 * lines_per_match / 5).max(1)
}

fn filler_line(rule_filler: &[String], rng: &mut ChaCha8Rng) -> (usize, ChatType, Vec<String>) {
    let speaker = rng.random_range(0..PLAYER_COUNT);
    let chat_type = if rng.random_bool(0.5) { ChatType::Team } else { ChatType::All };
    let n_words = rng.random_range(2..=3);
    let text = (0..n_words)
        .map(|_| rule_filler.choose(rng).expect("checked non-empty").clone())
        .collect();
    (speaker, chat_type, text)
}

fn push_line(
    session: &mut MatchSession,
    speaker: usize,
    chat_type: ChatType,
    text_words: &[String],
    labels: Vec<ToxicClass>,
) {
    debug_assert_eq!(text_words.len(), labels.len());
    let line_index = session.lines.len();
    session.lines.push(ChatLine {
        match_id: session.match_id.clone(),
        line_index,
        player_key: player_key(speaker),
        team_key: team_key_of(speaker),
        chat_type,
        text: text_words.join(" "),
        token_labels: Some(labels),
    });
}

/// Generates a corpus for the configured preset. Matches alternate
/// between toxic and benign outcomes, so every corpus is exactly
/// balanced when `matches` is even, and all sampling flows from one
/// seeded generator, so equal configs produce identical corpora.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<MatchSession>, SynthError> {
    if config.matches == 0 {
        return Err(SynthError::NoMatches);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match &config.preset {
        SynthPreset::Keyword(rule) => keyword_corpus(config, rule, &mut rng),
        SynthPreset::Context(rule) => context_corpus(config, rule, &mut rng),
        SynthPreset::Identity(rule) => identity_corpus(config, rule, &mut rng),
    }
}

fn keyword_corpus(
    config: &SynthConfig,
    rule: &KeywordRule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MatchSession>, SynthError> {
    if rule.benign.is_empty() {
        return Err(SynthError::EmptyWords("benign"));
    }
    if rule.triggers.is_empty() {
        return Err(SynthError::EmptyWords("triggers"));
    }
    let l = config.lines_per_match;
    if l < 2 {
        return Err(SynthError::TooFewLines { preset: "keyword", min: 2, got: l });
    }
    let mut corpus = Vec::with_capacity(config.matches);
    for m in 0..config.matches {
        let mut session =
            MatchSession::new(format!("keyword-{m:04}"), NUM_TEAMS, TeamSize::Bounded(PLAYERS_PER_TEAM));
        // Exactly half the lines are toxic, but which ones is random so
        // a line's position says nothing about its label.
        let mut toxic_flags = vec![false; l];
        for flag in toxic_flags.iter_mut().take(l / 2) {
            *flag = true;
        }
        toxic_flags.shuffle(rng);
        for &toxic in &toxic_flags {
            let (speaker, chat_type, mut text) = filler_line(&rule.benign, rng);
            let mut labels = vec![ToxicClass::NonToxic; text.len()];
            if toxic {
                let trigger = rule.triggers.choose(rng).expect("checked non-empty").clone();
                let at = rng.random_range(0..=text.len());
                text.insert(at, trigger);
                labels.insert(at, rule.toxic_class);
            }
            push_line(&mut session, speaker, chat_type, &text, labels);
        }
        corpus.push(session);
    }
    Ok(corpus)
}

/// Speakers used by one match: the payload author, one of their
/// teammates, and one opponent.
fn match_cast(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let author = rng.random_range(0..PLAYER_COUNT);
    let own_team = author / PLAYERS_PER_TEAM;
    let teammates: Vec<usize> =
        (0..PLAYER_COUNT).filter(|p| p / PLAYERS_PER_TEAM == own_team && *p != author).collect();
    let opponents: Vec<usize> = (0..PLAYER_COUNT).filter(|p| p / PLAYERS_PER_TEAM != own_team).collect();
    let teammate = *teammates.choose(rng).expect("team has five players");
    let opponent = *opponents.choose(rng).expect("two teams");
    (author, teammate, opponent)
}

fn context_corpus(
    config: &SynthConfig,
    rule: &ContextRule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MatchSession>, SynthError> {
    if rule.filler.is_empty() {
        return Err(SynthError::EmptyWords("filler"));
    }
    if rule.payload.is_empty() {
        return Err(SynthError::EmptyWords("payload"));
    }
    let l = config.lines_per_match;
    if l < 3 {
        return Err(SynthError::TooFewLines { preset: "context", min: 3, got: l });
    }
    let payload_start = l - payload_count(l);
    let mut corpus = Vec::with_capacity(config.matches);
    for m in 0..config.matches {
        let triggered = m % 2 == 0;
        // Rotate who says the trigger: the payload author themselves, a
        // teammate in team chat, or an opponent in all-chat. Personal
        // history decides the first kind, team history the first two,
        // global history all three. Enemy team chat is never used, so
        // nothing stays hidden from global history.
        let visibility = m % 3;
        let (author, teammate, opponent) = match_cast(rng);
        let mut session =
            MatchSession::new(format!("context-{m:04}"), NUM_TEAMS, TeamSize::Bounded(PLAYERS_PER_TEAM));
        for idx in 0..l {
            if idx == SIGNAL_IDX {
                let word = if triggered { rule.trigger.clone() } else { rule.placebo.clone() };
                let (speaker, chat_type) = match visibility {
                    0 => (author, ChatType::Team),
                    1 => (teammate, ChatType::Team),
                    _ => (opponent, ChatType::All),
                };
                push_line(&mut session, speaker, chat_type, &[word], vec![ToxicClass::NonToxic]);
            } else if idx >= payload_start {
                let labels = if triggered {
                    vec![rule.toxic_class; rule.payload.len()]
                } else {
                    vec![ToxicClass::NonToxic; rule.payload.len()]
                };
                push_line(&mut session, author, ChatType::All, &rule.payload, labels);
            } else {
                let (speaker, chat_type, text) = filler_line(&rule.filler, rng);
                let labels = vec![ToxicClass::NonToxic; text.len()];
                push_line(&mut session, speaker, chat_type, &text, labels);
            }
        }
        corpus.push(session);
    }
    Ok(corpus)
}

fn identity_corpus(
    config: &SynthConfig,
    rule: &IdentityRule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MatchSession>, SynthError> {
    if rule.filler.is_empty() {
        return Err(SynthError::EmptyWords("filler"));
    }
    if rule.payload.is_empty() {
        return Err(SynthError::EmptyWords("payload"));
    }
    let l = config.lines_per_match;
    if l < 3 {
        return Err(SynthError::TooFewLines { preset: "identity", min: 3, got: l });
    }
    let payload_start = l - payload_count(l);
    let mut corpus = Vec::with_capacity(config.matches);
    for m in 0..config.matches {
        // The cue is always said in all-chat; only who said it differs.
        let hostile = m % 2 == 0;
        let (author, teammate, opponent) = match_cast(rng);
        let cue_speaker = if hostile { opponent } else { teammate };
        let mut session =
            MatchSession::new(format!("identity-{m:04}"), NUM_TEAMS, TeamSize::Bounded(PLAYERS_PER_TEAM));
        for idx in 0..l {
            if idx == SIGNAL_IDX {
                push_line(
                    &mut session,
                    cue_speaker,
                    ChatType::All,
                    std::slice::from_ref(&rule.cue),
                    vec![ToxicClass::NonToxic],
                );
            } else if idx >= payload_start {
                let labels = if hostile {
                    vec![rule.toxic_class; rule.payload.len()]
                } else {
                    vec![ToxicClass::NonToxic; rule.payload.len()]
                };
                push_line(&mut session, author, ChatType::All, &rule.payload, labels);
            } else {
                let (speaker, chat_type, text) = filler_line(&rule.filler, rng);
                let labels = vec![ToxicClass::NonToxic; text.len()];
                push_line(&mut session, speaker, chat_type, &text, labels);
            }
        }
        corpus.push(session);
    }
    Ok(corpus)
}
