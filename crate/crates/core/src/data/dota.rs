//! Adapter for merged-sentence game chat corpora: consecutive lines were
//! annotated as one sentence with a sentence-level label plus automatic
//! per-token toxicity flags, and must be unmerged back into chat lines.

use crate::chat::{ChatLine, ChatType, MatchSession, TeamSize, ToxicClass};
use crate::tokenizer::split_text;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;

/// Sentence-level label of a merged sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceLabel {
    ExplicitlyToxic,
    ImplicitlyToxic,
    Action,
    Other,
}

/// One source chat line inside a merged sentence. `token_toxic` aligns
/// with the whitespace-separated words of `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedLine {
    pub text: String,
    pub token_toxic: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedSentence {
    pub match_id: String,
    pub player_key: String,
    pub team_key: String,
    pub label: SentenceLabel,
    pub lines: Vec<MergedLine>,
}

#[derive(Debug, thiserror::Error)]
pub enum DotaError {
    #[error("sentence in match {match_id} has no lines")]
    EmptySentence { match_id: String },
    #[error("line {text:?}: {words} words but {flags} toxicity flags")]
    FlagMismatch { text: String, words: usize, flags: usize },
    #[error("merged sentence io: {0}")]
    Io(#[from] std::io::Error),
    #[error("merged sentence line {line_number}: {source}")]
    Parse { line_number: usize, source: serde_json::Error },
}

/// Classes the unmerged corpus uses: two toxicity grades plus non-toxic,
/// trained as a three-class head.
fn explicit_class() -> ToxicClass {
    ToxicClass::InsultsFlaming
}

fn implicit_class() -> ToxicClass {
    ToxicClass::OtherOffensive
}

/// Unmerges sentences into labeled chat lines grouped into sessions.
///
/// Label flow-down: `Action` counts as `Other`. An explicitly toxic
/// sentence makes a constituent line explicitly toxic only if the line
/// contains at least one flagged token; other labels copy to every line.
/// Token labels: in explicit lines exactly the flagged tokens carry the
/// class; implicit lines carry it on all tokens; other lines are
/// non-toxic throughout. Word-level flags expand over the sub-tokens of
/// each word.
pub fn adapt_dota(
    sentences: &[MergedSentence],
    lowercase: bool,
) -> Result<Vec<MatchSession>, DotaError> {
    let mut order: Vec<String> = Vec::new();
    let mut by_match: BTreeMap<String, Vec<ChatLine>> = BTreeMap::new();
    for sentence in sentences {
        if sentence.lines.is_empty() {
            return Err(DotaError::EmptySentence { match_id: sentence.match_id.clone() });
        }
        for line in &sentence.lines {
            let words: Vec<&str> = line.text.split_whitespace().collect();
            if words.len() != line.token_toxic.len() {
                return Err(DotaError::FlagMismatch {
                    text: line.text.clone(),
                    words: words.len(),
                    flags: line.token_toxic.len(),
                });
            }
            let line_has_toxic = line.token_toxic.iter().any(|&t| t);
            let mut labels = Vec::new();
            for (word, &flag) in words.iter().zip(&line.token_toxic) {
                let class = match sentence.label {
                    SentenceLabel::ExplicitlyToxic if flag => explicit_class(),
                    SentenceLabel::ExplicitlyToxic => ToxicClass::NonToxic,
                    SentenceLabel::ImplicitlyToxic => implicit_class(),
                    SentenceLabel::Action | SentenceLabel::Other => ToxicClass::NonToxic,
                };
                // One flag per word, replicated over the word's sub-tokens
                // so labels stay aligned with the pipeline tokenizer.
                labels.extend(std::iter::repeat(class).take(split_text(word, lowercase).len()));
            }
            let _ = line_has_toxic; // line class re-derives from token labels
            if !by_match.contains_key(&sentence.match_id) {
                order.push(sentence.match_id.clone());
            }
            let lines = by_match.entry(sentence.match_id.clone()).or_default();
            lines.push(ChatLine {
                match_id: sentence.match_id.clone(),
                line_index: lines.len(),
                player_key: sentence.player_key.clone(),
                team_key: sentence.team_key.clone(),
                chat_type: ChatType::All,
                text: line.text.clone(),
                token_labels: Some(labels),
            });
        }
    }
    Ok(order
        .into_iter()
        .map(|match_id| {
            let lines = by_match.remove(&match_id).expect("collected above");
            MatchSession { match_id, num_teams: 2, team_size: TeamSize::Bounded(5), lines }
        })
        .collect())
}

/// Reads merged sentences from JSONL, one sentence per line.
pub fn read_merged_sentences(reader: impl BufRead) -> Result<Vec<MergedSentence>, DotaError> {
    let mut sentences = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        sentences.push(
            serde_json::from_str(&line)
                .map_err(|source| DotaError::Parse { line_number: number + 1, source })?,
        );
    }
    Ok(sentences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::line_class_from_tokens;

    fn sentence(label: SentenceLabel, lines: Vec<(&str, Vec<bool>)>) -> MergedSentence {
        MergedSentence {
            match_id: "m1".into(),
            player_key: "p1".into(),
            team_key: "radiant".into(),
            label,
            lines: lines
                .into_iter()
                .map(|(text, token_toxic)| MergedLine { text: text.into(), token_toxic })
                .collect(),
        }
    }

    #[test]
    fn explicit_sentence_marks_only_lines_with_toxic_tokens() {
        let s = sentence(
            SentenceLabel::ExplicitlyToxic,
            vec![("gg wp", vec![false, false]), ("you noob", vec![false, true])],
        );
        let sessions = adapt_dota(&[s], true).unwrap();
        assert_eq!(sessions.len(), 1);
        let lines = &sessions[0].lines;
        assert_eq!(lines.len(), 2);
        let benign = line_class_from_tokens(lines[0].token_labels.as_ref().unwrap()).unwrap();
        assert_eq!(benign, ToxicClass::NonToxic);
        let toxic_labels = lines[1].token_labels.as_ref().unwrap();
        assert_eq!(toxic_labels, &vec![ToxicClass::NonToxic, explicit_class()]);
    }

    #[test]
    fn action_flows_down_as_other_and_implicit_copies_to_all_lines() {
        let action = sentence(SentenceLabel::Action, vec![("waves", vec![false])]);
        let sessions = adapt_dota(&[action], true).unwrap();
        assert_eq!(
            sessions[0].lines[0].token_labels.as_ref().unwrap(),
            &vec![ToxicClass::NonToxic]
        );
        let implicit = sentence(
            SentenceLabel::ImplicitlyToxic,
            vec![("nice one", vec![false, false]), ("sure", vec![false])],
        );
        let sessions = adapt_dota(&[implicit], true).unwrap();
        for line in &sessions[0].lines {
            for label in line.token_labels.as_ref().unwrap() {
                assert_eq!(*label, implicit_class());
            }
        }
    }

    #[test]
    fn word_flags_expand_over_subtokens() {
        let s = sentence(SentenceLabel::ExplicitlyToxic, vec![("noob!!! yes", vec![true, false])]);
        let sessions = adapt_dota(&[s], true).unwrap();
        let labels = sessions[0].lines[0].token_labels.as_ref().unwrap();
        // "noob!!!" splits into 4 tokens, all flagged; "yes" stays benign.
        assert_eq!(
            labels,
            &vec![explicit_class(), explicit_class(), explicit_class(), explicit_class(), ToxicClass::NonToxic]
        );
    }

    #[test]
    fn line_count_is_preserved_and_indices_are_contiguous() {
        let sentences = vec![
            sentence(SentenceLabel::Other, vec![("a", vec![false]), ("b", vec![false])]),
            sentence(SentenceLabel::Other, vec![("c", vec![false])]),
        ];
        let total: usize = sentences.iter().map(|s| s.lines.len()).sum();
        let sessions = adapt_dota(&sentences, true).unwrap();
        let unmerged: usize = sessions.iter().map(|s| s.lines.len()).sum();
        assert_eq!(unmerged, total);
        for session in &sessions {
            assert!(crate::chat::validate_session(session).is_empty());
        }
    }

    #[test]
    fn empty_sentence_and_flag_mismatch_are_errors() {
        let empty = MergedSentence {
            match_id: "m1".into(),
            player_key: "p".into(),
            team_key: "t".into(),
            label: SentenceLabel::Other,
            lines: vec![],
        };
        assert!(matches!(adapt_dota(&[empty], true), Err(DotaError::EmptySentence { .. })));
        let mismatched = sentence(SentenceLabel::Other, vec![("two words", vec![false])]);
        assert!(matches!(
            adapt_dota(&[mismatched], true),
            Err(DotaError::FlagMismatch { words: 2, flags: 1, .. })
        ));
    }

    #[test]
    fn merged_sentences_parse_from_jsonl() {
        let jsonl = concat!(
            r#"{"match_id":"m1","player_key":"p1","team_key":"radiant","label":"explicitly_toxic","lines":[{"text":"you noob","token_toxic":[false,true]}]}"#,
            "\n"
        );
        let sentences = read_merged_sentences(jsonl.as_bytes()).unwrap();
        assert_eq!(sentences.len(), 1);
        assert_eq!(sentences[0].label, SentenceLabel::ExplicitlyToxic);
        assert!(read_merged_sentences("nope".as_bytes()).is_err());
    }
}
