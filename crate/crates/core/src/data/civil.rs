//! Adapter for threaded comment corpora: each comment plus its chain of
//! ancestors becomes one session, so a comment is classified in the
//! context of the discussion it replies to.

use crate::chat::{ChatLine, ChatType, MatchSession, TeamSize, ToxicClass};
use crate::tokenizer::split_text;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::io::Read;

/// One comment from the source corpus. `parent_id` is empty for
/// top-level comments.
#[derive(Debug, Clone, PartialEq)]
pub struct Comment {
    pub id: String,
    pub parent_id: Option<String>,
    pub article_id: String,
    pub author: String,
    pub text: String,
    pub toxic: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CivilCommentsError {
    #[error("duplicate comment id: {0}")]
    DuplicateId(String),
    #[error("dangling parent: {0}")]
    DanglingParent(String),
    #[error("reply cycle through comment: {0}")]
    Cycle(String),
    #[error("comment csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Raw CSV row; `toxicity` accepts 0/1, true/false, or a fraction that
/// is rounded at 0.5 (annotator vote share).
#[derive(Debug, Deserialize)]
struct CommentRow {
    id: String,
    #[serde(default)]
    parent_id: String,
    article_id: String,
    #[serde(default)]
    author: String,
    text: String,
    toxicity: String,
}

fn parse_toxicity(raw: &str) -> bool {
    match raw.trim() {
        "1" | "true" | "True" | "TRUE" => true,
        "0" | "false" | "False" | "FALSE" | "" => false,
        other => other.parse::<f64>().map(|v| v >= 0.5).unwrap_or(false),
    }
}

/// Reads comments from CSV with columns
/// `id,parent_id,article_id,author,text,toxicity`.
pub fn read_comments_csv(reader: impl Read) -> Result<Vec<Comment>, CivilCommentsError> {
    let mut csv_reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut comments = Vec::new();
    for row in csv_reader.deserialize() {
        let row: CommentRow = row?;
        comments.push(Comment {
            id: row.id,
            parent_id: if row.parent_id.is_empty() { None } else { Some(row.parent_id) },
            article_id: row.article_id,
            author: row.author,
            text: row.text,
            toxic: parse_toxicity(&row.toxicity),
        });
    }
    Ok(comments)
}

/// Binary corpora collapse toxicity onto one catch-all class.
fn toxic_class() -> ToxicClass {
    ToxicClass::OtherOffensive
}

/// Builds one session per comment: the root-to-comment ancestor chain
/// in thread order, with the comment itself last. Every line keeps its
/// own author so context metadata can distinguish self-replies. All
/// comments share one "team" (the article); author counts are unbounded.
pub fn adapt_cc_threads(
    comments: &[Comment],
    lowercase: bool,
) -> Result<Vec<MatchSession>, CivilCommentsError> {
    let mut by_id: BTreeMap<&str, &Comment> = BTreeMap::new();
    for comment in comments {
        if by_id.insert(comment.id.as_str(), comment).is_some() {
            return Err(CivilCommentsError::DuplicateId(comment.id.clone()));
        }
    }
    let mut sessions = Vec::with_capacity(comments.len());
    for comment in comments {
        // Walk parents up to the root, guarding against cycles.
        let mut chain = vec![comment];
        let mut cursor = comment;
        while let Some(parent_id) = &cursor.parent_id {
            let parent = by_id
                .get(parent_id.as_str())
                .ok_or_else(|| CivilCommentsError::DanglingParent(parent_id.clone()))?;
            if chain.len() > comments.len() {
                return Err(CivilCommentsError::Cycle(comment.id.clone()));
            }
            chain.push(parent);
            cursor = parent;
        }
        chain.reverse();
        let lines = chain
            .iter()
            .enumerate()
            .map(|(line_index, c)| {
                let class = if c.toxic { toxic_class() } else { ToxicClass::NonToxic };
                let n_tokens = split_text(&c.text, lowercase).len();
                ChatLine {
                    match_id: comment.id.clone(),
                    line_index,
                    player_key: c.author.clone(),
                    team_key: c.article_id.clone(),
                    chat_type: ChatType::All,
                    text: c.text.clone(),
                    token_labels: Some(vec![class; n_tokens]),
                }
            })
            .collect();
        sessions.push(MatchSession {
            match_id: comment.id.clone(),
            num_teams: 1,
            team_size: TeamSize::Unbounded,
            lines,
        });
    }
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comment(id: &str, parent: Option<&str>, author: &str, text: &str, toxic: bool) -> Comment {
        Comment {
            id: id.into(),
            parent_id: parent.map(Into::into),
            article_id: "article9".into(),
            author: author.into(),
            text: text.into(),
            toxic,
        }
    }

    #[test]
    fn leaf_session_contains_full_ancestor_chain_in_order() {
        let comments = vec![
            comment("c1", None, "ann", "original point", false),
            comment("c2", Some("c1"), "bob", "strong disagree", false),
            comment("c3", Some("c2"), "ann", "you are clueless", true),
        ];
        let sessions = adapt_cc_threads(&comments, true).unwrap();
        assert_eq!(sessions.len(), 3);
        let deepest = sessions.iter().find(|s| s.match_id == "c3").unwrap();
        let texts: Vec<&str> = deepest.lines.iter().map(|l| l.text.as_str()).collect();
        assert_eq!(texts, ["original point", "strong disagree", "you are clueless"]);
        let authors: Vec<&str> = deepest.lines.iter().map(|l| l.player_key.as_str()).collect();
        assert_eq!(authors, ["ann", "bob", "ann"]);
        // Only the target comment is toxic; its tokens all carry the class.
        let labels = deepest.lines[2].token_labels.as_ref().unwrap();
        assert!(labels.iter().all(|&c| c == toxic_class()));
        assert!(deepest.lines[0]
            .token_labels
            .as_ref()
            .unwrap()
            .iter()
            .all(|&c| c == ToxicClass::NonToxic));
        assert!(crate::chat::validate_session(deepest).is_empty());
    }

    #[test]
    fn top_level_comment_yields_single_line_session() {
        let sessions = adapt_cc_threads(&[comment("c1", None, "ann", "hello", false)], true).unwrap();
        assert_eq!(sessions[0].lines.len(), 1);
        assert_eq!(sessions[0].match_id, "c1");
    }

    #[test]
    fn dangling_parent_and_cycles_are_reported() {
        let dangling = vec![comment("c2", Some("missing"), "bob", "hi", false)];
        match adapt_cc_threads(&dangling, true) {
            Err(CivilCommentsError::DanglingParent(id)) => assert_eq!(id, "missing"),
            other => panic!("expected dangling parent, got {other:?}"),
        }
        let cyclic = vec![
            comment("c1", Some("c2"), "ann", "a", false),
            comment("c2", Some("c1"), "bob", "b", false),
        ];
        assert!(matches!(adapt_cc_threads(&cyclic, true), Err(CivilCommentsError::Cycle(_))));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dupes = vec![
            comment("c1", None, "ann", "a", false),
            comment("c1", None, "bob", "b", false),
        ];
        assert!(matches!(adapt_cc_threads(&dupes, true), Err(CivilCommentsError::DuplicateId(_))));
    }

    #[test]
    fn csv_parses_boolean_and_fractional_toxicity() {
        let csv_data = "\
id,parent_id,article_id,author,text,toxicity
c1,,a1,ann,first comment,0.0
c2,c1,a1,bob,angry reply,0.8
c3,,a1,cid,\"quoted, with comma\",true
";
        let comments = read_comments_csv(csv_data.as_bytes()).unwrap();
        assert_eq!(comments.len(), 3);
        assert!(!comments[0].toxic);
        assert!(comments[1].toxic);
        assert!(comments[2].toxic);
        assert_eq!(comments[2].text, "quoted, with comma");
        assert_eq!(comments[1].parent_id.as_deref(), Some("c1"));
        assert_eq!(comments[2].parent_id, None);
    }
}
