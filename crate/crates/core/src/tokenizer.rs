//! Lowercase whitespace + punctuation tokenizer with a frequency-built
//! vocabulary.
//!
//! The vocabulary layout is fixed: `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`,
//! then any registered marker tokens, then corpus tokens ordered by
//! descending frequency (ties broken lexicographically). A vocabulary file
//! stores one token per line; the id of a token is its line number.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Splits text into tokens: maximal alphanumeric runs plus single
/// punctuation characters. Whitespace only separates.
pub fn split_text(text: &str, lowercase: bool) -> Vec<String> {
    let source = if lowercase { text.to_lowercase() } else { text.to_string() };
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in source.chars() {
        if c.is_whitespace() {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
        } else if c.is_alphanumeric() {
            run.push(c);
        } else {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            tokens.push(c.to_string());
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("duplicate token in vocabulary: {0}")]
    DuplicateToken(String),
    #[error("vocabulary is missing the special token {0}")]
    MissingSpecial(&'static str),
    #[error("vocabulary io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    lowercase: bool,
}

impl Tokenizer {
    /// Builds a tokenizer from an explicit token list. The four special
    /// tokens must occupy ids 0..=3.
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Result<Self, TokenizerError> {
        for (slot, special) in [PAD, UNK, CLS, SEP].iter().enumerate() {
            if tokens.get(slot).map(String::as_str) != Some(*special) {
                return Err(TokenizerError::MissingSpecial(special));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id).is_some() {
                return Err(TokenizerError::DuplicateToken(token.clone()));
            }
        }
        Ok(Tokenizer { tokens, index, lowercase })
    }

    /// Builds a vocabulary from a corpus: specials, then `markers`, then the
    /// most frequent corpus tokens until `max_vocab` ids are used.
    pub fn train<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_vocab: usize,
        lowercase: bool,
        markers: &[String],
    ) -> Result<Self, TokenizerError> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for token in split_text(text, lowercase) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        tokens.extend(markers.iter().cloned());
        let mut by_freq: Vec<(String, u64)> =
            counts.into_iter().filter(|(t, _)| !tokens.contains(t)).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (token, _) in by_freq {
            if tokens.len() >= max_vocab {
                break;
            }
            tokens.push(token);
        }
        Tokenizer::from_tokens(tokens, lowercase)
    }

    /// Marker tokens injected by the in-line metadata mode: one per player
    /// slot, one per team slot, and one per chat channel.
    pub fn standard_markers(player_slots: usize, team_slots: usize) -> Vec<String> {
        let mut markers = Vec::with_capacity(player_slots + team_slots + 2);
        for p in 0..player_slots {
            let mut m = String::new();
            let _ = write!(m, "[p{p}]");
            markers.push(m);
        }
        for t in 0..team_slots {
            let mut m = String::new();
            let _ = write!(m, "[t{t}]");
            markers.push(m);
        }
        markers.push("[team]".to_string());
        markers.push("[all]".to_string());
        markers
    }

    pub fn read_vocab(reader: impl BufRead, lowercase: bool) -> Result<Self, TokenizerError> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            tokens.push(line?);
        }
        Tokenizer::from_tokens(tokens, lowercase)
    }

    pub fn write_vocab(&self, mut writer: impl Write) -> std::io::Result<()> {
        for token in &self.tokens {
            writeln!(writer, "{token}")?;
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn unk_id(&self) -> usize {
        1
    }

    pub fn cls_id(&self) -> usize {
        2
    }

    pub fn sep_id(&self) -> usize {
        3
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        split_text(text, self.lowercase)
    }

    /// Token ids for `text`; out-of-vocabulary tokens map to `[UNK]`.
    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        self.tokenize(text)
            .into_iter()
            .map(|t| self.token_id(&t).unwrap_or(self.unk_id()))
            .collect()
    }

    pub fn token_count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_whitespace_and_punctuation() {
        assert_eq!(split_text("you noob!!", true), vec!["you", "noob", "!", "!"]);
        assert_eq!(split_text("mid, NOW", true), vec!["mid", ",", "now"]);
        assert_eq!(split_text("don't", true), vec!["don", "'", "t"]);
        assert_eq!(split_text("  spaced   out  ", true), vec!["spaced", "out"]);
        assert_eq!(split_text("", true), Vec::<String>::new());
    }

    #[test]
    fn lowercase_flag_is_respected() {
        assert_eq!(split_text("GG WP", false), vec!["GG", "WP"]);
        assert_eq!(split_text("GG WP", true), vec!["gg", "wp"]);
    }

    #[test]
    fn specials_occupy_fixed_ids() {
        let t = Tokenizer::train(["hello world world"], 100, true, &[]).unwrap();
        assert_eq!(t.token(0), Some(PAD));
        assert_eq!(t.token(1), Some(UNK));
        assert_eq!(t.token(2), Some(CLS));
        assert_eq!(t.token(3), Some(SEP));
        assert_eq!((t.pad_id(), t.unk_id(), t.cls_id(), t.sep_id()), (0, 1, 2, 3));
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let t = Tokenizer::train(["b a b c a b"], 100, true, &[]).unwrap();
        // b:3, a:2, c:1
        assert_eq!(t.token_id("b"), Some(4));
        assert_eq!(t.token_id("a"), Some(5));
        assert_eq!(t.token_id("c"), Some(6));
        let tied = Tokenizer::train(["z y z y"], 100, true, &[]).unwrap();
        assert_eq!(tied.token_id("y"), Some(4));
        assert_eq!(tied.token_id("z"), Some(5));
    }

    #[test]
    fn max_vocab_truncates_and_unk_covers_the_rest() {
        let t = Tokenizer::train(["a a b c"], 5, true, &[]).unwrap();
        assert_eq!(t.vocab_size(), 5);
        assert_eq!(t.token_id("a"), Some(4));
        assert_eq!(t.token_id("b"), None);
        assert_eq!(t.encode_text("a b"), vec![4, t.unk_id()]);
    }

    #[test]
    fn markers_are_atomic_and_cannot_be_forged_from_text() {
        let markers = Tokenizer::standard_markers(10, 2);
        assert_eq!(markers.len(), 14);
        let t = Tokenizer::train(["hi"], 100, true, &markers).unwrap();
        let p0 = t.token_id("[p0]").unwrap();
        assert_eq!(t.token(p0), Some("[p0]"));
        // Tokenizing the literal text "[p0]" splits it into punctuation and
        // an alphanumeric run, so user text never produces the marker id.
        assert_eq!(t.tokenize("[p0]"), vec!["[", "p0", "]"]);
        assert!(!t.encode_text("[p0]").contains(&p0));
    }

    #[test]
    fn ids_round_trip_through_vocab_file() {
        let t = Tokenizer::train(["alpha beta gamma beta"], 100, true, &[]).unwrap();
        let mut buf = Vec::new();
        t.write_vocab(&mut buf).unwrap();
        let back = Tokenizer::read_vocab(buf.as_slice(), true).unwrap();
        assert_eq!(back, t);
        for id in 0..t.vocab_size() {
            let token = t.token(id).unwrap();
            assert_eq!(back.token_id(token), Some(id));
        }
    }

    #[test]
    fn from_tokens_rejects_duplicates_and_missing_specials() {
        let bad = vec![PAD.into(), UNK.into(), CLS.into(), SEP.into(), "x".into(), "x".into()];
        assert!(matches!(
            Tokenizer::from_tokens(bad, true),
            Err(TokenizerError::DuplicateToken(t)) if t == "x"
        ));
        let missing = vec![PAD.into(), UNK.into(), SEP.into()];
        assert!(matches!(
            Tokenizer::from_tokens(missing, true),
            Err(TokenizerError::MissingSpecial(CLS))
        ));
    }
}
