//! Per-line inference: run the encoder over a line with its scoped
//! history, label each surviving token, and reduce to a line class and
//! a toxic score.
//!
//! The line score is the maximum over current-line tokens of
//! `1 − P(non-toxic)`, so pushing any token's non-toxic probability up
//! can only lower it; the line class is the most severe token class.

use super::checkpoint::Checkpoint;
use super::encoder::forward;
use super::{ModelError, ModelConfig};
use crate::chat::{line_class_from_tokens, LabeledToken, MatchSession, ToxicClass};
use crate::context::{build_input, ContextError, ContextSettings, Scope};
use crate::eval::{EvalError, LineClassifier};
use crate::tokenizer::{split_text, Tokenizer, TokenizerError};

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("line {line_index} of match {match_id} has no scorable tokens")]
    NoTokens { match_id: String, line_index: usize },
}

/// Classified tokens of one line plus the line-level reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePrediction {
    /// One entry per current-line token that survived truncation, in
    /// text order.
    pub tokens: Vec<LabeledToken>,
    /// Most severe class among the token predictions.
    pub line_class: ToxicClass,
    /// `max` over tokens of `1 − P(non-toxic)`.
    pub score: f64,
}

/// A checkpoint made runnable: the rebuilt tokenizer plus the weights.
#[derive(Debug, Clone)]
pub struct Predictor {
    checkpoint: Checkpoint,
    tokenizer: Tokenizer,
}

/// A token's toxic score: the probability mass on every toxic head.
pub fn token_toxic_score(class_probs: &[f64], non_toxic_index: usize) -> f64 {
    1.0 - class_probs[non_toxic_index]
}

/// Reduces per-token scores to the line score.
pub fn line_toxic_score(token_scores: &[f64]) -> f64 {
    token_scores.iter().copied().fold(0.0, f64::max)
}

impl Predictor {
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Predictor, PredictError> {
        let tokenizer =
            Tokenizer::from_tokens(checkpoint.vocab.clone(), checkpoint.lowercase)?;
        Ok(Predictor { checkpoint, tokenizer })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn context(&self) -> &ContextSettings {
        &self.checkpoint.context
    }

    pub fn model(&self) -> &ModelConfig {
        &self.checkpoint.model
    }

    /// Changes the history scope used for future predictions, e.g. to
    /// probe a trained model under narrower visibility.
    pub fn set_scope(&mut self, scope: Scope) {
        self.checkpoint.context.scope = scope;
    }

    /// Classifies every token of `session.lines[target]` given the
    /// history visible under the configured scope.
    pub fn predict_line(
        &self,
        session: &MatchSession,
        target: usize,
    ) -> Result<LinePrediction, PredictError> {
        let cp = &self.checkpoint;
        let seq = build_input(session, target, &self.tokenizer, &cp.context)?;
        let line = &session.lines[target];
        let words = split_text(&line.text, self.tokenizer.lowercase());
        let probs = forward(&cp.params, &cp.model, &seq)?;

        let space = cp.model.label_space;
        let non_toxic = space.non_toxic_index();
        let mut tokens = Vec::new();
        let masked = seq.loss_mask.iter().enumerate().filter(|(_, &m)| m);
        for ((pos, _), word) in masked.zip(&words) {
            let row = probs.row(pos);
            let head = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(c, _)| c)
                .expect("class row is non-empty");
            tokens.push(LabeledToken {
                text: word.clone(),
                class: space.representative(head),
                score: token_toxic_score(row, non_toxic),
            });
        }
        if tokens.is_empty() {
            return Err(PredictError::NoTokens {
                match_id: session.match_id.clone(),
                line_index: line.line_index,
            });
        }
        let classes: Vec<ToxicClass> = tokens.iter().map(|t| t.class).collect();
        let line_class =
            line_class_from_tokens(&classes).expect("token list checked non-empty");
        let scores: Vec<f64> = tokens.iter().map(|t| t.score).collect();
        Ok(LinePrediction { tokens, line_class, score: line_toxic_score(&scores) })
    }
}

impl LineClassifier for Predictor {
    fn classify_line(&self, session: &MatchSession, target: usize) -> Result<ToxicClass, EvalError> {
        self.predict_line(session, target)
            .map(|p| p.line_class)
            .map_err(|e| EvalError::Classifier(e.to_string()))
    }
}
