//! Multi-annotator span labels: per-token majority aggregation with
//! severity tie-breaking, and Fleiss' kappa for line-level agreement.

use crate::chat::ToxicClass;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;

/// A half-open token span `[start, end)` carrying one toxic class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub class: ToxicClass,
}

/// All annotators' spans for one line. The order of annotators never
/// affects aggregation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub match_id: String,
    pub line_index: usize,
    pub annotators: Vec<Vec<Span>>,
}

#[derive(Debug, thiserror::Error)]
pub enum AggregationError {
    #[error("span {start}..{end} out of range for a line of {tokens} tokens")]
    SpanOutOfRange { start: usize, end: usize, tokens: usize },
    #[error("span {start}..{end} is empty or reversed")]
    EmptySpan { start: usize, end: usize },
    #[error("span carries non_toxic; spans mark toxic regions only")]
    NonToxicSpan,
    #[error("annotator {annotator} has overlapping spans at token {token}")]
    OverlappingSpans { annotator: usize, token: usize },
    #[error("no annotators")]
    NoAnnotators,
    #[error("annotation io: {0}")]
    Io(#[from] std::io::Error),
    #[error("annotation line {line_number}: {source}")]
    Parse { line_number: usize, source: serde_json::Error },
}

/// Majority-vote aggregation to one label per token.
///
/// A token is toxic only where a strict majority of annotators covered it
/// (2 of 3 by default); its class is the majority class among the covering
/// annotators, with ties going to the most severe tied class. Everything
/// else is non-toxic.
pub fn aggregate_annotations(
    set: &AnnotationSet,
    n_tokens: usize,
) -> Result<Vec<ToxicClass>, AggregationError> {
    let k = set.annotators.len();
    if k == 0 {
        return Err(AggregationError::NoAnnotators);
    }
    for (annotator, spans) in set.annotators.iter().enumerate() {
        let mut sorted: Vec<&Span> = spans.iter().collect();
        sorted.sort_by_key(|s| (s.start, s.end));
        for span in &sorted {
            if span.start >= span.end {
                return Err(AggregationError::EmptySpan { start: span.start, end: span.end });
            }
            if span.end > n_tokens {
                return Err(AggregationError::SpanOutOfRange {
                    start: span.start,
                    end: span.end,
                    tokens: n_tokens,
                });
            }
            if span.class == ToxicClass::NonToxic {
                return Err(AggregationError::NonToxicSpan);
            }
        }
        for pair in sorted.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(AggregationError::OverlappingSpans { annotator, token: pair[1].start });
            }
        }
    }

    let mut labels = vec![ToxicClass::NonToxic; n_tokens];
    for (token, label) in labels.iter_mut().enumerate() {
        let mut votes: BTreeMap<ToxicClass, usize> = BTreeMap::new();
        let mut coverers = 0usize;
        for spans in &set.annotators {
            if let Some(span) = spans.iter().find(|s| s.start <= token && token < s.end) {
                coverers += 1;
                *votes.entry(span.class).or_insert(0) += 1;
            }
        }
        if coverers * 2 > k {
            // Majority class; a tied vote resolves to the most severe of
            // the tied classes. BTreeMap iterates in severity order, so
            // the first maximum wins.
            let top = votes.values().copied().max().expect("coverers > 0");
            *label = votes
                .iter()
                .find(|(_, &count)| count == top)
                .map(|(class, _)| *class)
                .expect("max exists");
        }
    }
    Ok(labels)
}

/// The line-level class one annotator implied: the most severe class among
/// their spans, or non-toxic when they marked nothing.
pub fn annotator_line_class(spans: &[Span]) -> ToxicClass {
    spans
        .iter()
        .map(|s| s.class)
        .min_by_key(|c| c.severity_rank())
        .unwrap_or(ToxicClass::NonToxic)
}

/// Rows are lines, columns are categories, cells count the annotators who
/// put the line in that category. Every row must sum to the same rater
/// count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgreementTable {
    pub counts: Vec<Vec<usize>>,
    pub categories: usize,
}

impl AgreementTable {
    /// Builds the line-level table over the nine-class taxonomy from each
    /// line's per-annotator classes.
    pub fn from_line_classes(lines: &[Vec<ToxicClass>]) -> Self {
        let categories = ToxicClass::ALL.len();
        let counts = lines
            .iter()
            .map(|annotator_classes| {
                let mut row = vec![0usize; categories];
                for class in annotator_classes {
                    row[class.severity_rank()] += 1;
                }
                row
            })
            .collect();
        AgreementTable { counts, categories }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgreementError {
    #[error("agreement table has no rows")]
    EmptyTable,
    #[error("row {row} sums to {found}, expected {expected}")]
    RaggedTable { row: usize, found: usize, expected: usize },
    #[error("fleiss kappa needs at least 2 raters, found {0}")]
    NotEnoughRaters(usize),
    #[error("degenerate table: no chance-corrected agreement is defined")]
    Degenerate,
}

/// Fleiss' kappa over an agreement table.
///
/// When expected agreement is 1 (all mass in one category) the statistic
/// is 0/0; a table in perfect agreement is defined as kappa 1.
pub fn fleiss_kappa(table: &AgreementTable) -> Result<f64, AgreementError> {
    let n = table.counts.len();
    if n == 0 {
        return Err(AgreementError::EmptyTable);
    }
    let k: usize = table.counts[0].iter().sum();
    if k < 2 {
        return Err(AgreementError::NotEnoughRaters(k));
    }
    for (row, counts) in table.counts.iter().enumerate() {
        let sum: usize = counts.iter().sum();
        if sum != k {
            return Err(AgreementError::RaggedTable { row, found: sum, expected: k });
        }
    }
    let mut category_mass = vec![0.0f64; table.categories];
    let mut p_bar = 0.0f64;
    for counts in &table.counts {
        let mut agree = 0.0;
        for (j, &c) in counts.iter().enumerate() {
            category_mass[j] += c as f64;
            agree += (c * c) as f64;
        }
        p_bar += (agree - k as f64) / (k as f64 * (k as f64 - 1.0));
    }
    p_bar /= n as f64;
    let total = (n * k) as f64;
    let p_expected: f64 = category_mass.iter().map(|&m| (m / total) * (m / total)).sum();
    if (1.0 - p_expected).abs() < 1e-12 {
        return if (1.0 - p_bar).abs() < 1e-12 {
            Ok(1.0)
        } else {
            Err(AgreementError::Degenerate)
        };
    }
    Ok((p_bar - p_expected) / (1.0 - p_expected))
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    match_id: String,
    line_index: usize,
    annotator: String,
    spans: Vec<Span>,
}

/// Reads per-annotator JSONL records and groups them into one
/// [`AnnotationSet`] per line, annotators ordered by annotator name.
pub fn read_annotations(reader: impl BufRead) -> Result<Vec<AnnotationSet>, AggregationError> {
    let mut grouped: BTreeMap<(String, usize), Vec<(String, Vec<Span>)>> = BTreeMap::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|source| AggregationError::Parse { line_number: number + 1, source })?;
        grouped
            .entry((record.match_id, record.line_index))
            .or_default()
            .push((record.annotator, record.spans));
    }
    Ok(grouped
        .into_iter()
        .map(|((match_id, line_index), mut annotators)| {
            annotators.sort_by(|a, b| a.0.cmp(&b.0));
            AnnotationSet {
                match_id,
                line_index,
                annotators: annotators.into_iter().map(|(_, spans)| spans).collect(),
            }
        })
        .collect())
}
