//! Evaluation: support-weighted precision/recall/F1, precision-recall
//! curves with step-wise average precision, operating-point lookup,
//! cross-corpus transfer matrices and history-length breakdowns.

use crate::chat::{line_class_from_tokens, MatchSession, ToxicClass};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {preds} predictions vs {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("precision floor {0} outside (0, 1]")]
    InvalidPrecision(f64),
    #[error("classifier: {0}")]
    Classifier(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricLevel {
    Token,
    Line,
}

impl fmt::Display for MetricLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricLevel::Token => "token",
            MetricLevel::Line => "line",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: MetricLevel,
    pub total: usize,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

/// Per-class precision/recall/F1 plus their support-weighted means.
///
/// Weights are class supports normalized over the classes that actually
/// occur in `golds`; zero-support classes appear in `per_class` but carry
/// no weight. A class that is never predicted has precision 0.
pub fn weighted_prf(
    preds: &[usize],
    golds: &[usize],
    class_names: &[&str],
    level: MetricLevel,
) -> Result<MetricsReport, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = class_names.len();
    let mut tp = vec![0usize; n];
    let mut fp = vec![0usize; n];
    let mut support = vec![0usize; n];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= n || g >= n {
            return Err(EvalError::ClassOutOfRange { index: p.max(g), classes: n });
        }
        support[g] += 1;
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(n);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    let total = golds.len() as f64;
    for c in 0..n {
        let predicted = tp[c] + fp[c];
        let precision = if predicted == 0 { 0.0 } else { tp[c] as f64 / predicted as f64 };
        let recall = if support[c] == 0 { 0.0 } else { tp[c] as f64 / support[c] as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let weight = support[c] as f64 / total;
        wp += weight * precision;
        wr += weight * recall;
        wf += weight * f1;
        per_class.push(ClassMetrics {
            label: class_names[c].to_string(),
            support: support[c],
            precision,
            recall,
            f1,
        });
    }
    Ok(MetricsReport {
        level,
        total: golds.len(),
        per_class,
        weighted_precision: wp,
        weighted_recall: wr,
        weighted_f1: wf,
    })
}

/// Convenience for the line-level binary view: class 0 = toxic,
/// class 1 = non-toxic.
pub fn binary_weighted_f1(
    pred_toxic: &[bool],
    gold_toxic: &[bool],
    level: MetricLevel,
) -> Result<f64, EvalError> {
    let to_idx = |flags: &[bool]| -> Vec<usize> {
        flags.iter().map(|&t| if t { 0 } else { 1 }).collect()
    };
    Ok(weighted_prf(&to_idx(pred_toxic), &to_idx(gold_toxic), &["toxic", "non_toxic"], level)?
        .weighted_f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, in descending threshold order.
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
}

/// Precision-recall curve for "flag when score >= threshold". Average
/// precision is the step-wise integral `sum((R_i - R_{i-1}) * P_i)`.
pub fn pr_curve(scores: &[f64], gold_toxic: &[bool]) -> Result<PrCurve, EvalError> {
    if scores.len() != gold_toxic.len() {
        return Err(EvalError::LengthMismatch { preds: scores.len(), golds: gold_toxic.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let positives = gold_toxic.iter().filter(|&&g| g).count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // Consume the whole group of identical scores before emitting the
        // point: at this threshold all of them are flagged.
        while i < order.len() && scores[order[i]] == threshold {
            if gold_toxic[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
        points.push(PrPoint { threshold, precision, recall });
    }
    let mut average_precision = 0.0;
    let mut prev_recall = 0.0;
    for point in &points {
        average_precision += (point.recall - prev_recall) * point.precision;
        prev_recall = point.recall;
    }
    Ok(PrCurve { points, average_precision })
}

impl PrCurve {
    pub fn write_csv(&self, mut writer: impl std::io::Write) -> std::io::Result<()> {
        writeln!(writer, "threshold,precision,recall")?;
        for p in &self.points {
            writeln!(writer, "{},{},{}", p.threshold, p.precision, p.recall)?;
        }
        Ok(())
    }
}

/// A calibrated operating point: the threshold realizing the best recall
/// subject to a precision floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub min_precision: f64,
    pub recall: f64,
    /// `f64::INFINITY` when no point satisfies the floor; flagging at this
    /// threshold then flags nothing.
    pub threshold: f64,
}

pub fn recall_at_precision(curve: &PrCurve, min_precision: f64) -> Result<OperatingPoint, EvalError> {
    if !(min_precision > 0.0 && min_precision <= 1.0) {
        return Err(EvalError::InvalidPrecision(min_precision));
    }
    let mut best: Option<&PrPoint> = None;
    for point in &curve.points {
        if point.precision >= min_precision && best.map_or(true, |b| point.recall > b.recall) {
            best = Some(point);
        }
    }
    Ok(match best {
        Some(p) => OperatingPoint { min_precision, recall: p.recall, threshold: p.threshold },
        None => OperatingPoint { min_precision, recall: 0.0, threshold: f64::INFINITY },
    })
}

/// Anything that can assign a line-level class given a session and a
/// target index. Implemented by the trained model's predictor; tests use
/// rule-based stand-ins.
pub trait LineClassifier {
    fn classify_line(&self, session: &MatchSession, target: usize) -> Result<ToxicClass, EvalError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub model_names: Vec<String>,
    pub corpus_names: Vec<String>,
    /// `f1[i][j]` = binary line-level weighted F1 of model i on corpus j.
    pub f1: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn to_text(&self) -> String {
        let mut width = "train\\test".len();
        for name in self.model_names.iter().chain(&self.corpus_names) {
            width = width.max(name.len());
        }
        width = width.max(6);
        let mut out = format!("{:>width$}", "train\\test");
        for name in &self.corpus_names {
            out.push_str(&format!(" {name:>width$}"));
        }
        out.push('\n');
        for (i, name) in self.model_names.iter().enumerate() {
            out.push_str(&format!("{name:>width$}"));
            for j in 0..self.corpus_names.len() {
                out.push_str(&format!(" {:>width$.4}", self.f1[i][j]));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates every model on every corpus in the binary toxic/non-toxic
/// view. Lines without gold labels are skipped; a corpus with no labeled
/// line is an error.
pub fn transfer_matrix(
    models: &[(&str, &dyn LineClassifier)],
    corpora: &[(&str, &[MatchSession])],
) -> Result<TransferMatrix, EvalError> {
    let mut f1 = Vec::with_capacity(models.len());
    for (_, model) in models {
        let mut row = Vec::with_capacity(corpora.len());
        for (corpus_name, sessions) in corpora {
            let mut pred = Vec::new();
            let mut gold = Vec::new();
            for session in *sessions {
                for (target, line) in session.lines.iter().enumerate() {
                    let Some(labels) = &line.token_labels else { continue };
                    let gold_class = line_class_from_tokens(labels)
                        .map_err(|e| EvalError::Classifier(e.to_string()))?;
                    let pred_class = model.classify_line(session, target)?;
                    gold.push(gold_class.is_toxic());
                    pred.push(pred_class.is_toxic());
                }
            }
            if gold.is_empty() {
                return Err(EvalError::Classifier(format!(
                    "corpus {corpus_name} has no labeled lines"
                )));
            }
            row.push(binary_weighted_f1(&pred, &gold, MetricLevel::Line)?);
        }
        f1.push(row);
    }
    Ok(TransferMatrix {
        model_names: models.iter().map(|(n, _)| n.to_string()).collect(),
        corpus_names: corpora.iter().map(|(n, _)| n.to_string()).collect(),
        f1,
    })
}

/// Fixed history-length bins: how much context was available when the
/// line was classified.
pub const HISTORY_BINS: [(usize, Option<usize>); 7] = [
    (0, Some(0)),
    (1, Some(1)),
    (2, Some(10)),
    (11, Some(20)),
    (21, Some(30)),
    (31, Some(40)),
    (41, None),
];

pub fn history_bin_label(bin: (usize, Option<usize>)) -> String {
    match bin {
        (lo, Some(hi)) if lo == hi => format!("{lo}"),
        (lo, Some(hi)) => format!("{lo}-{hi}"),
        (lo, None) => format!("{lo}+"),
    }
}

/// One evaluated line, traceable to its session and position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub match_id: String,
    pub line_index: usize,
    pub pred: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBin {
    pub label: String,
    pub support: usize,
    /// `None` for empty bins.
    pub weighted_f1: Option<f64>,
}

/// Line-level weighted F1 broken down by available history length (the
/// number of session lines preceding the classified line).
pub fn history_length_report(
    records: &[LineRecord],
    class_names: &[&str],
) -> Result<Vec<HistoryBin>, EvalError> {
    let mut bins = Vec::with_capacity(HISTORY_BINS.len());
    for bin in HISTORY_BINS {
        let in_bin: Vec<&LineRecord> = records
            .iter()
            .filter(|r| r.line_index >= bin.0 && bin.1.map_or(true, |hi| r.line_index <= hi))
            .collect();
        let weighted_f1 = if in_bin.is_empty() {
            None
        } else {
            let preds: Vec<usize> = in_bin.iter().map(|r| r.pred).collect();
            let golds: Vec<usize> = in_bin.iter().map(|r| r.gold).collect();
            Some(weighted_prf(&preds, &golds, class_names, MetricLevel::Line)?.weighted_f1)
        };
        bins.push(HistoryBin {
            label: history_bin_label(bin),
            support: in_bin.len(),
            weighted_f1,
        });
    }
    Ok(bins)
}

pub fn metrics_to_text(report: &MetricsReport) -> String {
    let mut out = format!(
        "{:<20} {:>8} {:>10} {:>10} {:>10}\n",
        format!("class ({})", report.level),
        "support",
        "precision",
        "recall",
        "f1"
    );
    for c in &report.per_class {
        out.push_str(&format!(
            "{:<20} {:>8} {:>10.4} {:>10.4} {:>10.4}\n",
            c.label, c.support, c.precision, c.recall, c.f1
        ));
    }
    out.push_str(&format!(
        "{:<20} {:>8} {:>10.4} {:>10.4} {:>10.4}\n",
        "weighted",
        report.total,
        report.weighted_precision,
        report.weighted_recall,
        report.weighted_f1
    ));
    out
}
