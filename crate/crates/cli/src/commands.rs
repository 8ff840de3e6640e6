//! One function per subcommand. Each returns a [`CliError`] whose exit
//! code the binary forwards to the shell.

use crate::config::{team_size_from_count, RunConfig};
use crate::error::CliError;
use crate::stream::{run_stream, StreamSettings};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use toxbuster_core::chat::{line_class_from_tokens, MatchSession, TeamSize};
use toxbuster_core::corpus::{read_corpus, write_corpus};
use toxbuster_core::data::{
    adapt_cc_threads, adapt_dota, generate_synthetic, read_comments_csv, read_merged_sentences,
    KeywordRule, SynthConfig, SynthPreset,
};
use toxbuster_core::eval::{
    history_length_report, pr_curve, recall_at_precision, transfer_matrix, weighted_prf,
    EvalError, HistoryBin, LineClassifier, LineRecord, MetricLevel, MetricsReport, OperatingPoint,
    PrCurve,
};
use toxbuster_core::model::{train, Checkpoint, EpochMetrics, PredictError, Predictor};
use toxbuster_core::moderation::{
    flag_lines, moderation_report, player_flag_stats, proactive_candidates, LineScore,
    ModerationRatios, ReportSets,
};

fn open_reader(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn read_corpus_file(
    path: &Path,
    num_teams: usize,
    team_size: TeamSize,
) -> Result<Vec<MatchSession>, CliError> {
    Ok(read_corpus(open_reader(path)?, num_teams, team_size)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(&path.display().to_string(), e))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Serialize)]
struct SeedReport {
    seed: u64,
    checkpoint: String,
    epochs_trained: usize,
    best_epoch: usize,
    val_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_token_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_line_f1: Option<f64>,
    history: Vec<EpochMetrics>,
}

#[derive(Debug, Serialize)]
struct MeanStd {
    mean: f64,
    std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

fn optional_mean_std(values: &[Option<f64>]) -> Option<MeanStd> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| mean_std(&present))
}

#[derive(Debug, Serialize)]
struct TrainReport {
    seeds: Vec<SeedReport>,
    aggregate: AggregateReport,
}

#[derive(Debug, Serialize)]
struct AggregateReport {
    val_f1: MeanStd,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_token_f1: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_line_f1: Option<MeanStd>,
}

/// Checkpoint path for one run: unchanged for a single seed, otherwise
/// the seed is folded into the file name.
fn seeded_path(path: &Path, seed: u64, multi: bool) -> PathBuf {
    if !multi {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match path.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}-seed{seed}.{ext}"),
        None => format!("{stem}-seed{seed}"),
    };
    path.with_file_name(name)
}

fn resolve_seeds(flag: Option<Vec<u64>>, config: &RunConfig) -> Result<Vec<u64>, CliError> {
    let seeds = match flag {
        Some(list) => list,
        None => match std::env::var("TOXBUSTER_SEED") {
            Ok(value) => vec![value.trim().parse().map_err(|_| {
                CliError::Config(format!("TOXBUSTER_SEED: not a valid seed: {value}"))
            })?],
            Err(std::env::VarError::NotPresent) => config.train.seeds.clone(),
            Err(e) => return Err(CliError::Config(format!("TOXBUSTER_SEED: {e}"))),
        },
    };
    if seeds.is_empty() {
        return Err(CliError::Config("train.seeds must not be empty".into()));
    }
    Ok(seeds)
}

pub fn cmd_train(config_path: &Path, seeds_flag: Option<Vec<u64>>) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let base_model = config.model_config()?;
    let context = config.context_settings()?;
    let base_train = config.train_config();
    let seeds = resolve_seeds(seeds_flag, &config)?;
    let corpus =
        read_corpus_file(config.corpus_path()?, config.context.num_teams, config.team_size())?;

    let multi = seeds.len() > 1;
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let model = toxbuster_core::model::ModelConfig { seed, ..base_model };
        let train_config =
            toxbuster_core::model::TrainConfig { seed, ..base_train.clone() };
        let outcome = train(&corpus, &model, &context, &train_config)?;

        let checkpoint_path = seeded_path(&config.paths.checkpoint, seed, multi);
        outcome.checkpoint.save_to_path(&checkpoint_path)?;

        let test_sessions = outcome.split.select(&corpus, &outcome.split.test);
        let test = if test_sessions.is_empty() {
            None
        } else {
            let predictor = Predictor::from_checkpoint(outcome.checkpoint.clone())?;
            Some(evaluate_sessions(&predictor, &test_sessions)?)
        };
        let report = SeedReport {
            seed,
            checkpoint: checkpoint_path.display().to_string(),
            epochs_trained: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            val_f1: outcome.best_val_f1,
            test_token_f1: test.as_ref().map(|t| t.token_report.weighted_f1),
            test_line_f1: test.as_ref().map(|t| t.line_report.weighted_f1),
            history: outcome.history,
        };
        match (report.test_token_f1, report.test_line_f1) {
            (Some(token), Some(line)) => println!(
                "seed {seed}: best epoch {}, val f1 {:.4}, test token f1 {token:.4}, \
                 test line f1 {line:.4}",
                report.best_epoch, report.val_f1
            ),
            _ => println!(
                "seed {seed}: best epoch {}, val f1 {:.4} (no test split)",
                report.best_epoch, report.val_f1
            ),
        }
        reports.push(report);
    }

    let aggregate = AggregateReport {
        val_f1: mean_std(&reports.iter().map(|r| r.val_f1).collect::<Vec<_>>()),
        test_token_f1: optional_mean_std(
            &reports.iter().map(|r| r.test_token_f1).collect::<Vec<_>>(),
        ),
        test_line_f1: optional_mean_std(
            &reports.iter().map(|r| r.test_line_f1).collect::<Vec<_>>(),
        ),
    };
    if let Some(line) = &aggregate.test_line_f1 {
        println!("aggregate test line f1: {:.4} ± {:.4}", line.mean, line.std);
    }
    write_json(&config.paths.metrics, &TrainReport { seeds: reports, aggregate })?;
    println!("wrote {}", config.paths.metrics.display());
    Ok(())
}

// ------------------------------------------------------------- evaluate

struct SessionEval {
    token_report: MetricsReport,
    line_report: MetricsReport,
    curve: PrCurve,
    bins: Vec<HistoryBin>,
}

/// Scores every labeled line of `sessions` with the predictor and rolls
/// the results up at both levels, plus the PR curve over line scores and
/// the history-length breakdown. Lines that lose all their tokens to
/// truncation are skipped; token rows align gold labels with the
/// surviving prefix of each line.
fn evaluate_sessions(
    predictor: &Predictor,
    sessions: &[&MatchSession],
) -> Result<SessionEval, CliError> {
    let space = predictor.model().label_space;
    let names = space.class_names();
    let mut token_preds = Vec::new();
    let mut token_golds = Vec::new();
    let mut line_preds = Vec::new();
    let mut line_golds = Vec::new();
    let mut scores = Vec::new();
    let mut gold_toxic = Vec::new();
    let mut records = Vec::new();
    for session in sessions {
        for (target, line) in session.lines.iter().enumerate() {
            let Some(labels) = &line.token_labels else { continue };
            let prediction = match predictor.predict_line(session, target) {
                Ok(p) => p,
                Err(PredictError::NoTokens { .. }) => continue,
                Err(e) => {
                    return Err(CliError::Config(format!(
                        "match {} line {target}: {e}",
                        session.match_id
                    )))
                }
            };
            if prediction.tokens.len() > labels.len() {
                return Err(CliError::Config(format!(
                    "match {} line {target}: {} tokens but {} labels",
                    session.match_id,
                    prediction.tokens.len(),
                    labels.len()
                )));
            }
            for (token, gold) in prediction.tokens.iter().zip(labels) {
                token_preds.push(space.project(token.class));
                token_golds.push(space.project(*gold));
            }
            let gold_class = line_class_from_tokens(labels).map_err(|e| {
                CliError::Config(format!("match {} line {target}: {e}", session.match_id))
            })?;
            line_preds.push(space.project(prediction.line_class));
            line_golds.push(space.project(gold_class));
            scores.push(prediction.score);
            gold_toxic.push(gold_class.is_toxic());
            records.push(LineRecord {
                match_id: session.match_id.clone(),
                line_index: line.line_index,
                pred: space.project(prediction.line_class),
                gold: space.project(gold_class),
            });
        }
    }
    let eval_err = |e: EvalError| CliError::Config(format!("evaluation: {e}"));
    Ok(SessionEval {
        token_report: weighted_prf(&token_preds, &token_golds, &names, MetricLevel::Token)
            .map_err(eval_err)?,
        line_report: weighted_prf(&line_preds, &line_golds, &names, MetricLevel::Line)
            .map_err(eval_err)?,
        curve: pr_curve(&scores, &gold_toxic).map_err(eval_err)?,
        bins: history_length_report(&records, &names).map_err(eval_err)?,
    })
}

#[derive(Debug, Serialize)]
struct EvalMetricsFile {
    token: MetricsReport,
    line: MetricsReport,
    average_precision: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    checkpoint: &Path,
    corpus: &Path,
    out_dir: &Path,
    scope: Option<&str>,
    precisions: &[f64],
    num_teams: usize,
    team_size: usize,
) -> Result<(), CliError> {
    let mut predictor = Predictor::from_checkpoint(Checkpoint::load_from_path(checkpoint)?)?;
    if let Some(scope) = scope {
        let scope =
            scope.parse().map_err(|e| CliError::Config(format!("--scope: {e}")))?;
        predictor.set_scope(scope);
    }
    let sessions = read_corpus_file(corpus, num_teams, team_size_from_count(team_size))?;
    let refs: Vec<&MatchSession> = sessions.iter().collect();
    let eval = evaluate_sessions(&predictor, &refs)?;

    let points: Vec<OperatingPoint> = precisions
        .iter()
        .map(|&p| recall_at_precision(&eval.curve, p))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("--precision: {e}")))?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(&out_dir.display().to_string(), e))?;
    write_json(
        &out_dir.join("metrics.json"),
        &EvalMetricsFile {
            token: eval.token_report.clone(),
            line: eval.line_report.clone(),
            average_precision: eval.curve.average_precision,
        },
    )?;
    let mut csv = create_writer(&out_dir.join("pr_curve.csv"))?;
    eval.curve.write_csv(&mut csv).map_err(|e| CliError::io("pr_curve.csv", e))?;
    csv.flush().map_err(|e| CliError::io("pr_curve.csv", e))?;
    write_json(&out_dir.join("operating_points.json"), &points)?;
    write_json(&out_dir.join("history_bins.json"), &eval.bins)?;

    print!("{}", toxbuster_core::eval::metrics_to_text(&eval.token_report));
    print!("{}", toxbuster_core::eval::metrics_to_text(&eval.line_report));
    println!("average precision: {:.4}", eval.curve.average_precision);
    for point in &points {
        match point.threshold.is_finite() {
            true => println!(
                "precision ≥ {:.3}: recall {:.4} at threshold {:.6}",
                point.min_precision, point.recall, point.threshold
            ),
            false => println!(
                "precision ≥ {:.3}: unreachable on this corpus",
                point.min_precision
            ),
        }
    }
    println!("wrote reports to {}", out_dir.display());
    Ok(())
}

// -------------------------------------------------------------- predict

#[allow(clippy::too_many_arguments)]
pub fn cmd_predict(
    checkpoint: &Path,
    input: &str,
    output: &str,
    scope: Option<&str>,
    idle_records: u64,
    num_teams: usize,
    team_size: usize,
) -> Result<(), CliError> {
    let mut predictor = Predictor::from_checkpoint(Checkpoint::load_from_path(checkpoint)?)?;
    if let Some(scope) = scope {
        let scope =
            scope.parse().map_err(|e| CliError::Config(format!("--scope: {e}")))?;
        predictor.set_scope(scope);
    }
    let settings = StreamSettings {
        num_teams,
        team_size: team_size_from_count(team_size),
        idle_records,
    };
    let reader: Box<dyn BufRead> = match input {
        "-" => Box::new(std::io::stdin().lock()),
        path => Box::new(open_reader(Path::new(path))?),
    };
    let writer: Box<dyn Write> = match output {
        "-" => Box::new(std::io::stdout().lock()),
        path => Box::new(create_writer(Path::new(path))?),
    };
    run_stream(&predictor, reader, writer, &settings)
}

// ---------------------------------------------------------------- synth

pub fn cmd_synth(
    preset: &str,
    matches: usize,
    lines_per_match: usize,
    seed: u64,
    output: &Path,
    triggers: Option<Vec<String>>,
    benign: Option<Vec<String>>,
) -> Result<(), CliError> {
    let preset = match preset {
        "keyword" => {
            let mut rule = KeywordRule::default();
            if let Some(triggers) = triggers {
                rule.triggers = triggers;
            }
            if let Some(benign) = benign {
                rule.benign = benign;
            }
            SynthPreset::Keyword(rule)
        }
        other => {
            if triggers.is_some() || benign.is_some() {
                return Err(CliError::Config(
                    "--triggers/--benign only apply to the keyword preset".into(),
                ));
            }
            match other {
                "context" => SynthPreset::Context(Default::default()),
                "identity" => SynthPreset::Identity(Default::default()),
                _ => {
                    return Err(CliError::Config(format!(
                        "unknown preset {other:?}; expected keyword, context or identity"
                    )))
                }
            }
        }
    };
    let sessions =
        generate_synthetic(&SynthConfig { matches, lines_per_match, seed, preset })?;
    let mut writer = create_writer(output)?;
    write_corpus(&mut writer, &sessions)?;
    writer.flush().map_err(|e| CliError::io(&output.display().to_string(), e))?;
    println!("wrote {} matches to {}", sessions.len(), output.display());
    Ok(())
}

// ---------------------------------------------------------------- adapt

pub fn cmd_adapt_dota(input: &Path, output: &Path, lowercase: bool) -> Result<(), CliError> {
    let sentences = read_merged_sentences(open_reader(input)?)?;
    let sessions = adapt_dota(&sentences, lowercase)?;
    let mut writer = create_writer(output)?;
    write_corpus(&mut writer, &sessions)?;
    writer.flush().map_err(|e| CliError::io(&output.display().to_string(), e))?;
    println!("adapted {} matches to {}", sessions.len(), output.display());
    Ok(())
}

pub fn cmd_adapt_cc(input: &Path, output: &Path, lowercase: bool) -> Result<(), CliError> {
    let comments = read_comments_csv(open_reader(input)?)?;
    let sessions = adapt_cc_threads(&comments, lowercase)?;
    let mut writer = create_writer(output)?;
    write_corpus(&mut writer, &sessions)?;
    writer.flush().map_err(|e| CliError::io(&output.display().to_string(), e))?;
    println!("adapted {} threads to {}", sessions.len(), output.display());
    Ok(())
}

// ------------------------------------------------------------- moderate

/// Scored line as cmd_predict emits it; extra fields (tokens, class) are
/// ignored so prediction streams can be piped straight in.
#[derive(Debug, Deserialize)]
struct PredRecord {
    match_id: String,
    line_index: usize,
    score: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetsFile {
    players: Vec<String>,
    chat_reported: Vec<String>,
    reported: Vec<String>,
}

/// Operating point as cmd_eval writes it; a null threshold means no
/// score cutoff reached the precision floor.
#[derive(Debug, Deserialize)]
struct CalibrationPoint {
    min_precision: f64,
    #[serde(default)]
    recall: Option<f64>,
    #[serde(default)]
    threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ModerationBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    min_precision: Option<f64>,
    threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibrated_recall: Option<f64>,
    flagged_lines: usize,
    flagged_players: usize,
    ratios: ModerationRatios,
    proactive_candidates: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ModerationFile {
    min_avg_flagged: f64,
    blocks: Vec<ModerationBlock>,
}

/// Threshold for each requested block: straight from `--thresholds`, or
/// looked up per precision level in a calibration file written by eval.
fn resolve_thresholds(
    thresholds: Option<Vec<f64>>,
    calibration: Option<&Path>,
    precisions: &[f64],
) -> Result<Vec<(Option<f64>, f64, Option<f64>)>, CliError> {
    if let Some(list) = thresholds {
        return Ok(list.into_iter().map(|t| (None, t, None)).collect());
    }
    let Some(calibration) = calibration else {
        return Err(CliError::Config(
            "either --thresholds or --calibration (with --precision) is required".into(),
        ));
    };
    let text = std::fs::read_to_string(calibration)
        .map_err(|e| CliError::io(&calibration.display().to_string(), e))?;
    let points: Vec<CalibrationPoint> = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", calibration.display())))?;
    let mut resolved = Vec::with_capacity(precisions.len());
    for &wanted in precisions {
        let point = points
            .iter()
            .find(|p| (p.min_precision - wanted).abs() < 1e-9)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "{}: no operating point for precision {wanted}",
                    calibration.display()
                ))
            })?;
        let threshold = point.threshold.ok_or_else(|| {
            CliError::Config(format!(
                "{}: no threshold reaches precision {wanted}",
                calibration.display()
            ))
        })?;
        resolved.push((Some(wanted), threshold, point.recall));
    }
    Ok(resolved)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_moderate(
    predictions: &Path,
    corpus: &Path,
    report_sets: &Path,
    precisions: &[f64],
    calibration: Option<&Path>,
    thresholds: Option<Vec<f64>>,
    min_avg_flagged: f64,
    output: Option<&Path>,
    num_teams: usize,
    team_size: usize,
) -> Result<(), CliError> {
    let sessions = read_corpus_file(corpus, num_teams, team_size_from_count(team_size))?;
    let by_match: BTreeMap<&str, &MatchSession> =
        sessions.iter().map(|s| (s.match_id.as_str(), s)).collect();

    let mut line_scores = Vec::new();
    for (number, record) in open_reader(predictions)?.lines().enumerate() {
        let record = record.map_err(|e| CliError::io("predictions", e))?;
        if record.trim().is_empty() {
            continue;
        }
        let parsed: PredRecord = serde_json::from_str(&record).map_err(|e| {
            CliError::Config(format!("predictions line {}: {e}", number + 1))
        })?;
        let player_key = by_match
            .get(parsed.match_id.as_str())
            .and_then(|s| s.lines.get(parsed.line_index))
            .map(|l| l.player_key.clone())
            .ok_or_else(|| {
                CliError::Config(format!(
                    "predictions line {}: match {} line {} not in the corpus",
                    number + 1,
                    parsed.match_id,
                    parsed.line_index
                ))
            })?;
        line_scores.push(LineScore {
            match_id: parsed.match_id,
            line_index: parsed.line_index,
            player_key,
            score: parsed.score,
        });
    }

    let sets_text = std::fs::read_to_string(report_sets)
        .map_err(|e| CliError::io(&report_sets.display().to_string(), e))?;
    let sets: SetsFile = serde_json::from_str(&sets_text)
        .map_err(|e| CliError::Config(format!("{}: {e}", report_sets.display())))?;
    let players: BTreeSet<String> = sets.players.into_iter().collect();
    let chat_reported: BTreeSet<String> = sets.chat_reported.into_iter().collect();
    let reported: BTreeSet<String> = sets.reported.into_iter().collect();

    let mut blocks = Vec::new();
    for (min_precision, threshold, calibrated_recall) in
        resolve_thresholds(thresholds, calibration, precisions)?
    {
        let flags = flag_lines(&line_scores, threshold);
        let stats = player_flag_stats(&flags, &sessions)
            .map_err(|e| CliError::Config(format!("moderation: {e}")))?;
        let flagged: BTreeSet<String> = line_scores
            .iter()
            .filter(|s| s.score >= threshold)
            .map(|s| s.player_key.clone())
            .collect();
        let report_sets = ReportSets::new(
            players.clone(),
            chat_reported.clone(),
            reported.clone(),
            flagged.clone(),
        )
        .map_err(|e| CliError::Config(format!("report sets: {e}")))?;
        blocks.push(ModerationBlock {
            min_precision,
            threshold,
            calibrated_recall,
            flagged_lines: flags.len(),
            flagged_players: flagged.len(),
            ratios: moderation_report(&report_sets),
            proactive_candidates: proactive_candidates(&stats, min_avg_flagged, &chat_reported),
        });
    }

    let file = ModerationFile { min_avg_flagged, blocks };
    match output {
        Some(path) => {
            write_json(path, &file)?;
            for block in &file.blocks {
                print!("{}", block.ratios.to_text());
            }
            println!("wrote {}", path.display());
        }
        None => {
            let mut text = serde_json::to_string_pretty(&file)
                .map_err(|e| CliError::Io(format!("moderation report: {e}")))?;
            text.push('\n');
            print!("{text}");
        }
    }
    Ok(())
}

// ------------------------------------------------------------- transfer

fn parse_named(pairs: &[String], what: &str) -> Result<Vec<(String, PathBuf)>, CliError> {
    pairs
        .iter()
        .map(|pair| {
            pair.split_once('=')
                .map(|(name, path)| (name.to_string(), PathBuf::from(path)))
                .ok_or_else(|| {
                    CliError::Config(format!("--{what} wants NAME=PATH, got {pair:?}"))
                })
        })
        .collect()
}

pub fn cmd_transfer(
    models: &[String],
    corpora: &[String],
    output: Option<&Path>,
    num_teams: usize,
    team_size: usize,
) -> Result<(), CliError> {
    let predictors: Vec<(String, Predictor)> = parse_named(models, "model")?
        .into_iter()
        .map(|(name, path)| {
            Ok((name, Predictor::from_checkpoint(Checkpoint::load_from_path(&path)?)?))
        })
        .collect::<Result<_, CliError>>()?;
    let corpora: Vec<(String, Vec<MatchSession>)> = parse_named(corpora, "corpus")?
        .into_iter()
        .map(|(name, path)| {
            Ok((name, read_corpus_file(&path, num_teams, team_size_from_count(team_size))?))
        })
        .collect::<Result<_, CliError>>()?;

    let model_refs: Vec<(&str, &dyn LineClassifier)> =
        predictors.iter().map(|(n, p)| (n.as_str(), p as &dyn LineClassifier)).collect();
    let corpus_refs: Vec<(&str, &[MatchSession])> =
        corpora.iter().map(|(n, c)| (n.as_str(), c.as_slice())).collect();
    let matrix = transfer_matrix(&model_refs, &corpus_refs)
        .map_err(|e| CliError::Config(format!("transfer: {e}")))?;
    print!("{}", matrix.to_text());
    if let Some(path) = output {
        write_json(path, &matrix)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_paths_fold_the_seed_into_the_name() {
        let base = Path::new("out/model.ckpt");
        assert_eq!(seeded_path(base, 7, false), PathBuf::from("out/model.ckpt"));
        assert_eq!(seeded_path(base, 7, true), PathBuf::from("out/model-seed7.ckpt"));
        assert_eq!(
            seeded_path(Path::new("model"), 2, true),
            PathBuf::from("model-seed2")
        );
    }

    #[test]
    fn mean_and_std_cover_single_and_spread_samples() {
        let single = mean_std(&[0.5]);
        assert_eq!(single.mean, 0.5);
        assert_eq!(single.std, 0.0);
        let spread = mean_std(&[1.0, 3.0]);
        assert_eq!(spread.mean, 2.0);
        assert_eq!(spread.std, 1.0);
        assert!(optional_mean_std(&[None, None]).is_none());
        assert_eq!(optional_mean_std(&[Some(1.0), None, Some(3.0)]).unwrap().mean, 2.0);
    }

    #[test]
    fn named_pairs_require_an_equals_sign() {
        let parsed = parse_named(&["a=x.ckpt".into(), "b=y.ckpt".into()], "model").unwrap();
        assert_eq!(parsed[1], ("b".to_string(), PathBuf::from("y.ckpt")));
        let err = parse_named(&["oops".into()], "model").unwrap_err();
        assert!(err.to_string().contains("NAME=PATH"), "{err}");
    }

    #[test]
    fn threshold_resolution_prefers_explicit_thresholds() {
        let resolved = resolve_thresholds(Some(vec![0.5, 0.9]), None, &[]).unwrap();
        assert_eq!(resolved, vec![(None, 0.5, None), (None, 0.9, None)]);
        let err = resolve_thresholds(None, None, &[0.9]).unwrap_err();
        assert!(err.to_string().contains("--thresholds"), "{err}");
    }
}
