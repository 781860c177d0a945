//! Evaluation: span location, topic coverage, conversation flow, token-level
//! QA scores, answer-pair comparison and dataset statistics.

mod pairs;
mod report;
mod token;

pub use pairs::{
    classify_answer_pair, pair_datasets, pair_stats, OverlapClass, PairCondition, PairStats,
    PairedTurn,
};
pub use report::{
    coverage_report, dataset_stats, flow_report, histogram, welch_t_test, write_histogram_csv,
    Comparison, DatasetStats, HistogramBin, MetricsReport, WelchResult,
};
pub use token::{
    normalize_answer_tokens, read_predictions, score_predictions, token_score, token_score_text,
    Prediction, ScoreTable, TokenScore,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Answer, Conversation, Dataset, TopicContext};
use crate::text;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("span {text:?} cannot be located in the section text of {context_id}")]
    SpanNotLocatable { context_id: String, text: String },
    #[error("fewer than two ranked answers ({ranked}); correlation undefined")]
    Undefined { ranked: usize },
    #[error("prediction refers to unknown question id {0}")]
    UnknownQuestionId(String),
    #[error("question id {0} predicted more than once")]
    DuplicatePrediction(String),
    #[error("malformed prediction at line {line}: {message}")]
    MalformedPredictions { line: usize, message: String },
    #[error("datasets do not pair up in {conversation_id}: {message}")]
    PairMismatch {
        conversation_id: String,
        message: String,
    },
    #[error("i/o failure on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Half-open char interval `[start, end)` in a section text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharInterval {
    pub start: usize,
    pub end: usize,
}

/// Resolves each span of a found answer to its interval in the section text.
/// Stored offsets are used when they agree with the span text; otherwise the
/// text is searched with the validation ladder and the earliest hit wins.
/// Unanswerable answers resolve to no intervals.
pub fn locate_spans(
    answer: &Answer,
    ctx: &TopicContext,
) -> Result<Vec<CharInterval>, MetricsError> {
    let len = ctx.section_len();
    answer
        .spans
        .iter()
        .map(|span| {
            if span.start < span.end
                && span.end <= len
                && ctx.section_slice(span.start, span.end) == span.text
            {
                return Ok(CharInterval {
                    start: span.start,
                    end: span.end,
                });
            }
            text::locate(&span.text, &ctx.section_text)
                .map(|hit| CharInterval {
                    start: hit.start,
                    end: hit.end,
                })
                .ok_or_else(|| MetricsError::SpanNotLocatable {
                    context_id: ctx.id.clone(),
                    text: span.text.clone(),
                })
        })
        .collect()
}

/// Total length of the union of `intervals`.
pub fn union_length(intervals: &[CharInterval]) -> usize {
    let mut sorted: Vec<CharInterval> = intervals
        .iter()
        .copied()
        .filter(|i| i.start < i.end)
        .collect();
    sorted.sort_unstable();
    let mut total = 0;
    let mut current: Option<CharInterval> = None;
    for iv in sorted {
        match current.as_mut() {
            Some(c) if iv.start <= c.end => c.end = c.end.max(iv.end),
            _ => {
                if let Some(c) = current {
                    total += c.end - c.start;
                }
                current = Some(iv);
            }
        }
    }
    total + current.map_or(0, |c| c.end - c.start)
}

/// Fraction of section-text characters covered by the union of all answer
/// spans. Spans that cannot be located are skipped with a warning.
pub fn topic_coverage(conv: &Conversation) -> f64 {
    let ctx = &conv.context;
    let mut intervals = Vec::new();
    for turn in conv.answered_turns() {
        match locate_spans(&turn.answer, ctx) {
            Ok(found) => intervals.extend(found),
            Err(e) => log::warn!("{}: {e}", turn.id),
        }
    }
    let len = ctx.section_len();
    if len == 0 {
        return 0.0;
    }
    let clipped: Vec<CharInterval> = intervals
        .into_iter()
        .map(|i| CharInterval {
            start: i.start.min(len),
            end: i.end.min(len),
        })
        .collect();
    union_length(&clipped) as f64 / len as f64
}

/// Kendall's tau-b between position in the slice and value, i.e. between
/// conversation order and document order. Ties among values get the tau-b
/// correction. `None` when fewer than two values or all values tie.
pub fn krcc_of_positions(positions: &[usize]) -> Option<f64> {
    let n = positions.len();
    if n < 2 {
        return None;
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    let tied: usize = sorted
        .chunk_by(|a, b| a == b)
        .map(|run| run.len() * (run.len() - 1) / 2)
        .sum();
    if tied == n * (n - 1) / 2 {
        return None;
    }
    let discordant = count_inversions(&mut positions.to_vec()) as f64;
    let concordant = pairs - tied as f64 - discordant;
    Some((concordant - discordant) / (pairs * (pairs - tied as f64)).sqrt())
}

/// Strict inversions (`i < j`, `v[i] > v[j]`), counted by merge sort.
fn count_inversions(v: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            count += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    count
}

/// Rank correlation of one conversation, with the number of ranked turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Krcc {
    pub tau: f64,
    pub n: usize,
}

/// Start offset of each answered turn's first span, in conversation order.
pub fn answer_positions(conv: &Conversation) -> Vec<usize> {
    conv.answered_turns()
        .filter_map(|turn| match locate_spans(&turn.answer, &conv.context) {
            Ok(ivs) => ivs.first().map(|iv| iv.start),
            Err(e) => {
                log::warn!("{}: {e}", turn.id);
                None
            }
        })
        .collect()
}

pub fn conversation_flow_krcc(conv: &Conversation) -> Result<Krcc, MetricsError> {
    let positions = answer_positions(conv);
    let n = positions.len();
    krcc_of_positions(&positions)
        .map(|tau| Krcc { tau, n })
        .ok_or(MetricsError::Undefined { ranked: n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub conversation_id: String,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub per_conversation: Vec<CoverageEntry>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub conversation_id: String,
    pub tau: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub per_conversation: Vec<FlowEntry>,
    pub mean: f64,
    /// Conversations with an undefined correlation.
    pub excluded: Vec<String>,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// A problem found by [`audit_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanViolation {
    pub question_id: String,
    pub message: String,
}

/// Re-checks every answer against its section text: found answers need
/// locatable, non-empty spans whose stored offsets agree with the text;
/// unanswerable answers carry no spans. With `max_answer_tokens`, longer
/// spans are reported too.
pub fn audit_dataset(ds: &Dataset, max_answer_tokens: Option<usize>) -> Vec<SpanViolation> {
    let mut out = Vec::new();
    for (conv, turn) in ds.turns() {
        let mut report = |message: String| {
            out.push(SpanViolation {
                question_id: turn.id.clone(),
                message,
            })
        };
        let answer = &turn.answer;
        if !answer.is_found() {
            if !answer.spans.is_empty() {
                report("unanswerable answer carries spans".into());
            }
            continue;
        }
        if answer.spans.is_empty() {
            report("found answer has no spans".into());
        }
        let located = match locate_spans(answer, &conv.context) {
            Ok(ivs) => ivs,
            Err(e) => {
                report(e.to_string());
                continue;
            }
        };
        for (span, iv) in answer.spans.iter().zip(located) {
            if span.text.trim().is_empty() {
                report("empty span".into());
            }
            if (span.start, span.end) != (iv.start, iv.end) {
                let stored = text::locate_at(&span.text, &conv.context.section_text, span.start);
                if stored.is_none_or(|hit| hit.start != span.start) {
                    report(format!(
                        "stored offsets [{}, {}) do not hold {:?}",
                        span.start, span.end, span.text
                    ));
                }
            }
            if let Some(cap) = max_answer_tokens {
                let n = text::whitespace_tokens(&span.text);
                if n > cap {
                    report(format!("span has {n} tokens, cap is {cap}"));
                }
            }
        }
    }
    out
}
