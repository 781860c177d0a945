//! The answering agent: it sees the full section text and must reply with
//! verbatim spans of it.
//!
//! Each raw reply is validated against the section text. Invalid replies get
//! a corrective reprompt and are regenerated, up to `patience` times, after
//! which the turn falls back to the unanswerable marker.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, ChatSession};
use crate::config::TeacherConfig;
use crate::corpus::{is_cannot_find_marker, Answer, AnswerSpan, RepromptId, TopicContext};
use crate::text;

const INSTRUCTION_BODY: &str = "In this task, you will be given a text about the topic explained above. You will answer my questions from this text. Please remember that you cannot generate the answer on your own but should only copy a continuous span from the original text and the copied answer should not exceed 40 tokens. If you cannot find the answer in the text, please generate ‘I cannot find the answer’.";

pub const SHORTEST_SPAN_REMINDER: &str =
    "Remember that you should select the shortest possible span from the text.";
pub const COPY_EXACTLY_REPROMPT: &str = "Please copy the answer exactly from the given text.";
pub const NOT_FROM_BACKGROUND_REPROMPT: &str =
    "Please answer from the given section not the given background description.";

pub fn build_teacher_instruction(ctx: &TopicContext) -> String {
    format!(
        "Topic: {}\nBackground knowledge {}\n\n{}\n\nSection header: {}\nSection text: {}",
        ctx.title, ctx.background, INSTRUCTION_BODY, ctx.section_header, ctx.section_text
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationFailure {
    NotASpan,
    CopiedFromBackground,
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationVerdict {
    pub valid: bool,
    pub failure: Option<ValidationFailure>,
    /// Resolved spans of the section text, one per segment, when valid.
    pub matched_spans: Vec<AnswerSpan>,
    pub cannot_find: bool,
}

impl ValidationVerdict {
    fn failed(failure: ValidationFailure) -> Self {
        ValidationVerdict {
            valid: false,
            failure: Some(failure),
            matched_spans: Vec::new(),
            cannot_find: false,
        }
    }
}

/// Splits a raw reply into the segments validated independently: on `"; "`
/// and after sentence-final punctuation followed by whitespace.
pub fn split_segments(raw: &str) -> Vec<String> {
    let mut segments = Vec::new();
    for piece in raw.split("; ") {
        let chars: Vec<char> = piece.chars().collect();
        let mut current = String::new();
        for (i, c) in chars.iter().enumerate() {
            current.push(*c);
            let sentence_end =
                matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_some_and(|n| n.is_whitespace());
            if sentence_end {
                segments.push(std::mem::take(&mut current));
            }
        }
        segments.push(current);
    }
    segments
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn validate_answer(raw: &str, ctx: &TopicContext, cfg: &TeacherConfig) -> ValidationVerdict {
    if is_cannot_find_marker(raw) && raw.trim() != crate::corpus::QUAC_CANNOTANSWER {
        return ValidationVerdict {
            valid: true,
            failure: None,
            matched_spans: Vec::new(),
            cannot_find: true,
        };
    }
    let segments = split_segments(raw);
    if segments.is_empty() {
        return ValidationVerdict::failed(ValidationFailure::NotASpan);
    }
    let mut spans = Vec::with_capacity(segments.len());
    for segment in &segments {
        match text::locate(segment, &ctx.section_text) {
            Some(loc) => {
                if text::whitespace_tokens(segment) > cfg.max_answer_tokens {
                    return ValidationVerdict::failed(ValidationFailure::TooLong);
                }
                spans.push(AnswerSpan::from_context(ctx, loc.start, loc.end));
            }
            None if text::locate(segment, &ctx.background).is_some() => {
                return ValidationVerdict::failed(ValidationFailure::CopiedFromBackground);
            }
            None => return ValidationVerdict::failed(ValidationFailure::NotASpan),
        }
    }
    ValidationVerdict {
        valid: true,
        failure: None,
        matched_spans: spans,
        cannot_find: false,
    }
}

/// The corrective prompt for a failed verdict; `None` for a valid one.
pub fn select_teacher_reprompt(verdict: &ValidationVerdict) -> Option<RepromptId> {
    match verdict.failure? {
        ValidationFailure::NotASpan | ValidationFailure::TooLong => Some(RepromptId::CopyExactly),
        ValidationFailure::CopiedFromBackground => Some(RepromptId::NotFromBackground),
    }
}

pub fn reprompt_text(id: RepromptId) -> &'static str {
    match id {
        RepromptId::CopyExactly => COPY_EXACTLY_REPROMPT,
        RepromptId::NotFromBackground => NOT_FROM_BACKGROUND_REPROMPT,
        RepromptId::ShortQuestion => crate::student::SHORT_QUESTION_PROMPT,
    }
}

/// The question as sent to the teacher, with the reminder appended when
/// enabled.
pub fn question_message(question: &str, cfg: &TeacherConfig) -> String {
    if cfg.shortest_span_reminder {
        format!("{question} {SHORTEST_SPAN_REMINDER}")
    } else {
        question.to_string()
    }
}

/// Sends the question (with the instruction on the first turn) and returns
/// the raw reply.
pub fn generate_answer(
    backend: &dyn ChatBackend,
    session: &mut ChatSession,
    question: &str,
    cfg: &TeacherConfig,
) -> Result<String, BackendError> {
    let message = session.opening(&question_message(question, cfg));
    session.complete(backend, message)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherOutcome {
    pub answer: Answer,
    pub reprompts: Vec<RepromptId>,
}

/// Generate, validate, reprompt; at most `patience` reprompts, so at most
/// `patience + 1` backend calls.
pub fn answer_with_validation(
    backend: &dyn ChatBackend,
    session: &mut ChatSession,
    question: &str,
    ctx: &TopicContext,
    cfg: &TeacherConfig,
) -> Result<TeacherOutcome, BackendError> {
    let mut raw = generate_answer(backend, session, question, cfg)?;
    let mut attempts = 1u32;
    let mut reprompts = Vec::new();
    loop {
        let verdict = validate_answer(&raw, ctx, cfg);
        if verdict.valid {
            let answer = if verdict.cannot_find {
                let mut answer = Answer::cannot_find(attempts);
                let trimmed = raw.trim();
                if trimmed != crate::corpus::CANNOT_FIND {
                    answer.original_text = Some(trimmed.to_string());
                }
                answer
            } else {
                Answer::found(verdict.matched_spans, raw, attempts)
            };
            return Ok(TeacherOutcome { answer, reprompts });
        }
        if reprompts.len() as u32 >= cfg.patience {
            return Ok(TeacherOutcome {
                answer: Answer::cannot_find(attempts),
                reprompts,
            });
        }
        let id = select_teacher_reprompt(&verdict).expect("invalid verdict has a failure");
        reprompts.push(id);
        let message = session.opening(reprompt_text(id));
        raw = session.complete(backend, message)?;
        attempts += 1;
    }
}
