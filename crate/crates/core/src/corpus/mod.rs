//! Conversational QA data model and its file formats.
//!
//! A [`Dataset`] is a list of [`Conversation`]s, each grounded in one
//! [`TopicContext`]. Answers are extractive: a found answer is an ordered list
//! of [`AnswerSpan`]s addressed by char offsets into the section text.

mod io;
mod trace;

pub use io::{
    dataset_to_string, export_dataset, load_contexts, load_dataset, load_dataset_with_report,
    load_quac, LoadOptions, LoadReport, OffsetUnit,
};
pub use trace::{read_traces, write_traces, TraceRecord};

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimulationConfig;
use crate::text;

/// Canonical unanswerable marker stored for every CannotFind answer.
pub const CANNOT_FIND: &str = "I cannot find the answer.";
/// QuAC's unanswerable marker, accepted on load.
pub const QUAC_CANNOTANSWER: &str = "CANNOTANSWER";
/// Separator used when a multi-span answer is rendered as one string.
pub const SPAN_SEPARATOR: &str = "; ";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file at {locator}: {message}")]
    MalformedFile { locator: String, message: String },
    #[error("answer offset mismatch for question {qa_id}: {message}")]
    OffsetMismatch { qa_id: String, message: String },
    #[error("invalid context {id}: {message}")]
    InvalidContext { id: String, message: String },
    #[error("duplicate conversation id {0}")]
    DuplicateConversation(String),
}

/// One discussion unit: topic title, background, section header and the
/// section text the answers are drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicContext {
    pub id: String,
    pub title: String,
    pub background: String,
    pub section_header: String,
    pub section_text: String,
}

impl TopicContext {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        background: impl Into<String>,
        section_header: impl Into<String>,
        section_text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let ctx = TopicContext {
            id: id.into(),
            title: title.into(),
            background: background.into(),
            section_header: section_header.into(),
            section_text: section_text.into(),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fields = [
            ("title", &self.title),
            ("background", &self.background),
            ("section_header", &self.section_header),
            ("section_text", &self.section_text),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(CorpusError::InvalidContext {
                    id: self.id.clone(),
                    message: format!("{name} is empty"),
                });
            }
        }
        Ok(())
    }

    /// Length of the section text in chars.
    pub fn section_len(&self) -> usize {
        text::char_len(&self.section_text)
    }

    pub fn section_slice(&self, start: usize, end: usize) -> String {
        text::char_slice(&self.section_text, start, end)
    }
}

/// A contiguous piece of the section text, `[start, end)` in chars.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl AnswerSpan {
    /// Builds the span covering `[start, end)` of the section text, taking the
    /// text from the context itself.
    pub fn from_context(ctx: &TopicContext, start: usize, end: usize) -> Self {
        AnswerSpan {
            text: ctx.section_slice(start, end),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Found,
    CannotFind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub kind: AnswerKind,
    pub spans: Vec<AnswerSpan>,
    /// Agent output for found answers; always [`CANNOT_FIND`] otherwise.
    pub raw_text: String,
    /// Generation attempts consumed; 0 for answers that were not generated.
    pub attempts: u32,
    /// The source's own unanswerable marker when it differed from
    /// [`CANNOT_FIND`] (for example QuAC's `CANNOTANSWER`).
    pub original_text: Option<String>,
}

impl Answer {
    pub fn found(spans: Vec<AnswerSpan>, raw_text: impl Into<String>, attempts: u32) -> Self {
        assert!(!spans.is_empty(), "a found answer needs at least one span");
        Answer {
            kind: AnswerKind::Found,
            spans,
            raw_text: raw_text.into(),
            attempts,
            original_text: None,
        }
    }

    pub fn cannot_find(attempts: u32) -> Self {
        Answer {
            kind: AnswerKind::CannotFind,
            spans: Vec::new(),
            raw_text: CANNOT_FIND.to_string(),
            attempts,
            original_text: None,
        }
    }

    pub fn is_found(&self) -> bool {
        self.kind == AnswerKind::Found
    }

    /// Human-readable form: span texts joined by `"; "`, or the canonical
    /// unanswerable marker.
    pub fn serialized_text(&self) -> String {
        match self.kind {
            AnswerKind::Found => self
                .spans
                .iter()
                .map(|s| s.text.as_str())
                .collect::<Vec<_>>()
                .join(SPAN_SEPARATOR),
            AnswerKind::CannotFind => CANNOT_FIND.to_string(),
        }
    }
}

/// True when `text` is an unanswerable marker: QuAC's `CANNOTANSWER` or the
/// phrase "I cannot find the answer" with optional quotes and trailing
/// punctuation, in any case.
pub fn is_cannot_find_marker(text: &str) -> bool {
    let t = text.trim();
    if t == QUAC_CANNOTANSWER {
        return true;
    }
    let quotes: &[char] = &['"', '\'', '‘', '’', '“', '”'];
    let t = t.trim_matches(quotes).trim();
    let t = t.trim_end_matches(['.', '!']).trim_matches(quotes).trim();
    t.eq_ignore_ascii_case("i cannot find the answer")
}

/// Identifiers of corrective prompts recorded in turn traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepromptId {
    /// Teacher: copy the answer exactly.
    CopyExactly,
    /// Teacher: answer from the section, not the background.
    NotFromBackground,
    /// Student: ask one short question.
    ShortQuestion,
}

/// The four guiding prompts a student receives after an unanswered turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidingPromptId {
    General,
    WhStart,
    Interesting,
    AnotherAspect,
}

impl GuidingPromptId {
    pub const ALL: [GuidingPromptId; 4] = [
        GuidingPromptId::General,
        GuidingPromptId::WhStart,
        GuidingPromptId::Interesting,
        GuidingPromptId::AnotherAspect,
    ];

    pub fn text(self) -> &'static str {
        match self {
            GuidingPromptId::General => {
                "Ask a general question and do not ask a too specific question."
            }
            GuidingPromptId::WhStart => "Ask a question starting with where, when, or who.",
            GuidingPromptId::Interesting => {
                "Ask a question about what is interesting in this article."
            }
            GuidingPromptId::AnotherAspect => "Ask a question about another aspect of the topic.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub id: String,
    pub index: usize,
    pub question: String,
    pub answer: Answer,
    pub student_prompt_used: Option<GuidingPromptId>,
    pub teacher_reprompts: Vec<RepromptId>,
    pub student_reprompts: Vec<RepromptId>,
}

impl Turn {
    pub fn new(
        id: impl Into<String>,
        index: usize,
        question: impl Into<String>,
        answer: Answer,
    ) -> Self {
        Turn {
            id: id.into(),
            index,
            question: question.into(),
            answer,
            student_prompt_used: None,
            teacher_reprompts: Vec::new(),
            student_reprompts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub context: TopicContext,
    pub turns: Vec<Turn>,
    pub config_snapshot: Option<SimulationConfig>,
    pub seed: u64,
    pub backend_id: String,
}

impl Conversation {
    pub fn new(context: TopicContext) -> Self {
        Conversation {
            context,
            turns: Vec::new(),
            config_snapshot: None,
            seed: 0,
            backend_id: String::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.context.id
    }

    pub fn answered_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.answer.is_found())
    }

    fn renumber(&mut self) {
        for (i, turn) in self.turns.iter_mut().enumerate() {
            turn.index = i;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub conversations: Vec<Conversation>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        conversations: Vec<Conversation>,
    ) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for conv in &conversations {
            if !seen.insert(conv.id()) {
                return Err(CorpusError::DuplicateConversation(conv.id().to_string()));
            }
        }
        Ok(Dataset {
            name: name.into(),
            conversations,
        })
    }

    pub fn n_questions(&self) -> usize {
        self.conversations.iter().map(|c| c.turns.len()).sum()
    }

    pub fn conversation(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.id() == id)
    }

    pub fn turns(&self) -> impl Iterator<Item = (&Conversation, &Turn)> {
        self.conversations
            .iter()
            .flat_map(|c| c.turns.iter().map(move |t| (c, t)))
    }
}

/// Keeps at most `limit` unanswered turns per conversation (the earliest
/// ones), never drops answered turns, and renumbers turn indices.
pub fn filter_max_unanswered(ds: &Dataset, limit: usize) -> Dataset {
    let conversations = ds
        .conversations
        .iter()
        .map(|conv| {
            let mut kept = conv.clone();
            let mut unanswered = 0usize;
            kept.turns.retain(|turn| {
                if turn.answer.is_found() {
                    return true;
                }
                unanswered += 1;
                unanswered <= limit
            });
            kept.renumber();
            kept
        })
        .collect();
    Dataset {
        name: ds.name.clone(),
        conversations,
    }
}
