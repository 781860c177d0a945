//! Chat-completion backends.
//!
//! A [`ChatSession`] holds one agent's conversation with a model. Backends are
//! stateless with respect to sessions: every call receives the full history,
//! so one backend instance can serve many sessions concurrently.

mod recording;
mod remote;
mod scripted;

pub use recording::RecordingBackend;
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy};
pub use scripted::{ExhaustedBehavior, ScriptBook, ScriptedBackend};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("script for session {session} exhausted after {len} responses")]
    ScriptExhausted { session: String, len: usize },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// True for errors of the empty-completion class, which includes running
    /// past the end of a script.
    pub fn is_empty_completion(&self) -> bool {
        matches!(
            self,
            BackendError::EmptyCompletion | BackendError::ScriptExhausted { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    /// The model's own turns.
    Agent,
    /// The other side of the conversation.
    Counterpart,
}

impl Role {
    /// Role name in the chat-completion wire convention.
    pub fn wire_name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Agent => "assistant",
            Role::Counterpart => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn counterpart(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Counterpart,
            content: content.into(),
        }
    }

    pub fn agent(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Agent,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams {
            temperature: 1.0,
            max_output_tokens: 256,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Produces the model reply for `history`, whose last message is the new
    /// counterpart message. `session_id` lets scripted backends pick a script.
    fn reply(
        &self,
        session_id: &str,
        history: &[ChatMessage],
        params: &ChatParams,
    ) -> Result<String, BackendError>;
}

/// One agent's stateful conversation with a model.
///
/// The instruction prompt is sent as the first message: the opening call
/// prefixes it to whatever the agent sends first (see [`ChatSession::opening`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub backend_id: String,
    pub instruction: String,
    pub history: Vec<ChatMessage>,
    pub params: ChatParams,
}

impl ChatSession {
    pub fn new(
        id: impl Into<String>,
        backend_id: impl Into<String>,
        instruction: impl Into<String>,
        params: ChatParams,
    ) -> Self {
        ChatSession {
            id: id.into(),
            backend_id: backend_id.into(),
            instruction: instruction.into(),
            history: Vec::new(),
            params,
        }
    }

    /// The counterpart message to send next: on the first call the
    /// instruction, followed by `text` after a blank line when non-empty;
    /// afterwards `text` alone.
    pub fn opening(&self, text: &str) -> ChatMessage {
        if !self.history.is_empty() {
            return ChatMessage::counterpart(text);
        }
        if text.is_empty() {
            ChatMessage::counterpart(self.instruction.clone())
        } else {
            ChatMessage::counterpart(format!("{}\n\n{}", self.instruction, text))
        }
    }

    /// Number of replies received so far.
    pub fn replies(&self) -> usize {
        self.history
            .iter()
            .filter(|m| m.role == Role::Agent)
            .count()
    }

    /// Sends `message` and appends it together with the reply. The history is
    /// untouched when the call fails.
    pub fn complete(
        &mut self,
        backend: &dyn ChatBackend,
        message: ChatMessage,
    ) -> Result<String, BackendError> {
        if message.content.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "message content is empty".into(),
            ));
        }
        let mut history = self.history.clone();
        history.push(message);
        let reply = backend.reply(&self.id, &history, &self.params)?;
        if reply.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        history.push(ChatMessage::agent(reply.clone()));
        self.history = history;
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_echo_and_history_growth() {
        let backend = ScriptedBackend::new("s", vec!["Q1?".into(), "Q2?".into()]);
        let mut session = ChatSession::new("x/student", "s", "INSTR", ChatParams::default());
        let first = session.opening("");
        assert_eq!(first.content, "INSTR");
        assert_eq!(session.complete(&backend, first).unwrap(), "Q1?");
        assert_eq!(session.history.len(), 2);
        assert_eq!(session.history[0].content, "INSTR");
        let next = session.opening("In 1897");
        assert_eq!(next.content, "In 1897");
        assert_eq!(session.complete(&backend, next).unwrap(), "Q2?");
        assert_eq!(session.history.len(), 4);
        assert_eq!(session.replies(), 2);
    }

    #[test]
    fn opening_prefixes_instruction_once() {
        let session = ChatSession::new("x", "s", "INSTR", ChatParams::default());
        assert_eq!(session.opening("q").content, "INSTR\n\nq");
    }

    #[test]
    fn failed_call_leaves_history_untouched() {
        let backend =
            ScriptedBackend::new("s", vec!["only".into()]).with_exhausted(ExhaustedBehavior::Error);
        let mut session = ChatSession::new("x", "s", "I", ChatParams::default());
        session
            .complete(&backend, ChatMessage::counterpart("a"))
            .unwrap();
        let err = session
            .complete(&backend, ChatMessage::counterpart("b"))
            .unwrap_err();
        assert!(err.is_empty_completion());
        assert_eq!(session.history.len(), 2);
    }

    #[test]
    fn empty_reply_and_empty_message_rejected() {
        let backend = ScriptedBackend::new("s", vec!["   ".into()]);
        let mut session = ChatSession::new("x", "s", "I", ChatParams::default());
        assert_eq!(
            session.complete(&backend, ChatMessage::counterpart("a")),
            Err(BackendError::EmptyCompletion)
        );
        assert!(matches!(
            session.complete(&backend, ChatMessage::counterpart(" ")),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn default_params() {
        let p = ChatParams::default();
        assert_eq!(p.temperature, 1.0);
        assert_eq!(p.max_output_tokens, 256);
    }
}
