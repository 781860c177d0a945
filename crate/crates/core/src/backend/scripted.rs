use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatMessage, ChatParams, Role};

/// What a script does once every canned response has been used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustedBehavior {
    #[default]
    RepeatLast,
    Error,
}

fn scripted_reply(
    session_id: &str,
    script: &[String],
    exhausted: ExhaustedBehavior,
    history: &[ChatMessage],
) -> Result<String, BackendError> {
    let turn = history.iter().filter(|m| m.role == Role::Agent).count();
    match script.get(turn) {
        Some(reply) => Ok(reply.clone()),
        None => match (exhausted, script.last()) {
            (ExhaustedBehavior::RepeatLast, Some(last)) => Ok(last.clone()),
            _ => Err(BackendError::ScriptExhausted {
                session: session_id.to_string(),
                len: script.len(),
            }),
        },
    }
}

/// Replays one fixed list of responses. The reply to a call is the script
/// entry at the number of replies already in the session history, so the
/// same call sequence always yields the same responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedBackend {
    id: String,
    script: Vec<String>,
    exhausted: ExhaustedBehavior,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, script: Vec<String>) -> Self {
        ScriptedBackend {
            id: id.into(),
            script,
            exhausted: ExhaustedBehavior::default(),
        }
    }

    pub fn with_exhausted(mut self, exhausted: ExhaustedBehavior) -> Self {
        self.exhausted = exhausted;
        self
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn reply(
        &self,
        session_id: &str,
        history: &[ChatMessage],
        _params: &ChatParams,
    ) -> Result<String, BackendError> {
        scripted_reply(session_id, &self.script, self.exhausted, history)
    }
}

/// Scripts keyed by session id.
///
/// Session ids look like `<conversation id>/<role>`. Lookup tries the full id
/// first and then the role alone, so a book with just `student` and `teacher`
/// keys drives every conversation the same way.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptBook {
    #[serde(default)]
    pub exhausted: ExhaustedBehavior,
    pub sessions: BTreeMap<String, Vec<String>>,
}

impl ScriptBook {
    pub fn new(exhausted: ExhaustedBehavior) -> Self {
        ScriptBook {
            exhausted,
            sessions: BTreeMap::new(),
        }
    }

    pub fn with_session(mut self, key: impl Into<String>, script: Vec<String>) -> Self {
        self.sessions.insert(key.into(), script);
        self
    }

    fn script_for(&self, session_id: &str) -> Option<&Vec<String>> {
        self.sessions.get(session_id).or_else(|| {
            let role = session_id.rsplit('/').next()?;
            self.sessions.get(role)
        })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let mut body = serde_json::to_string_pretty(self).expect("script book serializes");
        body.push('\n');
        fs::write(path, body).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }
}

impl ChatBackend for ScriptBook {
    fn id(&self) -> &str {
        "scripted"
    }

    fn reply(
        &self,
        session_id: &str,
        history: &[ChatMessage],
        _params: &ChatParams,
    ) -> Result<String, BackendError> {
        let script = self
            .script_for(session_id)
            .ok_or_else(|| BackendError::ScriptExhausted {
                session: session_id.to_string(),
                len: 0,
            })?;
        scripted_reply(session_id, script, self.exhausted, history)
    }
}
