use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{
    BackendError, ChatBackend, ChatMessage, ChatParams, ExhaustedBehavior, Role, ScriptBook,
};

/// Wraps a backend and records every reply per session, so a live run can be
/// replayed later through a [`ScriptBook`].
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    log: Mutex<BTreeMap<String, Vec<String>>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        RecordingBackend {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    /// Everything recorded so far. Replies land at the index given by the
    /// session's reply count, matching how scripts are consumed.
    pub fn script_book(&self) -> ScriptBook {
        ScriptBook {
            exhausted: ExhaustedBehavior::Error,
            sessions: self.log.lock().expect("recording lock").clone(),
        }
    }
}

impl ChatBackend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn reply(
        &self,
        session_id: &str,
        history: &[ChatMessage],
        params: &ChatParams,
    ) -> Result<String, BackendError> {
        let reply = self.inner.reply(session_id, history, params)?;
        let turn = history.iter().filter(|m| m.role == Role::Agent).count();
        let mut log = self.log.lock().expect("recording lock");
        let entries = log.entry(session_id.to_string()).or_default();
        entries.truncate(turn);
        entries.push(reply.clone());
        Ok(reply)
    }
}
