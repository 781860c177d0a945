//! Line-delimited per-turn validation traces written next to a dataset.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, GuidingPromptId, RepromptId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub conversation_id: String,
    pub turn_index: usize,
    pub question_id: String,
    pub teacher_attempts: u32,
    pub teacher_reprompts: Vec<RepromptId>,
    pub student_prompt: Option<GuidingPromptId>,
    pub student_reprompts: Vec<RepromptId>,
}

impl TraceRecord {
    pub fn collect(ds: &Dataset) -> Vec<TraceRecord> {
        ds.turns()
            .map(|(conv, turn)| TraceRecord {
                conversation_id: conv.id().to_string(),
                turn_index: turn.index,
                question_id: turn.id.clone(),
                teacher_attempts: turn.answer.attempts,
                teacher_reprompts: turn.teacher_reprompts.clone(),
                student_prompt: turn.student_prompt_used,
                student_reprompts: turn.student_reprompts.clone(),
            })
            .collect()
    }
}

pub fn write_traces(ds: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for record in TraceRecord::collect(ds) {
        serde_json::to_writer(&mut out, &record).expect("trace serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(&out).map_err(io)
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedFile {
            locator: format!("line {}", n + 1),
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::Conversation;

    #[test]
    fn traces_round_trip() {
        let ctx = context("c", "abcdef");
        let mut conv = Conversation::new(ctx.clone());
        let mut t = unanswered_turn(&ctx, 0);
        t.teacher_reprompts = vec![RepromptId::CopyExactly; 4];
        t.answer.attempts = 5;
        conv.turns.push(t);
        let mut t = found_turn(&ctx, 1, 0, 3);
        t.student_prompt_used = Some(GuidingPromptId::Interesting);
        conv.turns.push(t);
        let ds = Dataset::new("d", vec![conv]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        write_traces(&ds, &path).unwrap();
        let back = read_traces(&path).unwrap();
        assert_eq!(back, TraceRecord::collect(&ds));
        assert_eq!(back[0].teacher_attempts, 5);
        assert_eq!(back[1].student_prompt, Some(GuidingPromptId::Interesting));
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().count(), 2);
    }
}
