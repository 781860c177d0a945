//! Reading and writing conversation files.
//!
//! The native file is a JSON document `{"name", "records": [...]}` where each
//! record is `{context: {...}, qas: [{id, question, answers: [{text,
//! answer_start}]}]}`. On load the reader also accepts a bare JSON array of
//! records, line-delimited records, and QuAC's original `{"data": [...]}`
//! layout, with QuAC field names (`section_title`, `context`) as aliases.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    is_cannot_find_marker, Answer, AnswerKind, AnswerSpan, Conversation, CorpusError, Dataset,
    GuidingPromptId, RepromptId, TopicContext, Turn, CANNOT_FIND, QUAC_CANNOTANSWER,
};
use crate::config::SimulationConfig;
use crate::text;

/// Unit of `answer_start` in the input file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetUnit {
    #[default]
    Char,
    /// Index of a whitespace-delimited token of the section text.
    Token,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub offset_unit: OffsetUnit,
    /// Drop records that fail validation instead of failing the load.
    pub skip_invalid: bool,
}

#[derive(Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    /// Diagnostics for records dropped under `skip_invalid`.
    pub rejected: Vec<CorpusError>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContextRecord {
    id: String,
    title: String,
    background: String,
    #[serde(alias = "section_title")]
    section_header: String,
    #[serde(alias = "context")]
    section_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnswerRecord {
    text: String,
    answer_start: i64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TraceFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    student_prompt: Option<GuidingPromptId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    teacher_reprompts: Vec<RepromptId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    student_reprompts: Vec<RepromptId>,
}

impl TraceFields {
    fn is_empty(&self) -> bool {
        self.student_prompt.is_none()
            && self.teacher_reprompts.is_empty()
            && self.student_reprompts.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct QaRecord {
    id: String,
    question: String,
    answers: Vec<AnswerRecord>,
    /// QuAC dev/test files list several references in `answers` and the
    /// original annotator span here.
    #[serde(default, skip_serializing)]
    orig_answer: Option<AnswerRecord>,
    /// Human-readable joined answer; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "TraceFields::is_empty")]
    trace: TraceFields,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConversationRecord {
    context: ContextRecord,
    qas: Vec<QaRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    backend_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<SimulationConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NativeFile {
    name: String,
    records: Vec<ConversationRecord>,
}

#[derive(Debug, Deserialize)]
struct QuacFile {
    data: Vec<QuacTopic>,
}

#[derive(Debug, Deserialize)]
struct QuacTopic {
    title: String,
    #[serde(default)]
    background: String,
    #[serde(alias = "section_header")]
    section_title: String,
    paragraphs: Vec<QuacParagraph>,
}

#[derive(Debug, Deserialize)]
struct QuacParagraph {
    id: String,
    context: String,
    qas: Vec<QaRecord>,
}

fn malformed(locator: impl Into<String>, message: impl ToString) -> CorpusError {
    CorpusError::MalformedFile {
        locator: locator.into(),
        message: message.to_string(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// QuAC appends its unanswerable marker to every context.
fn strip_quac_marker(section_text: &str) -> String {
    match section_text.trim_end().strip_suffix(QUAC_CANNOTANSWER) {
        Some(rest) => rest.trim_end().to_string(),
        None => section_text.to_string(),
    }
}

fn convert_answer(
    qa: &QaRecord,
    ctx: &TopicContext,
    unit: OffsetUnit,
    locator: &str,
) -> Result<Answer, CorpusError> {
    let refs: Vec<&AnswerRecord> = match &qa.orig_answer {
        Some(orig) => vec![orig],
        None => qa.answers.iter().collect(),
    };
    if refs.is_empty() {
        return Err(malformed(
            locator,
            format!("question {} has no answers", qa.id),
        ));
    }
    let markers = refs
        .iter()
        .filter(|a| is_cannot_find_marker(&a.text))
        .count();
    let attempts = qa.attempts.unwrap_or(0);
    if markers == refs.len() {
        let mut answer = Answer::cannot_find(attempts);
        let text = refs[0].text.trim();
        if text != CANNOT_FIND {
            answer.original_text = Some(text.to_string());
        }
        return Ok(answer);
    }
    if markers > 0 {
        return Err(malformed(
            locator,
            format!("question {} mixes spans with an unanswerable marker", qa.id),
        ));
    }

    let mut spans = Vec::with_capacity(refs.len());
    for answer in refs {
        let mismatch = |message: String| CorpusError::OffsetMismatch {
            qa_id: qa.id.clone(),
            message,
        };
        if answer.answer_start < 0 {
            return Err(mismatch(format!(
                "negative answer_start {}",
                answer.answer_start
            )));
        }
        let raw_start = answer.answer_start as usize;
        let start = match unit {
            OffsetUnit::Char => raw_start,
            OffsetUnit::Token => text::token_start_offset(&ctx.section_text, raw_start)
                .ok_or_else(|| mismatch(format!("token index {raw_start} out of range")))?,
        };
        let end = start + text::char_len(&answer.text);
        if end <= ctx.section_len() && ctx.section_slice(start, end) == answer.text {
            spans.push(AnswerSpan::from_context(ctx, start, end));
            continue;
        }
        match text::locate_at(&answer.text, &ctx.section_text, start) {
            Some(loc) => spans.push(AnswerSpan::from_context(ctx, loc.start, loc.end)),
            None => {
                return Err(mismatch(format!(
                    "answer {:?} not found at offset {start}",
                    answer.text
                )))
            }
        }
    }
    let raw = qa.raw_answer.clone().unwrap_or_else(|| {
        spans
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(super::SPAN_SEPARATOR)
    });
    Ok(Answer::found(spans, raw, attempts))
}

fn convert_record(
    record: ConversationRecord,
    unit: OffsetUnit,
    locator: &str,
) -> Result<Conversation, CorpusError> {
    let c = record.context;
    let ctx = TopicContext::new(
        c.id,
        c.title,
        c.background,
        c.section_header,
        strip_quac_marker(&c.section_text),
    )?;
    let mut turns = Vec::with_capacity(record.qas.len());
    for (index, qa) in record.qas.into_iter().enumerate() {
        let qa_locator = format!("{locator}.qas[{index}]");
        let answer = convert_answer(&qa, &ctx, unit, &qa_locator)?;
        turns.push(Turn {
            id: qa.id,
            index,
            question: qa.question,
            answer,
            student_prompt_used: qa.trace.student_prompt,
            teacher_reprompts: qa.trace.teacher_reprompts,
            student_reprompts: qa.trace.student_reprompts,
        });
    }
    Ok(Conversation {
        context: ctx,
        turns,
        config_snapshot: record.config,
        seed: record.seed.unwrap_or(0),
        backend_id: record.backend_id.unwrap_or_default(),
    })
}

fn quac_records(file: QuacFile) -> Vec<(String, ConversationRecord)> {
    let mut out = Vec::new();
    for (t, topic) in file.data.into_iter().enumerate() {
        for (p, para) in topic.paragraphs.into_iter().enumerate() {
            out.push((
                format!("data[{t}].paragraphs[{p}]"),
                ConversationRecord {
                    context: ContextRecord {
                        id: para.id,
                        title: topic.title.clone(),
                        background: topic.background.clone(),
                        section_header: topic.section_title.clone(),
                        section_text: para.context,
                    },
                    qas: para.qas,
                    seed: None,
                    backend_id: None,
                    config: None,
                },
            ));
        }
    }
    out
}

type ParsedRecords = (Option<String>, Vec<(String, ConversationRecord)>);

fn parse_records(raw: &str) -> Result<ParsedRecords, CorpusError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok((None, Vec::new()));
    }
    match serde_json::from_str::<Value>(trimmed) {
        Ok(Value::Object(obj)) if obj.contains_key("data") => {
            let file: QuacFile =
                serde_json::from_value(Value::Object(obj)).map_err(|e| malformed("data", e))?;
            Ok((None, quac_records(file)))
        }
        Ok(Value::Object(obj)) if obj.contains_key("records") => {
            let file: NativeFile =
                serde_json::from_value(Value::Object(obj)).map_err(|e| malformed("records", e))?;
            let records = file
                .records
                .into_iter()
                .enumerate()
                .map(|(i, r)| (format!("records[{i}]"), r))
                .collect();
            Ok((Some(file.name), records))
        }
        Ok(Value::Array(items)) => {
            let mut records = Vec::with_capacity(items.len());
            for (i, item) in items.into_iter().enumerate() {
                let locator = format!("[{i}]");
                let record = serde_json::from_value(item).map_err(|e| malformed(&locator, e))?;
                records.push((locator, record));
            }
            Ok((None, records))
        }
        Ok(value @ Value::Object(_)) => {
            let record = serde_json::from_value(value).map_err(|e| malformed("record", e))?;
            Ok((None, vec![("record".to_string(), record)]))
        }
        Ok(_) => Err(malformed("document", "expected a JSON object or array")),
        Err(_) => {
            let mut records = Vec::new();
            for (n, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let locator = format!("line {}", n + 1);
                let record = serde_json::from_str(line).map_err(|e| malformed(&locator, e))?;
                records.push((locator, record));
            }
            Ok((None, records))
        }
    }
}

fn stem_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a dataset, rejecting the whole file on the first invalid record
/// unless `opts.skip_invalid` is set.
pub fn load_dataset_with_report(
    path: &Path,
    opts: &LoadOptions,
) -> Result<LoadReport, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let (name, records) = parse_records(&raw)?;
    let mut conversations = Vec::with_capacity(records.len());
    let mut rejected = Vec::new();
    for (locator, record) in records {
        match convert_record(record, opts.offset_unit, &locator) {
            Ok(conv) => conversations.push(conv),
            Err(e) if opts.skip_invalid => rejected.push(e),
            Err(e) => return Err(e),
        }
    }
    let dataset = Dataset::new(name.unwrap_or_else(|| stem_name(path)), conversations)?;
    Ok(LoadReport { dataset, rejected })
}

pub fn load_dataset(path: &Path, opts: &LoadOptions) -> Result<Dataset, CorpusError> {
    load_dataset_with_report(path, opts).map(|r| r.dataset)
}

fn context_from_record(r: ContextRecord) -> Result<TopicContext, CorpusError> {
    TopicContext::new(
        r.id,
        r.title,
        r.background,
        r.section_header,
        r.section_text,
    )
}

/// Reads topic contexts to simulate from: a JSON array of contexts, one
/// context per line, or any dataset file (its conversations' contexts).
pub fn load_contexts(path: &Path) -> Result<Vec<TopicContext>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    if let Ok(records) = serde_json::from_str::<Vec<ContextRecord>>(raw.trim()) {
        return records.into_iter().map(context_from_record).collect();
    }
    let lines: Vec<(usize, &str)> = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let as_lines: Result<Vec<ContextRecord>, _> = lines
        .iter()
        .map(|(_, l)| serde_json::from_str::<ContextRecord>(l))
        .collect();
    if let (Ok(records), false) = (as_lines, lines.is_empty()) {
        return records.into_iter().map(context_from_record).collect();
    }
    let ds = load_dataset(path, &LoadOptions::default())?;
    Ok(ds.conversations.into_iter().map(|c| c.context).collect())
}

/// Loads a QuAC-format (or native) file with char offsets, strictly.
pub fn load_quac(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    load_dataset(path.as_ref(), &LoadOptions::default())
}

fn to_record(conv: &Conversation) -> ConversationRecord {
    let ctx = &conv.context;
    let qas = conv
        .turns
        .iter()
        .map(|turn| {
            let a = &turn.answer;
            let answers = match a.kind {
                AnswerKind::Found => a
                    .spans
                    .iter()
                    .map(|s| AnswerRecord {
                        text: s.text.clone(),
                        answer_start: s.start as i64,
                    })
                    .collect(),
                AnswerKind::CannotFind => vec![AnswerRecord {
                    text: a
                        .original_text
                        .clone()
                        .unwrap_or_else(|| CANNOT_FIND.to_string()),
                    answer_start: -1,
                }],
            };
            QaRecord {
                id: turn.id.clone(),
                question: turn.question.clone(),
                answers,
                orig_answer: None,
                answer: Some(a.serialized_text()),
                raw_answer: Some(a.raw_text.clone()),
                attempts: Some(a.attempts),
                trace: TraceFields {
                    student_prompt: turn.student_prompt_used,
                    teacher_reprompts: turn.teacher_reprompts.clone(),
                    student_reprompts: turn.student_reprompts.clone(),
                },
            }
        })
        .collect();
    ConversationRecord {
        context: ContextRecord {
            id: ctx.id.clone(),
            title: ctx.title.clone(),
            background: ctx.background.clone(),
            section_header: ctx.section_header.clone(),
            section_text: ctx.section_text.clone(),
        },
        qas,
        seed: Some(conv.seed),
        backend_id: Some(conv.backend_id.clone()),
        config: conv.config_snapshot.clone(),
    }
}

/// Serializes `ds` to the native format. Output is deterministic.
pub fn dataset_to_string(ds: &Dataset) -> String {
    let file = NativeFile {
        name: ds.name.clone(),
        records: ds.conversations.iter().map(to_record).collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("dataset serializes");
    out.push('\n');
    out
}

pub fn export_dataset(ds: &Dataset, path: &Path) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, dataset_to_string(ds)).map_err(|e| io_error(path, e))
}
