//! Runs student/teacher conversations over topic contexts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{ChatBackend, ChatParams, ChatSession};
use crate::config::{ConfigError, SimulationConfig};
use crate::corpus::{
    export_dataset, write_traces, AnswerKind, Conversation, CorpusError, Dataset, TopicContext,
    Turn,
};
use crate::student::{self, StudentError};
use crate::teacher;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error("i/o failure on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxTurns,
    StudentExhausted,
    ConsecutiveCannotFind,
    BackendFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub conversation: Conversation,
    pub termination: Termination,
    pub backend_calls: u64,
    /// Backend error message when `termination` is `BackendFailure`.
    pub error: Option<String>,
}

pub fn student_session_id(ctx: &TopicContext) -> String {
    format!("{}/student", ctx.id)
}

pub fn teacher_session_id(ctx: &TopicContext) -> String {
    format!("{}/teacher", ctx.id)
}

/// Version-pinned 64-bit hash of a context id: the first eight bytes of its
/// SHA-256 digest, big-endian.
pub fn stable_hash(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

pub fn context_seed(batch_seed: u64, context_id: &str) -> u64 {
    batch_seed ^ stable_hash(context_id)
}

/// Simulates one conversation, seeded by `cfg.seed`.
pub fn simulate_conversation(
    ctx: &TopicContext,
    backend: &dyn ChatBackend,
    cfg: &SimulationConfig,
) -> Result<SimulationReport, SimError> {
    cfg.validate()?;
    ctx.validate()?;

    let params = ChatParams::default();
    let mut student_session = ChatSession::new(
        student_session_id(ctx),
        backend.id(),
        student::build_student_instruction(ctx),
        params.clone(),
    );
    let mut teacher_session = ChatSession::new(
        teacher_session_id(ctx),
        backend.id(),
        teacher::build_teacher_instruction(ctx),
        params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ cfg.student.guiding_prompt_seed);

    let mut conversation = Conversation::new(ctx.clone());
    conversation.seed = cfg.seed;
    conversation.backend_id = backend.id().to_string();
    conversation.config_snapshot = Some(cfg.clone());

    let mut termination = Termination::MaxTurns;
    let mut error = None;
    let mut consecutive_unanswered = 0u32;

    for index in 0..cfg.max_turns as usize {
        let stimulus = match conversation.turns.last() {
            None => student::StudentStimulus {
                text: String::new(),
                guiding_prompt: None,
            },
            Some(prev) => student::select_student_prompt(&prev.answer, &mut rng),
        };
        let asked = match student::ask_with_validation(
            backend,
            &mut student_session,
            &stimulus.text,
            &cfg.student,
        ) {
            Ok(asked) => asked,
            Err(StudentError::QuestionValidationExhausted { .. }) => {
                termination = Termination::StudentExhausted;
                break;
            }
            Err(StudentError::Backend(e)) => {
                termination = Termination::BackendFailure;
                error = Some(e.to_string());
                break;
            }
        };
        let outcome = match teacher::answer_with_validation(
            backend,
            &mut teacher_session,
            &asked.question,
            ctx,
            &cfg.teacher,
        ) {
            Ok(outcome) => outcome,
            Err(e) => {
                termination = Termination::BackendFailure;
                error = Some(e.to_string());
                break;
            }
        };

        let unanswered = outcome.answer.kind == AnswerKind::CannotFind;
        let mut turn = Turn::new(
            format!("{}_q#{index}", ctx.id),
            index,
            asked.question,
            outcome.answer,
        );
        turn.student_prompt_used = stimulus.guiding_prompt;
        turn.teacher_reprompts = outcome.reprompts;
        turn.student_reprompts = asked.reprompts;
        conversation.turns.push(turn);

        consecutive_unanswered = if unanswered {
            consecutive_unanswered + 1
        } else {
            0
        };
        if cfg.stop_on_consecutive_cannotfind > 0
            && consecutive_unanswered >= cfg.stop_on_consecutive_cannotfind
        {
            termination = Termination::ConsecutiveCannotFind;
            break;
        }
    }

    let failed_call = u64::from(termination == Termination::BackendFailure);
    let backend_calls =
        (student_session.replies() + teacher_session.replies()) as u64 + failed_call;
    Ok(SimulationReport {
        conversation,
        termination,
        backend_calls,
        error,
    })
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Conversations of every context that did not end in a backend failure,
    /// in input order.
    pub dataset: Dataset,
    /// One report per input context, in input order.
    pub reports: Vec<SimulationReport>,
    /// Context ids taken from an earlier run instead of being simulated.
    pub reused: Vec<String>,
}

fn run_one(
    ctx: &TopicContext,
    backend: &dyn ChatBackend,
    cfg: &SimulationConfig,
) -> Result<SimulationReport, SimError> {
    let mut local = cfg.clone();
    local.seed = context_seed(cfg.seed, &ctx.id);
    simulate_conversation(ctx, backend, &local)
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool, SimError> {
    if parallelism == 0 {
        return Err(SimError::Parallelism);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|_| SimError::Parallelism)
}

fn assemble(name: &str, reports: &[SimulationReport]) -> Result<Dataset, SimError> {
    let conversations = reports
        .iter()
        .filter(|r| r.termination != Termination::BackendFailure)
        .map(|r| r.conversation.clone())
        .collect();
    Ok(Dataset::new(name, conversations)?)
}

/// Simulates every context independently, each with its own seed derived
/// from `cfg.seed` and the context id. Output does not depend on
/// `parallelism`.
pub fn run_batch(
    contexts: &[TopicContext],
    backend: &dyn ChatBackend,
    cfg: &SimulationConfig,
    parallelism: usize,
) -> Result<BatchOutcome, SimError> {
    cfg.validate()?;
    let reports = pool(parallelism)?.install(|| {
        contexts
            .par_iter()
            .map(|ctx| run_one(ctx, backend, cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(BatchOutcome {
        dataset: assemble("simulated", &reports)?,
        reports,
        reused: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub context_id: String,
    pub seed: u64,
    pub termination: Termination,
    pub turns: usize,
    pub backend_calls: u64,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub batch_seed: u64,
    pub config: SimulationConfig,
    pub conversations: Vec<ManifestEntry>,
}

pub const DATASET_FILE: &str = "dataset.json";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONVERSATIONS_DIR: &str = "conversations";

/// File name for a context's persisted report. Ids with characters outside
/// `[A-Za-z0-9_.#-]` get a hash suffix so distinct ids never collide.
pub fn conversation_file_name(context_id: &str) -> String {
    let clean: String = context_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '#') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if clean == context_id && !clean.starts_with('.') {
        format!("{clean}.json")
    } else {
        format!("{clean}-{:016x}.json", stable_hash(context_id))
    }
}

fn io_err(path: &Path, e: impl ToString) -> SimError {
    SimError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SimError> {
    let mut body = serde_json::to_string_pretty(value).expect("report serializes");
    body.push('\n');
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn read_report(path: &Path) -> Option<SimulationReport> {
    let raw = fs::read_to_string(path).ok()?;
    serde_json::from_str(&raw).ok()
}

/// [`run_batch`] with every report persisted under `out_dir`, plus the
/// assembled dataset, trace sidecar and manifest. Contexts whose earlier
/// report exists and did not fail are reused unless `force` is set.
pub fn run_batch_persisted(
    contexts: &[TopicContext],
    backend: &dyn ChatBackend,
    cfg: &SimulationConfig,
    parallelism: usize,
    out_dir: &Path,
    force: bool,
) -> Result<BatchOutcome, SimError> {
    cfg.validate()?;
    let conv_dir = out_dir.join(CONVERSATIONS_DIR);
    fs::create_dir_all(&conv_dir).map_err(|e| io_err(&conv_dir, e))?;

    let mut existing: BTreeMap<usize, SimulationReport> = BTreeMap::new();
    if !force {
        for (i, ctx) in contexts.iter().enumerate() {
            let path = conv_dir.join(conversation_file_name(&ctx.id));
            if let Some(report) = read_report(&path) {
                if report.termination != Termination::BackendFailure
                    && report.conversation.context == *ctx
                {
                    existing.insert(i, report);
                }
            }
        }
    }

    let fresh: Vec<(usize, SimulationReport)> = pool(parallelism)?.install(|| {
        contexts
            .par_iter()
            .enumerate()
            .filter(|(i, _)| !existing.contains_key(i))
            .map(|(i, ctx)| {
                let report = run_one(ctx, backend, cfg)?;
                write_json(&conv_dir.join(conversation_file_name(&ctx.id)), &report)?;
                Ok((i, report))
            })
            .collect::<Result<Vec<_>, SimError>>()
    })?;

    let reused = existing
        .values()
        .map(|r| r.conversation.context.id.clone())
        .collect();
    let mut all = existing;
    all.extend(fresh);
    let reports: Vec<SimulationReport> = all.into_values().collect();

    let dataset = assemble("simulated", &reports)?;
    export_dataset(&dataset, &out_dir.join(DATASET_FILE))?;
    write_traces(&dataset, &out_dir.join(TRACES_FILE))?;
    let manifest = BatchManifest {
        batch_seed: cfg.seed,
        config: cfg.clone(),
        conversations: reports
            .iter()
            .map(|r| ManifestEntry {
                context_id: r.conversation.context.id.clone(),
                seed: r.conversation.seed,
                termination: r.termination,
                turns: r.conversation.turns.len(),
                backend_calls: r.backend_calls,
                file: format!(
                    "{CONVERSATIONS_DIR}/{}",
                    conversation_file_name(&r.conversation.context.id)
                ),
                error: r.error.clone(),
            })
            .collect(),
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;

    Ok(BatchOutcome {
        dataset,
        reports,
        reused,
    })
}
