//! C ABI over the dataset, validation and metrics API.
//!
//! Every fallible function returns a [`ConvsimStatus`]; on failure the
//! message is available from [`convsim_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use convsim::config::TeacherConfig;
use convsim::corpus::{load_dataset, CorpusError, Dataset, LoadOptions, TopicContext};
use convsim::metrics::{self, MetricsReport};
use convsim::teacher::{self, ValidationFailure};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvsimStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    IoError = 3,
    ParseError = 4,
    InvalidArgument = 5,
    Undefined = 6,
    Panic = 7,
}

/// Opaque loaded dataset.
pub struct ConvsimDataset {
    inner: Dataset,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConvsimStats {
    pub n_conversations: u64,
    pub n_questions: u64,
    pub n_answered: u64,
    pub avg_answer_length: f64,
    pub avg_answers_per_question: f64,
}

/// Mean and population standard deviation over `n` conversations;
/// `n_excluded` counts conversations where the value is undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConvsimSummary {
    pub mean: f64,
    pub std: f64,
    pub n: u64,
    pub n_excluded: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConvsimTokenScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub em: bool,
}

/// Borrowed UTF-8 strings describing one topic context.
#[repr(C)]
pub struct ConvsimContext {
    pub title: *const c_char,
    pub background: *const c_char,
    pub section_header: *const c_char,
    pub section_text: *const c_char,
}

/// Why an answer failed validation; `None` when it passed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvsimFailure {
    None = 0,
    NotASpan = 1,
    CopiedFromBackground = 2,
    TooLong = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvsimVerdict {
    pub valid: bool,
    pub cannot_find: bool,
    pub failure: ConvsimFailure,
    pub n_spans: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Fail(ConvsimStatus, String);

impl From<CorpusError> for Fail {
    fn from(e: CorpusError) -> Self {
        let status = match e {
            CorpusError::Io { .. } => ConvsimStatus::IoError,
            _ => ConvsimStatus::ParseError,
        };
        Fail(status, e.to_string())
    }
}

fn run(f: impl FnOnce() -> Result<(), Fail>) -> ConvsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ConvsimStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ConvsimStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(ConvsimStatus::NullArgument, format!("{name} is null"))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ConvsimStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn dataset<'a>(p: *const ConvsimDataset) -> Result<&'a Dataset, Fail> {
    p.as_ref().map(|d| &d.inner).ok_or_else(|| null("dataset"))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn convsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn convsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset file (native, QuAC or JSONL) with char offsets.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_dataset_load(
    path: *const c_char,
    out_handle: *mut *mut ConvsimDataset,
) -> ConvsimStatus {
    run(|| {
        let slot = out(out_handle, "out")?;
        *slot = ptr::null_mut();
        let path = text(path, "path")?;
        let inner = load_dataset(Path::new(path), &LoadOptions::default())?;
        *slot = Box::into_raw(Box::new(ConvsimDataset { inner }));
        Ok(())
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `handle` must come from [`convsim_dataset_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn convsim_dataset_free(handle: *mut ConvsimDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be a live dataset; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_dataset_stats(
    handle: *const ConvsimDataset,
    out_stats: *mut ConvsimStats,
) -> ConvsimStatus {
    run(|| {
        let s = metrics::dataset_stats(dataset(handle)?);
        *out(out_stats, "out")? = ConvsimStats {
            n_conversations: s.n_conversations as u64,
            n_questions: s.n_questions as u64,
            n_answered: s.n_answered as u64,
            avg_answer_length: s.avg_answer_length,
            avg_answers_per_question: s.avg_answers_per_question,
        };
        Ok(())
    })
}

/// Topic coverage summary over all conversations.
///
/// # Safety
/// `handle` must be a live dataset; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_dataset_coverage(
    handle: *const ConvsimDataset,
    out_summary: *mut ConvsimSummary,
) -> ConvsimStatus {
    run(|| {
        let c = metrics::coverage_report(dataset(handle)?);
        *out(out_summary, "out")? = ConvsimSummary {
            mean: c.mean,
            std: c.std,
            n: c.per_conversation.len() as u64,
            n_excluded: 0,
        };
        Ok(())
    })
}

/// Conversation-flow rank correlation summary.
///
/// # Safety
/// `handle` must be a live dataset; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_dataset_flow(
    handle: *const ConvsimDataset,
    out_summary: *mut ConvsimSummary,
) -> ConvsimStatus {
    run(|| {
        let f = metrics::flow_report(dataset(handle)?);
        let taus: Vec<f64> = f.per_conversation.iter().map(|e| e.tau).collect();
        let n = taus.len() as f64;
        let std = if taus.is_empty() {
            0.0
        } else {
            (taus.iter().map(|t| (t - f.mean).powi(2)).sum::<f64>() / n).sqrt()
        };
        *out(out_summary, "out")? = ConvsimSummary {
            mean: f.mean,
            std,
            n: taus.len() as u64,
            n_excluded: f.excluded.len() as u64,
        };
        Ok(())
    })
}

/// Stats, coverage and flow as a JSON document. Release with
/// [`convsim_string_free`].
///
/// # Safety
/// `handle` must be a live dataset; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_dataset_report_json(
    handle: *const ConvsimDataset,
    out_json: *mut *mut c_char,
) -> ConvsimStatus {
    run(|| {
        let slot = out(out_json, "out")?;
        *slot = ptr::null_mut();
        let ds = dataset(handle)?;
        let report = MetricsReport {
            dataset: ds.name.clone(),
            stats: Some(metrics::dataset_stats(ds)),
            coverage: Some(metrics::coverage_report(ds)),
            flow: Some(metrics::flow_report(ds)),
            comparison: None,
        };
        let json = serde_json::to_string(&report)
            .map_err(|e| Fail(ConvsimStatus::Panic, e.to_string()))?;
        *slot = CString::new(json)
            .map_err(|e| Fail(ConvsimStatus::Panic, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn convsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Kendall tau-b between index order and `positions`.
/// Returns `Undefined` for fewer than two positions or when all tie.
///
/// # Safety
/// `positions` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_krcc(
    positions: *const u64,
    n: usize,
    out_tau: *mut f64,
) -> ConvsimStatus {
    run(|| {
        let slot = out(out_tau, "out")?;
        if positions.is_null() && n > 0 {
            return Err(null("positions"));
        }
        let values: Vec<usize> = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(positions, n)
                .iter()
                .map(|&p| p as usize)
                .collect()
        };
        *slot = metrics::krcc_of_positions(&values).ok_or_else(|| {
            Fail(
                ConvsimStatus::Undefined,
                "fewer than two distinct positions".into(),
            )
        })?;
        Ok(())
    })
}

/// Validates a teacher output against a context with a given token cap.
///
/// # Safety
/// All strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_validate_answer(
    raw: *const c_char,
    context: *const ConvsimContext,
    max_answer_tokens: u32,
    out_verdict: *mut ConvsimVerdict,
) -> ConvsimStatus {
    run(|| {
        let slot = out(out_verdict, "out")?;
        let c = context.as_ref().ok_or_else(|| null("context"))?;
        let ctx = TopicContext::new(
            "ffi",
            text(c.title, "title")?,
            text(c.background, "background")?,
            text(c.section_header, "section_header")?,
            text(c.section_text, "section_text")?,
        )
        .map_err(|e| Fail(ConvsimStatus::InvalidArgument, e.to_string()))?;
        let cfg = TeacherConfig {
            max_answer_tokens: max_answer_tokens as usize,
            ..TeacherConfig::default()
        };
        let v = teacher::validate_answer(text(raw, "raw")?, &ctx, &cfg);
        *slot = ConvsimVerdict {
            valid: v.valid,
            cannot_find: v.cannot_find,
            failure: match v.failure {
                None => ConvsimFailure::None,
                Some(ValidationFailure::NotASpan) => ConvsimFailure::NotASpan,
                Some(ValidationFailure::CopiedFromBackground) => {
                    ConvsimFailure::CopiedFromBackground
                }
                Some(ValidationFailure::TooLong) => ConvsimFailure::TooLong,
            },
            n_spans: v.matched_spans.len() as u64,
        };
        Ok(())
    })
}

fn as_answer(t: &str) -> Option<&str> {
    (!convsim::corpus::is_cannot_find_marker(t)).then_some(t)
}

/// Token-level score of a predicted against a gold answer text. Unanswerable
/// markers on either side are scored as unanswerable.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_token_score(
    predicted: *const c_char,
    gold: *const c_char,
    out_score: *mut ConvsimTokenScore,
) -> ConvsimStatus {
    run(|| {
        let slot = out(out_score, "out")?;
        let p = text(predicted, "predicted")?;
        let g = text(gold, "gold")?;
        let s = metrics::token_score_text(as_answer(p), as_answer(g));
        *slot = ConvsimTokenScore {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            em: s.em,
        };
        Ok(())
    })
}

/// Fleiss' kappa over a row-major `n_items` × `n_categories` count matrix.
///
/// # Safety
/// `counts` must point to `n_items * n_categories` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn convsim_fleiss_kappa(
    counts: *const u32,
    n_items: usize,
    n_categories: usize,
    out_kappa: *mut f64,
) -> ConvsimStatus {
    run(|| {
        let slot = out(out_kappa, "out")?;
        if counts.is_null() {
            return Err(null("counts"));
        }
        let len = n_items
            .checked_mul(n_categories)
            .ok_or_else(|| Fail(ConvsimStatus::InvalidArgument, "matrix too large".into()))?;
        if len == 0 {
            return Err(Fail(ConvsimStatus::InvalidArgument, "empty matrix".into()));
        }
        let flat = std::slice::from_raw_parts(counts, len);
        let rows: Vec<&[u32]> = flat.chunks(n_categories).collect();
        *slot = convsim::annotation::fleiss_kappa(&rows)
            .map_err(|e| Fail(ConvsimStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}
