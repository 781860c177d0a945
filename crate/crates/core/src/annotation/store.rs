use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AnnotationError, Aspect, Judgment};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnboardingRecord {
    pub annotator: String,
    pub correct: usize,
    pub total: usize,
    pub passed: bool,
}

/// One line of the append-only log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Judgment(Judgment),
    Onboarding(OnboardingRecord),
    /// Flags an annotator's judgments on a task for exclusion after review.
    Exclusion {
        annotator: String,
        task_id: String,
    },
}

type Key = (String, String, Option<usize>, Aspect);

struct Inner {
    records: Vec<LogRecord>,
    keys: HashSet<Key>,
    file: Option<File>,
}

/// Append-only judgment log, optionally backed by a JSONL file. Appends are
/// serialized, so each (annotator, task, item, aspect) is stored at most once.
pub struct JudgmentStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

fn store_err(e: impl ToString) -> AnnotationError {
    AnnotationError::Store(e.to_string())
}

impl JudgmentStore {
    pub fn in_memory() -> Self {
        JudgmentStore {
            path: None,
            inner: Mutex::new(Inner {
                records: Vec::new(),
                keys: HashSet::new(),
                file: None,
            }),
        }
    }

    /// Opens (or creates) the log at `path`, replaying existing records.
    pub fn open(path: &Path) -> Result<Self, AnnotationError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(store_err)?;
        }
        let mut records = Vec::new();
        if path.exists() {
            let raw = fs::read_to_string(path).map_err(store_err)?;
            for (i, line) in raw
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                let rec: LogRecord = serde_json::from_str(line)
                    .map_err(|e| store_err(format!("{}:{}: {e}", path.display(), i + 1)))?;
                records.push(rec);
            }
        }
        let keys = records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Judgment(j) => Some(j.key()),
                _ => None,
            })
            .collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(store_err)?;
        Ok(JudgmentStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                records,
                keys,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn write(inner: &mut Inner, records: &[LogRecord]) -> Result<(), AnnotationError> {
        if let Some(file) = inner.file.as_mut() {
            let mut buf = String::new();
            for r in records {
                buf += &serde_json::to_string(r).map_err(store_err)?;
                buf.push('\n');
            }
            file.write_all(buf.as_bytes()).map_err(store_err)?;
            file.sync_data().map_err(store_err)?;
        }
        inner.records.extend_from_slice(records);
        Ok(())
    }

    /// Appends all judgments or none: any duplicate, against the log or within
    /// the batch, rejects the whole batch.
    pub fn append_judgments(&self, judgments: &[Judgment]) -> Result<(), AnnotationError> {
        let mut inner = self.lock();
        let mut batch = HashSet::new();
        for j in judgments {
            let key = j.key();
            if inner.keys.contains(&key) || !batch.insert(key) {
                return Err(AnnotationError::Duplicate {
                    annotator: j.annotator.clone(),
                    task_id: j.task_id.clone(),
                    item: j.item,
                    aspect: j.aspect,
                });
            }
        }
        let records: Vec<LogRecord> = judgments.iter().cloned().map(LogRecord::Judgment).collect();
        Self::write(&mut inner, &records)?;
        inner.keys.extend(batch);
        Ok(())
    }

    pub fn record_onboarding(&self, record: OnboardingRecord) -> Result<(), AnnotationError> {
        let mut inner = self.lock();
        Self::write(&mut inner, &[LogRecord::Onboarding(record)])
    }

    pub fn exclude(&self, annotator: &str, task_id: &str) -> Result<(), AnnotationError> {
        let mut inner = self.lock();
        Self::write(
            &mut inner,
            &[LogRecord::Exclusion {
                annotator: annotator.into(),
                task_id: task_id.into(),
            }],
        )
    }

    pub fn is_gated(&self, annotator: &str) -> bool {
        self.lock()
            .records
            .iter()
            .any(|r| matches!(r, LogRecord::Onboarding(o) if o.annotator == annotator && o.passed))
    }

    pub fn onboarding_attempts(&self, annotator: &str) -> usize {
        self.lock()
            .records
            .iter()
            .filter(|r| matches!(r, LogRecord::Onboarding(o) if o.annotator == annotator))
            .count()
    }

    /// Tasks for which `annotator` has submitted a preference.
    pub fn completed_tasks(&self, annotator: &str) -> BTreeSet<String> {
        self.lock()
            .records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Judgment(j)
                    if j.annotator == annotator && j.aspect == Aspect::Preference =>
                {
                    Some(j.task_id.clone())
                }
                _ => None,
            })
            .collect()
    }

    /// Judgments that count toward aggregation: excluded (annotator, task)
    /// pairs are left out.
    pub fn active_judgments(&self) -> Vec<Judgment> {
        let inner = self.lock();
        let excluded: HashSet<(&str, &str)> = inner
            .records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Exclusion { annotator, task_id } => {
                    Some((annotator.as_str(), task_id.as_str()))
                }
                _ => None,
            })
            .collect();
        inner
            .records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Judgment(j)
                    if !excluded.contains(&(j.annotator.as_str(), j.task_id.as_str())) =>
                {
                    Some(j.clone())
                }
                _ => None,
            })
            .collect()
    }

    /// Every record as JSON lines, in append order.
    pub fn export_jsonl(&self) -> String {
        self.lock()
            .records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}
