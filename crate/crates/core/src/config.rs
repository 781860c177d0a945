//! Knobs for the teacher, student and simulation loops.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{field} must be at least {min}, got {value}")]
    BelowMinimum {
        field: &'static str,
        min: u64,
        value: u64,
    },
}

fn at_least(field: &'static str, value: u64, min: u64) -> Result<(), ConfigError> {
    if value < min {
        Err(ConfigError::BelowMinimum { field, min, value })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    /// Maximum number of regenerations after the first answer.
    pub patience: u32,
    /// Whitespace-token cap per answer segment.
    pub max_answer_tokens: usize,
    pub shortest_span_reminder: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            patience: 4,
            max_answer_tokens: 40,
            shortest_span_reminder: true,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        at_least("teacher.patience", self.patience.into(), 1)?;
        at_least(
            "teacher.max_answer_tokens",
            self.max_answer_tokens as u64,
            1,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentConfig {
    pub max_question_words: usize,
    /// Maximum number of regenerations after the first question.
    pub max_regen_attempts: u32,
    /// Mixed into the per-conversation seed of the guiding-prompt RNG.
    pub guiding_prompt_seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            max_question_words: 25,
            max_regen_attempts: 4,
            guiding_prompt_seed: 0,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        at_least(
            "student.max_question_words",
            self.max_question_words as u64,
            1,
        )?;
        at_least(
            "student.max_regen_attempts",
            self.max_regen_attempts.into(),
            1,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub max_turns: u32,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub seed: u64,
    /// Stop after this many consecutive unanswered turns; 0 disables.
    pub stop_on_consecutive_cannotfind: u32,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            max_turns: 12,
            teacher: TeacherConfig::default(),
            student: StudentConfig::default(),
            seed: 0,
            stop_on_consecutive_cannotfind: 3,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        at_least("max_turns", self.max_turns.into(), 1)?;
        self.teacher.validate()?;
        self.student.validate()
    }
}
