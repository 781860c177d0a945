use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::{is_cannot_find_marker, Answer, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub em: bool,
}

impl TokenScore {
    pub const PERFECT: TokenScore = TokenScore {
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
        em: true,
    };
    pub const ZERO: TokenScore = TokenScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        em: false,
    };
}

/// Extractive-QA normalization: lowercase, ASCII punctuation removed, the
/// articles `a`, `an`, `the` dropped, whitespace tokenized.
pub fn normalize_answer_tokens(text: &str) -> Vec<String> {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

fn overlap_score(pred: &[String], gold: &[String]) -> TokenScore {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() {
            TokenScore::PERFECT
        } else {
            TokenScore::ZERO
        };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    let em = pred == gold;
    if common == 0 {
        return TokenScore {
            em,
            ..TokenScore::ZERO
        };
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    TokenScore {
        precision,
        recall,
        f1: 2.0 * precision * recall / (precision + recall),
        em,
    }
}

/// Scores texts where `None` stands for an unanswerable answer.
pub fn token_score_text(predicted: Option<&str>, gold: Option<&str>) -> TokenScore {
    match (predicted, gold) {
        (None, None) => TokenScore::PERFECT,
        (None, Some(_)) | (Some(_), None) => TokenScore::ZERO,
        (Some(p), Some(g)) => {
            overlap_score(&normalize_answer_tokens(p), &normalize_answer_tokens(g))
        }
    }
}

/// Token-level precision, recall, F1 and exact match. Multi-span answers are
/// scored on their `"; "`-joined form.
pub fn token_score(predicted: &Answer, gold: &Answer) -> TokenScore {
    let text = |a: &Answer| a.is_found().then(|| a.serialized_text());
    token_score_text(text(predicted).as_deref(), text(gold).as_deref())
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    /// Either the answer text or an unanswerable marker.
    pub answer_text: String,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, MetricsError> {
    let raw = fs::read_to_string(path).map_err(|e| MetricsError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| MetricsError::MalformedPredictions {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub n_questions: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub em: f64,
    /// Question ids with no prediction, in dataset order.
    pub missing: Vec<String>,
    pub per_question: BTreeMap<String, TokenScore>,
}

impl ScoreTable {
    pub fn render(&self) -> String {
        format!(
            "{:<10}{:>8}{:>8}{:>8}{:>8}\n{:<10}{:>8.2}{:>8.2}{:>8.2}{:>8.2}\nquestions: {}  missing predictions: {}\n",
            "", "Pre.", "Rec.", "F1", "EM",
            "score",
            self.precision * 100.0,
            self.recall * 100.0,
            self.f1 * 100.0,
            self.em * 100.0,
            self.n_questions,
            self.missing.len()
        )
    }
}

/// Macro-averages token scores over every question of `ds`. Questions without
/// a prediction score zero and are listed in `missing`.
pub fn score_predictions(
    ds: &Dataset,
    predictions: &[Prediction],
) -> Result<ScoreTable, MetricsError> {
    let gold: HashMap<&str, &Answer> = ds
        .turns()
        .map(|(_, t)| (t.id.as_str(), &t.answer))
        .collect();
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for p in predictions {
        if !gold.contains_key(p.question_id.as_str()) {
            return Err(MetricsError::UnknownQuestionId(p.question_id.clone()));
        }
        if by_id.insert(&p.question_id, &p.answer_text).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.question_id.clone()));
        }
    }

    let mut per_question = BTreeMap::new();
    let mut missing = Vec::new();
    let (mut p, mut r, mut f, mut em) = (0.0, 0.0, 0.0, 0.0);
    for (_, turn) in ds.turns() {
        let score = match by_id.get(turn.id.as_str()) {
            None => {
                missing.push(turn.id.clone());
                TokenScore::ZERO
            }
            Some(text) => {
                let pred = (!is_cannot_find_marker(text)).then_some(*text);
                let gold_text = turn
                    .answer
                    .is_found()
                    .then(|| turn.answer.serialized_text());
                token_score_text(pred, gold_text.as_deref())
            }
        };
        p += score.precision;
        r += score.recall;
        f += score.f1;
        em += f64::from(u8::from(score.em));
        per_question.insert(turn.id.clone(), score);
    }
    let n = ds.n_questions();
    let avg = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(ScoreTable {
        n_questions: n,
        precision: avg(p),
        recall: avg(r),
        f1: avg(f),
        em: avg(em),
        missing,
        per_question,
    })
}
