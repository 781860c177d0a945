use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::{Answer, Conversation, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapClass {
    Same,
    Overlap,
    Different,
}

/// Same when the serialized texts agree after trimming (two unanswerable
/// answers included), Overlap when one is a proper substring of the other,
/// Different otherwise. A found answer never overlaps an unanswerable one.
pub fn classify_answer_pair(a: &Answer, b: &Answer) -> OverlapClass {
    if a.kind != b.kind {
        return OverlapClass::Different;
    }
    let ta = a.serialized_text();
    let tb = b.serialized_text();
    let (ta, tb) = (ta.trim(), tb.trim());
    if ta == tb {
        OverlapClass::Same
    } else if ta.contains(tb) || tb.contains(ta) {
        OverlapClass::Overlap
    } else {
        OverlapClass::Different
    }
}

/// Breakdown of a pair by which side is unanswerable and how many spans the
/// second answer has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCondition {
    BothNone,
    /// First answer unanswerable, second found.
    FirstNone,
    /// Second answer unanswerable, first found.
    SecondNone,
    SecondSingle,
    SecondMulti,
}

impl PairCondition {
    pub fn of(a: &Answer, b: &Answer) -> Self {
        match (a.is_found(), b.is_found()) {
            (false, false) => PairCondition::BothNone,
            (false, true) => PairCondition::FirstNone,
            (true, false) => PairCondition::SecondNone,
            (true, true) if b.spans.len() > 1 => PairCondition::SecondMulti,
            (true, true) => PairCondition::SecondSingle,
        }
    }

    fn label(self) -> &'static str {
        match self {
            PairCondition::BothNone => "both none",
            PairCondition::FirstNone => "a none, b found",
            PairCondition::SecondNone => "b none, a found",
            PairCondition::SecondSingle => "b single span",
            PairCondition::SecondMulti => "b multiple spans",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairedTurn<'a> {
    pub conversation: &'a Conversation,
    pub index: usize,
    pub question_id: &'a str,
    pub question: &'a str,
    pub first: &'a Answer,
    pub second: &'a Answer,
}

/// Pairs the turns of conversations present in both datasets, in the order
/// of `a`. Paired conversations must ask the same questions in the same
/// order.
pub fn pair_datasets<'a>(
    a: &'a Dataset,
    b: &'a Dataset,
) -> Result<Vec<Vec<PairedTurn<'a>>>, MetricsError> {
    let mut out = Vec::new();
    for conv_a in &a.conversations {
        let Some(conv_b) = b.conversation(conv_a.id()) else {
            continue;
        };
        let mismatch = |message: String| MetricsError::PairMismatch {
            conversation_id: conv_a.id().to_string(),
            message,
        };
        if conv_a.turns.len() != conv_b.turns.len() {
            return Err(mismatch(format!(
                "{} questions vs {}",
                conv_a.turns.len(),
                conv_b.turns.len()
            )));
        }
        let mut turns = Vec::with_capacity(conv_a.turns.len());
        for (i, (ta, tb)) in conv_a.turns.iter().zip(&conv_b.turns).enumerate() {
            if ta.id != tb.id || ta.question.trim() != tb.question.trim() {
                return Err(mismatch(format!(
                    "question {i} differs ({} vs {})",
                    ta.id, tb.id
                )));
            }
            turns.push(PairedTurn {
                conversation: conv_a,
                index: i,
                question_id: &ta.id,
                question: &ta.question,
                first: &ta.answer,
                second: &tb.answer,
            });
        }
        out.push(turns);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub n_conversations: usize,
    pub n_questions: usize,
    pub counts: BTreeMap<OverlapClass, usize>,
    pub breakdown: BTreeMap<OverlapClass, BTreeMap<PairCondition, usize>>,
}

impl PairStats {
    pub fn count(&self, class: OverlapClass) -> usize {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    pub fn percent(&self, class: OverlapClass) -> f64 {
        if self.n_questions == 0 {
            0.0
        } else {
            100.0 * self.count(class) as f64 / self.n_questions as f64
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<10} {:<20} {:>6} {:>14}\n",
            "Ans. span", "Condition", "Count", "Total"
        );
        for class in [
            OverlapClass::Overlap,
            OverlapClass::Different,
            OverlapClass::Same,
        ] {
            let rows = self.breakdown.get(&class).cloned().unwrap_or_default();
            let total = format!("{} ({:.1}%)", self.count(class), self.percent(class));
            if rows.is_empty() {
                out += &format!(
                    "{:<10} {:<20} {:>6} {:>14}\n",
                    format!("{class:?}"),
                    "-",
                    0,
                    total
                );
            }
            for (i, (cond, n)) in rows.iter().enumerate() {
                let name = if i == 0 {
                    format!("{class:?}")
                } else {
                    String::new()
                };
                let total = if i == 0 { total.clone() } else { String::new() };
                out += &format!("{:<10} {:<20} {:>6} {:>14}\n", name, cond.label(), n, total);
            }
        }
        out += &format!(
            "questions: {}  conversations: {}\n",
            self.n_questions, self.n_conversations
        );
        out
    }
}

/// Same / Overlap / Different counts over every paired question.
pub fn pair_stats(a: &Dataset, b: &Dataset) -> Result<PairStats, MetricsError> {
    let paired = pair_datasets(a, b)?;
    let mut stats = PairStats {
        n_conversations: paired.len(),
        ..Default::default()
    };
    for turn in paired.iter().flatten() {
        let class = classify_answer_pair(turn.first, turn.second);
        let cond = PairCondition::of(turn.first, turn.second);
        stats.n_questions += 1;
        *stats.counts.entry(class).or_default() += 1;
        *stats
            .breakdown
            .entry(class)
            .or_default()
            .entry(cond)
            .or_default() += 1;
    }
    Ok(stats)
}
