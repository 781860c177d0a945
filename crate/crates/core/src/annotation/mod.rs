//! Pairwise human evaluation: blinded comparison tasks, onboarding gate,
//! majority-vote aggregation and agreement.

mod kappa;
pub mod service;
mod store;

pub use kappa::{fleiss_kappa, KappaError};
pub use store::{JudgmentStore, LogRecord, OnboardingRecord};

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Answer, TopicContext};
use crate::metrics::{self, CharInterval, MetricsError};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error(transparent)]
    PairMismatch(#[from] MetricsError),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("{0}")]
    InvalidJudgment(String),
    #[error("aspect {aspect} cannot be judged on item {item} of {task_id}")]
    NotJudgeable {
        task_id: String,
        item: usize,
        aspect: Aspect,
    },
    #[error("{annotator} already judged {aspect} on {task_id} item {item:?}")]
    Duplicate {
        annotator: String,
        task_id: String,
        item: Option<usize>,
        aspect: Aspect,
    },
    #[error("annotator {0} has not passed onboarding")]
    NotGated(String),
    #[error("{task_id} item {item:?} {aspect}: {found} annotators, at least {required} required")]
    InsufficientAnnotators {
        task_id: String,
        item: Option<usize>,
        aspect: Aspect,
        found: usize,
        required: usize,
    },
    #[error(transparent)]
    Kappa(#[from] KappaError),
    #[error("judgment store failure: {0}")]
    Store(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Correctness,
    Naturalness,
    Completeness,
    Preference,
}

impl std::fmt::Display for Aspect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aspect::Correctness => "correctness",
            Aspect::Naturalness => "naturalness",
            Aspect::Completeness => "completeness",
            Aspect::Preference => "preference",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    Neither,
    Both,
}

impl Choice {
    pub const ALL: [Choice; 4] = [Choice::A, Choice::B, Choice::Neither, Choice::Both];

    fn category(self) -> usize {
        self as usize
    }
}

/// Which dataset sits behind label A. Never shown to annotators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub a_is_system1: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    System1,
    System2,
}

impl Assignment {
    pub fn system_of(self, choice: Choice) -> Option<System> {
        match (choice, self.a_is_system1) {
            (Choice::A, true) | (Choice::B, false) => Some(System::System1),
            (Choice::A, false) | (Choice::B, true) => Some(System::System2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub question_id: String,
    pub question: String,
    pub answer_a: Answer,
    pub answer_b: Answer,
    pub judgeable_aspects: BTreeSet<Aspect>,
    pub highlight_a: Vec<CharInterval>,
    pub highlight_b: Vec<CharInterval>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonTask {
    /// The shared conversation id.
    pub id: String,
    pub context: TopicContext,
    pub items: Vec<TaskItem>,
    pub assignment: Assignment,
}

/// Empty when the answers are identical, correctness only when exactly one
/// is unanswerable, otherwise the three item-level aspects.
pub fn judgeable_aspects(a: &Answer, b: &Answer) -> BTreeSet<Aspect> {
    if a.kind == b.kind && a.serialized_text() == b.serialized_text() {
        BTreeSet::new()
    } else if a.kind != b.kind {
        BTreeSet::from([Aspect::Correctness])
    } else {
        BTreeSet::from([
            Aspect::Correctness,
            Aspect::Naturalness,
            Aspect::Completeness,
        ])
    }
}

fn highlights(answer: &Answer, ctx: &TopicContext) -> Vec<CharInterval> {
    metrics::locate_spans(answer, ctx).unwrap_or_else(|e| {
        log::warn!("no highlight: {e}");
        Vec::new()
    })
}

/// One task per conversation shared by both datasets, with A/B positions
/// drawn from `rng`.
pub fn build_tasks<R: Rng + ?Sized>(
    ds1: &crate::corpus::Dataset,
    ds2: &crate::corpus::Dataset,
    rng: &mut R,
) -> Result<Vec<ComparisonTask>, AnnotationError> {
    let paired = metrics::pair_datasets(ds1, ds2)?;
    let mut tasks = Vec::with_capacity(paired.len());
    for turns in paired {
        let Some(first) = turns.first() else {
            continue;
        };
        let ctx = &first.conversation.context;
        let assignment = Assignment {
            a_is_system1: rng.random_bool(0.5),
        };
        let items = turns
            .iter()
            .map(|t| {
                let (a, b) = if assignment.a_is_system1 {
                    (t.first, t.second)
                } else {
                    (t.second, t.first)
                };
                TaskItem {
                    question_id: t.question_id.to_string(),
                    question: t.question.to_string(),
                    answer_a: a.clone(),
                    answer_b: b.clone(),
                    judgeable_aspects: judgeable_aspects(a, b),
                    highlight_a: highlights(a, ctx),
                    highlight_b: highlights(b, ctx),
                }
            })
            .collect();
        tasks.push(ComparisonTask {
            id: first.conversation.id().to_string(),
            context: ctx.clone(),
            items,
            assignment,
        });
    }
    Ok(tasks)
}

pub const ONBOARDING_THRESHOLD_NUM: usize = 3;
pub const ONBOARDING_THRESHOLD_DEN: usize = 4;

/// True iff at least 75% of the keyed questions were answered correctly.
pub fn gate_onboarding(
    responses: &BTreeMap<String, String>,
    key: &BTreeMap<String, String>,
) -> bool {
    if key.is_empty() || responses.is_empty() {
        return false;
    }
    let correct = key
        .iter()
        .filter(|(q, a)| responses.get(*q).is_some_and(|r| r.trim() == a.trim()))
        .count();
    correct * ONBOARDING_THRESHOLD_DEN >= key.len() * ONBOARDING_THRESHOLD_NUM
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub annotator: String,
    pub task_id: String,
    /// `None` for the conversation-level preference.
    pub item: Option<usize>,
    pub aspect: Aspect,
    pub choice: Choice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
}

impl Judgment {
    pub fn key(&self) -> (String, String, Option<usize>, Aspect) {
        (
            self.annotator.clone(),
            self.task_id.clone(),
            self.item,
            self.aspect,
        )
    }
}

/// Checks a judgment against its task: preference is conversation-level with
/// a justification, every other aspect must be judgeable on its item.
pub fn validate_judgment(task: &ComparisonTask, j: &Judgment) -> Result<(), AnnotationError> {
    if j.annotator.trim().is_empty() {
        return Err(AnnotationError::InvalidJudgment(
            "annotator id is empty".into(),
        ));
    }
    match (j.aspect, j.item) {
        (Aspect::Preference, None) => {
            if j.justification
                .as_deref()
                .is_none_or(|s| s.trim().is_empty())
            {
                return Err(AnnotationError::InvalidJudgment(
                    "preference needs a justification".into(),
                ));
            }
            Ok(())
        }
        (Aspect::Preference, Some(_)) => Err(AnnotationError::InvalidJudgment(
            "preference is judged per conversation, not per item".into(),
        )),
        (aspect, None) => Err(AnnotationError::InvalidJudgment(format!(
            "{aspect} needs an item index"
        ))),
        (aspect, Some(i)) => {
            let item = task.items.get(i).ok_or_else(|| {
                AnnotationError::InvalidJudgment(format!("item {i} out of range"))
            })?;
            if item.judgeable_aspects.contains(&aspect) {
                Ok(())
            } else {
                Err(AnnotationError::NotJudgeable {
                    task_id: task.id.clone(),
                    item: i,
                    aspect,
                })
            }
        }
    }
}

/// Win/tie percentages for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectOutcome {
    pub system1_wins: f64,
    pub system2_wins: f64,
    pub ties: f64,
    pub n_items: usize,
}

/// Share of individual preference judgments per un-blinded option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceShares {
    pub system1: f64,
    pub system2: f64,
    pub neither: f64,
    pub both: f64,
    pub n_judgments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    /// Majority-vote outcome per aspect.
    pub per_aspect: BTreeMap<Aspect, AspectOutcome>,
    /// Per-annotator preference proportions, alongside the majority-vote
    /// preference row in `per_aspect`.
    pub preference_per_annotator: Option<PreferenceShares>,
    pub kappa: Option<f64>,
    pub n_annotators_per_task: BTreeMap<String, usize>,
}

impl AggregateResult {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<14}{:>10}{:>10}{:>10}{:>8}\n",
            "aspect", "system1", "system2", "tie", "items"
        );
        for (aspect, o) in &self.per_aspect {
            out += &format!(
                "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>8}\n",
                aspect.to_string(),
                o.system1_wins,
                o.system2_wins,
                o.ties,
                o.n_items
            );
        }
        if let Some(p) = &self.preference_per_annotator {
            out += &format!(
                "preference per annotator: system1 {:.2} system2 {:.2} neither {:.2} both {:.2}\n",
                p.system1, p.system2, p.neither, p.both
            );
        }
        match self.kappa {
            Some(k) => out += &format!("Fleiss' kappa {k:.4}\n"),
            None => out += "Fleiss' kappa undefined\n",
        }
        out
    }
}

pub const MIN_ANNOTATORS: usize = 3;

/// Strict-majority aggregation over every judged (item, aspect) unit of the
/// given tasks. Both and Neither never win; anything without a strict
/// majority for one system is a tie.
pub fn aggregate(
    tasks: &[ComparisonTask],
    judgments: &[Judgment],
) -> Result<AggregateResult, AnnotationError> {
    let by_id: BTreeMap<&str, &ComparisonTask> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut units: BTreeMap<(&str, Option<usize>, Aspect), Vec<Choice>> = BTreeMap::new();
    let mut annotators: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for j in judgments {
        if !by_id.contains_key(j.task_id.as_str()) {
            return Err(AnnotationError::UnknownTask(j.task_id.clone()));
        }
        units
            .entry((&j.task_id, j.item, j.aspect))
            .or_default()
            .push(j.choice);
        annotators
            .entry(j.task_id.clone())
            .or_default()
            .insert(&j.annotator);
    }

    let mut tallies: BTreeMap<Aspect, [usize; 3]> = BTreeMap::new();
    let mut matrix = Vec::with_capacity(units.len());
    let mut shares = [0usize; 4];
    let mut n_pref = 0usize;
    for (&(task_id, item, aspect), choices) in &units {
        if choices.len() < MIN_ANNOTATORS {
            return Err(AnnotationError::InsufficientAnnotators {
                task_id: task_id.to_string(),
                item,
                aspect,
                found: choices.len(),
                required: MIN_ANNOTATORS,
            });
        }
        let assignment = by_id[task_id].assignment;
        let votes = |s| {
            choices
                .iter()
                .filter(|c| assignment.system_of(**c) == Some(s))
                .count()
        };
        let (v1, v2) = (votes(System::System1), votes(System::System2));
        let slot = if 2 * v1 > choices.len() {
            0
        } else if 2 * v2 > choices.len() {
            1
        } else {
            2
        };
        tallies.entry(aspect).or_default()[slot] += 1;

        let mut row = [0u32; 4];
        for c in choices {
            row[c.category()] += 1;
        }
        matrix.push(row);

        if aspect == Aspect::Preference {
            for c in choices {
                n_pref += 1;
                shares[match assignment.system_of(*c) {
                    Some(System::System1) => 0,
                    Some(System::System2) => 1,
                    None if *c == Choice::Neither => 2,
                    None => 3,
                }] += 1;
            }
        }
    }

    let pct = |x: usize, n: usize| {
        if n == 0 {
            0.0
        } else {
            100.0 * x as f64 / n as f64
        }
    };
    let per_aspect = tallies
        .into_iter()
        .map(|(aspect, [s1, s2, t])| {
            let n = s1 + s2 + t;
            (
                aspect,
                AspectOutcome {
                    system1_wins: pct(s1, n),
                    system2_wins: pct(s2, n),
                    ties: pct(t, n),
                    n_items: n,
                },
            )
        })
        .collect();
    let preference_per_annotator = (n_pref > 0).then(|| PreferenceShares {
        system1: pct(shares[0], n_pref),
        system2: pct(shares[1], n_pref),
        neither: pct(shares[2], n_pref),
        both: pct(shares[3], n_pref),
        n_judgments: n_pref,
    });
    let kappa = if matrix.is_empty() {
        None
    } else {
        Some(fleiss_kappa(&matrix)?)
    };
    Ok(AggregateResult {
        per_aspect,
        preference_per_annotator,
        kappa,
        n_annotators_per_task: annotators.into_iter().map(|(k, v)| (k, v.len())).collect(),
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{Conversation, Dataset};

    /// Two datasets over one conversation: item 0 differs, item 1 is
    /// identical, item 2 is unanswerable on one side only.
    pub fn dataset_pair() -> (Dataset, Dataset) {
        let ctx = context(
            "conv1",
            "Julia died in 1895 and Leslie Stephen died in 1904.",
        );
        let mut a = Conversation::new(ctx.clone());
        a.turns = vec![
            found_turn(&ctx, 0, 0, 18),
            found_turn(&ctx, 1, 23, 37),
            unanswered_turn(&ctx, 2),
        ];
        let mut b = a.clone();
        b.turns[0] = found_turn(&ctx, 0, 23, 50);
        b.turns[2] = found_turn(&ctx, 2, 0, 5);
        (
            Dataset::new("quac", vec![a]).unwrap(),
            Dataset::new("sim", vec![b]).unwrap(),
        )
    }

    pub fn judgment(
        annotator: &str,
        task: &str,
        item: Option<usize>,
        aspect: Aspect,
        choice: Choice,
    ) -> Judgment {
        Judgment {
            annotator: annotator.into(),
            task_id: task.into(),
            item,
            aspect,
            choice,
            justification: (aspect == Aspect::Preference).then(|| "clearer".to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tasks(seed: u64) -> Vec<ComparisonTask> {
        let (a, b) = dataset_pair();
        build_tasks(&a, &b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn task_items_follow_rules() {
        let t = &tasks(1)[0];
        assert_eq!(t.items.len(), 3);
        assert_eq!(
            t.items[0].judgeable_aspects,
            BTreeSet::from([
                Aspect::Correctness,
                Aspect::Naturalness,
                Aspect::Completeness
            ])
        );
        assert!(t.items[1].judgeable_aspects.is_empty());
        assert_eq!(
            t.items[2].judgeable_aspects,
            BTreeSet::from([Aspect::Correctness])
        );
        let first = if t.assignment.a_is_system1 {
            &t.items[0].highlight_a
        } else {
            &t.items[0].highlight_b
        };
        assert_eq!(first, &[CharInterval { start: 0, end: 18 }]);
    }

    #[test]
    fn assignment_deterministic_and_varied() {
        assert_eq!(tasks(5), tasks(5));
        let flips: BTreeSet<bool> = (0..32)
            .map(|s| tasks(s)[0].assignment.a_is_system1)
            .collect();
        assert_eq!(flips.len(), 2);
    }

    #[test]
    fn onboarding_gate() {
        let key: BTreeMap<String, String> =
            (0..8).map(|i| (format!("q{i}"), "x".to_string())).collect();
        let answers = |n: usize| -> BTreeMap<String, String> {
            (0..8)
                .map(|i| (format!("q{i}"), if i < n { "x" } else { "y" }.to_string()))
                .collect()
        };
        assert!(gate_onboarding(&answers(6), &key));
        assert!(!gate_onboarding(&answers(5), &key));
        assert!(!gate_onboarding(&BTreeMap::new(), &key));
        assert!(!gate_onboarding(&answers(8), &BTreeMap::new()));
    }

    #[test]
    fn judgment_validation() {
        let t = &tasks(1)[0];
        let ok = judgment("u", "conv1", Some(0), Aspect::Naturalness, Choice::A);
        assert!(validate_judgment(t, &ok).is_ok());
        let identical = judgment("u", "conv1", Some(1), Aspect::Correctness, Choice::A);
        assert!(matches!(
            validate_judgment(t, &identical),
            Err(AnnotationError::NotJudgeable { .. })
        ));
        let one_sided = judgment("u", "conv1", Some(2), Aspect::Completeness, Choice::A);
        assert!(matches!(
            validate_judgment(t, &one_sided),
            Err(AnnotationError::NotJudgeable { .. })
        ));
        let mut pref = judgment("u", "conv1", None, Aspect::Preference, Choice::B);
        assert!(validate_judgment(t, &pref).is_ok());
        pref.justification = Some("  ".into());
        assert!(matches!(
            validate_judgment(t, &pref),
            Err(AnnotationError::InvalidJudgment(_))
        ));
    }

    fn with_assignment(a_is_system1: bool) -> Vec<ComparisonTask> {
        let mut t = tasks(1);
        t[0].assignment = Assignment { a_is_system1 };
        t
    }

    #[test]
    fn majority_and_ties() {
        use Choice::*;
        let t = with_assignment(true);
        let js = [
            judgment("u1", "conv1", Some(0), Aspect::Correctness, A),
            judgment("u2", "conv1", Some(0), Aspect::Correctness, A),
            judgment("u3", "conv1", Some(0), Aspect::Correctness, B),
            judgment("u1", "conv1", Some(0), Aspect::Naturalness, A),
            judgment("u2", "conv1", Some(0), Aspect::Naturalness, B),
            judgment("u3", "conv1", Some(0), Aspect::Naturalness, Neither),
        ];
        let r = aggregate(&t, &js).unwrap();
        assert_eq!(r.per_aspect[&Aspect::Correctness].system1_wins, 100.0);
        assert_eq!(r.per_aspect[&Aspect::Naturalness].ties, 100.0);
        assert_eq!(r.n_annotators_per_task["conv1"], 3);

        let flipped = with_assignment(false);
        let swapped: Vec<Judgment> = js
            .iter()
            .map(|j| Judgment {
                choice: match j.choice {
                    A => B,
                    B => A,
                    c => c,
                },
                ..j.clone()
            })
            .collect();
        let r2 = aggregate(&flipped, &swapped).unwrap();
        assert_eq!(r.per_aspect, r2.per_aspect);
    }

    #[test]
    fn both_and_neither_never_win() {
        use Choice::*;
        let t = with_assignment(true);
        let js: Vec<Judgment> = ["u1", "u2", "u3"]
            .iter()
            .map(|u| judgment(u, "conv1", Some(0), Aspect::Correctness, Both))
            .collect();
        let r = aggregate(&t, &js).unwrap();
        assert_eq!(r.per_aspect[&Aspect::Correctness].ties, 100.0);
        assert_eq!(r.kappa, Some(1.0));
    }

    #[test]
    fn insufficient_annotators() {
        let t = with_assignment(true);
        let js = [
            judgment("u1", "conv1", Some(0), Aspect::Correctness, Choice::A),
            judgment("u2", "conv1", Some(0), Aspect::Correctness, Choice::A),
        ];
        assert!(matches!(
            aggregate(&t, &js),
            Err(AnnotationError::InsufficientAnnotators { found: 2, .. })
        ));
    }

    #[test]
    fn preference_reported_both_ways() {
        use Choice::*;
        let t = with_assignment(false);
        let js = [
            judgment("u1", "conv1", None, Aspect::Preference, A),
            judgment("u2", "conv1", None, Aspect::Preference, A),
            judgment("u3", "conv1", None, Aspect::Preference, Neither),
        ];
        let r = aggregate(&t, &js).unwrap();
        assert_eq!(r.per_aspect[&Aspect::Preference].system2_wins, 100.0);
        let p = r.preference_per_annotator.clone().unwrap();
        assert!((p.system2 - 200.0 / 3.0).abs() < 1e-9);
        assert!((p.neither - 100.0 / 3.0).abs() < 1e-9);
        assert!(r.render().contains("preference"));
    }
}
