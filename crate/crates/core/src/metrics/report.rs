use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{
    conversation_flow_krcc, mean_std, topic_coverage, CoverageEntry, CoverageResult, FlowEntry,
    FlowResult, MetricsError,
};
use crate::corpus::Dataset;
use crate::text::whitespace_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_conversations: usize,
    pub n_questions: usize,
    pub n_answered: usize,
    /// Whitespace tokens of the serialized answer, over answered questions.
    pub avg_answer_length: f64,
    /// Spans per answered question.
    pub avg_answers_per_question: f64,
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let mut n_answered = 0usize;
    let mut tokens = 0usize;
    let mut spans = 0usize;
    for (_, turn) in ds.turns().filter(|(_, t)| t.answer.is_found()) {
        n_answered += 1;
        tokens += whitespace_tokens(&turn.answer.serialized_text());
        spans += turn.answer.spans.len();
    }
    let per_answered = |x: usize| {
        if n_answered == 0 {
            0.0
        } else {
            x as f64 / n_answered as f64
        }
    };
    DatasetStats {
        n_conversations: ds.conversations.len(),
        n_questions: ds.n_questions(),
        n_answered,
        avg_answer_length: per_answered(tokens),
        avg_answers_per_question: per_answered(spans),
    }
}

/// Coverage of every conversation, in dataset order.
pub fn coverage_report(ds: &Dataset) -> CoverageResult {
    let per_conversation: Vec<CoverageEntry> = ds
        .conversations
        .par_iter()
        .map(|c| CoverageEntry {
            conversation_id: c.id().to_string(),
            coverage: topic_coverage(c),
        })
        .collect();
    let values: Vec<f64> = per_conversation.iter().map(|e| e.coverage).collect();
    let (mean, std) = mean_std(&values);
    CoverageResult {
        per_conversation,
        mean,
        std,
    }
}

/// Rank correlation of every conversation where it is defined, in dataset
/// order; the rest are listed as excluded.
pub fn flow_report(ds: &Dataset) -> FlowResult {
    let results: Vec<_> = ds
        .conversations
        .par_iter()
        .map(|c| (c.id().to_string(), conversation_flow_krcc(c)))
        .collect();
    let mut per_conversation = Vec::new();
    let mut excluded = Vec::new();
    for (id, r) in results {
        match r {
            Ok(k) => per_conversation.push(FlowEntry {
                conversation_id: id,
                tau: k.tau,
                n: k.n,
            }),
            Err(_) => excluded.push(id),
        }
    }
    let taus: Vec<f64> = per_conversation.iter().map(|e| e.tau).collect();
    FlowResult {
        mean: mean_std(&taus).0,
        per_conversation,
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p_value: f64,
}

/// Welch's unequal-variance t-test. `None` when either sample has fewer than
/// two values or both variances are zero.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return None;
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / (sa.powi(2) / (na - 1.0) + sb.powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Some(WelchResult { t, df, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// `bins` equal-width bins over `[lo, hi]`; the last bin is closed. Values
/// outside the range are dropped.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<HistogramBin> {
    assert!(bins > 0 && hi > lo, "histogram needs bins > 0 and hi > lo");
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == bins {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            count: 0,
        })
        .collect();
    for &v in values {
        if !(lo..=hi).contains(&v) {
            continue;
        }
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

pub fn write_histogram_csv(bins: &[HistogramBin], path: &Path) -> Result<(), MetricsError> {
    let mut body = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        let _ = writeln!(body, "{},{},{}", b.lo, b.hi, b.count);
    }
    fs::write(path, body).map_err(|e| MetricsError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Everything the evaluation commands print, in machine-readable form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<DatasetStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowResult>,
    /// Welch test of this dataset against a comparison dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub other: String,
    pub metric: String,
    pub mean: f64,
    pub other_mean: f64,
    pub test: Option<WelchResult>,
}

impl MetricsReport {
    pub fn render(&self) -> String {
        let mut out = format!("dataset: {}\n", self.dataset);
        if let Some(s) = &self.stats {
            let _ = writeln!(out, "conversations            {}", s.n_conversations);
            let _ = writeln!(out, "questions                {}", s.n_questions);
            let _ = writeln!(out, "questions with answer    {}", s.n_answered);
            let _ = writeln!(out, "avg. answer length       {:.2}", s.avg_answer_length);
            let _ = writeln!(
                out,
                "avg. answers / question  {:.2}",
                s.avg_answers_per_question
            );
        }
        if let Some(c) = &self.coverage {
            let _ = writeln!(
                out,
                "coverage  mean {:.4}  std {:.4}  (n = {})",
                c.mean,
                c.std,
                c.per_conversation.len()
            );
        }
        if let Some(f) = &self.flow {
            let _ = writeln!(
                out,
                "krcc      mean {:.4}  (n = {}, undefined = {})",
                f.mean,
                f.per_conversation.len(),
                f.excluded.len()
            );
        }
        if let Some(c) = &self.comparison {
            let _ = write!(
                out,
                "{} vs {}: {:.4} vs {:.4}",
                c.metric, c.other, c.mean, c.other_mean
            );
            match &c.test {
                Some(t) => {
                    let _ = writeln!(
                        out,
                        "  t = {:.4}, df = {:.2}, p = {:.3e}",
                        t.t, t.df, t.p_value
                    );
                }
                None => out.push_str("  (t-test undefined)\n"),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{Answer, AnswerSpan, Conversation};

    #[test]
    fn stats_example() {
        let ctx = context("c", "Julia died in 1895 and Leslie Stephen died in 1904.");
        let mut conv = Conversation::new(ctx.clone());
        conv.turns.push(unanswered_turn(&ctx, 0));
        let mut t = found_turn(&ctx, 1, 0, 5);
        t.answer = Answer::found(
            vec![
                AnswerSpan::from_context(&ctx, 0, 5),
                AnswerSpan::from_context(&ctx, 23, 37),
            ],
            "Julia; Leslie Stephen",
            1,
        );
        conv.turns.push(t);
        let ds = Dataset::new("d", vec![conv]).unwrap();
        let s = dataset_stats(&ds);
        assert_eq!((s.n_conversations, s.n_questions, s.n_answered), (1, 2, 1));
        assert_eq!(s.avg_answers_per_question, 2.0);
        assert_eq!(s.avg_answer_length, 3.0);
    }

    #[test]
    fn welch_reference_values() {
        // Reference: scipy.stats.ttest_ind(a, b, equal_var=False).
        let a = [
            27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7,
            21.4,
        ];
        let b = [
            27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5,
            24.4,
        ];
        let r = welch_t_test(&a, &b).unwrap();
        assert!((r.t - -2.46).abs() < 0.01, "t = {}", r.t);
        assert!((r.df - 24.99).abs() < 0.05, "df = {}", r.df);
        assert!((r.p_value - 0.021).abs() < 0.001, "p = {}", r.p_value);
        assert!(welch_t_test(&[1.0], &b).is_none());
        assert!(welch_t_test(&[1.0, 1.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[0.0, 0.1, 0.5, 1.0, 2.0], 2, 0.0, 1.0);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), [2, 2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        write_histogram_csv(&h, &path).unwrap();
        assert!(fs::read_to_string(path)
            .unwrap()
            .starts_with("bin_lo,bin_hi,count\n0,0.5,2\n"));
    }

    #[test]
    fn reports_keep_order() {
        let ctx_a = context("a", &"x".repeat(10));
        let ctx_b = context("b", &"x".repeat(10));
        let mut ca = Conversation::new(ctx_a.clone());
        ca.turns = vec![found_turn(&ctx_a, 0, 0, 5), found_turn(&ctx_a, 1, 6, 7)];
        let mut cb = Conversation::new(ctx_b.clone());
        cb.turns = vec![found_turn(&ctx_b, 0, 0, 1)];
        let ds = Dataset::new("d", vec![ca, cb]).unwrap();
        let cov = coverage_report(&ds);
        assert_eq!(cov.per_conversation[0].conversation_id, "a");
        assert!((cov.mean - 0.35).abs() < 1e-12);
        assert!((cov.std - 0.25).abs() < 1e-12);
        let flow = flow_report(&ds);
        assert_eq!(flow.per_conversation.len(), 1);
        assert_eq!(flow.excluded, ["b"]);
        let report = MetricsReport {
            dataset: "d".into(),
            stats: Some(dataset_stats(&ds)),
            coverage: Some(cov),
            flow: Some(flow),
            comparison: None,
        };
        assert!(report.render().contains("coverage  mean 0.3500"));
    }
}
