//! The questioning agent. It knows the topic, background and section header,
//! never the section text.

use rand::Rng;
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatSession};
use crate::config::StudentConfig;
use crate::corpus::{Answer, GuidingPromptId, RepromptId, TopicContext};

const INSTRUCTION_BODY: &str = "In this task, I am a teacher and have a document, you are a curious student who wants to explore this document by asking questions. The main objective is to learn most of the documents that I have. I will explain to you the topic and background knowledge of the document. Then I will give you the title of the document and you should ask questions about this title one by one. When you ask a question, I give you the answer, and then you ask your next question. I’m only allowed to find the answer to your questions from this document, so if I cannot find the answer, I will say “I cannot find the answer, please ask your next question”. You shouldn't ask questions that can be answered from my previous answers to your previous questions. You should sometimes ask follow-up questions from my previous answers.";

/// What the student hears after an unanswered question.
pub const CANNOT_FIND_STIMULUS: &str = "I cannot find the answer, please ask your next question.";
pub const SHORT_QUESTION_PROMPT: &str =
    "Please ask exactly one short question of at most 25 words, on a single line.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StudentError {
    #[error("no valid question after {attempts} attempts")]
    QuestionValidationExhausted { attempts: u32 },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub fn build_student_instruction(ctx: &TopicContext) -> String {
    format!(
        "{}\n\nTopic: {}\nBackground knowledge {}\nPlease start asking question about: {}",
        INSTRUCTION_BODY, ctx.title, ctx.background, ctx.section_header
    )
}

fn is_enumeration_token(token: &str) -> bool {
    let digits = token.trim_end_matches(['.', ')']);
    token.len() == digits.len() + 1
        && !digits.is_empty()
        && digits.bytes().all(|b| b.is_ascii_digit())
}

/// One question per line: bounded word count, no newline, no `1.` / `2)`
/// style enumeration tokens.
pub fn validate_question(raw: &str, cfg: &StudentConfig) -> bool {
    if raw.contains(['\n', '\r']) {
        return false;
    }
    let words: Vec<&str> = raw.split_whitespace().collect();
    !words.is_empty()
        && words.len() <= cfg.max_question_words
        && !words.iter().any(|w| is_enumeration_token(w))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentStimulus {
    pub text: String,
    pub guiding_prompt: Option<GuidingPromptId>,
}

/// Next message for the student: the previous answer itself when it was
/// found, otherwise the unanswerable notice plus a randomly drawn guiding
/// prompt.
pub fn select_student_prompt<R: Rng + ?Sized>(
    prev_answer: &Answer,
    rng: &mut R,
) -> StudentStimulus {
    if prev_answer.is_found() {
        return StudentStimulus {
            text: prev_answer.serialized_text(),
            guiding_prompt: None,
        };
    }
    let id = GuidingPromptId::ALL[rng.random_range(0..GuidingPromptId::ALL.len())];
    StudentStimulus {
        text: format!("{CANNOT_FIND_STIMULUS} {}", id.text()),
        guiding_prompt: Some(id),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AskedQuestion {
    pub question: String,
    pub attempts: u32,
    pub reprompts: Vec<RepromptId>,
}

/// Asks for a question and regenerates with the short-question prompt while
/// validation fails, up to `max_regen_attempts` regenerations.
pub fn ask_with_validation(
    backend: &dyn ChatBackend,
    session: &mut ChatSession,
    stimulus: &str,
    cfg: &StudentConfig,
) -> Result<AskedQuestion, StudentError> {
    let message = session.opening(stimulus);
    let mut raw = session.complete(backend, message)?;
    let mut attempts = 1u32;
    let mut reprompts = Vec::new();
    loop {
        let question = raw.trim();
        if validate_question(question, cfg) {
            return Ok(AskedQuestion {
                question: question.to_string(),
                attempts,
                reprompts,
            });
        }
        if reprompts.len() as u32 >= cfg.max_regen_attempts {
            return Err(StudentError::QuestionValidationExhausted { attempts });
        }
        reprompts.push(RepromptId::ShortQuestion);
        let message = session.opening(SHORT_QUESTION_PROMPT);
        raw = session.complete(backend, message)?;
        attempts += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatParams, ScriptedBackend};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(section: &str) -> TopicContext {
        TopicContext::new(
            "c",
            "Virginia Woolf",
            "Adeline Virginia Woolf was an English writer.",
            "Talland House (1882-1894)",
            section,
        )
        .unwrap()
    }

    #[test]
    fn instruction_layout() {
        let c = ctx("SECRET SECTION TEXT");
        let text = build_student_instruction(&c);
        assert!(text.starts_with("In this task, I am a teacher and have a document"));
        assert!(text.ends_with(
            "\n\nTopic: Virginia Woolf\nBackground knowledge Adeline Virginia Woolf was an English writer.\nPlease start asking question about: Talland House (1882-1894)"
        ));
        assert!(!text.contains("SECRET SECTION TEXT"));
    }

    #[test]
    fn instruction_independent_of_section() {
        assert_eq!(
            build_student_instruction(&ctx("one text")),
            build_student_instruction(&ctx("another text"))
        );
        // Section text that also occurs in the background is not an error.
        let c = TopicContext::new("c", "t", "shared words here", "h", "shared words").unwrap();
        assert!(build_student_instruction(&c).contains("shared words"));
    }

    #[test]
    fn question_validation() {
        let cfg = StudentConfig::default();
        assert!(validate_question("Where is Talland House located?", &cfg));
        assert!(!validate_question("What happened?\n1. First", &cfg));
        assert!(!validate_question("1. What happened? 2. Why?", &cfg));
        assert!(!validate_question("What happened? 2) Why?", &cfg));
        assert!(validate_question("Did 3 people live there in 1894?", &cfg));
        assert!(validate_question("Was the population 1.5 million?", &cfg));
        assert!(!validate_question("", &cfg));
        let words25 = vec!["word"; 25].join(" ") + "?";
        let words26 = vec!["word"; 26].join(" ") + "?";
        assert!(validate_question(&words25, &cfg));
        assert!(!validate_question(&words26, &cfg));
    }

    #[test]
    fn found_answer_is_passed_through() {
        let c = ctx("It opened In 1897 to the public.");
        let span = crate::corpus::AnswerSpan::from_context(&c, 10, 17);
        let answer = Answer::found(vec![span], "In 1897", 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = select_student_prompt(&answer, &mut rng);
        assert_eq!(s.text, "In 1897");
        assert_eq!(s.guiding_prompt, None);
    }

    #[test]
    fn guiding_prompt_after_cannot_find() {
        let answer = Answer::cannot_find(5);
        let mut seen = std::collections::BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..64 {
            let s = select_student_prompt(&answer, &mut rng);
            let id = s.guiding_prompt.unwrap();
            assert_eq!(s.text, format!("{CANNOT_FIND_STIMULUS} {}", id.text()));
            seen.insert(id);
        }
        assert_eq!(seen.len(), 4);
        assert!(GuidingPromptId::WhStart
            .text()
            .ends_with("Ask a question starting with where, when, or who."));
    }

    #[test]
    fn guiding_prompts_deterministic_per_seed() {
        let answer = Answer::cannot_find(1);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .map(|_| select_student_prompt(&answer, &mut rng).guiding_prompt)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    fn session() -> ChatSession {
        ChatSession::new(
            "c/student",
            "scripted",
            build_student_instruction(&ctx("s")),
            ChatParams::default(),
        )
    }

    #[test]
    fn ask_fast_path() {
        let b = ScriptedBackend::new("s", vec!["  Where is Talland House located?\n".into()]);
        let mut s = session();
        let q = ask_with_validation(&b, &mut s, "", &StudentConfig::default()).unwrap();
        assert_eq!(q.question, "Where is Talland House located?");
        assert_eq!(q.attempts, 1);
        assert!(q.reprompts.is_empty());
        assert_eq!(s.replies(), 1);
    }

    #[test]
    fn ask_regenerates_after_blob() {
        let blob = "1. Where is it?\n2. Who owned it?\n3. When was it built?";
        let b = ScriptedBackend::new("s", vec![blob.into(), "Who owned Talland House?".into()]);
        let mut s = session();
        let q = ask_with_validation(&b, &mut s, "", &StudentConfig::default()).unwrap();
        assert_eq!(q.question, "Who owned Talland House?");
        assert_eq!(q.reprompts, [RepromptId::ShortQuestion]);
        assert_eq!(s.history[2].content, SHORT_QUESTION_PROMPT);
    }

    #[test]
    fn ask_exhausts() {
        let b = ScriptedBackend::new("s", vec!["1. a\n2. b".into()]);
        let mut s = session();
        let err = ask_with_validation(&b, &mut s, "", &StudentConfig::default()).unwrap_err();
        assert_eq!(
            err,
            StudentError::QuestionValidationExhausted { attempts: 5 }
        );
        assert_eq!(s.replies(), 5);
    }
}
