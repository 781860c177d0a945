//! HTTP front end for annotators and the privileged report.
//!
//! Annotator-facing responses never carry the A/B assignment, dataset names
//! or raw source markers.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    aggregate, gate_onboarding, validate_judgment, AnnotationError, Aspect, Choice, ComparisonTask,
    Judgment, JudgmentStore, OnboardingRecord,
};
use crate::corpus::Answer;
use crate::metrics::CharInterval;

pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizQuestion {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub options: Vec<String>,
    pub answer: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quiz {
    pub questions: Vec<QuizQuestion>,
}

impl Quiz {
    pub fn key(&self) -> BTreeMap<String, String> {
        self.questions
            .iter()
            .map(|q| (q.id.clone(), q.answer.clone()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub admin_token: String,
    /// Onboarding tries allowed per annotator.
    pub onboarding_attempts: usize,
}

#[derive(Clone)]
pub struct AppState {
    tasks: Arc<Vec<ComparisonTask>>,
    quiz: Arc<Quiz>,
    store: Arc<JudgmentStore>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(
        tasks: Vec<ComparisonTask>,
        quiz: Quiz,
        store: JudgmentStore,
        config: ServiceConfig,
    ) -> Self {
        AppState {
            tasks: Arc::new(tasks),
            quiz: Arc::new(quiz),
            store: Arc::new(store),
            config: Arc::new(config),
        }
    }

    pub fn store(&self) -> &JudgmentStore {
        &self.store
    }

    fn task(&self, id: &str) -> Result<&ComparisonTask, ApiError> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| AnnotationError::UnknownTask(id.to_string()).into())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        use AnnotationError::*;
        let (status, code) = match &e {
            UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            InvalidJudgment(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_judgment"),
            NotJudgeable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "not_judgeable"),
            Duplicate { .. } => (StatusCode::CONFLICT, "duplicate"),
            NotGated(_) => (StatusCode::FORBIDDEN, "not_gated"),
            InsufficientAnnotators { .. } => (StatusCode::CONFLICT, "insufficient_annotators"),
            PairMismatch(_) | Kappa(_) | Store(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": self.code, "message": self.message})),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize)]
struct TaskSummary<'a> {
    id: &'a str,
    title: &'a str,
    section_header: &'a str,
    n_items: usize,
}

#[derive(Debug, Serialize)]
struct AnswerView {
    text: String,
    cannot_find: bool,
    highlights: Vec<CharInterval>,
}

impl AnswerView {
    fn of(answer: &Answer, highlights: &[CharInterval]) -> Self {
        AnswerView {
            text: answer.serialized_text(),
            cannot_find: !answer.is_found(),
            highlights: highlights.to_vec(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ItemView<'a> {
    index: usize,
    question: &'a str,
    answer_a: AnswerView,
    answer_b: AnswerView,
    judgeable_aspects: &'a BTreeSet<Aspect>,
}

#[derive(Debug, Serialize)]
struct TaskView<'a> {
    id: &'a str,
    title: &'a str,
    background: &'a str,
    section_header: &'a str,
    section_text: &'a str,
    items: Vec<ItemView<'a>>,
}

fn blinded(task: &ComparisonTask) -> TaskView<'_> {
    TaskView {
        id: &task.id,
        title: &task.context.title,
        background: &task.context.background,
        section_header: &task.context.section_header,
        section_text: &task.context.section_text,
        items: task
            .items
            .iter()
            .enumerate()
            .map(|(index, item)| ItemView {
                index,
                question: &item.question,
                answer_a: AnswerView::of(&item.answer_a, &item.highlight_a),
                answer_b: AnswerView::of(&item.answer_b, &item.highlight_b),
                judgeable_aspects: &item.judgeable_aspects,
            })
            .collect(),
    }
}

async fn list_tasks(State(s): State<AppState>) -> Response {
    let tasks: Vec<TaskSummary> = s
        .tasks
        .iter()
        .map(|t| TaskSummary {
            id: &t.id,
            title: &t.context.title,
            section_header: &t.context.section_header,
            n_items: t.items.len(),
        })
        .collect();
    Json(tasks).into_response()
}

async fn fetch_task(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blinded(s.task(&id)?)).into_response())
}

async fn next_task(
    State(s): State<AppState>,
    Path(annotator): Path<String>,
) -> ApiResult<Response> {
    let done = s.store.completed_tasks(&annotator);
    let next = s
        .tasks
        .iter()
        .find(|t| !done.contains(&t.id))
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "no_tasks_left",
                "every task has been judged",
            )
        })?;
    Ok(Json(blinded(next)).into_response())
}

#[derive(Debug, Serialize)]
struct QuizQuestionView<'a> {
    id: &'a str,
    prompt: &'a str,
    options: &'a [String],
}

async fn quiz(State(s): State<AppState>) -> Response {
    let questions: Vec<QuizQuestionView> = s
        .quiz
        .questions
        .iter()
        .map(|q| QuizQuestionView {
            id: &q.id,
            prompt: &q.prompt,
            options: &q.options,
        })
        .collect();
    Json(json!({"questions": questions})).into_response()
}

#[derive(Debug, Deserialize)]
struct OnboardingRequest {
    annotator: String,
    responses: BTreeMap<String, String>,
}

async fn onboarding(
    State(s): State<AppState>,
    body: Result<Json<OnboardingRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    if req.annotator.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid",
            "annotator id is empty",
        ));
    }
    if s.store.is_gated(&req.annotator) {
        return Ok(Json(json!({"passed": true, "already_gated": true})).into_response());
    }
    if s.store.onboarding_attempts(&req.annotator) >= s.config.onboarding_attempts {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "attempts_exhausted",
            "no onboarding attempts left",
        ));
    }
    let key = s.quiz.key();
    let passed = gate_onboarding(&req.responses, &key);
    let correct = key
        .iter()
        .filter(|(q, a)| req.responses.get(*q).is_some_and(|r| r.trim() == a.trim()))
        .count();
    s.store.record_onboarding(OnboardingRecord {
        annotator: req.annotator,
        correct,
        total: key.len(),
        passed,
    })?;
    Ok(Json(json!({"passed": passed, "correct": correct, "total": key.len()})).into_response())
}

fn check_and_store(s: &AppState, judgments: &[Judgment]) -> ApiResult<()> {
    for j in judgments {
        validate_judgment(s.task(&j.task_id)?, j)?;
        if !s.store.is_gated(&j.annotator) {
            return Err(AnnotationError::NotGated(j.annotator.clone()).into());
        }
    }
    s.store.append_judgments(judgments)?;
    Ok(())
}

async fn submit_judgment(
    State(s): State<AppState>,
    body: Result<Json<Judgment>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(j) = body?;
    check_and_store(&s, std::slice::from_ref(&j))?;
    Ok((StatusCode::CREATED, Json(json!({"stored": 1}))).into_response())
}

#[derive(Debug, Deserialize)]
struct SubmissionEntry {
    item: Option<usize>,
    aspect: Aspect,
    choice: Choice,
    #[serde(default)]
    justification: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Submission {
    annotator: String,
    task_id: String,
    judgments: Vec<SubmissionEntry>,
}

/// A whole task at once: every judgeable aspect of every item plus the
/// preference, stored all-or-nothing.
async fn submit_task(
    State(s): State<AppState>,
    body: Result<Json<Submission>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(sub) = body?;
    let task = s.task(&sub.task_id)?;
    let judgments: Vec<Judgment> = sub
        .judgments
        .into_iter()
        .map(|e| Judgment {
            annotator: sub.annotator.clone(),
            task_id: sub.task_id.clone(),
            item: e.item,
            aspect: e.aspect,
            choice: e.choice,
            justification: e.justification,
        })
        .collect();
    let given: BTreeSet<(Option<usize>, Aspect)> =
        judgments.iter().map(|j| (j.item, j.aspect)).collect();
    let mut required: BTreeSet<(Option<usize>, Aspect)> = task
        .items
        .iter()
        .enumerate()
        .flat_map(|(i, item)| item.judgeable_aspects.iter().map(move |a| (Some(i), *a)))
        .collect();
    required.insert((None, Aspect::Preference));
    if let Some((item, aspect)) = required.difference(&given).next() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "incomplete",
            format!("missing {aspect} for item {item:?}"),
        ));
    }
    check_and_store(&s, &judgments)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"stored": judgments.len()})),
    )
        .into_response())
}

fn authorize(s: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let given = headers
        .get(ADMIN_TOKEN_HEADER)
        .and_then(|v| v.to_str().ok());
    if s.config.admin_token.is_empty() || given != Some(s.config.admin_token.as_str()) {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "admin token required",
        ));
    }
    Ok(())
}

async fn report(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    authorize(&s, &headers)?;
    let result = aggregate(&s.tasks, &s.store.active_judgments())?;
    Ok(Json(result).into_response())
}

async fn export(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    authorize(&s, &headers)?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        s.store.export_jsonl(),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct ExclusionRequest {
    annotator: String,
    task_id: String,
}

async fn exclude(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<ExclusionRequest>, JsonRejection>,
) -> ApiResult<Response> {
    authorize(&s, &headers)?;
    let Json(req) = body?;
    s.task(&req.task_id)?;
    s.store.exclude(&req.annotator, &req.task_id)?;
    Ok((StatusCode::CREATED, Json(json!({"excluded": true}))).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/{id}", get(fetch_task))
        .route("/api/annotators/{annotator}/next", get(next_task))
        .route("/api/quiz", get(quiz))
        .route("/api/onboarding", post(onboarding))
        .route("/api/judgments", post(submit_judgment))
        .route("/api/submissions", post(submit_task))
        .route("/api/admin/report", get(report))
        .route("/api/admin/export", get(export))
        .route("/api/admin/exclusions", post(exclude))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::super::build_tasks;
    use super::super::test_support::dataset_pair;
    use super::*;
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::Value;
    use tower::ServiceExt;

    fn app() -> Router {
        let (a, b) = dataset_pair();
        let tasks = build_tasks(&a, &b, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let quiz = Quiz {
            questions: (0..4)
                .map(|i| QuizQuestion {
                    id: format!("q{i}"),
                    prompt: format!("Question {i}"),
                    options: vec!["yes".into(), "no".into()],
                    answer: "yes".into(),
                })
                .collect(),
        };
        let config = ServiceConfig {
            admin_token: "secret".into(),
            onboarding_attempts: 1,
        };
        router(AppState::new(
            tasks,
            quiz,
            JudgmentStore::in_memory(),
            config,
        ))
    }

    async fn call(
        app: &Router,
        method: &str,
        uri: &str,
        body: Option<Value>,
        admin: bool,
    ) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if admin {
            req = req.header(ADMIN_TOKEN_HEADER, "secret");
        }
        let req = match body {
            Some(v) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(v.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn onboard(app: &Router, who: &str, correct: usize) -> Value {
        let responses: BTreeMap<String, String> = (0..4)
            .map(|i| {
                (
                    format!("q{i}"),
                    if i < correct { "yes" } else { "no" }.to_string(),
                )
            })
            .collect();
        let (status, body) = call(
            app,
            "POST",
            "/api/onboarding",
            Some(json!({"annotator": who, "responses": responses})),
            false,
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        serde_json::from_str(&body).unwrap()
    }

    #[tokio::test]
    async fn blinded_views() {
        let app = app();
        let (status, body) = call(&app, "GET", "/api/tasks/conv1", None, false).await;
        assert_eq!(status, StatusCode::OK);
        for forbidden in [
            "assignment",
            "system1",
            "a_is_system1",
            "quac",
            "sim",
            "CANNOTANSWER",
            "raw_text",
        ] {
            assert!(!body.contains(forbidden), "{forbidden} leaked: {body}");
        }
        let (_, quiz) = call(&app, "GET", "/api/quiz", None, false).await;
        assert!(!quiz.contains("answer"));
        let (status, _) = call(&app, "GET", "/api/tasks/nope", None, false).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
    }

    #[tokio::test]
    async fn gate_duplicate_and_judgeability() {
        let app = app();
        let j = json!({"annotator": "u1", "task_id": "conv1", "item": 0, "aspect": "correctness", "choice": "A"});
        let (status, body) = call(&app, "POST", "/api/judgments", Some(j.clone()), false).await;
        assert_eq!(status, StatusCode::FORBIDDEN, "{body}");

        assert_eq!(onboard(&app, "u1", 3).await["passed"], true);
        let (status, _) = call(&app, "POST", "/api/judgments", Some(j.clone()), false).await;
        assert_eq!(status, StatusCode::CREATED);
        let (status, body) = call(&app, "POST", "/api/judgments", Some(j), false).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert!(body.contains("\"duplicate\""));

        let identical = json!({"annotator": "u1", "task_id": "conv1", "item": 1, "aspect": "correctness", "choice": "A"});
        let (status, _) = call(&app, "POST", "/api/judgments", Some(identical), false).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

        assert_eq!(onboard(&app, "u2", 2).await["passed"], false);
        let (status, _) = call(
            &app,
            "POST",
            "/api/onboarding",
            Some(json!({"annotator": "u2", "responses": {}})),
            false,
        )
        .await;
        assert_eq!(status, StatusCode::FORBIDDEN);

        let (status, body) = call(
            &app,
            "POST",
            "/api/judgments",
            Some(json!({"bogus": 1})),
            false,
        )
        .await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert!(body.contains("bad_request"));
    }

    #[tokio::test]
    async fn submissions_report_and_export() {
        let app = app();
        for who in ["u1", "u2", "u3"] {
            onboard(&app, who, 4).await;
            let incomplete = json!({"annotator": who, "task_id": "conv1", "judgments": [
                {"item": 0, "aspect": "correctness", "choice": "A"}
            ]});
            let (status, _) = call(&app, "POST", "/api/submissions", Some(incomplete), false).await;
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
            let full = json!({"annotator": who, "task_id": "conv1", "judgments": [
                {"item": 0, "aspect": "correctness", "choice": "A"},
                {"item": 0, "aspect": "naturalness", "choice": "B"},
                {"item": 0, "aspect": "completeness", "choice": "Both"},
                {"item": 2, "aspect": "correctness", "choice": "A"},
                {"item": null, "aspect": "preference", "choice": "A", "justification": "more precise"}
            ]});
            let (status, body) = call(&app, "POST", "/api/submissions", Some(full), false).await;
            assert_eq!(status, StatusCode::CREATED, "{body}");
        }
        let (status, _) = call(&app, "GET", "/api/annotators/u1/next", None, false).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        let (status, _) = call(&app, "GET", "/api/annotators/u9/next", None, false).await;
        assert_eq!(status, StatusCode::OK);

        let (status, _) = call(&app, "GET", "/api/admin/report", None, false).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED);
        let (status, body) = call(&app, "GET", "/api/admin/report", None, true).await;
        assert_eq!(status, StatusCode::OK);
        let report: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(report["kappa"], 1.0);
        assert_eq!(report["per_aspect"]["completeness"]["ties"], 100.0);
        let (status, body) = call(&app, "GET", "/api/admin/export", None, true).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(
            body.lines().filter(|l| l.contains("\"judgment\"")).count(),
            15
        );
    }
}
