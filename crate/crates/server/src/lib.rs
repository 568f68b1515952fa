//! HTTP service over a project store.
//!
//! | method | path | operation |
//! |---|---|---|
//! | GET | `/features` | list registered features |
//! | POST | `/projects` | create a project |
//! | GET | `/projects?goal=` | list projects |
//! | GET | `/projects/{goal}/{name}` | load a project |
//! | POST, GET | `/projects/{goal}/{name}/datasets` | create or list datasets |
//! | POST, GET | `/projects/{goal}/{name}/models` | submit a fit job or list models |
//! | GET | `/projects/{goal}/{name}/models/{model}` | model with scoring table |
//! | POST | `/projects/{goal}/{name}/validate` | threshold report |
//! | GET | `/jobs/{job}` | fit job status |
//! | POST | `/jobs/{job}/cancel` | cancel a fit job |
//!
//! Every error response is `{code, message, detail}`.

mod jobs;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use riskbench_core::learner::choose_solver;
use riskbench_core::source::DataSource;
use riskbench_core::store::ProjectStore;
use riskbench_core::{workflow, Error, ErrorDocument, ErrorKind, FitConfig, FitControl, ProjectConfig, ProjectId};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::mpsc;

pub use jobs::{JobDocument, JobState};
use jobs::JobTable;

/// Error wrapper that renders as `{code, message, detail}` with the
/// matching status.
#[derive(Debug)]
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_of(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict | ErrorKind::Cancelled => StatusCode::CONFLICT,
        ErrorKind::Validation | ErrorKind::InfeasibleScale => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Busy => StatusCode::LOCKED,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(self.0.kind());
        (status, Json(ErrorDocument::from(&self.0))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct QueuedFit {
    job: String,
    project: ProjectId,
    dataset: String,
    model_name: String,
    config: FitConfig,
    control: FitControl,
}

struct Inner {
    store: ProjectStore,
    source: Arc<dyn DataSource>,
    jobs: JobTable,
    queues: Mutex<HashMap<ProjectId, mpsc::UnboundedSender<QueuedFit>>>,
}

/// Shared service state. Everything durable lives in the store; the job
/// table is the only in-memory state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(store: ProjectStore, source: Arc<dyn DataSource>) -> Self {
        AppState(Arc::new(Inner {
            store,
            source,
            jobs: JobTable::default(),
            queues: Mutex::new(HashMap::new()),
        }))
    }

    pub fn store(&self) -> &ProjectStore {
        &self.0.store
    }

    /// Hands a fit to the project's worker, starting the worker on first
    /// use. Each project runs one fit at a time, in submission order.
    fn enqueue(&self, fit: QueuedFit) {
        let mut queues = self.0.queues.lock().unwrap();
        let tx = queues.entry(fit.project.clone()).or_insert_with(|| {
            let (tx, rx) = mpsc::unbounded_channel();
            tokio::spawn(worker(self.clone(), rx));
            tx
        });
        // The worker never exits while a sender exists.
        let _ = tx.send(fit);
    }
}

async fn worker(state: AppState, mut rx: mpsc::UnboundedReceiver<QueuedFit>) {
    while let Some(fit) = rx.recv().await {
        let jobs = &state.0.jobs;
        if !jobs.transition(&fit.job, JobState::Running, None) {
            continue; // cancelled while queued
        }
        let store = state.0.store.clone();
        let QueuedFit {
            job,
            project,
            dataset,
            model_name,
            config,
            control,
        } = fit;
        let outcome = tokio::task::spawn_blocking(move || {
            workflow::fit_and_save(&store, &project, &dataset, &model_name, &config, &control)
        })
        .await;
        match outcome {
            Ok(Ok(_)) => jobs.transition(&job, JobState::Done, None),
            Ok(Err(Error::Cancelled)) => jobs.transition(&job, JobState::Cancelled, None),
            Ok(Err(e)) => jobs.transition(&job, JobState::Failed, Some(ErrorDocument::from(&e))),
            Err(_) => jobs.transition(
                &job,
                JobState::Failed,
                Some(ErrorDocument::from(&Error::Io(std::io::Error::other("fit task panicked")))),
            ),
        };
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(Error::validation(format!("invalid request body: {e}"))))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> riskbench_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(_) => Err(ApiError(Error::Io(std::io::Error::other("task panicked")))),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/features", get(list_features))
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{goal}/{name}", get(load_project))
        .route("/projects/{goal}/{name}/datasets", post(create_dataset).get(list_datasets))
        .route("/projects/{goal}/{name}/models", post(submit_fit).get(list_models))
        .route("/projects/{goal}/{name}/models/{model}", get(load_model))
        .route("/projects/{goal}/{name}/validate", post(validate))
        .route("/jobs/{job}", get(job_status))
        .route("/jobs/{job}/cancel", post(cancel_job))
        .with_state(state)
}

async fn list_features(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.store().registry().list())
}

async fn create_project(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let config: ProjectConfig = parse(&body)?;
    let store = state.store().clone();
    let summary = blocking(move || store.create_project(&config)).await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

#[derive(Deserialize)]
struct GoalQuery {
    goal: Option<String>,
}

async fn list_projects(State(state): State<AppState>, Query(q): Query<GoalQuery>) -> ApiResult<impl IntoResponse> {
    let store = state.store().clone();
    Ok(Json(blocking(move || store.list_projects(q.goal.as_deref())).await?))
}

async fn load_project(State(state): State<AppState>, Path((goal, name)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let id = ProjectId::new(goal, name);
    let store = state.store().clone();
    let config = blocking(move || store.project(&id)).await?;
    Ok(Json(riskbench_core::store::ProjectSummary::from(config)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRequest {
    name: String,
    #[serde(default)]
    entity_ids: Option<Vec<String>>,
}

async fn create_dataset(
    State(state): State<AppState>,
    Path((goal, name)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let id = ProjectId::new(goal, name);
    let req: DatasetRequest = parse(&body)?;
    let store = state.store().clone();
    let source = state.0.source.clone();
    let summary = blocking(move || {
        workflow::create_dataset(&store, source.as_ref(), &id, &req.name, req.entity_ids.as_deref())
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_datasets(State(state): State<AppState>, Path((goal, name)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let id = ProjectId::new(goal, name);
    let store = state.store().clone();
    Ok(Json(blocking(move || store.list_datasets(&id)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FitRequest {
    dataset: String,
    name: String,
    #[serde(default)]
    fit_config: FitConfig,
}

async fn submit_fit(
    State(state): State<AppState>,
    Path((goal, name)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let id = ProjectId::new(goal, name);
    let req: FitRequest = parse(&body)?;
    // Everything that can be checked up front is, so that a job only fails
    // for reasons that arise while fitting.
    let store = state.store().clone();
    let (check_id, dataset, model_name, config) = (id.clone(), req.dataset.clone(), req.name.clone(), req.fit_config.clone());
    blocking(move || {
        config.validate()?;
        if store.model_exists(&check_id, &model_name)? {
            return Err(Error::Conflict {
                what: "model",
                name: model_name,
            });
        }
        let ds = store.load_dataset(&check_id, &dataset)?;
        choose_solver(&ds, &config).map(drop)
    })
    .await?;
    let (job, control) = state.0.jobs.insert(id.clone(), req.dataset.clone(), req.name.clone(), req.fit_config.clone());
    state.enqueue(QueuedFit {
        job: job.clone(),
        project: id,
        dataset: req.dataset,
        model_name: req.name,
        config: req.fit_config,
        control,
    });
    let doc = state.0.jobs.get(&job).expect("job was just inserted");
    Ok((StatusCode::ACCEPTED, Json(doc)))
}

async fn list_models(State(state): State<AppState>, Path((goal, name)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let id = ProjectId::new(goal, name);
    let store = state.store().clone();
    Ok(Json(blocking(move || store.list_models(&id)).await?))
}

async fn load_model(
    State(state): State<AppState>,
    Path((goal, name, model)): Path<(String, String, String)>,
) -> ApiResult<impl IntoResponse> {
    let id = ProjectId::new(goal, name);
    let store = state.store().clone();
    Ok(Json(blocking(move || workflow::model_view(&store, &id, &model)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateRequest {
    model: String,
    dataset: String,
    /// `goal/name` of the project holding the dataset, when not this one.
    #[serde(default)]
    dataset_project: Option<String>,
    #[serde(default)]
    thresholds: Option<Vec<f64>>,
}

async fn validate(
    State(state): State<AppState>,
    Path((goal, name)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let id = ProjectId::new(goal, name);
    let req: ValidateRequest = parse(&body)?;
    let dataset_project = req
        .dataset_project
        .as_deref()
        .map(str::parse::<ProjectId>)
        .transpose()?;
    let store = state.store().clone();
    let report = blocking(move || {
        workflow::validate_stored(
            &store,
            &id,
            &req.model,
            dataset_project.as_ref(),
            &req.dataset,
            req.thresholds.as_deref(),
        )
    })
    .await?;
    Ok(Json(report))
}

fn job_not_found(job: String) -> ApiError {
    ApiError(Error::NotFound { what: "job", name: job })
}

async fn job_status(State(state): State<AppState>, Path(job): Path<String>) -> ApiResult<impl IntoResponse> {
    state.0.jobs.get(&job).map(Json).ok_or_else(|| job_not_found(job))
}

async fn cancel_job(State(state): State<AppState>, Path(job): Path<String>) -> ApiResult<impl IntoResponse> {
    state.0.jobs.cancel(&job).map(Json).ok_or_else(|| job_not_found(job))
}

/// Serves `router` on `listener` until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
