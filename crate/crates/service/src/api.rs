//! HTTP/JSON routes under `/api`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use fsdiag_core::diagnostics::{
    self, agreement, class_features, cluster_classes, cluster_learners, Direction, TsneConfig,
    WeightGrid, DEFAULT_COVERAGE_K,
};
use fsdiag_core::ensemble::{argmax, margin_confidence};
use fsdiag_core::learner_recommender::{recommend_learners, LearnerRecommendConfig};
use fsdiag_core::metrics::{learner_fitness, pairwise_cooperation};
use fsdiag_core::sampling::{sample_subset, DEFAULT_SAMPLING_RATIO};
use fsdiag_core::session::{EditCommand, Session};
use fsdiag_core::shot_recommender::{recommend_shots, ShotRecommendConfig};
use fsdiag_core::Error;

type Shared = Arc<RwLock<Session>>;

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Shared>>,
}

impl AppState {
    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. }
            | Error::ManifestParse { .. }
            | Error::UnsupportedVersion(_)
            | Error::MissingFile { .. }
            | Error::DimMismatch { .. }
            | Error::RowMismatch { .. }
            | Error::Duplicate { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::ZeroRow { .. }
            | Error::GroundTruth { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::EditRejected(_)
            | Error::StaleState { .. }
            | Error::EmptyShots
            | Error::NoSelectedLearners
            | Error::ZeroWeights
            | Error::SoleLearner(_)
            | Error::InfeasibleDirection { .. }
            | Error::NoGroundTruth => StatusCode::CONFLICT,
            Error::UnknownLearner(_) | Error::IndexOutOfRange { .. } | Error::InvalidArgument(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::NonFinite(_) | Error::TooManyRows { .. } | Error::UnselectedAssignment { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs engine work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn read<T, F>(state: &AppState, id: &str, f: F) -> ApiResult<T>
where
    F: FnOnce(&Session) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    let shared = state.get(id)?;
    blocking(move || f(&shared.read().expect("session poisoned"))).await.map(Json)
}

async fn write<T, F>(state: &AppState, id: &str, f: F) -> ApiResult<T>
where
    F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    let shared = state.get(id)?;
    blocking(move || f(&mut shared.write().expect("session poisoned"))).await.map(Json)
}

/// An empty body means all defaults.
fn body_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

/// Payload plus the state hash it was computed against.
#[derive(Serialize)]
struct Tagged<T> {
    state_hash: String,
    #[serde(flatten)]
    body: T,
}

fn tagged<T>(s: &Session, body: T) -> Tagged<T> {
    Tagged {
        state_hash: s.state_hash(),
        body,
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/overview", get(overview))
        .route("/sessions/{id}/recommend/learners", post(rec_learners))
        .route("/sessions/{id}/recommend/shots", post(rec_shots))
        .route("/sessions/{id}/edits", post(edits))
        .route("/sessions/{id}/weight-adjust", post(weight_adjust))
        .route("/sessions/{id}/agreement", get(agreement_view))
        .route("/sessions/{id}/histogram", get(histogram))
        .route("/sessions/{id}/influence", get(influence))
        .route("/sessions/{id}/coverage", get(coverage))
        .route("/sessions/{id}/projection", get(projection))
        .route("/sessions/{id}/clusters", get(clusters))
        .route("/sessions/{id}/samples/{idx}", get(sample_detail))
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) if dir.is_dir() => app.fallback_service(ServeDir::new(dir)),
        _ => app,
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    manifest_path: PathBuf,
    #[serde(default)]
    seed: u64,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Value> {
    let req: CreateSession = parse_body(&body)?;
    // Every failure here is a problem with the manifest or the files it references.
    let session = blocking(move || {
        Session::from_manifest(&req.manifest_path, req.seed)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string()))
    })
    .await?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    state
        .sessions
        .write()
        .expect("session table poisoned")
        .insert(id.clone(), Arc::new(RwLock::new(session)));
    Ok(Json(json!({ "session_id": id })))
}

#[derive(Serialize)]
struct LearnerRow {
    id: String,
    selected: bool,
    weight: f64,
    lambda: f64,
    /// Disagreements with the ensemble; absent while no learner is selected.
    overall_diff: Option<usize>,
}

#[derive(Serialize)]
struct ShotRow {
    sample: usize,
    class: usize,
}

#[derive(Serialize)]
struct Summary {
    state_hash: String,
    edit_count: usize,
    accuracy: Option<f64>,
}

fn summary(s: &Session) -> Result<Summary, ApiError> {
    Ok(Summary {
        state_hash: s.state_hash(),
        edit_count: s.edit_log().len(),
        accuracy: s.accuracy()?,
    })
}

async fn overview(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Value> {
    read(&state, &id, |s| {
        let preds = s.learner_predictions()?;
        let lambda = learner_fitness(&preds, s.shots())?;
        let table = if s.selected_indices().is_empty() {
            None
        } else {
            Some(s.predictions()?)
        };
        let learners = s
            .learners()
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let overall_diff = match &table {
                    Some(t) => Some(agreement(&t.per_learner[k], &t.ensemble)?.overall_diff),
                    None => None,
                };
                Ok(LearnerRow {
                    id: l.id.clone(),
                    selected: l.selected,
                    weight: l.weight,
                    lambda: lambda[k],
                    overall_diff,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let shots: Vec<ShotRow> = s.shots().iter().map(|(sample, class)| ShotRow { sample, class }).collect();
        Ok(json!({
            "summary": summary(s)?,
            "num_samples": s.num_samples(),
            "classes": s.dataset().class_names,
            "learners": learners,
            "shots": shots,
        }))
    })
    .await
}

async fn rec_learners(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    #[derive(Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct Req {
        #[serde(default)]
        config: Option<LearnerRecommendConfig>,
    }
    let req: Req = body_or_default(&body)?;
    read(&state, &id, move |s| {
        let rec = recommend_learners(s, &req.config.unwrap_or_default())?;
        Ok(serde_json::to_value(rec).expect("serializable"))
    })
    .await
}

async fn rec_shots(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let cfg: ShotRecommendConfig = body_or_default(&body)?;
    read(&state, &id, move |s| {
        let rec = recommend_shots(s, &cfg)?;
        Ok(serde_json::to_value(rec).expect("serializable"))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    #[serde(default)]
    command: Option<EditCommand>,
    /// Applied atomically, after `command` if both are given.
    #[serde(default)]
    commands: Vec<EditCommand>,
    #[serde(default)]
    expected_state_hash: Option<String>,
}

async fn edits(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Summary> {
    let req: EditRequest = parse_body(&body)?;
    let batch: Vec<EditCommand> = req.command.into_iter().chain(req.commands).collect();
    if batch.is_empty() {
        return Err(ApiError::bad_request("no edit command given"));
    }
    write(&state, &id, move |s| {
        if let Some(expected) = &req.expected_state_hash {
            s.check_state(expected)?;
        }
        s.apply_edits(&batch)?;
        summary(s)
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightRequest {
    learner_id: String,
    direction: Direction,
    selection: Vec<usize>,
    #[serde(default)]
    grid: WeightGrid,
    #[serde(default)]
    expected_state_hash: Option<String>,
}

async fn weight_adjust(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let req: WeightRequest = parse_body(&body)?;
    write(&state, &id, move |s| {
        if let Some(expected) = &req.expected_state_hash {
            s.check_state(expected)?;
        }
        let adj = diagnostics::adjust_weight(s, &req.learner_id, req.direction, &req.selection, &req.grid)?;
        let changed = adj.search.new_weight != adj.search.previous_weight;
        let mut v = serde_json::to_value(&adj).expect("serializable");
        v["status"] = json!(if changed { "adjusted" } else { "no_improvement" });
        v["summary"] = serde_json::to_value(summary(s)?).expect("serializable");
        Ok(v)
    })
    .await
}

async fn agreement_view(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Value> {
    read(&state, &id, |s| {
        let rows = diagnostics::agreement_breakdown(s)?;
        Ok(json!({ "state_hash": s.state_hash(), "learners": rows }))
    })
    .await
}

#[derive(Deserialize)]
struct HistogramQuery {
    learner: String,
    class: usize,
}

async fn histogram(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HistogramQuery>,
) -> ApiResult<Value> {
    read(&state, &id, move |s| {
        let pair = diagnostics::histogram_pair(s, &q.learner, q.class)?;
        Ok(serde_json::to_value(tagged(s, pair)).expect("serializable"))
    })
    .await
}

#[derive(Deserialize)]
struct LearnerQuery {
    learner: String,
}

async fn influence(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<LearnerQuery>,
) -> ApiResult<Value> {
    read(&state, &id, move |s| {
        let r = diagnostics::learner_influence(s, &q.learner)?;
        Ok(serde_json::to_value(tagged(s, r)).expect("serializable"))
    })
    .await
}

#[derive(Deserialize)]
struct CoverageQuery {
    shot: usize,
    k: Option<usize>,
}

async fn coverage(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<CoverageQuery>,
) -> ApiResult<Value> {
    read(&state, &id, move |s| {
        let r = diagnostics::shot_coverage(s, q.shot, q.k.unwrap_or(DEFAULT_COVERAGE_K))?;
        Ok(serde_json::to_value(tagged(s, r)).expect("serializable"))
    })
    .await
}

#[derive(Deserialize)]
struct ProjectionQuery {
    ratio: Option<f64>,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ProjectedSample {
    sample: usize,
    class: usize,
    margin: f64,
    is_shot: bool,
}

async fn projection(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ProjectionQuery>,
) -> ApiResult<Value> {
    read(&state, &id, move |s| {
        let seed = q.seed.unwrap_or_else(|| s.derived_seed());
        let plan = sample_subset(s.num_samples(), s.shots(), q.ratio.unwrap_or(DEFAULT_SAMPLING_RATIO), seed)?;
        let proj = diagnostics::project_samples(s, &plan, &TsneConfig::default())?;
        let table = s.predictions()?;
        let samples: Vec<ProjectedSample> = plan
            .indices
            .iter()
            .map(|&i| ProjectedSample {
                sample: i,
                class: argmax(table.ensemble.row(i)),
                margin: table.ensemble_margins[i],
                is_shot: s.shots().contains(i),
            })
            .collect();
        let mut v = serde_json::to_value(tagged(s, proj)).expect("serializable");
        v["samples"] = serde_json::to_value(samples).expect("serializable");
        Ok(v)
    })
    .await
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum ClusterKind {
    Learners,
    Classes,
}

#[derive(Deserialize)]
struct ClusterQuery {
    kind: ClusterKind,
    count: usize,
}

async fn clusters(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ClusterQuery>,
) -> ApiResult<Value> {
    read(&state, &id, move |s| {
        let tree = match q.kind {
            ClusterKind::Learners => {
                let preds = s.learner_predictions()?;
                let all: Vec<usize> = (0..s.num_samples()).collect();
                let mu = pairwise_cooperation(&preds, &all);
                cluster_learners(&mu, s.dataset().learner_ids.clone(), q.count)?
            }
            ClusterKind::Classes => {
                cluster_classes(&class_features(s)?, s.dataset().class_names.clone(), q.count)?
            }
        };
        Ok(serde_json::to_value(tagged(s, tree)).expect("serializable"))
    })
    .await
}

async fn sample_detail(
    State(state): State<Arc<AppState>>,
    Path((id, idx)): Path<(String, usize)>,
) -> ApiResult<Value> {
    read(&state, &id, move |s| {
        if idx >= s.num_samples() {
            return Err(Error::IndexOutOfRange {
                what: "sample",
                index: idx,
                limit: s.num_samples(),
            }
            .into());
        }
        let preds = s.learner_predictions()?;
        let ensemble = if s.selected_indices().is_empty() {
            None
        } else {
            Some(s.predictions()?.ensemble.row(idx).to_vec())
        };
        let learners: Vec<Value> = s
            .learners()
            .iter()
            .zip(preds.iter())
            .map(|(l, p)| {
                json!({
                    "id": l.id,
                    "distribution": p.row(idx).to_vec(),
                    "margin": margin_confidence(p.row(idx)),
                    "class": argmax(p.row(idx)),
                })
            })
            .collect();
        Ok(json!({
            "state_hash": s.state_hash(),
            "sample": idx,
            "label_distribution": ensemble,
            "shot_class": s.shots().class_of(idx),
            "learners": learners,
            "image_path": s.dataset().image_path(idx),
        }))
    })
    .await
}
