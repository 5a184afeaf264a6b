use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use tcdst_core::api::{
    AnalyzeRequest, EvalRequest, GenerateRequest, GenerateResponse, Health, OpenSessionRequest,
    SessionInfo, SessionStatus, TurnRequest, TurnResponse,
};
use tcdst_core::corpus::{
    contingency_table, generate_with_config, load_corpus, AnalysisReport, CorpusFile,
    GeneratorConfig,
};
use tcdst_core::model::AnyModel;
use tcdst_core::numeric::GradCheckReport;
use tcdst_core::session::TrackingSession;
use tcdst_core::tracker::EvalReport;
use tcdst_core::train::{
    evaluate_checkpoint, run_grad_check, run_training, GradCheckConfig, RunConfig, TrainSummary,
};

use crate::{ApiError, AppState, SessionEntry};

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map(Json)
}

pub async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

pub async fn train(body: Result<Json<RunConfig>, JsonRejection>) -> ApiResult<TrainSummary> {
    let Json(config) = body?;
    blocking(move || Ok(run_training(&config)?)).await
}

pub async fn eval(body: Result<Json<EvalRequest>, JsonRejection>) -> ApiResult<EvalReport> {
    let Json(req) = body?;
    blocking(move || {
        Ok(evaluate_checkpoint(
            &req.checkpoint,
            &req.corpus,
            req.oracle,
        )?)
    })
    .await
}

pub async fn generate(
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> ApiResult<GenerateResponse> {
    let Json(req) = body?;
    blocking(move || {
        let schema = req.schema.resolve()?;
        let config = req.generator.unwrap_or_else(GeneratorConfig::default);
        let dialogues = generate_with_config(&schema, req.dialogues, req.rho, req.seed, &config)?;
        let corpus = CorpusFile { schema, dialogues };
        let cramers_v = contingency_table(&corpus.schema, &corpus.dialogues)
            .cramers_v()
            .ok();
        let (dialogues, turns) = (corpus.dialogues.len(), corpus.num_turns());
        let corpus = match &req.out {
            Some(path) => {
                corpus.save(path)?;
                None
            }
            None => Some(corpus),
        };
        Ok(GenerateResponse {
            dialogues,
            turns,
            cramers_v,
            out: req.out,
            corpus,
        })
    })
    .await
}

pub async fn analyze(
    body: Result<Json<AnalyzeRequest>, JsonRejection>,
) -> ApiResult<AnalysisReport> {
    let Json(req) = body?;
    blocking(move || {
        let corpus = load_corpus(&req.corpus, None)?;
        Ok(AnalysisReport::new(&corpus.schema, &corpus.dialogues))
    })
    .await
}

pub async fn gradcheck(
    body: Result<Json<GradCheckConfig>, JsonRejection>,
) -> ApiResult<GradCheckReport> {
    let Json(config) = body?;
    blocking(move || Ok(run_grad_check(&config)?)).await
}

pub async fn open_session(
    State(state): State<AppState>,
    body: Result<Json<OpenSessionRequest>, JsonRejection>,
) -> ApiResult<SessionInfo> {
    let Json(req) = body?;
    let model = blocking(move || Ok(AnyModel::load(&req.checkpoint)?))
        .await?
        .0;
    let id = uuid::Uuid::new_v4().to_string();
    let info = SessionInfo {
        id: id.clone(),
        variant: model.variant(),
        schema: model.schema().clone(),
    };
    let entry = SessionEntry {
        model: Arc::new(model),
        session: TrackingSession::new(),
    };
    state
        .sessions
        .write()
        .unwrap()
        .insert(id, Arc::new(Mutex::new(entry)));
    Ok(Json(info))
}

fn lookup(state: &AppState, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
    state
        .sessions
        .read()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
}

fn status(id: String, entry: &SessionEntry) -> SessionStatus {
    SessionStatus {
        id,
        turns: entry.session.turns(),
        state: entry.session.state().clone(),
    }
}

pub async fn session_status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<SessionStatus> {
    let entry = lookup(&state, &id)?;
    let entry = entry.lock().unwrap();
    Ok(Json(status(id, &entry)))
}

pub async fn close_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    match state.sessions.write().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(format!("no session {id:?}"))),
    }
}

pub async fn session_turn(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<TurnRequest>, JsonRejection>,
) -> ApiResult<TurnResponse> {
    let Json(req) = body?;
    let entry = lookup(&state, &id)?;
    blocking(move || {
        let mut guard = entry.lock().unwrap();
        let SessionEntry { model, session } = &mut *guard;
        Ok(session.turn(model, &req.system, &req.user)?)
    })
    .await
}

pub async fn reset_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<SessionStatus> {
    let entry = lookup(&state, &id)?;
    let mut entry = entry.lock().unwrap();
    entry.session.reset();
    Ok(Json(status(id, &entry)))
}
