use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use easyrl_core::agents::{AgentDescriptor, Mode};
use easyrl_core::engine::{Control, RegisteredPlugin, SessionRecord, SessionSpec, Summary};
use easyrl_core::envkit::EnvDescriptor;
use easyrl_core::modelstore::ModelArtifact;
use easyrl_core::plugin::{PluginCommand, PluginKind};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::error::ApiError;
use crate::models::ModelInfo;
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

/// JSON body whose parse failures come back as `bad_request` errors.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        serde_json::from_slice(&bytes)
            .map(JsonBody)
            .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
    }
}

/// Runs engine work that may block (process launches, weight snapshots)
/// off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("request handler panicked: {e}")))?
}

pub async fn list_agents(State(state): State<AppState>) -> Json<Vec<AgentDescriptor>> {
    Json(state.engine.catalog().agents())
}

pub async fn list_environments(State(state): State<AppState>) -> Json<Vec<EnvDescriptor>> {
    Json(state.engine.catalog().environments())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CreateSession {
    env_id: Option<String>,
    agent_id: Option<String>,
    model_id: Option<String>,
    #[serde(default)]
    hyperparameters: Value,
    mode: Option<Mode>,
    #[serde(default)]
    display_speed: u32,
}

fn create_session(state: &AppState, req: CreateSession) -> ApiResult<SessionRecord> {
    let engine = &state.engine;
    let Some(model_id) = req.model_id else {
        let env_id = req
            .env_id
            .ok_or_else(|| ApiError::bad_request("`envId` is required"))?;
        let agent_id = req
            .agent_id
            .ok_or_else(|| ApiError::bad_request("`agentId` is required"))?;
        engine.catalog().env_descriptor(&env_id)?;
        let defaults = engine
            .catalog()
            .agent_descriptor(&agent_id)?
            .default_hyperparameters;
        let spec = SessionSpec {
            display_speed: req.display_speed,
            ..SessionSpec::new(
                &env_id,
                &agent_id,
                defaults.merge_json(&req.hyperparameters)?,
                req.mode.unwrap_or(Mode::Train),
            )
        };
        return Ok(engine.create_session(spec)?);
    };

    let artifact = state.models.get(&model_id)?;
    if let Some(agent_id) = &req.agent_id {
        if agent_id != &artifact.metadata.agent_id {
            return Err(ApiError::bad_request(format!(
                "model `{model_id}` holds a `{}` agent, not `{agent_id}`",
                artifact.metadata.agent_id
            )));
        }
    }
    let env_id = req
        .env_id
        .unwrap_or_else(|| artifact.metadata.env_id.clone());
    let hp = artifact
        .metadata
        .hyperparameters
        .merge_json(&req.hyperparameters)?;
    let record =
        engine.create_session_from_model(artifact, &env_id, req.mode.unwrap_or(Mode::Test), hp)?;
    if req.display_speed == 0 {
        return Ok(record);
    }
    Ok(engine.control(
        &record.session_id,
        Control::SetDisplaySpeed {
            fps: req.display_speed,
        },
    )?)
}

pub async fn post_session(
    State(state): State<AppState>,
    JsonBody(req): JsonBody<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionRecord>)> {
    let record = blocking(move || create_session(&state, req)).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

pub async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionRecord>> {
    Json(state.engine.sessions())
}

pub async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionRecord>> {
    Ok(Json(state.engine.session(&id)?))
}

pub async fn control_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(command): JsonBody<Control>,
) -> ApiResult<Json<SessionRecord>> {
    let record = blocking(move || Ok(state.engine.control(&id, command)?)).await?;
    Ok(Json(record))
}

pub async fn session_results(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let csv = state.engine.results_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

pub async fn session_summary(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Summary>> {
    Ok(Json(state.engine.evaluate(&id)?))
}

fn ezrl_download(name: &str, bytes: Vec<u8>) -> Response {
    (
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{name}.ezrl\""),
            ),
        ],
        bytes,
    )
        .into_response()
}

pub async fn download_session_model(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let engine = state.engine.clone();
    let name = id.clone();
    let artifact = blocking(move || Ok(engine.model_artifact(&id)?)).await?;
    Ok(ezrl_download(&name, artifact.to_bytes()))
}

pub async fn store_session_model(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<ModelInfo>)> {
    let info = blocking(move || {
        let artifact = state.engine.model_artifact(&id)?;
        Ok(state.models.insert(artifact))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(info)))
}

pub async fn upload_model(
    State(state): State<AppState>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<(StatusCode, Json<ModelInfo>)> {
    let mut multipart = multipart.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let field = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
        .ok_or_else(|| ApiError::bad_request("multipart body has no file part"))?;
    let bytes = field
        .bytes()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?;
    let artifact =
        ModelArtifact::from_bytes(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(state.models.insert(artifact))))
}

pub async fn list_models(State(state): State<AppState>) -> Json<Vec<ModelInfo>> {
    Json(state.models.list())
}

pub async fn download_model(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let artifact = state.models.get(&id)?;
    Ok(ezrl_download(&id, artifact.to_bytes()))
}

/// A plugin command as a single line, an argv array or an explicit object.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum CommandSpec {
    Line(String),
    Argv(Vec<String>),
    Full(PluginCommand),
}

impl CommandSpec {
    fn into_command(self) -> ApiResult<PluginCommand> {
        let empty = || ApiError::bad_request("plugin command is empty");
        match self {
            CommandSpec::Line(line) => PluginCommand::parse(&line).ok_or_else(empty),
            CommandSpec::Argv(argv) => {
                let mut it = argv.into_iter();
                let program = it.next().ok_or_else(empty)?;
                Ok(PluginCommand::new(program, it))
            }
            CommandSpec::Full(cmd) if cmd.program.is_empty() => Err(empty()),
            CommandSpec::Full(cmd) => Ok(cmd),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterPlugin {
    kind: PluginKind,
    command: CommandSpec,
}

pub async fn register_plugin(
    State(state): State<AppState>,
    JsonBody(req): JsonBody<RegisterPlugin>,
) -> ApiResult<(StatusCode, Json<RegisteredPlugin>)> {
    let command = req.command.into_command()?;
    let registered = blocking(move || Ok(state.engine.register_plugin(req.kind, command)?)).await?;
    Ok((StatusCode::CREATED, Json(registered)))
}

pub async fn schema() -> Response {
    (
        [(header::CONTENT_TYPE, "application/schema+json")],
        crate::API_SCHEMA,
    )
        .into_response()
}

pub async fn api_not_found() -> ApiError {
    ApiError::not_found("no such API route")
}
