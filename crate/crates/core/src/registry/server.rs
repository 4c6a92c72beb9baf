//! HTTP front end of a registry.
//!
//! Endpoints (JSON bodies both ways):
//!
//! - `POST /models` with `owner_id` (string) and `model_base64` (standard
//!   base64 of a model file). Returns the `RegistryRecord`.
//! - `GET /models/{id}` returns the record.
//! - `POST /models/{id}/embed` serves the registered model as a deployed
//!   embedding endpoint; request and response as documented in
//!   `extraction::oracle`.
//! - `POST /models/{id}/csim` with a serialized `SimilarityClassifier`
//!   attaches it to the model. Returns `{"ok": true}`.
//! - `POST /disputes` with `accuser_id`, `responder_id`, `target_base64`,
//!   `suspect_base64`. Returns the `Dispute`.
//! - `POST /disputes/{id}/resolve` with optional `target_endpoint` and
//!   `suspect_endpoint` (full embed URLs of the deployments under audit;
//!   absent means this registry's own endpoint) and optional `seed`.
//!   Returns the `Dispute`.
//! - `GET /disputes/{id}` returns the `Dispute`.
//!
//! Failures come back as `{"error": message}` with status 400, 404, 409 or
//! 500.

use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;
use serde_json::json;

use super::{resolve, Dispute, Registry, RegistryRecord, ResolveContext};
use crate::error::{Error, Result};
use crate::extraction::oracle::rows;
use crate::extraction::{EmbedRequest, EmbedResponse, HttpOracle, LocalOracle, QueryOracle};
use crate::graph_data::Graph;

/// The verifier's own graph and verification split used to resolve disputes.
#[derive(Debug, Clone)]
pub struct VerifierContext {
    pub graph: Graph,
    pub d_v: Vec<usize>,
    pub seed: u64,
}

pub struct ServerState {
    pub registry: RwLock<Registry>,
    pub verifier: Option<VerifierContext>,
}

impl ServerState {
    pub fn new(registry: Registry, verifier: Option<VerifierContext>) -> Arc<Self> {
        Arc::new(Self {
            registry: RwLock::new(registry),
            verifier,
        })
    }
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Registry(_) => StatusCode::CONFLICT,
            Error::Io(_) | Error::Oracle(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn decode(field: &str, text: &str) -> Result<Vec<u8>> {
    STANDARD.decode(text).map_err(|e| Error::parse(field, e))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Registry(format!("worker failed: {e}")))?
}

#[derive(Deserialize)]
struct RegisterBody {
    owner_id: String,
    model_base64: String,
}

async fn register(State(s): State<Arc<ServerState>>, Json(body): Json<RegisterBody>) -> ApiResult<RegistryRecord> {
    let bytes = decode("model_base64", &body.model_base64)?;
    let record = s.registry.write().expect("registry lock").register(&bytes, &body.owner_id)?;
    Ok(Json(record))
}

async fn get_model(State(s): State<Arc<ServerState>>, Path(id): Path<String>) -> ApiResult<RegistryRecord> {
    Ok(Json(s.registry.read().expect("registry lock").record(&id)?.clone()))
}

async fn embed(
    State(s): State<Arc<ServerState>>,
    Path(id): Path<String>,
    Json(req): Json<EmbedRequest>,
) -> ApiResult<EmbedResponse> {
    let model = s.registry.read().expect("registry lock").model(&id)?;
    let embeddings = blocking(move || model.embed_all(&req.to_graph()?, req.seed)).await?;
    Ok(Json(EmbedResponse {
        embeddings: rows(&embeddings),
    }))
}

async fn attach_csim(
    State(s): State<Arc<ServerState>>,
    Path(id): Path<String>,
    Json(csim): Json<crate::fingerprint::SimilarityClassifier>,
) -> ApiResult<serde_json::Value> {
    s.registry.write().expect("registry lock").attach_csim(&id, &csim)?;
    Ok(Json(json!({ "ok": true })))
}

#[derive(Deserialize)]
struct DisputeBody {
    accuser_id: String,
    responder_id: String,
    target_base64: String,
    suspect_base64: String,
}

async fn open(State(s): State<Arc<ServerState>>, Json(body): Json<DisputeBody>) -> ApiResult<Dispute> {
    let target = decode("target_base64", &body.target_base64)?;
    let suspect = decode("suspect_base64", &body.suspect_base64)?;
    let dispute = s.registry.write().expect("registry lock").open_dispute(
        &body.accuser_id,
        &body.responder_id,
        &target,
        &suspect,
    )?;
    Ok(Json(dispute))
}

#[derive(Deserialize, Default)]
struct ResolveBody {
    target_endpoint: Option<String>,
    suspect_endpoint: Option<String>,
    seed: Option<u64>,
}

fn oracle(endpoint: Option<String>, model: &crate::gnn::GnnModel) -> Box<dyn QueryOracle> {
    match endpoint {
        Some(url) => Box::new(HttpOracle::new(url)),
        None => Box::new(LocalOracle::new(model.clone())),
    }
}

async fn resolve_dispute(
    State(s): State<Arc<ServerState>>,
    Path(id): Path<String>,
    body: Option<Json<ResolveBody>>,
) -> ApiResult<Dispute> {
    let body = body.map(|b| b.0).unwrap_or_default();
    // Snapshot what the verification needs, then work without the lock.
    let (dispute, target, suspect, csim) = {
        let reg = s.registry.read().expect("registry lock");
        let dispute = reg.dispute(&id)?.clone();
        if dispute.status.is_terminal() {
            return Ok(Json(dispute));
        }
        let target = reg.model(&dispute.accuser_record.model_id)?;
        let suspect = reg.model(&dispute.responder_record.model_id)?;
        let csim = reg.csim(&dispute.accuser_record.model_id)?.clone();
        (dispute, target, suspect, csim)
    };
    let verifier = s
        .verifier
        .clone()
        .ok_or_else(|| Error::invalid("this registry has no verification dataset"))?;
    let outcome = blocking(move || {
        let target_oracle = oracle(body.target_endpoint, &target);
        let suspect_oracle = oracle(body.suspect_endpoint, &suspect);
        let ctx = ResolveContext {
            csim: &csim,
            graph: &verifier.graph,
            d_v: &verifier.d_v,
            seed: body.seed.unwrap_or(verifier.seed),
            target_oracle: target_oracle.as_ref(),
            suspect_oracle: suspect_oracle.as_ref(),
        };
        resolve(&dispute, &target, &suspect, &ctx, &mut |_| {})
    })
    .await?;
    let recorded = s.registry.write().expect("registry lock").record_resolution(outcome)?;
    Ok(Json(recorded))
}

async fn get_dispute(State(s): State<Arc<ServerState>>, Path(id): Path<String>) -> ApiResult<Dispute> {
    Ok(Json(s.registry.read().expect("registry lock").dispute(&id)?.clone()))
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/models", post(register))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/embed", post(embed))
        .route("/models/{id}/csim", post(attach_csim))
        .route("/disputes", post(open))
        .route("/disputes/{id}", get(get_dispute))
        .route("/disputes/{id}/resolve", post(resolve_dispute))
        .layer(axum::extract::DefaultBodyLimit::disable())
        .with_state(state)
}

/// Serve the registry on an already bound listener until the task is
/// dropped.
pub async fn serve(state: Arc<ServerState>, listener: tokio::net::TcpListener) -> Result<()> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}
