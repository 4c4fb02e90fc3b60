//! HTTP surface over the loaded pipeline. Models are shared read-only.

use std::collections::BTreeMap;
use std::sync::Arc;

use artqa_core::classifier::ClassifierModel;
use artqa_core::datasets::{ArtworkRecord, Dataset};
use artqa_core::qa::QaModel;
use artqa_core::router::{ArtworkAssets, Pipeline};
use artqa_core::vqa::{RegionFeatures, VqaModel};
use artqa_core::Error;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::Settings;
use crate::error::CliResult;
use crate::runner;

pub struct Artwork {
    pub record: ArtworkRecord,
    pub regions: Option<RegionFeatures>,
}

#[derive(Default)]
pub struct AppState {
    pub classifier: Option<Arc<ClassifierModel>>,
    pub qa: Option<Arc<QaModel>>,
    pub vqa: Option<Arc<VqaModel>>,
    pub artworks: BTreeMap<String, Artwork>,
}

fn loaded<T>(name: &str, r: CliResult<T>) -> Option<Arc<T>> {
    match r {
        Ok(m) => Some(Arc::new(m)),
        Err(e) => {
            tracing::warn!("{name} not loaded: {e}");
            None
        }
    }
}

impl AppState {
    /// Loads the dataset (required) and whichever checkpoints exist.
    pub fn load(s: &Settings) -> CliResult<Self> {
        s.require_data()?;
        let ds = Dataset::read_canonical(&s.data_dir)?;
        let mut artworks = BTreeMap::new();
        for record in ds.artworks {
            let regions = runner::load_artwork_regions(&s.features_dir, &record.id)?;
            artworks.insert(record.id.clone(), Artwork { record, regions });
        }
        Ok(Self {
            classifier: loaded("classifier", runner::load_classifier(s)),
            qa: loaded("qa", runner::load_qa(s)),
            vqa: loaded("vqa", runner::load_vqa(s)),
            artworks,
        })
    }

    fn pipeline(&self) -> Result<Pipeline, ApiError> {
        match (&self.classifier, &self.vqa, &self.qa) {
            (Some(c), Some(v), Some(q)) => Ok(Pipeline::new(c.clone(), v.clone(), q.clone())),
            _ => Err(ApiError::model_not_loaded(self.missing())),
        }
    }

    fn missing(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.classifier.is_none() {
            out.push("classifier");
        }
        if self.qa.is_none() {
            out.push("qa");
        }
        if self.vqa.is_none() {
            out.push("vqa");
        }
        out
    }
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn model_not_loaded(missing: Vec<&str>) -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "MODEL_NOT_LOADED",
            format!("checkpoint missing for: {}", missing.join(", ")),
        )
    }

    fn empty_question() -> Self {
        Self::new(StatusCode::BAD_REQUEST, "EMPTY_QUESTION", "question must not be empty")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Input(m) => Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", m),
            Error::Data(m) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ASSET_MISSING", m),
            Error::ModelNotLoaded(m) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "MODEL_NOT_LOADED", m),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self }))).into_response()
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/artworks", get(list_artworks))
        .route("/artworks/{id}", get(get_artwork))
        .route("/classify", post(classify))
        .route("/answer", post(answer))
        .with_state(state)
}

async fn health(State(st): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({
        "status": if st.missing().is_empty() { "ok" } else { "degraded" },
        "models": {
            "classifier": st.classifier.is_some(),
            "qa": st.qa.is_some(),
            "vqa": st.vqa.is_some(),
        },
        "artworks": st.artworks.len(),
    }))
}

#[derive(Serialize)]
struct ArtworkSummary<'a> {
    id: &'a str,
    title: &'a str,
    thumbnail: Option<&'a str>,
}

async fn list_artworks(State(st): State<Shared>) -> Json<serde_json::Value> {
    let items: Vec<ArtworkSummary> = st
        .artworks
        .values()
        .map(|a| ArtworkSummary {
            id: &a.record.id,
            title: &a.record.title,
            thumbnail: a.record.image.as_deref(),
        })
        .collect();
    Json(json!(items))
}

fn find<'a>(st: &'a AppState, id: &str) -> Result<&'a Artwork, ApiError> {
    st.artworks
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "ARTWORK_NOT_FOUND", format!("no artwork {id}")))
}

async fn get_artwork(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let a = find(&st, &id)?;
    let r = &a.record;
    Ok(Json(json!({
        "id": r.id,
        "title": r.title,
        "image": r.image,
        "visual_sentences": r.visual_sentences,
        "contextual_sentences": r.contextual_sentences,
        "metadata": r.metadata,
        "boxes": a.regions.as_ref().and_then(|g| g.boxes.clone()),
    })))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", format!("invalid request body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyRequest {
    question: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerRequest {
    question: String,
    artwork_id: String,
}

/// Runs CPU-bound model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
}

async fn classify(State(st): State<Shared>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let req: ClassifyRequest = parse_body(&body)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::empty_question());
    }
    let model = st
        .classifier
        .clone()
        .ok_or_else(|| ApiError::model_not_loaded(vec!["classifier"]))?;
    let label = blocking(move || Ok(model.classify(&req.question)?)).await?;
    Ok(Json(json!(label)))
}

async fn answer(State(st): State<Shared>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let req: AnswerRequest = parse_body(&body)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::empty_question());
    }
    find(&st, &req.artwork_id)?;
    let pipeline = st.pipeline()?;
    let routed = blocking(move || {
        let a = find(&st, &req.artwork_id)?;
        let assets = ArtworkAssets {
            id: &a.record.id,
            contextual_sentences: &a.record.contextual_sentences,
            regions: a.regions.as_ref(),
        };
        Ok(pipeline.answer(&req.question, assets)?)
    })
    .await?;
    Ok(Json(json!(routed)))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

/// Binds `addr` and serves until SIGINT or SIGTERM.
pub fn serve(state: AppState, addr: &str) -> CliResult<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Io {
            path: "tokio runtime".into(),
            source: e,
        })?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Io {
            path: addr.into(),
            source: e,
        })?;
        tracing::info!("listening on {}", addr);
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(|e| Error::Io {
                path: addr.into(),
                source: e,
            })?;
        Ok(())
    })
}
