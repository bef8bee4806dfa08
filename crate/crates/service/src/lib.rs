//! HTTP/JSON API (`/api/v1`) over images, inspection sessions and the
//! annotation capture store.

pub mod error;
pub mod layout;

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use inspekt_core::assessment::DefectAssessment;
use inspekt_core::capture::{read_records, sha256_hex, AnnotationRecord, CaptureStore};
use inspekt_core::dataset::record_boxes;
use inspekt_core::dataset::voc::{export_voc, ImageSize};
use inspekt_core::geometry::Calibration;
use inspekt_core::session::{
    AssessmentReport, Command, CommandContext, CommandOutcome, Engine, InspectionSession, SessionView,
};
use inspekt_core::types::ImageBuffer;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;

pub use error::ApiError;
pub use layout::StoreLayout;

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

struct Slot {
    session: InspectionSession,
    image: Option<Arc<ImageBuffer>>,
}

type SlotHandle = Arc<AsyncMutex<Option<Slot>>>;

/// Shared service state. Sessions are cached in memory and reloaded from
/// their documents after a restart.
pub struct AppState {
    layout: StoreLayout,
    engine: Engine,
    store: Arc<CaptureStore>,
    sessions: Mutex<HashMap<String, SlotHandle>>,
}

impl AppState {
    pub fn open(data_dir: impl Into<PathBuf>, engine: Engine) -> std::io::Result<Arc<Self>> {
        let layout = StoreLayout::create(data_dir)?;
        let store = CaptureStore::open(layout.annotations_path()).map_err(std::io::Error::other)?;
        Ok(Arc::new(Self { layout, engine, store: Arc::new(store), sessions: Mutex::new(HashMap::new()) }))
    }

    pub fn layout(&self) -> &StoreLayout {
        &self.layout
    }

    fn handle(&self, id: &str) -> SlotHandle {
        let mut map = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        map.entry(id.to_string()).or_default().clone()
    }

    fn forget(&self, id: &str) {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).remove(id);
    }

    fn persist(&self, session: &InspectionSession) -> Result<(), ApiError> {
        let path = self.layout.session_path(&session.id).ok_or_else(|| ApiError::internal("bad session id"))?;
        let bytes = serde_json::to_vec_pretty(session).map_err(|e| ApiError::internal(e.to_string()))?;
        layout::write_atomic(&path, &bytes)?;
        Ok(())
    }

    fn read_image_bytes(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        let path = self.layout.image_path(id).ok_or_else(|| ApiError::not_found(format!("image {id}")))?;
        match std::fs::read(path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::not_found(format!("image {id}"))),
            Err(e) => Err(e.into()),
        }
    }
}

/// Locks a session, loading its document on first use.
async fn lock_session(
    state: &Arc<AppState>,
    id: &str,
) -> Result<tokio::sync::OwnedMutexGuard<Option<Slot>>, ApiError> {
    let path = state.layout.session_path(id).ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    let mut guard = state.handle(id).lock_owned().await;
    if guard.is_none() {
        let text = match std::fs::read(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                drop(guard);
                state.forget(id);
                return Err(ApiError::not_found(format!("session {id}")));
            }
            Err(e) => return Err(e.into()),
        };
        let session: InspectionSession =
            serde_json::from_slice(&text).map_err(|e| ApiError::internal(format!("session document: {e}")))?;
        *guard = Some(Slot { session, image: None });
    }
    Ok(guard)
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/images", post(upload_image))
        .route("/api/v1/images/{id}", get(get_image))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/commands", post(session_command))
        .route("/api/v1/annotations/export", get(export_annotations))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c; in-flight requests finish before returning.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadResponse {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
}

async fn upload_image(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let image = ImageBuffer::decode_png(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadImage", e.to_string()))?;
    let id = sha256_hex(&body);
    let path = state.layout.image_path(&id).expect("sha256 hex is a valid id");
    if !path.exists() {
        layout::write_atomic(&path, &body)?;
    }
    let resp = UploadResponse { image_id: id, width: image.width(), height: image.height() };
    Ok((StatusCode::CREATED, Json(resp)).into_response())
}

async fn get_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let bytes = state.read_image_bytes(&id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub image_id: String,
    pub calibration: Calibration,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("request body: {e}")))
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_json(&body)?;
    let bytes = state.read_image_bytes(&req.image_id)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let (session, image) = state.engine.create_session(id.clone(), &bytes, req.calibration)?;
    state.persist(&session)?;
    let view = session.view();
    *state.handle(&id).lock().await = Some(Slot { session, image: Some(Arc::new(image)) });
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let guard = lock_session(&state, &id).await?;
    Ok(Json(guard.as_ref().expect("loaded").session.view()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommandResponse {
    pub session: SessionView,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub assessment: Option<DefectAssessment>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<AssessmentReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub record: Option<AnnotationRecord>,
}

fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

/// Runs one command under the session lock and persists the session before
/// answering. Finalize appends and syncs the capture record first.
async fn session_command(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<CommandResponse>, ApiError> {
    let command: Command = parse_json(&body)?;
    let mut guard = lock_session(&state, &id).await?;
    let state2 = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        let slot = guard.as_mut().expect("loaded");
        let image = match &slot.image {
            Some(i) => i.clone(),
            None => {
                let bytes = state2.read_image_bytes(&slot.session.image.id)?;
                let img = ImageBuffer::decode_png(&bytes).map_err(|e| ApiError::internal(e.to_string()))?;
                let img = Arc::new(img);
                slot.image = Some(img.clone());
                img
            }
        };
        let ctx = CommandContext { image: &image, store: Some(&state2.store), timestamp: now_rfc3339() };
        let mut working = slot.session.clone();
        let outcome = state2.engine.apply(&mut working, command, &ctx)?;
        state2.persist(&working)?;
        slot.session = working;
        let mut resp = CommandResponse { session: slot.session.view(), assessment: None, report: None, record: None };
        match outcome {
            CommandOutcome::Updated => {}
            CommandOutcome::Assessed(a) => resp.assessment = Some(a),
            CommandOutcome::Finalized { report, record } => {
                resp.report = Some(*report);
                resp.record = Some(*record);
            }
        }
        Ok::<_, ApiError>(resp)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(result))
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "jsonl".into()
}

async fn export_annotations(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let path = state.layout.annotations_path();
    let records = read_records(&path)?;
    match q.format.as_str() {
        "jsonl" => {
            let bytes = match std::fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
        }
        "voc" => {
            let zip = voc_zip(&records)?;
            Ok((
                [(header::CONTENT_TYPE, "application/zip"), (header::CONTENT_DISPOSITION, "attachment; filename=\"annotations_voc.zip\"")],
                zip,
            )
                .into_response())
        }
        other => Err(ApiError::validation(format!("unknown export format {other:?}; use jsonl or voc"))),
    }
}

/// One `<session_id>.xml` per record, each naming `<image_id>.png`.
pub fn voc_zip(records: &[AnnotationRecord]) -> Result<Vec<u8>, ApiError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut zip = zip::ZipWriter::new(&mut buf);
        let options = zip::write::SimpleFileOptions::default();
        for r in records {
            let size = ImageSize { width: r.image.width, height: r.image.height, depth: r.image.channels as u32 };
            let xml = export_voc(&format!("{}.png", r.image.id), size, &record_boxes(r))
                .map_err(|e| ApiError::internal(e.to_string()))?;
            zip.start_file(format!("{}.xml", r.session_id), options)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            zip.write_all(xml.as_bytes())?;
        }
        zip.finish().map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok(buf.into_inner())
}
