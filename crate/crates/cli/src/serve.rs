//! Annotation backend: recording list, audio, per-annotator label tracks,
//! majority merge and a downsampled feature preview.
//!
//! Label tracks live on disk as `<labels_dir>/<recording>/<annotator>.json`
//! and are returned byte-for-byte as stored. Writes to one recording are
//! serialized behind that recording's lock; concurrent writers are not
//! rejected, the later one wins and every response carries the version.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pausebench::annotation::{majority_vote, AnnotationTrack, MergedFile};
use pausebench::features::{FeatureKind, FeatureMatrix};
use pausebench::labels::{FrameLabelSeq, LabelFile};
use pausebench::protocol::FRAME_RATE_HZ;
use pausebench::DatasetManifest;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

pub const VERSION_HEADER: &str = "x-label-version";
/// Optional request header on PUT: the version the client last read.
pub const BASE_VERSION_HEADER: &str = "x-base-version";

#[derive(Default)]
struct RecordingLabels {
    versions: HashMap<String, u64>,
}

pub struct AppState {
    manifest: DatasetManifest,
    labels_dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<RwLock<RecordingLabels>>>>,
}

impl AppState {
    pub fn new(manifest: DatasetManifest, labels_dir: PathBuf) -> Self {
        Self {
            manifest,
            labels_dir,
            locks: Mutex::new(HashMap::new()),
        }
    }

    async fn lock_for(&self, id: &str) -> Arc<RwLock<RecordingLabels>> {
        self.locks.lock().await.entry(id.to_string()).or_default().clone()
    }

    fn track_path(&self, id: &str, annotator: &str) -> PathBuf {
        self.labels_dir.join(id).join(format!("{annotator}.json"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.len() <= 128 && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn record<'a>(state: &'a AppState, id: &str) -> ApiResult<&'a pausebench::ManifestRecord> {
    state
        .manifest
        .get(id)
        .map_err(|_| ApiError::not_found(format!("unknown recording {id:?}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/recordings", get(list_recordings))
        .route("/recordings/{id}/audio", get(get_audio))
        .route("/recordings/{id}/labels/{annotator}", get(get_labels).put(put_labels))
        .route("/recordings/{id}/merge", post(merge))
        .route("/recordings/{id}/features", get(feature_preview))
        .with_state(state)
}

async fn list_recordings(State(state): State<Arc<AppState>>) -> Json<Vec<pausebench::ManifestRecord>> {
    Json(state.manifest.records.clone())
}

async fn get_audio(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let rec = record(&state, &id)?;
    let path = rec
        .audio
        .as_ref()
        .ok_or_else(|| ApiError::not_found(format!("recording {id} has no audio")))?;
    let bytes = tokio::fs::read(state.manifest.resolve(path))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

fn version_headers(version: u64) -> HeaderMap {
    let mut h = HeaderMap::new();
    h.insert(VERSION_HEADER, HeaderValue::from(version));
    h
}

async fn get_labels(
    State(state): State<Arc<AppState>>,
    Path((id, annotator)): Path<(String, String)>,
) -> ApiResult<Response> {
    record(&state, &id)?;
    if !valid_name(&annotator) {
        return Err(ApiError::unprocessable(format!("invalid annotator id {annotator:?}")));
    }
    let lock = state.lock_for(&id).await;
    let guard = lock.read().await;
    let path = state.track_path(&id, &annotator);
    let bytes = match tokio::fs::read(&path).await {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ApiError::not_found(format!("no labels from {annotator} for {id}")));
        }
        Err(e) => return Err(ApiError::internal(e.to_string())),
    };
    // tracks already on disk when the service started count as version 1
    let version = guard.versions.get(&annotator).copied().unwrap_or(1);
    Ok((version_headers(version), [(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PutResponse {
    pub recording_id: String,
    pub annotator: String,
    pub version: u64,
    /// The client's base version was stale; its write still replaced the track.
    pub overwrote_newer: bool,
}

/// Parses a label body and checks it against the recording length.
fn parse_track(rec: &pausebench::ManifestRecord, body: &[u8]) -> ApiResult<FrameLabelSeq> {
    let file: LabelFile =
        serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(format!("malformed label JSON: {e}")))?;
    let seq = FrameLabelSeq::try_from(file).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let frames = rec.meta.frames(seq.rate_hz());
    if seq.len() != frames {
        return Err(ApiError::unprocessable(format!(
            "{} labels for a {frames}-frame recording",
            seq.len()
        )));
    }
    Ok(seq)
}

async fn put_labels(
    State(state): State<Arc<AppState>>,
    Path((id, annotator)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let rec = record(&state, &id)?;
    if !valid_name(&annotator) {
        return Err(ApiError::unprocessable(format!("invalid annotator id {annotator:?}")));
    }
    parse_track(rec, &body)?;
    let base: Option<u64> = headers
        .get(BASE_VERSION_HEADER)
        .map(|v| {
            v.to_str()
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ApiError::unprocessable(format!("bad {BASE_VERSION_HEADER} header")))
        })
        .transpose()?;

    let lock = state.lock_for(&id).await;
    let mut guard = lock.write().await;
    let path = state.track_path(&id, &annotator);
    let current = match guard.versions.get(&annotator) {
        Some(v) => *v,
        None if tokio::fs::try_exists(&path).await.unwrap_or(false) => 1,
        None => 0,
    };
    let dir = path.parent().expect("track path has a parent");
    tokio::fs::create_dir_all(dir)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    tokio::fs::write(&tmp, &body)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    tokio::fs::rename(&tmp, &path)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let version = current + 1;
    guard.versions.insert(annotator.clone(), version);
    let resp = PutResponse {
        recording_id: id,
        annotator,
        version,
        overwrote_newer: base.is_some_and(|b| b != current),
    };
    Ok((version_headers(version), Json(resp)).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct MergeRequest {
    /// Annotators to merge; all stored tracks when absent.
    #[serde(default)]
    pub annotators: Option<Vec<String>>,
}

async fn merge(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<MergedFile>> {
    record(&state, &id)?;
    let req: MergeRequest = if body.is_empty() {
        MergeRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable(format!("malformed merge request: {e}")))?
    };
    let lock = state.lock_for(&id).await;
    let _guard = lock.read().await;
    let annotators = match req.annotators {
        Some(list) => list,
        None => {
            let dir = state.labels_dir.join(&id);
            let mut names = Vec::new();
            if let Ok(mut entries) = tokio::fs::read_dir(&dir).await {
                while let Ok(Some(e)) = entries.next_entry().await {
                    let p = e.path();
                    if p.extension().is_some_and(|x| x == "json") {
                        if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                            names.push(stem.to_string());
                        }
                    }
                }
            }
            names.sort();
            names
        }
    };
    let mut tracks = Vec::with_capacity(annotators.len());
    for a in &annotators {
        if !valid_name(a) {
            return Err(ApiError::unprocessable(format!("invalid annotator id {a:?}")));
        }
        let bytes = tokio::fs::read(state.track_path(&id, a))
            .await
            .map_err(|_| ApiError::not_found(format!("no labels from {a} for {id}")))?;
        let file: LabelFile = serde_json::from_slice(&bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        let seq = FrameLabelSeq::try_from(file).map_err(|e| ApiError::internal(e.to_string()))?;
        tracks.push(AnnotationTrack {
            recording_id: id.clone(),
            annotator_id: a.clone(),
            seq,
        });
    }
    let merged = majority_vote(&tracks).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(Json(MergedFile::from_seq(&merged)))
}

#[derive(Debug, Deserialize)]
pub struct PreviewQuery {
    #[serde(default = "default_kind")]
    pub kind: String,
    /// Number of bins in the preview.
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_kind() -> String {
    "mfb".into()
}

fn default_bins() -> usize {
    500
}

/// Per-bin envelope of the frame-mean feature value.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FeaturePreview {
    pub kind: String,
    pub frames: usize,
    pub rate_hz: u32,
    pub frames_per_bin: f64,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

pub fn preview(m: &FeatureMatrix, bins: usize) -> FeaturePreview {
    let frames = m.frames();
    let bins = bins.clamp(1, frames.max(1));
    let energy: Vec<f64> = m.data().rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    let mut out = FeaturePreview {
        kind: m.kind().name().to_string(),
        frames,
        rate_hz: m.rate_hz(),
        frames_per_bin: frames as f64 / bins as f64,
        min: Vec::with_capacity(bins),
        max: Vec::with_capacity(bins),
        mean: Vec::with_capacity(bins),
    };
    for b in 0..bins {
        let lo = b * frames / bins;
        let hi = ((b + 1) * frames / bins).max(lo + 1).min(frames);
        let chunk = &energy[lo..hi];
        out.min.push(chunk.iter().copied().fold(f64::INFINITY, f64::min));
        out.max.push(chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        out.mean.push(chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    out
}

async fn feature_preview(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Json<FeaturePreview>> {
    let rec = record(&state, &id)?;
    let kind: FeatureKind = q.kind.parse().map_err(|e: pausebench::Error| ApiError::unprocessable(e.to_string()))?;
    let path = rec
        .features
        .get(kind.name())
        .ok_or_else(|| ApiError::not_found(format!("recording {id} has no {kind} features")))?;
    let full = state.manifest.resolve(path);
    let bins = q.bins;
    let m = tokio::task::spawn_blocking(move || FeatureMatrix::load(&full))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    if m.rate_hz() != FRAME_RATE_HZ {
        log::warn!("{id}: {kind} matrix at {} Hz", m.rate_hz());
    }
    Ok(Json(preview(&m, bins)))
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
