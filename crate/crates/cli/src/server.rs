//! HTTP host for ground-truth annotation sessions.
//!
//! One session per reference waveform file, keyed by file stem. Sessions are
//! written to the store directory after every accepted edit and on shutdown,
//! and restored from it on start.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use pulse_core::ground_truth_cleaning::{
    decimate, AnnotationSession, PeakEdit, DEFAULT_PROPOSAL_DELTA_FACTOR,
};
use pulse_core::trace_io::{parse_gt_waveform, GroundTruthRecord, SignalKind};
use pulse_core::{Error, ErrorKind};

pub const DEFAULT_MAX_POINTS: usize = 2000;
const MAX_POINTS_LIMIT: usize = 200_000;

const INDEX_HTML: &str = r#"<!doctype html>
<html lang="en">
<head><meta charset="utf-8"><title>pulse annotator</title></head>
<body>
<h1>pulse annotator</h1>
<p>Sessions:</p>
<ul id="sessions"></ul>
<script>
fetch('/api/sessions').then(r => r.json()).then(list => {
  const ul = document.getElementById('sessions');
  for (const s of list) {
    const li = document.createElement('li');
    li.textContent = `${s.id} (${s.kind}, ${s.n_peaks} peaks, version ${s.version})`;
    ul.appendChild(li);
  }
});
</script>
</body>
</html>
"#;

struct Entry {
    session: AnnotationSession,
    waveform: GroundTruthRecord,
}

pub struct AppState {
    sessions: BTreeMap<String, Mutex<Entry>>,
    store: PathBuf,
}

fn session_path(store: &Path, id: &str) -> PathBuf {
    store.join(format!("{id}.session.json"))
}

fn annotation_path(store: &Path, id: &str) -> PathBuf {
    store.join(format!("{id}.annotations.json"))
}

/// Write-then-rename so a crash never leaves a truncated session file.
fn write_atomic(path: &Path, text: &str) -> pulse_core::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn persist(store: &Path, session: &AnnotationSession) -> pulse_core::Result<()> {
    let text = serde_json::to_string_pretty(session)?;
    write_atomic(&session_path(store, &session.session_id), &text)
}

impl AppState {
    /// Opens one session per signal file, restoring any stored state.
    pub fn load(signals: &[PathBuf], store: &Path, delta_factor: f64) -> pulse_core::Result<Self> {
        fs::create_dir_all(store)?;
        let mut sessions = BTreeMap::new();
        for path in signals {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| Error::Validation(format!("bad signal path {}", path.display())))?;
            if sessions.contains_key(&id) {
                return Err(Error::Validation(format!("duplicate session id '{id}'")));
            }
            let bytes = fs::read(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            let waveform = parse_gt_waveform(&bytes).map_err(|e| e.at_stage("load signal"))?;
            let stored = session_path(store, &id);
            let session = if stored.exists() {
                let text = fs::read(&stored)?;
                let session: AnnotationSession = serde_json::from_slice(&text).map_err(|e| {
                    Error::Validation(format!("corrupt session store {}: {e}", stored.display()))
                })?;
                let replayed = session.replay().map_err(|e| {
                    Error::Validation(format!("corrupt session store {}: {e}", stored.display()))
                })?;
                if replayed.peaks() != session.peaks() || replayed.blank_regions() != session.blank_regions() {
                    return Err(Error::Validation(format!(
                        "corrupt session store {}: edit log does not reproduce the stored peaks",
                        stored.display()
                    )));
                }
                log::info!("restored session '{id}' at version {}", session.version());
                session
            } else {
                let s = AnnotationSession::from_waveform(id.clone(), id.clone(), &waveform, delta_factor)?;
                persist(store, &s)?;
                log::info!("new session '{id}' with {} proposed peaks", s.peaks().len());
                s
            };
            sessions.insert(id, Mutex::new(Entry { session, waveform }));
        }
        Ok(Self {
            sessions,
            store: store.to_path_buf(),
        })
    }

    pub fn default_delta_factor() -> f64 {
        DEFAULT_PROPOSAL_DELTA_FACTOR
    }

    /// Writes every session that changed since it was last saved.
    pub fn persist_all(&self) -> pulse_core::Result<()> {
        for entry in self.sessions.values() {
            let mut e = entry.lock().expect("session lock");
            persist(&self.store, &e.session)?;
            e.session.mark_saved();
        }
        Ok(())
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.keys().cloned().collect()
    }
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, label) = match self.0.root() {
            Error::VersionConflict { .. } => (StatusCode::CONFLICT, "version_conflict"),
            Error::PeakNotFound { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "peak_not_found"),
            Error::EditRejected(_) => (StatusCode::UNPROCESSABLE_ENTITY, "edit_rejected"),
            Error::Validation(m) if m.starts_with("unknown session") => (StatusCode::NOT_FOUND, "not_found"),
            _ => match self.0.kind() {
                ErrorKind::Validation => (StatusCode::BAD_REQUEST, "validation"),
                ErrorKind::InsufficientData => (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_data"),
                ErrorKind::Runtime => (StatusCode::INTERNAL_SERVER_ERROR, "runtime"),
            },
        };
        let body = ErrorBody {
            error: label,
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;
type Shared = Arc<AppState>;

fn with_entry<T>(state: &AppState, id: &str, f: impl FnOnce(&mut Entry) -> pulse_core::Result<T>) -> std::result::Result<T, ApiError> {
    let entry = state
        .sessions
        .get(id)
        .ok_or_else(|| Error::Validation(format!("unknown session '{id}'")))?;
    let mut guard = entry.lock().expect("session lock");
    Ok(f(&mut guard)?)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionSummary {
    pub id: String,
    pub kind: SignalKind,
    pub n_peaks: usize,
    pub version: u64,
}

async fn list_sessions(State(state): State<Shared>) -> ApiResult<Vec<SessionSummary>> {
    let list = state
        .sessions
        .iter()
        .map(|(id, e)| {
            let e = e.lock().expect("session lock");
            SessionSummary {
                id: id.clone(),
                kind: e.waveform.kind,
                n_peaks: e.session.peaks().len(),
                version: e.session.version(),
            }
        })
        .collect();
    Ok(Json(list))
}

#[derive(Debug, Deserialize)]
pub struct SignalQuery {
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub max_points: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SignalView {
    pub signal_id: String,
    pub kind: SignalKind,
    pub rate: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub from: f64,
    pub to: f64,
    pub points: Vec<(f64, f64)>,
}

async fn get_signal(State(state): State<Shared>, UrlPath(id): UrlPath<String>, Query(q): Query<SignalQuery>) -> ApiResult<SignalView> {
    let view = with_entry(&state, &id, |e| {
        let w = &e.waveform.waveform;
        let t_start = w.t0;
        let t_end = w.time_at(w.len().saturating_sub(1));
        let from = q.from.unwrap_or(t_start);
        let to = q.to.unwrap_or(t_end);
        if !(from.is_finite() && to.is_finite() && from <= to) {
            return Err(Error::Validation(format!("invalid range [{from}, {to}]")));
        }
        let max_points = q.max_points.unwrap_or(DEFAULT_MAX_POINTS);
        if !(2..=MAX_POINTS_LIMIT).contains(&max_points) {
            return Err(Error::Validation(format!(
                "max_points must lie in [2, {MAX_POINTS_LIMIT}], got {max_points}"
            )));
        }
        Ok(SignalView {
            signal_id: e.session.signal_id.clone(),
            kind: e.waveform.kind,
            rate: w.rate,
            t_start,
            t_end,
            from,
            to,
            points: decimate(&e.waveform, from, to, max_points),
        })
    })?;
    Ok(Json(view))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PeaksView {
    pub version: u64,
    pub peaks: Vec<f64>,
    pub blank_regions: Vec<[f64; 2]>,
    pub can_undo: bool,
    pub dirty: bool,
}

fn peaks_view(s: &AnnotationSession) -> PeaksView {
    PeaksView {
        version: s.version(),
        peaks: s.peaks().to_vec(),
        blank_regions: s.blank_regions().iter().map(|r| [r.t0, r.t1]).collect(),
        can_undo: s.can_undo(),
        dirty: s.is_dirty(),
    }
}

async fn get_peaks(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<PeaksView> {
    Ok(Json(with_entry(&state, &id, |e| Ok(peaks_view(&e.session)))?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditRequest {
    pub edit: PeakEdit,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

async fn post_edit(State(state): State<Shared>, UrlPath(id): UrlPath<String>, Json(req): Json<EditRequest>) -> ApiResult<PeaksView> {
    let store = state.store.clone();
    let view = with_entry(&state, &id, |e| {
        e.session.apply_edit(req.edit, req.expected_version)?;
        persist(&store, &e.session)?;
        Ok(peaks_view(&e.session))
    })?;
    Ok(Json(view))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RrView {
    pub version: u64,
    /// `(beat time s, RR ms)` pairs.
    pub rr: Vec<(f64, f64)>,
}

async fn get_rr(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<RrView> {
    let view = with_entry(&state, &id, |e| {
        Ok(RrView {
            version: e.session.version(),
            rr: e.session.rr_intervals(),
        })
    })?;
    Ok(Json(view))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ExportRequest {
    #[serde(default)]
    pub expected_version: Option<u64>,
    #[serde(default)]
    pub annotator: Option<String>,
}

/// Writes `<id>.annotations.json` to the store and returns the document.
async fn post_export(State(state): State<Shared>, UrlPath(id): UrlPath<String>, body: Option<Json<ExportRequest>>) -> std::result::Result<Response, ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let store = state.store.clone();
    let text = with_entry(&state, &id, |e| {
        if let Some(a) = req.annotator {
            e.session.annotator = a;
        }
        let text = e.session.export(req.expected_version)?;
        write_atomic(&annotation_path(&store, &id), &text)?;
        e.session.mark_saved();
        persist(&store, &e.session)?;
        Ok(text)
    })?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

/// API routes plus the UI: files from `static_dir` when given, otherwise a
/// minimal built-in session list.
pub fn router(state: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/sessions", get(list_sessions))
        .route("/api/session/{id}/signal", get(get_signal))
        .route("/api/session/{id}/peaks", get(get_peaks))
        .route("/api/session/{id}/edit", post(post_edit))
        .route("/api/session/{id}/rr", get(get_rr))
        .route("/api/session/{id}/export", post(post_export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

/// Binds `addr`; a busy port is reported as an error instead of retrying.
pub async fn bind(addr: SocketAddr) -> pulse_core::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("cannot listen on {addr}: {e}")))
    })
}

/// Serves until `shutdown` resolves, then persists every session.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Shared,
    static_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> pulse_core::Result<()> {
    let app = router(state.clone(), static_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await?;
    state.persist_all()?;
    log::info!("sessions saved to {}", state.store.display());
    Ok(())
}
